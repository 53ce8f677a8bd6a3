#pragma once

// Randomized verification suites: the CTC dynamic program against brute-force
// path enumeration, and every analytic gradient against central finite
// differences. Shared by the oracle-check command and the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cslr/ctc.hpp"
#include "cslr/losses.hpp"
#include "cslr/matrix.hpp"
#include "cslr/prng.hpp"
#include "cslr/seqnet.hpp"

namespace cslr::check {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;
inline constexpr double kOracleTolerance = 1e-9;
// Gradients smaller than this are compared absolutely: central differences
// carry up to ~1e-9 of rounding noise, which swamps a relative measure near
// zero (conv biases ahead of train-mode batch norm have exact zero gradient).
inline constexpr double kRelativeFloor = 1e-5;

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
}

struct SuiteResult {
    std::string name;
    std::size_t instances = 0;
    std::size_t failures = 0;
    std::size_t compared = 0;  // scalar comparisons
    std::size_t skipped = 0;   // coordinates straddling a ReLU/pooling kink
    double worst = 0.0;
    std::string first_failure;

    explicit SuiteResult(std::string n) : name(std::move(n)) {}

    bool passed() const noexcept { return failures == 0 && instances > 0; }

    void record(double err, double tol, const std::string& where) {
        ++compared;
        worst = std::max(worst, err);
        if (!(err <= tol)) {
            if (first_failure.empty()) first_failure = where + " err=" + std::to_string(err);
        }
    }
};

inline Matrix random_matrix(Xorshift64Star& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

inline Labeling random_labeling(Xorshift64Star& rng, std::size_t length, std::size_t glosses) {
    Labeling l(length);
    for (auto& g : l) g = static_cast<ClassId>(rng.uniform_int(1, static_cast<std::int64_t>(glosses)));
    return l;
}

// Central difference of f along one coordinate, restoring the value.
inline double central_difference(double& x, const std::function<double()>& f, double h = kFdStep) {
    const double saved = x;
    x = saved + h;
    const double up = f();
    x = saved - h;
    const double down = f();
    x = saved;
    return (up - down) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// CTC

// exp(-ctc_loss) against the enumerated path sum on random instances with
// T' <= 8, |G| <= 3, |l| <= 3.
inline SuiteResult ctc_oracle_suite(std::size_t instances, std::uint64_t seed) {
    SuiteResult res{"ctc-vs-oracle"};
    Xorshift64Star rng = Xorshift64Star::derive(seed, 0xC7C);
    while (res.instances < instances) {
        const auto glosses = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const auto len = static_cast<std::size_t>(rng.uniform_int(0, 3));
        const Labeling l = random_labeling(rng, len, glosses);
        const auto need = std::max<std::size_t>(1, min_frames_required(l));
        if (need > 8) continue;
        const auto T = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(need), 8));
        const Matrix z = random_matrix(rng, T, glosses + 1, 2.0);
        const double dp = std::exp(-ctc_loss(z, l));
        const double oracle = oracle_labeling_probability(z, l);
        const double err = std::abs(dp - oracle) / oracle;
        ++res.instances;
        const bool bad = !(err <= kOracleTolerance) || !(dp > 0.0 && dp <= 1.0);
        res.record(err, kOracleTolerance, "instance " + std::to_string(res.instances));
        if (bad) ++res.failures;
    }
    return res;
}

inline SuiteResult ctc_gradient_suite(std::size_t instances, std::uint64_t seed) {
    SuiteResult res{"ctc-gradient"};
    Xorshift64Star rng = Xorshift64Star::derive(seed, 0xC7D);
    for (std::size_t n = 0; n < instances; ++n) {
        const auto glosses = static_cast<std::size_t>(rng.uniform_int(1, 4));
        const auto T = static_cast<std::size_t>(rng.uniform_int(1, 10));
        Labeling l;
        do {
            l = random_labeling(rng, static_cast<std::size_t>(rng.uniform_int(0, 4)), glosses);
        } while (!ctc_feasible(T, l));
        Matrix z = random_matrix(rng, T, glosses + 1, 2.0);
        const Matrix g = ctc_gradient(z, l);
        bool bad = false;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double num = central_difference(z.data()[i], [&] { return ctc_loss(z, l); });
            const double err = relative_error(g.data()[i], num);
            res.record(err, kGradTolerance, "instance " + std::to_string(n) + " entry " + std::to_string(i));
            bad = bad || !(err <= kGradTolerance);
        }
        ++res.instances;
        if (bad) ++res.failures;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Layers. Each layer is checked through the scalar probe sum(r * layer(x))
// for a random r, so the analytic side is layer_backward(dy = r).

namespace detail {

inline double probe(const Matrix& y, const Matrix& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
    return s;
}

inline void fill_normal(Tensor& t, Xorshift64Star& rng, double scale = 0.5) {
    for (double& v : t.data) v = scale * rng.normal();
}

// Compare analytic gradients of every coordinate of `values` with central
// differences of f; `smooth` returns false when the perturbed evaluation left
// the current linear region (skip that coordinate).
inline bool compare_all(SuiteResult& res, std::vector<double>& values, const std::vector<double>& analytic,
                        const std::function<double()>& f, const std::string& where,
                        const std::function<bool()>& smooth = nullptr) {
    bool bad = false;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        bool ok_region = true;
        values[i] = saved + kFdStep;
        const double up = f();
        if (smooth) ok_region = smooth();
        values[i] = saved - kFdStep;
        const double down = f();
        if (smooth) ok_region = ok_region && smooth();
        values[i] = saved;
        if (!ok_region) {
            ++res.skipped;
            continue;
        }
        const double num = (up - down) / (2.0 * kFdStep);
        const double err = relative_error(analytic[i], num);
        res.record(err, kGradTolerance, where + "[" + std::to_string(i) + "]");
        bad = bad || !(err <= kGradTolerance);
    }
    return bad;
}

}  // namespace detail

// conv1d, batch norm (train and eval), ReLU, max pooling, linear, LSTM
// sequence and BiLSTM stack, each on `instances` random inputs.
inline std::vector<SuiteResult> layer_gradient_suites(std::size_t instances, std::uint64_t seed) {
    std::vector<SuiteResult> out;
    Xorshift64Star rng = Xorshift64Star::derive(seed, 0x1A7);

    {
        SuiteResult res{"conv1d"};
        for (std::size_t n = 0; n < instances; ++n) {
            const auto Cin = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto Cout = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto k = static_cast<std::size_t>(rng.uniform_int(1, 5));
            const auto T = k + static_cast<std::size_t>(rng.uniform_int(0, 4));
            Tensor w("w", Partition::Visual, {Cout, Cin, k}), b("b", Partition::Visual, {Cout});
            detail::fill_normal(w, rng), detail::fill_normal(b, rng);
            Matrix x = random_matrix(rng, T, Cin);
            const Matrix r = random_matrix(rng, T - k + 1, Cout);
            Tensor dw = w, db = b;
            std::fill(dw.data.begin(), dw.data.end(), 0.0);
            std::fill(db.data.begin(), db.data.end(), 0.0);
            const Matrix dx = conv1d_backward(x, w, r, dw, db);
            auto f = [&] { return detail::probe(conv1d_forward(x, w, b), r); };
            bool bad = detail::compare_all(res, x.data(), dx.data(), f, "conv dx");
            bad |= detail::compare_all(res, w.data, dw.data, f, "conv dw");
            bad |= detail::compare_all(res, b.data, db.data, f, "conv db");
            ++res.instances;
            res.failures += bad ? 1 : 0;
        }
        out.push_back(res);
    }
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        SuiteResult res{mode == Mode::Train ? "batch-norm-train" : "batch-norm-eval"};
        for (std::size_t n = 0; n < instances; ++n) {
            const auto C = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto T = static_cast<std::size_t>(rng.uniform_int(2, 6));
            ConvBlockParams p{{}, {}, Tensor("g", Partition::Visual, {C}), Tensor("b", Partition::Visual, {C}),
                              Tensor("m", Partition::Visual, {C}, false), Tensor("v", Partition::Visual, {C}, false)};
            detail::fill_normal(p.gamma, rng), detail::fill_normal(p.beta, rng), detail::fill_normal(p.running_mean, rng);
            for (double& v : p.running_var.data) v = rng.uniform(0.5, 2.0);
            Matrix x = random_matrix(rng, T, C);
            const Matrix r = random_matrix(rng, T, C);
            BatchNormCache cache;
            batch_norm_forward(x, p, mode, &cache, false);
            Tensor dg = p.gamma, dbt = p.beta;
            std::fill(dg.data.begin(), dg.data.end(), 0.0);
            std::fill(dbt.data.begin(), dbt.data.end(), 0.0);
            const Matrix dx = batch_norm_backward(cache, p, r, dg, dbt);
            auto f = [&] { return detail::probe(batch_norm_forward(x, p, mode, nullptr, false), r); };
            bool bad = detail::compare_all(res, x.data(), dx.data(), f, "bn dx");
            bad |= detail::compare_all(res, p.gamma.data, dg.data, f, "bn dgamma");
            bad |= detail::compare_all(res, p.beta.data, dbt.data, f, "bn dbeta");
            ++res.instances;
            res.failures += bad ? 1 : 0;
        }
        out.push_back(res);
    }
    {
        SuiteResult res{"relu+max-pool"};
        for (std::size_t n = 0; n < instances; ++n) {
            const auto C = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto T = static_cast<std::size_t>(rng.uniform_int(2, 9));
            Matrix x = random_matrix(rng, T, C);
            PoolCache pc;
            const Matrix y = relu_forward(x);
            const Matrix z = max_pool_forward(y, 2, &pc);
            const Matrix r = random_matrix(rng, z.rows(), C);
            const Matrix dx = relu_backward(y, max_pool_backward(pc, r));
            auto signature = [&] {
                PoolCache c;
                const Matrix yy = relu_forward(x);
                max_pool_forward(yy, 2, &c);
                std::vector<std::size_t> s = c.argmax;
                for (double v : yy.data()) s.push_back(v > 0.0);
                return s;
            };
            const auto base = signature();
            auto f = [&] { return detail::probe(max_pool_forward(relu_forward(x), 2), r); };
            const bool bad =
                detail::compare_all(res, x.data(), dx.data(), f, "relu/pool dx", [&] { return signature() == base; });
            ++res.instances;
            res.failures += bad ? 1 : 0;
        }
        out.push_back(res);
    }
    {
        SuiteResult res{"linear"};
        for (std::size_t n = 0; n < instances; ++n) {
            const auto I = static_cast<std::size_t>(rng.uniform_int(1, 4));
            const auto O = static_cast<std::size_t>(rng.uniform_int(1, 4));
            const auto T = static_cast<std::size_t>(rng.uniform_int(1, 4));
            LinearParams p{Tensor("w", Partition::Alignment, {O, I}), Tensor("b", Partition::Alignment, {O})};
            detail::fill_normal(p.weight, rng), detail::fill_normal(p.bias, rng);
            Matrix x = random_matrix(rng, T, I);
            const Matrix r = random_matrix(rng, T, O);
            LinearParams g{p.weight, p.bias};
            std::fill(g.weight.data.begin(), g.weight.data.end(), 0.0);
            std::fill(g.bias.data.begin(), g.bias.data.end(), 0.0);
            const Matrix dx = linear_backward(x, p, r, g);
            auto f = [&] { return detail::probe(linear_forward(x, p), r); };
            bool bad = detail::compare_all(res, x.data(), dx.data(), f, "linear dx");
            bad |= detail::compare_all(res, p.weight.data, g.weight.data, f, "linear dw");
            bad |= detail::compare_all(res, p.bias.data, g.bias.data, f, "linear db");
            ++res.instances;
            res.failures += bad ? 1 : 0;
        }
        out.push_back(res);
    }
    {
        SuiteResult res{"lstm"};
        for (std::size_t n = 0; n < instances; ++n) {
            const auto D = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto H = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto T = static_cast<std::size_t>(rng.uniform_int(1, 5));
            const bool reverse = rng.uniform() < 0.5;
            LstmParams p{Tensor("U", Partition::Alignment, {4 * H, D}), Tensor("W", Partition::Alignment, {4 * H, H}),
                         Tensor("b", Partition::Alignment, {4 * H})};
            detail::fill_normal(p.U, rng, 0.8), detail::fill_normal(p.W, rng, 0.8), detail::fill_normal(p.b, rng, 0.8);
            Matrix x = random_matrix(rng, T, D);
            const Matrix r = random_matrix(rng, T, H);
            const LstmRun run = lstm_run(x, p, reverse);
            LstmParams g{p.U, p.W, p.b};
            for (Tensor* t : {&g.U, &g.W, &g.b}) std::fill(t->data.begin(), t->data.end(), 0.0);
            const Matrix dx = lstm_run_backward(x, p, run, r, g);
            auto f = [&] { return detail::probe(lstm_run(x, p, reverse).output, r); };
            bool bad = detail::compare_all(res, x.data(), dx.data(), f, "lstm dx");
            bad |= detail::compare_all(res, p.U.data, g.U.data, f, "lstm dU");
            bad |= detail::compare_all(res, p.W.data, g.W.data, f, "lstm dW");
            bad |= detail::compare_all(res, p.b.data, g.b.data, f, "lstm db");
            ++res.instances;
            res.failures += bad ? 1 : 0;
        }
        out.push_back(res);
    }
    {
        SuiteResult res{"bilstm"};
        for (std::size_t n = 0; n < instances; ++n) {
            const auto D = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto H = static_cast<std::size_t>(rng.uniform_int(1, 3));
            const auto T = static_cast<std::size_t>(rng.uniform_int(1, 4));
            std::vector<std::array<LstmParams, 2>> layers;
            std::size_t d = D;
            for (int l = 0; l < 2; ++l) {
                std::array<LstmParams, 2> layer;
                for (auto& lp : layer) {
                    lp = {Tensor("U", Partition::Alignment, {4 * H, d}), Tensor("W", Partition::Alignment, {4 * H, H}),
                          Tensor("b", Partition::Alignment, {4 * H})};
                    detail::fill_normal(lp.U, rng, 0.8), detail::fill_normal(lp.W, rng, 0.8);
                    detail::fill_normal(lp.b, rng, 0.8);
                }
                layers.push_back(std::move(layer));
                d = 2 * H;
            }
            Matrix x = random_matrix(rng, T, D);
            const Matrix r = random_matrix(rng, T, 2 * H);
            const BiLstmResult fwd = bilstm_forward(x, layers);
            auto grads = layers;
            for (auto& layer : grads)
                for (auto& lp : layer)
                    for (Tensor* t : {&lp.U, &lp.W, &lp.b}) std::fill(t->data.begin(), t->data.end(), 0.0);
            const Matrix dx = bilstm_backward(fwd, layers, r, grads);
            auto f = [&] { return detail::probe(bilstm_forward(x, layers).output, r); };
            bool bad = detail::compare_all(res, x.data(), dx.data(), f, "bilstm dx");
            for (std::size_t l = 0; l < layers.size(); ++l)
                for (std::size_t dir = 0; dir < 2; ++dir) {
                    const std::string w = "bilstm l" + std::to_string(l) + "d" + std::to_string(dir);
                    bad |= detail::compare_all(res, layers[l][dir].U.data, grads[l][dir].U.data, f, w + " dU");
                    bad |= detail::compare_all(res, layers[l][dir].W.data, grads[l][dir].W.data, f, w + " dW");
                    bad |= detail::compare_all(res, layers[l][dir].b.data, grads[l][dir].b.data, f, w + " db");
                }
            ++res.instances;
            res.failures += bad ? 1 : 0;
        }
        out.push_back(res);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Whole model and objective

struct SmallInstance {
    SequenceModel model;
    Matrix frames;
    Labeling labels;
};

// A tiny random model (C=3, C'=4, H=3, two BiLSTM layers, |G|=3) with a random
// temporal variant and a feasible labeling for its output length.
inline SmallInstance random_small_instance(Xorshift64Star& rng) {
    static constexpr TemporalVariant variants[] = {TemporalVariant::FrameC1, TemporalVariant::FrameC3,
                                                   TemporalVariant::Subgloss, TemporalVariant::Gloss};
    ModelConfig cfg;
    cfg.num_classes = 4;
    cfg.input_dim = 3;
    cfg.channels = 4;
    cfg.hidden = 3;
    cfg.layers = 2;
    cfg.variant = variants[rng.uniform_int(0, 3)];
    cfg.batch_norm = rng.uniform() < 0.8;
    const std::size_t t_out = static_cast<std::size_t>(rng.uniform_int(3, 5));
    std::size_t T = min_input_length(cfg.variant);
    while (output_length(cfg.variant, T) < t_out) ++T;
    SmallInstance inst{SequenceModel(cfg), random_matrix(rng, T, cfg.input_dim), {}};
    inst.model.initialize(rng.next());
    // Move BN away from identity so its affine gradients are exercised.
    for (auto& b : inst.model.params().conv) {
        for (double& v : b.gamma.data) v = rng.uniform(0.5, 1.5);
        for (double& v : b.beta.data) v = rng.uniform(-0.5, 0.5);
    }
    do {
        inst.labels = random_labeling(rng, static_cast<std::size_t>(rng.uniform_int(1, 2)), 3);
    } while (!ctc_feasible(t_out, inst.labels));
    return inst;
}

namespace detail {

// Checks every trainable coordinate of `model` against central differences
// of `loss`, which must run a forward pass on the model.
inline bool check_model_params(SuiteResult& res, SequenceModel& model, const ModelParams& analytic,
                               const std::function<double()>& loss, const std::vector<std::size_t>& base_signature,
                               const std::string& where) {
    std::vector<Tensor*> params;
    std::vector<const Tensor*> grads;
    model.params().for_each([&](Tensor& t) { params.push_back(&t); });
    analytic.for_each([&](const Tensor& t) { grads.push_back(&t); });
    bool bad = false;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k]->trainable) continue;
        bad |= compare_all(res, params[k]->data, grads[k]->data, loss, where + " " + params[k]->name,
                           [&] { return model.activation_signature() == base_signature; });
    }
    return bad;
}

}  // namespace detail

// Full-model gradients for a random linear probe on Z and Z~.
inline SuiteResult model_gradient_suite(std::size_t instances, std::uint64_t seed) {
    SuiteResult res{"model-backward"};
    Xorshift64Star rng = Xorshift64Star::derive(seed, 0x30DE1);
    for (std::size_t n = 0; n < instances; ++n) {
        SmallInstance inst = random_small_instance(rng);
        auto& model = inst.model;
        const ModelOutput out = model.forward(inst.frames, Mode::Train, false);
        const Matrix rz = random_matrix(rng, out.contextual_logits.rows(), out.contextual_logits.cols());
        const Matrix rv = random_matrix(rng, out.visual_logits.rows(), out.visual_logits.cols());
        const ModelParams g = model.backward(rz, rv);
        const auto sig = model.activation_signature();
        auto loss = [&] {
            const ModelOutput o = model.forward(inst.frames, Mode::Train, false);
            return detail::probe(o.contextual_logits, rz) + detail::probe(o.visual_logits, rv);
        };
        const bool bad = detail::check_model_params(res, model, g, loss, sig, "instance " + std::to_string(n));
        ++res.instances;
        res.failures += bad ? 1 : 0;
    }
    return res;
}

// total_loss gradients with both auxiliary terms on; the alignment term's
// teacher logits are frozen at the unperturbed forward pass.
inline SuiteResult objective_gradient_suite(std::size_t instances, std::uint64_t seed) {
    SuiteResult res{"objective"};
    Xorshift64Star rng = Xorshift64Star::derive(seed, 0x0B7EC);
    for (std::size_t n = 0; n < instances; ++n) {
        SmallInstance inst = random_small_instance(rng);
        auto& model = inst.model;
        LossConfig cfg;
        cfg.alpha = rng.uniform(0.5, 25.0);
        cfg.tau = rng.uniform(1.0, 8.0);
        cfg.enable_ve = rng.uniform() < 0.75;
        cfg.enable_va = rng.uniform() < 0.75;
        cfg.aux_probe = false;
        const ObjectiveResult r = total_loss(model, inst.frames, inst.labels, cfg, Mode::Train, false);
        const auto sig = model.activation_signature();
        const Matrix teacher = r.output.contextual_logits;
        auto loss = [&] {
            const ModelOutput o = model.forward(inst.frames, Mode::Train, false);
            double l = ctc_loss(o.contextual_logits, inst.labels);
            if (cfg.enable_ve) l += ctc_loss(o.visual_logits, inst.labels);
            if (cfg.enable_va) l += cfg.alpha * va_loss(teacher, o.visual_logits, cfg.tau);
            return l;
        };
        const bool bad = detail::check_model_params(res, model, r.grads, loss, sig, "instance " + std::to_string(n));
        ++res.instances;
        res.failures += bad ? 1 : 0;
    }
    return res;
}

}  // namespace cslr::check
