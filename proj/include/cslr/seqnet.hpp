#pragma once

// The trainable sequence network: temporal convolution front end
// (Conv-BN-ReLU blocks and max pooling), an auxiliary classifier on the
// visual features, a stacked bidirectional LSTM and the primary classifier.
// Every layer has a hand-written backward pass.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cslr/error.hpp"
#include "cslr/matrix.hpp"
#include "cslr/prng.hpp"

namespace cslr {

// ---------------------------------------------------------------------------
// Temporal variants

enum class TemporalVariant { FrameC1, FrameC3, Subgloss, Gloss };

enum class Mode { Train, Eval };

struct TemporalStage {
    enum Kind { Conv, Pool } kind;
    std::size_t kernel;
};

inline std::string_view variant_name(TemporalVariant v) {
    switch (v) {
        case TemporalVariant::FrameC1: return "frame-c1";
        case TemporalVariant::FrameC3: return "frame-c3";
        case TemporalVariant::Subgloss: return "subgloss";
        case TemporalVariant::Gloss: return "gloss";
    }
    return "?";
}

inline TemporalVariant parse_variant(std::string_view s) {
    for (auto v : {TemporalVariant::FrameC1, TemporalVariant::FrameC3, TemporalVariant::Subgloss,
                   TemporalVariant::Gloss})
        if (variant_name(v) == s) return v;
    throw ConfigError("unknown temporal variant: " + std::string(s));
}

inline std::vector<TemporalStage> variant_stages(TemporalVariant v) {
    using S = TemporalStage;
    switch (v) {
        case TemporalVariant::FrameC1: return {{S::Conv, 1}};
        case TemporalVariant::FrameC3: return {{S::Conv, 3}};
        case TemporalVariant::Subgloss: return {{S::Conv, 5}, {S::Pool, 2}};
        case TemporalVariant::Gloss: return {{S::Conv, 5}, {S::Pool, 2}, {S::Conv, 5}, {S::Pool, 2}};
    }
    return {};
}

// Frames of input seen by one output frame.
inline std::size_t receptive_field(TemporalVariant v) {
    std::size_t field = 1, stride = 1;
    for (const auto& st : variant_stages(v)) {
        field += (st.kernel - 1) * stride;
        if (st.kind == TemporalStage::Pool) stride *= st.kernel;
    }
    return field;
}

// Valid convolutions shrink by k-1; pooling floors T/2. Returns 0 when the
// sequence vanishes.
inline std::size_t output_length(TemporalVariant v, std::size_t frames) {
    std::size_t t = frames;
    for (const auto& st : variant_stages(v)) {
        if (st.kind == TemporalStage::Conv) {
            if (t < st.kernel) return 0;
            t = t - st.kernel + 1;
        } else {
            t /= st.kernel;
        }
        if (t == 0) return 0;
    }
    return t;
}

inline std::size_t min_input_length(TemporalVariant v) {
    std::size_t t = 1;
    while (output_length(v, t) < 1) ++t;
    return t;
}

// ---------------------------------------------------------------------------
// Parameters

// Membership in the feature extractor plus auxiliary classifier (visual) or in
// the alignment module (BiLSTM stack plus primary classifier).
enum class Partition { Visual, Alignment };

struct Tensor {
    std::string name;
    Partition partition = Partition::Visual;
    bool trainable = true;
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::string n, Partition p, std::vector<std::size_t> s, bool train = true)
        : name(std::move(n)), partition(p), trainable(train), shape(std::move(s)) {
        std::size_t count = 1;
        for (auto d : shape) count *= d;
        data.assign(count, 0.0);
    }

    std::size_t size() const noexcept { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    // 2-D access for weight matrices (rows = outputs).
    double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct ConvBlockParams {
    Tensor weight;  // Cout x Cin x k
    Tensor bias;    // Cout
    Tensor gamma;   // Cout
    Tensor beta;    // Cout
    Tensor running_mean;
    Tensor running_var;

    friend bool operator==(const ConvBlockParams&, const ConvBlockParams&) = default;
};

// Gate blocks are stacked in the order input, forget, output, candidate; each
// block is H rows.
struct LstmParams {
    Tensor U;  // 4H x D, input to hidden
    Tensor W;  // 4H x H, hidden to hidden
    Tensor b;  // 4H

    std::size_t hidden() const { return W.dim(1); }
    std::size_t input() const { return U.dim(1); }

    friend bool operator==(const LstmParams&, const LstmParams&) = default;
};

struct LinearParams {
    Tensor weight;  // out x in
    Tensor bias;    // out

    std::size_t in() const { return weight.dim(1); }
    std::size_t out() const { return weight.dim(0); }

    friend bool operator==(const LinearParams&, const LinearParams&) = default;
};

struct ModelConfig {
    std::size_t num_classes = 11;  // |G'| including blank
    std::size_t input_dim = 16;    // C
    TemporalVariant variant = TemporalVariant::Gloss;
    std::size_t channels = 64;     // C'
    std::size_t hidden = 64;       // per direction
    std::size_t layers = 2;
    bool batch_norm = true;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelParams {
    std::vector<ConvBlockParams> conv;
    LinearParams aux;  // F_a
    std::vector<std::array<LstmParams, 2>> lstm;  // [layer][forward, backward]
    LinearParams primary;  // F_p

    template <class F>
    void for_each(F&& f) {
        for (auto& b : conv) {
            f(b.weight), f(b.bias), f(b.gamma), f(b.beta), f(b.running_mean), f(b.running_var);
        }
        f(aux.weight), f(aux.bias);
        for (auto& layer : lstm)
            for (auto& d : layer) f(d.U), f(d.W), f(d.b);
        f(primary.weight), f(primary.bias);
    }
    template <class F>
    void for_each(F&& f) const {
        const_cast<ModelParams*>(this)->for_each([&](Tensor& t) { f(static_cast<const Tensor&>(t)); });
    }

    // Same structure, all values zero.
    ModelParams zeros_like() const {
        ModelParams z = *this;
        z.for_each([](Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
        return z;
    }

    std::size_t trainable_count() const {
        std::size_t n = 0;
        for_each([&](const Tensor& t) { n += t.trainable ? t.size() : 0; });
        return n;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline ModelParams make_params(const ModelConfig& cfg) {
    if (cfg.num_classes < 2 || cfg.input_dim < 1 || cfg.channels < 1 || cfg.hidden < 1 || cfg.layers < 1)
        throw ConfigError("model dimensions must be positive (num_classes >= 2)");
    ModelParams p;
    std::size_t in = cfg.input_dim;
    std::size_t conv_index = 0;
    for (const auto& st : variant_stages(cfg.variant)) {
        if (st.kind != TemporalStage::Conv) continue;
        const std::string pre = "temporal.conv" + std::to_string(conv_index++) + ".";
        const auto C = cfg.channels;
        ConvBlockParams b{
            Tensor(pre + "weight", Partition::Visual, {C, in, st.kernel}),
            Tensor(pre + "bias", Partition::Visual, {C}),
            Tensor(pre + "bn.gamma", Partition::Visual, {C}),
            Tensor(pre + "bn.beta", Partition::Visual, {C}),
            Tensor(pre + "bn.running_mean", Partition::Visual, {C}, false),
            Tensor(pre + "bn.running_var", Partition::Visual, {C}, false),
        };
        std::fill(b.gamma.data.begin(), b.gamma.data.end(), 1.0);
        std::fill(b.running_var.data.begin(), b.running_var.data.end(), 1.0);
        p.conv.push_back(std::move(b));
        in = cfg.channels;
    }
    p.aux = {Tensor("aux.weight", Partition::Visual, {cfg.num_classes, cfg.channels}),
             Tensor("aux.bias", Partition::Visual, {cfg.num_classes})};
    std::size_t d = cfg.channels;
    const auto H = cfg.hidden;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::array<LstmParams, 2> layer;
        for (int dir = 0; dir < 2; ++dir) {
            const std::string pre = "lstm.l" + std::to_string(l) + (dir == 0 ? ".fwd." : ".bwd.");
            layer[dir] = {Tensor(pre + "U", Partition::Alignment, {4 * H, d}),
                          Tensor(pre + "W", Partition::Alignment, {4 * H, H}),
                          Tensor(pre + "b", Partition::Alignment, {4 * H})};
        }
        p.lstm.push_back(std::move(layer));
        d = 2 * H;
    }
    p.primary = {Tensor("primary.weight", Partition::Alignment, {cfg.num_classes, 2 * H}),
                 Tensor("primary.bias", Partition::Alignment, {cfg.num_classes})};
    return p;
}

// Uniform(+-1/sqrt(fan_in)) for every affine map, biases share their
// weight's bound, forget-gate bias 1, BN affine identity.
inline void initialize(ModelParams& p, std::uint64_t seed) {
    Xorshift64Star rng = Xorshift64Star::derive(seed, 0x1417);
    auto fill = [&](Tensor& t, double bound) {
        for (double& v : t.data) v = rng.uniform(-bound, bound);
    };
    for (auto& b : p.conv) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(b.weight.dim(1) * b.weight.dim(2)));
        fill(b.weight, bound);
        fill(b.bias, bound);
    }
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.aux.in()));
        fill(p.aux.weight, bound);
        fill(p.aux.bias, bound);
    }
    for (auto& layer : p.lstm) {
        for (auto& d : layer) {
            const double bu = 1.0 / std::sqrt(static_cast<double>(d.input()));
            const double bw = 1.0 / std::sqrt(static_cast<double>(d.hidden()));
            fill(d.U, bu);
            fill(d.W, bw);
            fill(d.b, bu);
            const auto H = d.hidden();
            for (std::size_t j = H; j < 2 * H; ++j) d.b.data[j] = 1.0;
        }
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.primary.in()));
    fill(p.primary.weight, bound);
    fill(p.primary.bias, bound);
}

// ---------------------------------------------------------------------------
// Layers

// Valid (unpadded) 1-D convolution over time. x: T x Cin -> (T-k+1) x Cout.
inline Matrix conv1d_forward(const Matrix& x, const Tensor& weight, const Tensor& bias) {
    const std::size_t Cout = weight.dim(0), Cin = weight.dim(1), k = weight.dim(2);
    if (x.cols() != Cin) throw InvalidInput("conv1d: channel mismatch");
    if (x.rows() < k) throw InvalidInput("conv1d: sequence shorter than kernel");
    const std::size_t To = x.rows() - k + 1;
    Matrix y(To, Cout);
    for (std::size_t t = 0; t < To; ++t)
        for (std::size_t o = 0; o < Cout; ++o) {
            double s = bias.data[o];
            const double* w = &weight.data[o * Cin * k];
            for (std::size_t c = 0; c < Cin; ++c)
                for (std::size_t j = 0; j < k; ++j) s += w[c * k + j] * x(t + j, c);
            y(t, o) = s;
        }
    return y;
}

inline Matrix conv1d_backward(const Matrix& x, const Tensor& weight, const Matrix& dy, Tensor& dweight,
                              Tensor& dbias) {
    const std::size_t Cout = weight.dim(0), Cin = weight.dim(1), k = weight.dim(2);
    Matrix dx(x.rows(), Cin);
    for (std::size_t t = 0; t < dy.rows(); ++t)
        for (std::size_t o = 0; o < Cout; ++o) {
            const double g = dy(t, o);
            if (g == 0.0) continue;
            dbias.data[o] += g;
            const double* w = &weight.data[o * Cin * k];
            double* dw = &dweight.data[o * Cin * k];
            for (std::size_t c = 0; c < Cin; ++c)
                for (std::size_t j = 0; j < k; ++j) {
                    dw[c * k + j] += g * x(t + j, c);
                    dx(t + j, c) += g * w[c * k + j];
                }
        }
    return dx;
}

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
    Mode mode = Mode::Train;
};

// Normalizes each channel over the time axis. Train mode uses the sequence's
// own (biased) moments and folds them into the running moments; eval mode
// uses the running moments.
inline Matrix batch_norm_forward(const Matrix& x, ConvBlockParams& p, Mode mode, BatchNormCache* cache = nullptr,
                                 bool update_running = true) {
    const std::size_t T = x.rows(), C = x.cols();
    if (p.gamma.size() != C) throw InvalidInput("batch norm: channel mismatch");
    std::vector<double> mean(C), var(C);
    if (mode == Mode::Train) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t t = 0; t < T; ++t) s += x(t, c);
            mean[c] = s / static_cast<double>(T);
            double v = 0.0;
            for (std::size_t t = 0; t < T; ++t) v += (x(t, c) - mean[c]) * (x(t, c) - mean[c]);
            var[c] = v / static_cast<double>(T);
        }
        if (update_running)
            for (std::size_t c = 0; c < C; ++c) {
                p.running_mean.data[c] =
                    (1.0 - kBatchNormMomentum) * p.running_mean.data[c] + kBatchNormMomentum * mean[c];
                p.running_var.data[c] =
                    (1.0 - kBatchNormMomentum) * p.running_var.data[c] + kBatchNormMomentum * var[c];
            }
    } else {
        mean = p.running_mean.data;
        var = p.running_var.data;
    }
    Matrix y(T, C);
    BatchNormCache local;
    BatchNormCache& bc = cache ? *cache : local;
    bc.mode = mode;
    bc.xhat = Matrix(T, C);
    bc.inv_std.resize(C);
    for (std::size_t c = 0; c < C; ++c) {
        bc.inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEps);
        for (std::size_t t = 0; t < T; ++t) {
            const double xh = (x(t, c) - mean[c]) * bc.inv_std[c];
            bc.xhat(t, c) = xh;
            y(t, c) = p.gamma.data[c] * xh + p.beta.data[c];
        }
    }
    return y;
}

inline Matrix batch_norm_backward(const BatchNormCache& cache, const ConvBlockParams& p, const Matrix& dy,
                                  Tensor& dgamma, Tensor& dbeta) {
    const std::size_t T = dy.rows(), C = dy.cols();
    Matrix dx(T, C);
    const double n = static_cast<double>(T);
    for (std::size_t c = 0; c < C; ++c) {
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            dgamma.data[c] += dy(t, c) * cache.xhat(t, c);
            dbeta.data[c] += dy(t, c);
            const double dxh = dy(t, c) * p.gamma.data[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * cache.xhat(t, c);
        }
        for (std::size_t t = 0; t < T; ++t) {
            const double dxh = dy(t, c) * p.gamma.data[c];
            if (cache.mode == Mode::Train)
                dx(t, c) = cache.inv_std[c] / n * (n * dxh - sum_dxh - cache.xhat(t, c) * sum_dxh_xh);
            else
                dx(t, c) = dxh * cache.inv_std[c];
        }
    }
    return dx;
}

inline Matrix relu_forward(const Matrix& x) {
    Matrix y = x;
    for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

// Uses the forward output as the mask.
inline Matrix relu_backward(const Matrix& y, const Matrix& dy) {
    Matrix dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
        if (!(y.data()[i] > 0.0)) dx.data()[i] = 0.0;
    return dx;
}

struct PoolCache {
    std::size_t input_rows = 0;
    std::vector<std::size_t> argmax;  // source row per output element
};

// Kernel 2, stride 2, trailing odd frame dropped. Ties pick the earlier frame.
inline Matrix max_pool_forward(const Matrix& x, std::size_t kernel, PoolCache* cache = nullptr) {
    const std::size_t To = x.rows() / kernel, C = x.cols();
    Matrix y(To, C);
    if (cache) {
        cache->input_rows = x.rows();
        cache->argmax.assign(To * C, 0);
    }
    for (std::size_t t = 0; t < To; ++t)
        for (std::size_t c = 0; c < C; ++c) {
            std::size_t best = t * kernel;
            for (std::size_t j = 1; j < kernel; ++j)
                if (x(t * kernel + j, c) > x(best, c)) best = t * kernel + j;
            y(t, c) = x(best, c);
            if (cache) cache->argmax[t * C + c] = best;
        }
    return y;
}

inline Matrix max_pool_backward(const PoolCache& cache, const Matrix& dy) {
    Matrix dx(cache.input_rows, dy.cols());
    for (std::size_t t = 0; t < dy.rows(); ++t)
        for (std::size_t c = 0; c < dy.cols(); ++c) dx(cache.argmax[t * dy.cols() + c], c) += dy(t, c);
    return dx;
}

// Per-frame affine map: out(t) = W x(t) + b.
inline Matrix linear_forward(const Matrix& x, const LinearParams& p) {
    if (x.cols() != p.in()) throw InvalidInput("linear: input width mismatch");
    Matrix y(x.rows(), p.out());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto xr = x.row(t);
        for (std::size_t o = 0; o < p.out(); ++o)
            y(t, o) = p.bias.data[o] + dot({&p.weight.data[o * p.in()], p.in()}, xr);
    }
    return y;
}

inline Matrix linear_backward(const Matrix& x, const LinearParams& p, const Matrix& dy, LinearParams& grad) {
    Matrix dx(x.rows(), p.in());
    for (std::size_t t = 0; t < x.rows(); ++t)
        for (std::size_t o = 0; o < p.out(); ++o) {
            const double g = dy(t, o);
            if (g == 0.0) continue;
            grad.bias.data[o] += g;
            const double* w = &p.weight.data[o * p.in()];
            double* dw = &grad.weight.data[o * p.in()];
            for (std::size_t i = 0; i < p.in(); ++i) {
                dw[i] += g * x(t, i);
                dx(t, i) += g * w[i];
            }
        }
    return dx;
}

// ---------------------------------------------------------------------------
// LSTM

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmState {
    std::vector<double> h, c;
    // Gates of the step that produced this state; empty for an initial state.
    std::vector<double> i, f, o, g;

    static LstmState zero(std::size_t hidden) {
        return {std::vector<double>(hidden, 0.0), std::vector<double>(hidden, 0.0), {}, {}, {}, {}};
    }
};

// One step:
//   i, f, o = sigmoid(U x + W h_prev + b) per gate block
//   g       = tanh(U_c x + W_c h_prev + b_c)
//   c       = f * c_prev + i * g
//   h       = o * tanh(c)
inline LstmState lstm_cell(std::span<const double> x, const LstmState& prev, const LstmParams& p) {
    const std::size_t H = p.hidden(), D = p.input();
    if (x.size() != D || prev.h.size() != H || prev.c.size() != H)
        throw InvalidInput("lstm_cell: shape mismatch");
    LstmState s;
    s.i.resize(H), s.f.resize(H), s.o.resize(H), s.g.resize(H), s.c.resize(H), s.h.resize(H);
    for (std::size_t gate = 0; gate < 4; ++gate) {
        for (std::size_t j = 0; j < H; ++j) {
            const std::size_t r = gate * H + j;
            const double a = p.b.data[r] + dot({&p.U.data[r * D], D}, x) + dot({&p.W.data[r * H], H}, prev.h);
            switch (gate) {
                case 0: s.i[j] = sigmoid(a); break;
                case 1: s.f[j] = sigmoid(a); break;
                case 2: s.o[j] = sigmoid(a); break;
                default: s.g[j] = std::tanh(a); break;
            }
        }
    }
    for (std::size_t j = 0; j < H; ++j) {
        s.c[j] = s.f[j] * prev.c[j] + s.i[j] * s.g[j];
        s.h[j] = s.o[j] * std::tanh(s.c[j]);
    }
    return s;
}

struct LstmRun {
    bool reverse = false;
    std::vector<LstmState> states;  // indexed by frame, not by step order
    Matrix output;                  // T x H
};

// Runs one direction over the whole sequence from a zero state.
inline LstmRun lstm_run(const Matrix& x, const LstmParams& p, bool reverse) {
    const std::size_t T = x.rows(), H = p.hidden();
    LstmRun run{reverse, std::vector<LstmState>(T), Matrix(T, H)};
    LstmState prev = LstmState::zero(H);
    for (std::size_t step = 0; step < T; ++step) {
        const std::size_t t = reverse ? T - 1 - step : step;
        run.states[t] = lstm_cell(x.row(t), prev, p);
        std::copy(run.states[t].h.begin(), run.states[t].h.end(), run.output.row(t).begin());
        prev = run.states[t];
    }
    return run;
}

// Backpropagation through time for one direction. dh: T x H gradient on the
// run's outputs. Accumulates into grad, returns d loss / d x.
inline Matrix lstm_run_backward(const Matrix& x, const LstmParams& p, const LstmRun& run, const Matrix& dh,
                                LstmParams& grad) {
    const std::size_t T = x.rows(), H = p.hidden(), D = p.input();
    Matrix dx(T, D);
    std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), da(4 * H);
    const std::vector<double> zeros(H, 0.0);
    for (std::size_t step = T; step-- > 0;) {
        const std::size_t t = run.reverse ? T - 1 - step : step;
        const LstmState& s = run.states[t];
        const std::vector<double>* h_prev = &zeros;
        const std::vector<double>* c_prev = &zeros;
        if (step > 0) {
            const std::size_t tp = run.reverse ? t + 1 : t - 1;
            h_prev = &run.states[tp].h;
            c_prev = &run.states[tp].c;
        }
        for (std::size_t j = 0; j < H; ++j) {
            const double dhj = dh(t, j) + dh_next[j];
            const double tc = std::tanh(s.c[j]);
            const double dc = dhj * s.o[j] * (1.0 - tc * tc) + dc_next[j];
            da[j] = dc * s.g[j] * s.i[j] * (1.0 - s.i[j]);
            da[H + j] = dc * (*c_prev)[j] * s.f[j] * (1.0 - s.f[j]);
            da[2 * H + j] = dhj * tc * s.o[j] * (1.0 - s.o[j]);
            da[3 * H + j] = dc * s.i[j] * (1.0 - s.g[j] * s.g[j]);
            dc_next[j] = dc * s.f[j];
        }
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        auto xr = x.row(t);
        for (std::size_t r = 0; r < 4 * H; ++r) {
            const double a = da[r];
            grad.b.data[r] += a;
            double* dU = &grad.U.data[r * D];
            const double* U = &p.U.data[r * D];
            for (std::size_t k = 0; k < D; ++k) {
                dU[k] += a * xr[k];
                dx(t, k) += a * U[k];
            }
            double* dW = &grad.W.data[r * H];
            const double* W = &p.W.data[r * H];
            for (std::size_t k = 0; k < H; ++k) {
                dW[k] += a * (*h_prev)[k];
                dh_next[k] += a * W[k];
            }
        }
    }
    return dx;
}

struct BiLstmLayerCache {
    Matrix input;
    std::array<LstmRun, 2> runs;
};

struct BiLstmResult {
    Matrix output;  // T x 2H, [forward | backward]
    std::vector<BiLstmLayerCache> layers;
};

inline BiLstmResult bilstm_forward(const Matrix& seq, const std::vector<std::array<LstmParams, 2>>& layers) {
    BiLstmResult r;
    Matrix x = seq;
    for (const auto& layer : layers) {
        BiLstmLayerCache lc;
        lc.input = x;
        lc.runs[0] = lstm_run(x, layer[0], false);
        lc.runs[1] = lstm_run(x, layer[1], true);
        const std::size_t H0 = layer[0].hidden(), H1 = layer[1].hidden();
        Matrix y(x.rows(), H0 + H1);
        for (std::size_t t = 0; t < x.rows(); ++t) {
            std::copy_n(lc.runs[0].output.row(t).begin(), H0, y.row(t).begin());
            std::copy_n(lc.runs[1].output.row(t).begin(), H1, y.row(t).begin() + static_cast<long>(H0));
        }
        r.layers.push_back(std::move(lc));
        x = std::move(y);
    }
    r.output = std::move(x);
    return r;
}

inline Matrix bilstm_backward(const BiLstmResult& fwd, const std::vector<std::array<LstmParams, 2>>& layers,
                              const Matrix& dy, std::vector<std::array<LstmParams, 2>>& grads) {
    Matrix d = dy;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& lc = fwd.layers[l];
        const std::size_t T = d.rows(), H0 = layers[l][0].hidden(), H1 = layers[l][1].hidden();
        Matrix d0(T, H0), d1(T, H1);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t j = 0; j < H0; ++j) d0(t, j) = d(t, j);
            for (std::size_t j = 0; j < H1; ++j) d1(t, j) = d(t, H0 + j);
        }
        Matrix dx = lstm_run_backward(lc.input, layers[l][0], lc.runs[0], d0, grads[l][0]);
        const Matrix dx1 = lstm_run_backward(lc.input, layers[l][1], lc.runs[1], d1, grads[l][1]);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] += dx1.data()[i];
        d = std::move(dx);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Temporal front end

struct TemporalStageCache {
    TemporalStage stage;
    Matrix input;
    Matrix pre_bn;  // conv output
    BatchNormCache bn;
    Matrix output;  // after ReLU (conv) or pooling
    PoolCache pool;
};

struct TemporalResult {
    Matrix output;
    std::vector<TemporalStageCache> stages;
};

inline TemporalResult temporal_forward(const Matrix& frames, TemporalVariant variant, ModelParams& params,
                                       Mode mode, bool batch_norm = true, bool update_running = true) {
    if (frames.rows() < 1 || frames.cols() < 1) throw InvalidInput("empty frame sequence");
    if (output_length(variant, frames.rows()) < 1)
        throw SequenceTooShort(std::string(variant_name(variant)), frames.rows(), min_input_length(variant));
    TemporalResult r;
    Matrix x = frames;
    std::size_t conv_index = 0;
    for (const auto& st : variant_stages(variant)) {
        TemporalStageCache sc;
        sc.stage = st;
        sc.input = x;
        if (st.kind == TemporalStage::Conv) {
            auto& block = params.conv.at(conv_index++);
            sc.pre_bn = conv1d_forward(x, block.weight, block.bias);
            const Matrix normed =
                batch_norm ? batch_norm_forward(sc.pre_bn, block, mode, &sc.bn, update_running) : sc.pre_bn;
            sc.output = relu_forward(normed);
        } else {
            sc.output = max_pool_forward(x, st.kernel, &sc.pool);
        }
        x = sc.output;
        r.stages.push_back(std::move(sc));
    }
    r.output = std::move(x);
    return r;
}

inline Matrix temporal_backward(const TemporalResult& fwd, const ModelParams& params, const Matrix& dy,
                                ModelParams& grads, bool batch_norm = true) {
    Matrix d = dy;
    std::size_t conv_index = params.conv.size();
    for (std::size_t s = fwd.stages.size(); s-- > 0;) {
        const auto& sc = fwd.stages[s];
        if (sc.stage.kind == TemporalStage::Pool) {
            d = max_pool_backward(sc.pool, d);
            continue;
        }
        --conv_index;
        const auto& block = params.conv[conv_index];
        auto& g = grads.conv[conv_index];
        d = relu_backward(sc.output, d);
        if (batch_norm) d = batch_norm_backward(sc.bn, block, d, g.gamma, g.beta);
        d = conv1d_backward(sc.input, block.weight, d, g.weight, g.bias);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Model

struct ModelOutput {
    Matrix visual_logits;      // Z~ = F_a(V)
    Matrix contextual_logits;  // Z  = F_p(BiLSTM(V))
    // Per-frame mean of the input, forget and output gates of the last
    // forward-direction LSTM (T' x 3).
    Matrix last_forward_gates;
    // l2 norm of each frame's features entering each BiLSTM layer.
    std::vector<std::vector<double>> layer_input_norms;
};

// Which parameters the auxiliary-logit gradient may reach.
enum class AuxRoute {
    Full,     // F_a and the feature extractor
    HeadOnly  // F_a only; the features are treated as constants
};

class SequenceModel {
public:
    SequenceModel() = default;
    explicit SequenceModel(ModelConfig cfg) : cfg_(cfg), params_(make_params(cfg)) {}
    SequenceModel(ModelConfig cfg, ModelParams params) : cfg_(cfg), params_(std::move(params)) {}

    const ModelConfig& config() const noexcept { return cfg_; }
    ModelParams& params() noexcept { return params_; }
    const ModelParams& params() const noexcept { return params_; }

    void initialize(std::uint64_t seed) { cslr::initialize(params_, seed); }

    // Keeps intermediates for backward(). In train mode BN running moments
    // are updated unless update_running is false.
    ModelOutput forward(const Matrix& frames, Mode mode, bool update_running = true) {
        if (frames.cols() != cfg_.input_dim) throw InvalidInput("frame width does not match model input_dim");
        Cache c;
        c.temporal = temporal_forward(frames, cfg_.variant, params_, mode, cfg_.batch_norm, update_running);
        const Matrix& visual = c.temporal.output;
        c.bilstm = bilstm_forward(visual, params_.lstm);

        ModelOutput out;
        out.visual_logits = linear_forward(visual, params_.aux);
        out.contextual_logits = linear_forward(c.bilstm.output, params_.primary);

        const std::size_t T = visual.rows();
        for (const auto& layer : c.bilstm.layers) {
            std::vector<double> norms(T);
            for (std::size_t t = 0; t < T; ++t) norms[t] = l2_norm(layer.input.row(t));
            out.layer_input_norms.push_back(std::move(norms));
        }
        const LstmRun& last = c.bilstm.layers.back().runs[0];
        out.last_forward_gates = Matrix(T, 3);
        for (std::size_t t = 0; t < T; ++t) {
            const auto& s = last.states[t];
            const double H = static_cast<double>(s.i.size());
            double si = 0, sf = 0, so = 0;
            for (std::size_t j = 0; j < s.i.size(); ++j) si += s.i[j], sf += s.f[j], so += s.o[j];
            out.last_forward_gates(t, 0) = si / H;
            out.last_forward_gates(t, 1) = sf / H;
            out.last_forward_gates(t, 2) = so / H;
        }
        cache_ = std::move(c);
        return out;
    }

    // Gradients for every tensor given upstream gradients on Z (contextual)
    // and Z~ (visual). Either may be empty to mean zero.
    ModelParams backward(const Matrix& d_contextual, const Matrix& d_visual, AuxRoute route = AuxRoute::Full) const {
        if (!cache_) throw StateError("backward called without a forward pass");
        const Cache& c = *cache_;
        ModelParams g = params_.zeros_like();
        const Matrix& visual = c.temporal.output;
        Matrix dv(visual.rows(), visual.cols());
        if (!d_contextual.empty()) {
            const Matrix dh = linear_backward(c.bilstm.output, params_.primary, d_contextual, g.primary);
            dv = bilstm_backward(c.bilstm, params_.lstm, dh, g.lstm);
        }
        if (!d_visual.empty()) {
            const Matrix dva = linear_backward(visual, params_.aux, d_visual, g.aux);
            if (route == AuxRoute::Full)
                for (std::size_t i = 0; i < dv.size(); ++i) dv.data()[i] += dva.data()[i];
        }
        temporal_backward(c.temporal, params_, dv, g, cfg_.batch_norm);
        return g;
    }

    // Gradient of F_a alone for an upstream gradient on Z~, features held
    // constant.
    void accumulate_aux_head_gradient(const Matrix& d_visual, LinearParams& grad) const {
        if (!cache_) throw StateError("backward called without a forward pass");
        linear_backward(cache_->temporal.output, params_.aux, d_visual, grad);
    }

    // ReLU masks and pooling choices of the cached forward pass. Two passes
    // with equal signatures lie on the same smooth piece of the network.
    std::vector<std::size_t> activation_signature() const {
        if (!cache_) throw StateError("no forward pass cached");
        std::vector<std::size_t> sig;
        for (const auto& st : cache_->temporal.stages) {
            if (st.stage.kind == TemporalStage::Pool) {
                sig.insert(sig.end(), st.pool.argmax.begin(), st.pool.argmax.end());
            } else {
                for (double v : st.output.data()) sig.push_back(v > 0.0 ? 1 : 0);
            }
        }
        return sig;
    }

    bool has_cache() const noexcept { return cache_.has_value(); }
    void clear_cache() noexcept { cache_.reset(); }

private:
    struct Cache {
        TemporalResult temporal;
        BiLstmResult bilstm;
    };

    ModelConfig cfg_;
    ModelParams params_;
    std::optional<Cache> cache_;
};

}  // namespace cslr
