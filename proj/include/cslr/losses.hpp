#pragma once

// The training objective: primary CTC on the contextual logits, visual
// enhancement (CTC on the auxiliary logits) and temperature-softened
// visual alignment distillation from the contextual to the auxiliary logits.
//
//   total = ctc(Z) + [ve] ctc(Z~) + [va] alpha * mean_t KL(softmax(z_t/tau) || softmax(z~_t/tau))
//
// The distillation teacher Z is a constant: no gradient from the alignment
// term reaches the BiLSTM or the primary classifier.
//
// Defining CSLR_DISABLE_AUX_PATHS compiles the auxiliary branch out entirely;
// used to check that the baseline objective does not depend on it.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cslr/ctc.hpp"
#include "cslr/error.hpp"
#include "cslr/matrix.hpp"
#include "cslr/seqnet.hpp"

namespace cslr {

struct LossConfig {
    double alpha = 25.0;
    double tau = 8.0;
    bool enable_ve = true;
    bool enable_va = true;
    // With VE off, still fit F_a by CTC on stop-gradient visual features so
    // auxiliary predictions (and WDR/WAR) are meaningful for the baseline.
    // The probe never touches the feature extractor and is not part of total.
    bool aux_probe = true;

    void validate() const {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be > 0");
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be >= 0");
    }

    static LossConfig baseline() { return {25.0, 8.0, false, false, true}; }
};

struct LossBreakdown {
    double l_ctc = 0.0;
    double l_ve = 0.0;
    double l_va = 0.0;
    double total = 0.0;
    double l_probe = 0.0;  // reported only
};

// total = l_ctc + [ve] l_ve + [va] alpha * l_va
inline double combine(double l_ctc, double l_ve, double l_va, const LossConfig& cfg) {
    double total = l_ctc;
    if (cfg.enable_ve) total += l_ve;
    if (cfg.enable_va) total += cfg.alpha * l_va;
    return total;
}

inline std::vector<double> softmax_with_temperature(std::span<const double> z, double tau) {
    if (!(tau > 0.0)) throw InvalidInput("temperature must be > 0");
    if (z.empty()) throw InvalidInput("empty logit vector");
    for (double v : z)
        if (!std::isfinite(v)) throw InvalidInput("non-finite logit");
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) s += p[k] = std::exp((z[k] - m) / tau);
    for (double& v : p) v /= s;
    return p;
}

// KL(p || q) in nats, with 0 log 0 = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty()) throw InvalidInput("kl: distributions differ in size");
    auto check = [](std::span<const double> d, const char* name) {
        double s = 0.0;
        for (double v : d) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput(std::string("kl: invalid entry in ") + name);
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-9) throw InvalidInput(std::string("kl: ") + name + " does not sum to 1");
    };
    check(p, "p");
    check(q, "q");
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] == 0.0) continue;
        if (q[k] == 0.0) throw InvalidInput("kl: q has zero mass where p does not");
        kl += p[k] * std::log(p[k] / q[k]);
    }
    return std::max(kl, 0.0);
}

inline double ve_loss(const Matrix& visual_logits, std::span<const ClassId> labeling) {
    return ctc_loss(visual_logits, labeling);
}

struct VaResult {
    double loss = 0.0;
    Matrix grad_visual;  // d loss / d Z~; the teacher gets none
};

// Mean over frames of KL(softmax(z_t/tau) || softmax(z~_t/tau)).
inline VaResult va_loss_and_gradient(const Matrix& contextual, const Matrix& visual, double tau) {
    if (contextual.rows() != visual.rows() || contextual.cols() != visual.cols())
        throw InvalidInput("va_loss: logit shapes differ");
    if (!(tau > 0.0)) throw InvalidInput("temperature must be > 0");
    const std::size_t T = visual.rows(), K = visual.cols();
    if (T == 0) throw InvalidInput("va_loss: empty sequence");
    VaResult r{0.0, Matrix(T, K)};
    const double inv_T = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
        const auto p = softmax_with_temperature(contextual.row(t), tau);
        const auto q = softmax_with_temperature(visual.row(t), tau);
        r.loss += kl_divergence(p, q);
        for (std::size_t k = 0; k < K; ++k) r.grad_visual(t, k) = (q[k] - p[k]) / tau * inv_T;
    }
    r.loss *= inv_T;
    return r;
}

inline double va_loss(const Matrix& contextual, const Matrix& visual, double tau) {
    return va_loss_and_gradient(contextual, visual, tau).loss;
}

// Failure in one named component of the objective.
class ComponentError : public Error {
public:
    ComponentError(std::string component, const Error& cause)
        : Error(component + ": " + cause.what()), component_(std::move(component)) {}
    const std::string& component() const noexcept { return component_; }

private:
    std::string component_;
};

struct ObjectiveResult {
    LossBreakdown losses;
    ModelParams grads;
    ModelOutput output;
};

// Forward, all enabled loss terms and the routed backward pass for one
// sentence. total = l_ctc + l_ve + alpha * l_va over the enabled terms.
inline ObjectiveResult total_loss(SequenceModel& model, const Matrix& frames, std::span<const ClassId> labeling,
                                  const LossConfig& cfg, Mode mode = Mode::Train, bool update_running = true) {
    cfg.validate();
    ObjectiveResult r;
    r.output = model.forward(frames, mode, update_running);
    const auto& Z = r.output.contextual_logits;

    CtcResult primary;
    try {
        primary = ctc_loss_and_gradient(Z, labeling);
    } catch (const Error& e) {
        throw ComponentError("l_ctc", e);
    }
    r.losses.l_ctc = primary.loss;

    // Gradient on Z~ that flows into the feature extractor, and the probe's
    // gradient that stops at F_a.
    Matrix d_visual;
    Matrix d_probe;
#ifndef CSLR_DISABLE_AUX_PATHS
    const auto& Zt = r.output.visual_logits;
    if (cfg.enable_ve || cfg.aux_probe) {
        CtcResult aux;
        try {
            aux = ctc_loss_and_gradient(Zt, labeling);
        } catch (const Error& e) {
            throw ComponentError(cfg.enable_ve ? "l_ve" : "l_probe", e);
        }
        if (cfg.enable_ve) {
            r.losses.l_ve = aux.loss;
            d_visual = std::move(aux.gradient);
        } else {
            r.losses.l_probe = aux.loss;
            d_probe = std::move(aux.gradient);
        }
    }
    if (cfg.enable_va) {
        const VaResult va = va_loss_and_gradient(Z, Zt, cfg.tau);
        r.losses.l_va = va.loss;
        if (d_visual.empty()) d_visual = Matrix(Zt.rows(), Zt.cols());
        for (std::size_t i = 0; i < d_visual.size(); ++i)
            d_visual.data()[i] += cfg.alpha * va.grad_visual.data()[i];
    }
#endif
    r.losses.total = combine(r.losses.l_ctc, r.losses.l_ve, r.losses.l_va, cfg);
    r.grads = model.backward(primary.gradient, d_visual, AuxRoute::Full);
    if (!d_probe.empty()) model.accumulate_aux_head_gradient(d_probe, r.grads.aux);
    return r;
}

}  // namespace cslr
