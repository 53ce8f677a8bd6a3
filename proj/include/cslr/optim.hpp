#pragma once

// Adam with bias correction and a per-partition learning rate.

#include <cmath>
#include <cstdint>
#include <string>

#include "cslr/error.hpp"
#include "cslr/seqnet.hpp"

namespace cslr {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    ModelParams m, v;  // first and second moments, same layout as the model
    std::uint64_t step = 0;

    static AdamState for_params(const ModelParams& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

// One update of a single tensor; `step` is the 1-based step count used for
// bias correction.
inline void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, std::uint64_t step, double lr,
                        const AdamConfig& cfg) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < param.size(); ++k) {
        const double g = grad.data[k];
        m.data[k] = cfg.beta1 * m.data[k] + (1.0 - cfg.beta1) * g;
        v.data[k] = cfg.beta2 * v.data[k] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m.data[k] / c1;
        const double vhat = v.data[k] / c2;
        param.data[k] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

// Updates every trainable tensor. Visual-partition tensors use lr_visual,
// alignment-module tensors lr_alignment. Non-trainable buffers (BN running
// moments) are left alone.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr_visual,
                      double lr_alignment, const AdamConfig& cfg = {}) {
    std::vector<const Tensor*> g;
    grads.for_each([&](const Tensor& t) { g.push_back(&t); });
    for (const Tensor* t : g)
        for (double x : t->data)
            if (!std::isfinite(x)) throw Divergence("non-finite gradient in " + t->name);

    std::vector<Tensor*> p, m, v;
    params.for_each([&](Tensor& t) { p.push_back(&t); });
    state.m.for_each([&](Tensor& t) { m.push_back(&t); });
    state.v.for_each([&](Tensor& t) { v.push_back(&t); });
    if (p.size() != g.size() || p.size() != m.size()) throw InvalidInput("adam: parameter layout mismatch");

    ++state.step;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p[i]->trainable) continue;
        const double lr = p[i]->partition == Partition::Visual ? lr_visual : lr_alignment;
        adam_update(*p[i], *g[i], *m[i], *v[i], state.step, lr, cfg);
    }
}

}  // namespace cslr
