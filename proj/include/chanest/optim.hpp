#pragma once

#include <cstdint>

#include "autodiff.hpp"

namespace chanest::nn {

/// Keep/prune flags aligned with a parameter list; empty = nothing pruned.
using ParamMask = std::vector<std::vector<std::uint8_t>>;

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 1e-3;
    double l2 = 0.0;  // decoupled weight decay
    std::int64_t step_count = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    void init(const std::vector<Var>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p->value.shape, 0.0);
            v.emplace_back(p->value.shape, 0.0);
        }
        step_count = 0;
    }
};

/// One Adam update from the gradients accumulated in the parameter nodes.
/// Masked (pruned) entries see a zero effective gradient and are pinned at 0;
/// the raw gradients in the nodes are left untouched so callers can inspect
/// them afterwards.
inline void adam_step(std::vector<Var>& params, AdamState& st, const ParamMask* mask = nullptr) {
    if (st.m.size() != params.size()) st.init(params);
    if (mask && mask->size() != params.size())
        throw std::invalid_argument("adam_step: mask has " + std::to_string(mask->size()) +
                                    " entries for " + std::to_string(params.size()) +
                                    " parameters");
    ++st.step_count;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Node& p = *params[pi];
        p.ensure_grad();
        const std::size_t n = p.value.data.size();
        const std::uint8_t* keep = nullptr;
        if (mask && !(*mask)[pi].empty()) {
            if ((*mask)[pi].size() != n)
                throw std::invalid_argument("adam_step: mask size mismatch on parameter " +
                                            std::to_string(pi));
            keep = (*mask)[pi].data();
        }
        double* w = p.value.data.data();
        const double* g = p.grad.data.data();
        double* mm = st.m[pi].data.data();
        double* vv = st.v[pi].data.data();
        for (std::size_t i = 0; i < n; ++i) {
            const bool pruned = keep && keep[i] == 0;
            const double gi = pruned ? 0.0 : g[i];
            mm[i] = st.beta1 * mm[i] + (1.0 - st.beta1) * gi;
            vv[i] = st.beta2 * vv[i] + (1.0 - st.beta2) * gi * gi;
            if (pruned) {
                w[i] = 0.0;
                continue;
            }
            const double mhat = mm[i] / bc1;
            const double vhat = vv[i] / bc2;
            w[i] -= st.lr * (mhat / (std::sqrt(vhat) + st.eps) + st.l2 * w[i]);
        }
    }
}

}  // namespace chanest::nn
