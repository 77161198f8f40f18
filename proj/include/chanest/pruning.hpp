#pragma once

#include <algorithm>

#include "training.hpp"

namespace chanest::prune {

struct RegionStats {
    std::size_t total = 0;
    std::size_t pruned = 0;
    double achieved_ratio() const {
        return total ? static_cast<double>(pruned) / static_cast<double>(total) : 0.0;
    }
};

/// Keep/prune flags per named parameter, with the two pruning regions
/// (encoder vs decoder) tracked separately.
struct PruneMask {
    nn::ParamMask keep;
    double target_ratio = 0.0;
    RegionStats encoder;
    RegionStats decoder;
};

/// Region-wise magnitude pruning: within encoder and decoder independently,
/// zero the smallest-|value| fraction. Ties break on parameter enumeration
/// order. The mask is installed on the model so later updates honor it.
inline PruneMask prune_by_magnitude(model::Channelformer& m, double ratio) {
    if (ratio < 0.0 || ratio >= 1.0)
        throw std::invalid_argument("prune_by_magnitude: ratio must be in [0, 1)");
    auto& params = m.params();
    PruneMask out;
    out.target_ratio = ratio;
    out.keep.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i)
        out.keep[i].assign(params[i]->value.numel(), 1);

    struct Entry {
        double mag;
        std::uint32_t param;
        std::uint32_t elem;
    };
    for (int region = 0; region < 2; ++region) {
        const bool encoder = region == 0;
        std::vector<Entry> entries;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (m.is_encoder_param(i) != encoder) continue;
            const auto& d = params[i]->value.data;
            for (std::size_t e = 0; e < d.size(); ++e)
                entries.push_back({std::abs(d[e]), static_cast<std::uint32_t>(i),
                                   static_cast<std::uint32_t>(e)});
        }
        RegionStats& stats = encoder ? out.encoder : out.decoder;
        stats.total = entries.size();
        const std::size_t n_prune = static_cast<std::size_t>(
            std::llround(ratio * static_cast<double>(entries.size())));
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            if (a.mag != b.mag) return a.mag < b.mag;
            if (a.param != b.param) return a.param < b.param;
            return a.elem < b.elem;
        });
        for (std::size_t e = 0; e < n_prune; ++e) {
            out.keep[entries[e].param][entries[e].elem] = 0;
            params[entries[e].param]->value.data[entries[e].elem] = 0.0;
        }
        stats.pruned = n_prune;
    }
    m.mask = out.keep;
    return out;
}

/// Control experiment: mask applied, no retraining.
inline PruneMask prune_without_finetune(model::Channelformer& m, double ratio) {
    return prune_by_magnitude(m, ratio);
}

/// Reactivate pruned parameters whose mean |raw gradient| exceeds
/// `significance` times the median over kept parameters. Returns the number
/// reactivated; reactivated entries stay at value 0 but become trainable.
inline std::size_t reactivation_check(const std::vector<nn::Tensor>& grad_mean,
                                      nn::ParamMask& mask, double significance = 5.0,
                                      double* threshold_out = nullptr) {
    if (grad_mean.size() != mask.size())
        throw std::invalid_argument("reactivation_check: gradient/mask list mismatch");
    std::vector<double> kept;
    for (std::size_t i = 0; i < mask.size(); ++i)
        for (std::size_t e = 0; e < mask[i].size(); ++e)
            if (mask[i][e]) kept.push_back(grad_mean[i].data[e]);
    if (kept.empty()) return 0;
    const std::size_t mid = kept.size() / 2;
    std::nth_element(kept.begin(), kept.begin() + mid, kept.end());
    const double median = kept[mid];
    const double threshold = significance * median;
    if (threshold_out) *threshold_out = threshold;
    std::size_t reactivated = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
        for (std::size_t e = 0; e < mask[i].size(); ++e)
            if (!mask[i][e] && grad_mean[i].data[e] > threshold) {
                mask[i][e] = 1;
                ++reactivated;
            }
    return reactivated;
}

struct FinetuneResult {
    std::vector<train::EpochStats> curve;
    std::size_t reactivated = 0;
    double reactivation_threshold = 0.0;
};

/// Masked-gradient fine-tuning. The backward pass computes gradients for all
/// parameters; pruned ones receive no update. Over the final epoch the raw
/// gradient magnitudes are averaged and fed to the reactivation rule.
inline FinetuneResult fine_tune(model::Channelformer& m, const train::Dataset& ds,
                                const train::Hyperparams& hp, std::uint64_t seed, int threads = 0,
                                double significance = 5.0) {
    hp.validate();
    if (ds.empty()) throw std::invalid_argument("fine_tune: empty dataset");
    auto& params = m.params();
    if (!m.mask.empty() && m.mask.size() != params.size())
        throw std::invalid_argument("fine_tune: mask does not match the model");
    const bool masked = !m.mask.empty();

    nn::AdamState st;
    st.l2 = hp.l2;
    st.init(params);

    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;

    std::vector<nn::Tensor> grad_abs_sum;
    for (const auto& p : params) grad_abs_sum.emplace_back(p->value.shape, 0.0);
    std::size_t final_epoch_steps = 0;

    FinetuneResult res;
    nn::Rng epoch_rng(nn::derive_seed(seed, 0xF1));
    for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
        st.lr = hp.lr_at_epoch(epoch);
        train::detail::shuffle(idx, epoch_rng);
        const bool last = epoch == hp.max_epochs;
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 < idx.size(); b0 += hp.batch_size) {
            const std::size_t b1 = std::min(idx.size(), b0 + static_cast<std::size_t>(hp.batch_size));
            const double l = train::batch_gradient(m, ds, idx, b0, b1, hp.loss, threads);
            if (!std::isfinite(l))
                throw std::runtime_error("fine_tune: loss diverged at epoch " +
                                         std::to_string(epoch));
            if (last) {
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const double* g = params[i]->grad.data.data();
                    double* acc = grad_abs_sum[i].data.data();
                    for (std::size_t e = 0; e < grad_abs_sum[i].data.size(); ++e)
                        acc[e] += std::abs(g[e]);
                }
                ++final_epoch_steps;
            }
            nn::adam_step(params, st, masked ? &m.mask : nullptr);
            epoch_loss += l * static_cast<double>(b1 - b0);
            seen += b1 - b0;
        }
        train::EpochStats es;
        es.epoch = epoch;
        es.lr = st.lr;
        es.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
        es.val_loss = es.train_loss;
        res.curve.push_back(es);
    }

    if (masked && final_epoch_steps > 0) {
        for (auto& t : grad_abs_sum)
            for (double& v : t.data) v /= static_cast<double>(final_epoch_steps);
        res.reactivated = reactivation_check(grad_abs_sum, m.mask, significance,
                                             &res.reactivation_threshold);
    }
    return res;
}

}  // namespace chanest::prune
