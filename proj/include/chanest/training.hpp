#pragma once

#include <functional>

#include "channelformer.hpp"
#include "parallel.hpp"

namespace chanest::train {

using cd = std::complex<double>;

struct Hyperparams {
    int max_epochs = 20;
    double initial_lr = 0.002;
    int lr_drop_period = 10;
    double lr_drop_factor = 0.5;
    int batch_size = 128;
    double l2 = 1e-7;
    nn::LossSpec loss = nn::LossSpec::huber(1.0);

    void validate() const {
        if (max_epochs <= 0 || initial_lr <= 0.0 || lr_drop_period <= 0 || batch_size <= 0)
            throw std::invalid_argument("Hyperparams: all sizes/rates must be positive");
        if (lr_drop_factor <= 0.0 || lr_drop_factor > 1.0)
            throw std::invalid_argument("Hyperparams: drop factor must be in (0, 1]");
        if (l2 < 0.0) throw std::invalid_argument("Hyperparams: negative L2");
    }

    double lr_at_epoch(int epoch_1based) const {
        const int drops = (epoch_1based - 1) / lr_drop_period;
        return initial_lr * std::pow(lr_drop_factor, drops);
    }

    static Hyperparams offline_defaults() { return {100, 0.002, 50, 0.5, 128, 1e-7}; }
    static Hyperparams online_defaults() { return {20, 0.002, 10, 0.5, 128, 1e-7}; }
    static Hyperparams finetune_defaults() { return {10, 0.001, 10, 0.5, 32, 1e-7}; }
    /// One-step online adaptation with the reduced mini-batch of 3.
    static Hyperparams online_step_defaults() { return {1, 0.001, 1000000, 1.0, 3, 1e-7}; }
    /// Streaming-adaptation rate: small enough that a stationary channel sees
    /// no drift from the per-slot updates, large enough to track a switch
    /// within a couple thousand slots.
    static Hyperparams adaptation_defaults() { return {1, 3e-5, 1000000, 1.0, 3, 1e-7}; }
};

struct SampleMeta {
    double snr_db = 0.0;
    double f_d = 0.0;
    std::string profile;
    std::uint64_t seed = 0;
};

struct TrainingSample {
    nn::Tensor feature;  // 72 x 2 marshalled noisy LS
    nn::Tensor label;    // 1008 x 2 (full slot) or 144 x 2 (pilot symbols)
    SampleMeta meta;
};

struct Dataset {
    std::vector<TrainingSample> samples;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

enum class LabelKind { full_slot, pilot_symbols };

struct DatasetSpec {
    fading::ChannelSpec channel;
    double snr_min_db = 5.0;
    double snr_max_db = 25.0;
    std::size_t count = 20000;
    LabelKind label = LabelKind::full_slot;
    bool noiseless = false;  // validation switch: LS then equals the true pilot H
};

/// Offline labels come from the noise-free realization, never from Y.
inline TrainingSample generate_sample(const DatasetSpec& spec, std::uint64_t sample_seed) {
    nn::Rng rng(nn::derive_seed(sample_seed, 1));
    const double snr_db = spec.noiseless ? std::numeric_limits<double>::infinity()
                                         : rng.uniform(spec.snr_min_db, spec.snr_max_db);
    const auto cr = spec.channel.realize(ofdm::FrameConfig::n_s, nn::derive_seed(sample_seed, 2));
    const ofdm::Slot h = ofdm::slot_from_channel(cr);
    const ofdm::PilotPattern pattern = ofdm::PilotPattern::single();
    const ofdm::Slot x = ofdm::build_slot(ofdm::random_payload(pattern, rng), pattern);
    const ofdm::Slot y = ofdm::apply_channel(x, h, ofdm::SnrSpec{snr_db}, rng);

    TrainingSample s;
    s.feature = model::input_from_ls(est::ls_estimate(ofdm::extract_pilot_ls_input(y, pattern)));
    if (spec.label == LabelKind::full_slot) {
        s.label = model::marshal_full_slot(h);
    } else {
        std::vector<cd> cols(ofdm::FrameConfig::n_f * 2);
        for (std::size_t j = 0; j < 2; ++j) {
            const std::size_t l = ofdm::FrameConfig::pilot_symbols[j];
            for (std::size_t k = 0; k < ofdm::FrameConfig::n_f; ++k) cols[k * 2 + j] = h.at(k, l);
        }
        s.label = model::marshal_pilot_columns(cols);
    }
    s.meta = {snr_db, cr.f_d, spec.channel.pdp.name, sample_seed};
    return s;
}

inline Dataset generate_offline_dataset(const DatasetSpec& spec, std::uint64_t seed,
                                        int threads = 0) {
    if (spec.count == 0) throw std::invalid_argument("generate_offline_dataset: empty request");
    Dataset ds;
    ds.samples.resize(spec.count);
    parallel_chunks(spec.count, threads, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i)
            ds.samples[i] = generate_sample(spec, nn::derive_seed(seed, i));
    });
    return ds;
}

// ---------------------------------------------------------------------------
// Batched gradients: the batch is split into contiguous chunks, each chunk
// runs forward/backward on its own parameter clone, and chunk gradients are
// merged in chunk order so results do not depend on scheduling.

inline double batch_gradient(model::Channelformer& m, const Dataset& ds,
                             const std::vector<std::size_t>& order, std::size_t b0, std::size_t b1,
                             const nn::LossSpec& loss, int threads) {
    const std::size_t batch = b1 - b0;
    const std::size_t t = std::min<std::size_t>(threads <= 0 ? default_threads() : threads, batch);
    std::vector<model::Channelformer> clones;
    clones.reserve(t);
    for (std::size_t w = 0; w < t; ++w) clones.push_back(m.clone());
    std::vector<double> losses(t, 0.0);

    parallel_chunks(batch, static_cast<int>(t), [&](std::size_t w, std::size_t cb, std::size_t ce) {
        model::Channelformer& cm = clones[w];
        for (std::size_t i = cb; i < ce; ++i) {
            const TrainingSample& s = ds.samples[order[b0 + i]];
            nn::Var out = cm.forward(s.feature);
            nn::Var l = nn::loss_of(loss, out, s.label);
            losses[w] += l->value.data[0];
            nn::backward(l);
        }
    });

    auto& params = m.params();
    nn::zero_grad(params);
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (std::size_t w = 0; w < t; ++w) {
        auto& cp = clones[w].params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (cp[i]->grad.data.empty()) continue;
            double* dst = params[i]->grad.data.data();
            const double* src = cp[i]->grad.data.data();
            for (std::size_t k = 0; k < params[i]->grad.data.size(); ++k) dst[k] += src[k];
        }
    }
    double total = 0.0;
    for (double v : losses) total += v;
    for (std::size_t i = 0; i < params.size(); ++i)
        for (double& g : params[i]->grad.data) g *= inv_b;
    return total * inv_b;
}

inline double mean_loss(const model::Channelformer& m, const Dataset& ds,
                        const std::vector<std::size_t>& idx, const nn::LossSpec& loss,
                        int threads) {
    if (idx.empty()) return 0.0;
    const std::size_t t = std::min<std::size_t>(threads <= 0 ? default_threads() : threads,
                                                idx.size());
    std::vector<double> acc(t, 0.0);
    std::vector<model::Channelformer> clones;
    clones.reserve(t);
    for (std::size_t w = 0; w < t; ++w) clones.push_back(m.clone());
    parallel_chunks(idx.size(), static_cast<int>(t), [&](std::size_t w, std::size_t b,
                                                         std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const TrainingSample& s = ds.samples[idx[i]];
            nn::Var out = clones[w].forward(s.feature);
            acc[w] += nn::loss_of(loss, out, s.label)->value.data[0];
        }
    });
    double total = 0.0;
    for (double v : acc) total += v;
    return total / static_cast<double>(idx.size());
}

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> curve;
    int best_epoch = 0;
    double best_val = 0.0;
};

namespace detail {
inline void shuffle(std::vector<std::size_t>& v, nn::Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.next() % i]);
}
}  // namespace detail

/// Epoch loop with shuffled mini-batches, stepped learning rate, decoupled L2
/// Adam and best-validation weight selection. Honors the model's prune mask.
inline TrainResult train_offline(model::Channelformer& m, const Dataset& ds,
                                 const Hyperparams& hp, std::uint64_t seed,
                                 double val_fraction = 0.05, int threads = 0,
                                 const std::function<void(const EpochStats&)>& on_epoch = {}) {
    hp.validate();
    if (ds.empty()) throw std::invalid_argument("train_offline: empty dataset");

    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    nn::Rng split_rng(nn::derive_seed(seed, 0xA11));
    detail::shuffle(idx, split_rng);
    std::size_t n_val = val_fraction > 0.0 && ds.size() > 1
                            ? static_cast<std::size_t>(std::llround(val_fraction *
                                                                    static_cast<double>(ds.size())))
                            : 0;
    n_val = std::min(n_val, ds.size() - 1);
    std::vector<std::size_t> val_idx(idx.end() - static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::vector<std::size_t> train_idx(idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(n_val));

    nn::AdamState st;
    st.l2 = hp.l2;
    st.init(m.params());
    const nn::ParamMask* mask = m.mask.empty() ? nullptr : &m.mask;

    TrainResult res;
    res.best_val = std::numeric_limits<double>::infinity();
    std::vector<nn::Tensor> best_params;

    nn::Rng epoch_rng(nn::derive_seed(seed, 0xE90));
    for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
        st.lr = hp.lr_at_epoch(epoch);
        detail::shuffle(train_idx, epoch_rng);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 < train_idx.size(); b0 += hp.batch_size) {
            const std::size_t b1 = std::min(train_idx.size(),
                                            b0 + static_cast<std::size_t>(hp.batch_size));
            const double l = batch_gradient(m, ds, train_idx, b0, b1, hp.loss, threads);
            if (!std::isfinite(l))
                throw std::runtime_error("train_offline: loss diverged at epoch " +
                                         std::to_string(epoch));
            nn::adam_step(m.params(), st, mask);
            epoch_loss += l * static_cast<double>(b1 - b0);
            seen += b1 - b0;
        }
        EpochStats es;
        es.epoch = epoch;
        es.lr = st.lr;
        es.train_loss = seen ? epoch_loss / static_cast<double>(seen) : 0.0;
        es.val_loss = val_idx.empty() ? es.train_loss
                                      : mean_loss(m, ds, val_idx, hp.loss, threads);
        res.curve.push_back(es);
        if (on_epoch) on_epoch(es);
        if (es.val_loss < res.best_val) {
            res.best_val = es.val_loss;
            res.best_epoch = epoch;
            best_params.clear();
            for (const auto& p : m.params()) best_params.push_back(p->value);
        }
    }
    if (!best_params.empty())
        for (std::size_t i = 0; i < best_params.size(); ++i)
            m.params()[i]->value = std::move(best_params[i]);
    return res;
}

// ---------------------------------------------------------------------------
// Online training: double-symbol DM-RS slots provide a feature comb and a
// full-band label symbol next to it. Labels only ever touch receivable
// quantities.

struct OnlineSample {
    nn::Tensor feature;  // 72 x 2
    nn::Tensor label;    // 144 x 2
    std::uint64_t order = 0;
};

enum class OnlineLabelDesign { power_boost, mmse };

/// Full-band LS at label symbol `which` (0 or 1): divide by the known boosted
/// pilot values, so the effective label noise sits below the feature noise by
/// the boost.
inline std::vector<cd> label_symbol_ls(const ofdm::Slot& y, const ofdm::PilotPattern& pattern,
                                       std::size_t which) {
    if (pattern.kind != ofdm::PilotPattern::Kind::double_dmrs)
        throw std::invalid_argument("label_symbol_ls: pattern has no label symbols");
    const std::size_t l = ofdm::PilotPattern::label_symbols[which];
    std::vector<cd> h(ofdm::FrameConfig::n_f);
    const double amp = pattern.label_amplitude();
    for (std::size_t k = 0; k < h.size(); ++k)
        h[k] = y.at(k, l) / (amp * pattern.pilot_value(k, l));
    return h;
}

inline nn::Tensor make_online_label_power_boost(const ofdm::Slot& y,
                                                const ofdm::PilotPattern& pattern) {
    std::vector<cd> cols(ofdm::FrameConfig::n_f * 2);
    for (std::size_t j = 0; j < 2; ++j) {
        const std::vector<cd> h = label_symbol_ls(y, pattern, j);
        for (std::size_t k = 0; k < h.size(); ++k) cols[k * 2 + j] = h[k];
    }
    return model::marshal_pilot_columns(cols);
}

/// MMSE label design: raw label LS denoised by the precomputed uniform-delay
/// Wiener filter (computed offline, applied per label symbol).
inline nn::Tensor make_online_label_mmse(const ofdm::Slot& y, const ofdm::PilotPattern& pattern,
                                         const est::WienerFilter& filter) {
    std::vector<cd> cols(ofdm::FrameConfig::n_f * 2);
    for (std::size_t j = 0; j < 2; ++j) {
        const std::vector<cd> h = filter.apply(label_symbol_ls(y, pattern, j));
        for (std::size_t k = 0; k < h.size(); ++k) cols[k * 2 + j] = h[k];
    }
    return model::marshal_pilot_columns(cols);
}

inline OnlineSample make_online_sample(const ofdm::Slot& y, const ofdm::PilotPattern& pattern,
                                       OnlineLabelDesign design,
                                       const est::WienerFilter* filter, std::uint64_t order) {
    OnlineSample s;
    s.feature = model::input_from_ls(est::ls_estimate(ofdm::extract_pilot_ls_input(y, pattern)));
    if (design == OnlineLabelDesign::power_boost) {
        s.label = make_online_label_power_boost(y, pattern);
    } else {
        if (!filter) throw std::invalid_argument("make_online_sample: mmse design needs a filter");
        s.label = make_online_label_mmse(y, pattern, *filter);
    }
    s.order = order;
    return s;
}

/// One Adam step over a mini-batch of the configured size (3 by default).
inline double online_step(model::Channelformer& m, const std::vector<OnlineSample>& batch,
                          const Hyperparams& hp, nn::AdamState& st) {
    if (batch.size() != static_cast<std::size_t>(hp.batch_size))
        throw std::invalid_argument("online_step: got batch of " + std::to_string(batch.size()) +
                                    ", configured size is " + std::to_string(hp.batch_size));
    if (m.config().mode != model::ModelConfig::Mode::online)
        throw std::invalid_argument("online_step: model is not the online configuration");
    auto& params = m.params();
    nn::zero_grad(params);
    double total = 0.0;
    for (const auto& s : batch) {
        nn::Var out = m.forward(s.feature);
        nn::Var l = nn::loss_of(hp.loss, out, s.label);
        total += l->value.data[0];
        nn::backward(l);
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (auto& p : params)
        for (double& g : p->grad.data) g *= inv_b;
    st.lr = hp.initial_lr;
    st.l2 = hp.l2;
    nn::adam_step(params, st, m.mask.empty() ? nullptr : &m.mask);
    return total * inv_b;
}

// ---------------------------------------------------------------------------
// Dataset container: versioned little-endian records.

inline void write_dataset(const std::string& path, const Dataset& ds) {
    if (ds.empty()) throw std::invalid_argument("write_dataset: empty dataset");
    auto out = binio::open_out(path);
    out.write("CFD1", 4);
    binio::write_pod<std::uint32_t>(out, 1);
    binio::write_pod<std::uint64_t>(out, ds.size());
    const auto& first = ds.samples.front();
    binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(first.feature.shape[0]));
    binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(first.feature.shape[1]));
    binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(first.label.shape[0]));
    binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(first.label.shape[1]));
    for (const auto& s : ds.samples) {
        if (!s.feature.same_shape(first.feature) || !s.label.same_shape(first.label))
            throw std::invalid_argument("write_dataset: inhomogeneous sample shapes");
        binio::write_pod<double>(out, s.meta.snr_db);
        binio::write_pod<double>(out, s.meta.f_d);
        binio::write_pod<std::uint64_t>(out, s.meta.seed);
        binio::write_string(out, s.meta.profile);
        binio::write_doubles(out, s.feature.data);
        binio::write_doubles(out, s.label.data);
    }
    if (!out) throw std::runtime_error("failed writing dataset '" + path + "'");
}

inline Dataset read_dataset(const std::string& path) {
    auto in = binio::open_in(path);
    binio::expect_magic(in, "CFD1", "dataset");
    const auto version = binio::read_pod<std::uint32_t>(in, "version");
    if (version != 1)
        throw std::runtime_error("dataset version " + std::to_string(version) + " not supported");
    const auto n = binio::read_pod<std::uint64_t>(in, "sample count");
    const auto frows = binio::read_pod<std::uint32_t>(in, "feature rows");
    const auto fcols = binio::read_pod<std::uint32_t>(in, "feature cols");
    const auto lrows = binio::read_pod<std::uint32_t>(in, "label rows");
    const auto lcols = binio::read_pod<std::uint32_t>(in, "label cols");
    Dataset ds;
    ds.samples.resize(n);
    for (auto& s : ds.samples) {
        s.meta.snr_db = binio::read_pod<double>(in, "snr");
        s.meta.f_d = binio::read_pod<double>(in, "doppler");
        s.meta.seed = binio::read_pod<std::uint64_t>(in, "seed");
        s.meta.profile = binio::read_string(in, "profile");
        s.feature = nn::Tensor({frows, fcols});
        s.label = nn::Tensor({lrows, lcols});
        binio::read_doubles(in, s.feature.data, "feature");
        binio::read_doubles(in, s.label.data, "label");
    }
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("dataset '" + path + "' has trailing bytes");
    return ds;
}

}  // namespace chanest::train
