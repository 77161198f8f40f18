#pragma once

#include <cstdio>
#include <deque>
#include <map>

#include "pruning.hpp"

namespace chanest::sim {

using cd = std::complex<double>;

inline constexpr const char* kVersion = "chanest 0.1.0";

// ---------------------------------------------------------------------------
// Metrics.

/// Mean squared complex deviation over the whole 72 x 14 grid.
inline double metric_mse(const ofdm::Slot& est, const ofdm::Slot& h) {
    double acc = 0.0;
    for (std::size_t i = 0; i < est.g.size(); ++i) acc += std::norm(est.g[i] - h.g[i]);
    return acc / static_cast<double>(est.g.size());
}

/// Denoising gain 10 log10(|H_LS - H|^2 / |H_method - H|^2), with both error
/// energies floored at 1e-15 so a perfect estimate reports a capped gain.
inline double metric_dg(const ofdm::Slot& ls_frame, const ofdm::Slot& est, const ofdm::Slot& h) {
    constexpr double kFloor = 1e-15;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < h.g.size(); ++i) {
        num += std::norm(ls_frame.g[i] - h.g[i]);
        den += std::norm(est.g[i] - h.g[i]);
    }
    return 10.0 * std::log10(std::max(num, kFloor) / std::max(den, kFloor));
}

/// Long-delay-spread tapped-delay-line profile used as the fourth segment of
/// the dynamic-adaptation run.
inline fading::PowerDelayProfile long_delay_pdp() {
    fading::PowerDelayProfile p;
    p.name = "LONGDELAY";
    p.delays_ns = {0, 1000, 2500, 4000, 6000, 8000, 10000, 12000, 14000};
    p.gains_db = {0.0, -1.0, -1.0, -2.0, -2.0, -3.0, -4.0, -5.0, -6.0};
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Estimator evaluation on shared channel/noise draws.

struct Evaluator {
    std::vector<std::string> names;
    const est::GenieCorrelations* corr = nullptr;
    const model::Channelformer* offline_net = nullptr;
    const model::Channelformer* online_net = nullptr;

    bool wants(const std::string& n) const {
        return std::find(names.begin(), names.end(), n) != names.end();
    }

    void check() const {
        for (const auto& n : names) {
            if (n == "LS" || n == "DD-CE" || n == "perfect-csi") continue;
            if (n == "1D-MMSE" || n == "2D-MMSE") {
                if (!corr)
                    throw std::invalid_argument("estimator '" + n +
                                                "' needs genie correlations");
                if (n == "2D-MMSE" && !corr->has_full_grid())
                    throw std::invalid_argument(
                        "estimator '2D-MMSE' needs per-symbol correlations");
                continue;
            }
            if (n == "offline-cf") {
                if (!offline_net)
                    throw std::invalid_argument("estimator 'offline-cf' needs a weight file");
                continue;
            }
            if (n == "online-cf") {
                if (!online_net)
                    throw std::invalid_argument("estimator 'online-cf' needs a weight file");
                continue;
            }
            throw std::invalid_argument("unknown estimator '" + n + "'");
        }
    }
};

/// Per-SNR filter bank shared by all realizations of one sweep point.
struct PointFilters {
    bool has_mmse1 = false;
    bool has_mmse2 = false;
    est::Fd1dFilter f1;
    est::Fd2dFilter f2;

    static PointFilters make(const Evaluator& ev, const ofdm::SnrSpec& snr) {
        PointFilters f;
        if (ev.wants("1D-MMSE")) {
            f.f1 = est::Fd1dFilter::make(*ev.corr, snr);
            f.has_mmse1 = true;
        }
        if (ev.wants("2D-MMSE")) {
            f.f2 = est::Fd2dFilter::make(*ev.corr, snr);
            f.has_mmse2 = true;
        }
        return f;
    }
};

struct RealizationContext {
    ofdm::Slot x;
    ofdm::Slot y;
    ofdm::Slot h;
    est::PilotEstimate ls;
    ofdm::Slot ls_frame;
    ofdm::SnrSpec snr;
    ofdm::PilotPattern pattern;
};

inline ofdm::Slot estimate_by_name(const std::string& name, const RealizationContext& ctx,
                                   const Evaluator& ev, const PointFilters& filt) {
    if (name == "LS") return ctx.ls_frame;
    if (name == "perfect-csi") return ctx.h;
    if (name == "DD-CE") return est::dd_ce(ctx.y, ctx.ls_frame, ctx.pattern, ctx.snr);
    if (name == "1D-MMSE") return est::linear_time_to_frame(filt.f1.apply(ctx.ls));
    if (name == "2D-MMSE") return est::fd_mmse_2d(ctx.y, ctx.x, filt.f2, ctx.pattern);
    if (name == "offline-cf") return model::estimate_frame(*ev.offline_net, ctx.ls);
    if (name == "online-cf") return model::estimate_frame(*ev.online_net, ctx.ls);
    throw std::invalid_argument("unknown estimator '" + name + "'");
}

inline RealizationContext simulate_realization(const fading::ChannelSpec& channel, double snr_db,
                                               std::uint64_t seed,
                                               std::vector<int>* payload_out = nullptr) {
    RealizationContext ctx;
    ctx.pattern = ofdm::PilotPattern::single();
    ctx.snr = ofdm::SnrSpec{snr_db};
    nn::Rng rng(nn::derive_seed(seed, 0x5107));
    const auto cr = channel.realize(ofdm::FrameConfig::n_s, seed);
    ctx.h = ofdm::slot_from_channel(cr);
    std::vector<int> payload = ofdm::random_payload(ctx.pattern, rng);
    ctx.x = ofdm::build_slot(payload, ctx.pattern);
    ctx.y = ofdm::apply_channel(ctx.x, ctx.h, ctx.snr, rng);
    ctx.ls = est::ls_estimate(ofdm::extract_pilot_ls_input(ctx.y, ctx.pattern));
    ctx.ls_frame = est::bilinear_to_frame(ctx.ls);
    if (payload_out) *payload_out = std::move(payload);
    return ctx;
}

/// All estimators of one sweep point, evaluated on identical realizations.
/// values[e][r] holds estimator e's metric on realization r.
struct PointSamples {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;

    double mean(std::size_t e) const {
        double s = 0.0;
        for (double v : values[e]) s += v;
        return s / static_cast<double>(values[e].size());
    }
    double std_error(std::size_t e) const {
        const std::size_t n = values[e].size();
        if (n < 2) return 0.0;
        const double m = mean(e);
        double ss = 0.0;
        for (double v : values[e]) ss += (v - m) * (v - m);
        return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    /// Mean and standard error of the per-realization difference a - b.
    std::pair<double, double> paired_diff(std::size_t a, std::size_t b) const {
        const std::size_t n = values[a].size();
        double m = 0.0;
        for (std::size_t r = 0; r < n; ++r) m += values[a][r] - values[b][r];
        m /= static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double d = values[a][r] - values[b][r] - m;
            ss += d * d;
        }
        const double se = n < 2 ? 0.0
                                : std::sqrt(ss / static_cast<double>(n - 1) /
                                            static_cast<double>(n));
        return {m, se};
    }
};

enum class PointMetric { mse, ber };

inline PointSamples run_point(const Evaluator& ev, const fading::ChannelSpec& channel,
                              double snr_db, std::size_t realizations, std::uint64_t seed,
                              PointMetric metric, int threads = 0) {
    ev.check();
    const PointFilters filt = PointFilters::make(ev, ofdm::SnrSpec{snr_db});
    PointSamples out;
    out.names = ev.names;
    out.values.assign(ev.names.size(), std::vector<double>(realizations, 0.0));
    parallel_chunks(realizations, threads, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t r = b; r < e; ++r) {
            std::vector<int> payload;
            const RealizationContext ctx =
                simulate_realization(channel, snr_db, nn::derive_seed(seed, r), &payload);
            for (std::size_t ei = 0; ei < ev.names.size(); ++ei) {
                const ofdm::Slot hh = estimate_by_name(ev.names[ei], ctx, ev, filt);
                if (metric == PointMetric::mse) {
                    out.values[ei][r] = metric_mse(hh, ctx.h);
                } else {
                    out.values[ei][r] =
                        ofdm::equalize_and_count_errors(ctx.y, hh, payload, ctx.pattern).ber();
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps.

struct SweepSpec {
    enum class Kind { mse_vs_snr, mse_vs_doppler, ber_vs_snr, dg_vs_prune_ratio };
    Kind kind = Kind::mse_vs_snr;
    std::vector<double> axis;
    std::size_t realizations = 1000;
    fading::ChannelSpec channel;
    std::vector<std::string> estimators;
    std::uint64_t seed = 1;
    double snr_fixed_db = 10.0;  // used by mse_vs_doppler and dg_vs_prune_ratio
    std::size_t corr_ensemble = 20000;

    void validate() const {
        if (axis.empty()) throw std::invalid_argument("sweep: empty axis");
        if (realizations < 1) throw std::invalid_argument("sweep: need >= 1 realization");
    }
};

struct ResultRow {
    double axis = 0.0;
    std::string estimator;
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

struct ExperimentResult {
    std::string kind;
    std::vector<ResultRow> rows;
    std::uint64_t seed = 0;
    std::string config_hash = "0000000000000000";
    std::string version = kVersion;
};

inline const char* sweep_kind_name(SweepSpec::Kind k) {
    switch (k) {
        case SweepSpec::Kind::mse_vs_snr: return "mse_vs_snr";
        case SweepSpec::Kind::mse_vs_doppler: return "mse_vs_doppler";
        case SweepSpec::Kind::ber_vs_snr: return "ber_vs_snr";
        case SweepSpec::Kind::dg_vs_prune_ratio: return "dg_vs_prune_ratio";
    }
    return "unknown";
}

/// SNR or Doppler sweep over identical per-point realizations.
inline ExperimentResult run_sweep(const SweepSpec& spec, const Evaluator& ev, int threads = 0) {
    spec.validate();
    ev.check();
    ExperimentResult res;
    res.kind = sweep_kind_name(spec.kind);
    res.seed = spec.seed;
    const PointMetric metric =
        spec.kind == SweepSpec::Kind::ber_vs_snr ? PointMetric::ber : PointMetric::mse;
    for (std::size_t pi = 0; pi < spec.axis.size(); ++pi) {
        fading::ChannelSpec channel = spec.channel;
        double snr_db = spec.axis[pi];
        if (spec.kind == SweepSpec::Kind::mse_vs_doppler) {
            channel.f_d_max = spec.axis[pi];
            snr_db = spec.snr_fixed_db;
        }
        const PointSamples ps = run_point(ev, channel, snr_db, spec.realizations,
                                          nn::derive_seed(spec.seed, 1000 + pi), metric, threads);
        for (std::size_t ei = 0; ei < ps.names.size(); ++ei)
            res.rows.push_back({spec.axis[pi], ps.names[ei], ps.mean(ei), ps.std_error(ei),
                                spec.realizations});
    }
    return res;
}

/// Per-realization denoising gains of a model (and optionally a second one)
/// against the interpolated LS frame, at one SNR.
inline PointSamples run_dg_point(const std::vector<const model::Channelformer*>& nets,
                                 const std::vector<std::string>& names,
                                 const fading::ChannelSpec& channel, double snr_db,
                                 std::size_t realizations, std::uint64_t seed, int threads = 0) {
    PointSamples out;
    out.names = names;
    out.values.assign(names.size(), std::vector<double>(realizations, 0.0));
    parallel_chunks(realizations, threads, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t r = b; r < e; ++r) {
            const RealizationContext ctx =
                simulate_realization(channel, snr_db, nn::derive_seed(seed, r));
            for (std::size_t ni = 0; ni < nets.size(); ++ni) {
                const ofdm::Slot hh = model::estimate_frame(*nets[ni], ctx.ls);
                out.values[ni][r] = metric_dg(ctx.ls_frame, hh, ctx.h);
            }
        }
    });
    return out;
}

/// Prune/fine-tune the base online model at each ratio and report the mean
/// denoising gain at the fixed SNR. Ratio 0 is the unpruned baseline.
inline ExperimentResult run_dg_prune_sweep(const SweepSpec& spec,
                                           const model::Channelformer& base,
                                           const train::Dataset& finetune_ds,
                                           const train::Hyperparams& hp_ft, int threads = 0) {
    spec.validate();
    ExperimentResult res;
    res.kind = sweep_kind_name(SweepSpec::Kind::dg_vs_prune_ratio);
    res.seed = spec.seed;
    for (std::size_t pi = 0; pi < spec.axis.size(); ++pi) {
        const double ratio = spec.axis[pi];
        model::Channelformer m = base.clone();
        if (ratio > 0.0) {
            prune::prune_by_magnitude(m, ratio);
            prune::fine_tune(m, finetune_ds, hp_ft, nn::derive_seed(spec.seed, 7000 + pi),
                             threads);
        }
        const PointSamples ps =
            run_dg_point({&m}, {"online-cf"}, spec.channel, spec.snr_fixed_db, spec.realizations,
                         nn::derive_seed(spec.seed, 1000 + pi), threads);
        res.rows.push_back(
            {ratio, "online-cf", ps.mean(0), ps.std_error(0), spec.realizations});
    }
    return res;
}

// ---------------------------------------------------------------------------
// Dynamic online adaptation.

struct AdaptationSpec {
    std::vector<fading::ChannelSpec> segments;
    std::size_t block = 2000;
    double snr_min_db = 15.0;
    double snr_max_db = 25.0;
    train::Hyperparams step_hp = train::Hyperparams::adaptation_defaults();
    train::OnlineLabelDesign label = train::OnlineLabelDesign::power_boost;
    double label_boost_db = 5.0;
    double prune_ratio = 0.7;
    std::size_t avg_window = 50;
    std::uint64_t seed = 1;

    static AdaptationSpec standard_sequence(double f_d_max = 97.0) {
        AdaptationSpec s;
        const std::vector<std::string> names = {"ETU", "CUSTOM", "EVA"};
        for (const auto& n : names)
            s.segments.push_back({fading::standard_pdp(n), f_d_max, false});
        s.segments.push_back({long_delay_pdp(), f_d_max, false});
        return s;
    }
};

struct AdaptationTrace {
    std::vector<std::string> segment;  // per realization
    std::vector<double> adapt;
    std::vector<double> adapt_pruned;
    std::vector<double> frozen;
    std::vector<double> frozen_pruned;
};

struct AdaptationRow {
    std::size_t index = 0;
    std::string segment;
    double adapt = 0.0;
    double adapt_pruned = 0.0;
    double frozen = 0.0;
    double frozen_pruned = 0.0;
};

struct AdaptationResult {
    AdaptationTrace trace;
    std::vector<AdaptationRow> rows;  // block averages of avg_window realizations
};

/// Streams double-DM-RS slots through the channel sequence. Every slot is
/// first predicted by all four models, then the adapting models take one
/// mini-batch step on the sliding window of the last 3 online samples.
/// The pruned adapting model starts magnitude-pruned with no fine-tuning;
/// online training substitutes for it.
inline AdaptationResult run_dynamic_adaptation(const model::Channelformer& base,
                                               const AdaptationSpec& spec) {
    if (base.config().mode != model::ModelConfig::Mode::online)
        throw std::invalid_argument("run_dynamic_adaptation: need the online configuration");
    if (spec.segments.empty())
        throw std::invalid_argument("run_dynamic_adaptation: no segments");

    model::Channelformer adapt = base.clone();
    model::Channelformer adapt_pruned = base.clone();
    if (spec.prune_ratio > 0.0) prune::prune_by_magnitude(adapt_pruned, spec.prune_ratio);
    model::Channelformer frozen = base.clone();
    model::Channelformer frozen_pruned = adapt_pruned.clone();

    nn::AdamState st_adapt, st_pruned;
    st_adapt.init(adapt.params());
    st_pruned.init(adapt_pruned.params());

    const ofdm::PilotPattern pattern =
        spec.label == train::OnlineLabelDesign::power_boost
            ? ofdm::PilotPattern::doubled(spec.label_boost_db)
            : ofdm::PilotPattern::doubled(0.0);

    // MMSE label filters are cached per 1 dB SNR grid point
    std::map<int, est::WienerFilter> wiener_cache;
    auto filter_for = [&](double snr_db) -> const est::WienerFilter* {
        if (spec.label != train::OnlineLabelDesign::mmse) return nullptr;
        const int key = static_cast<int>(std::lround(snr_db));
        auto it = wiener_cache.find(key);
        if (it == wiener_cache.end())
            it = wiener_cache
                     .emplace(key, est::WienerFilter::uniform_delay(
                                       ofdm::SnrSpec{static_cast<double>(key)}))
                     .first;
        return &it->second;
    };

    AdaptationResult res;
    std::deque<train::OnlineSample> window;
    std::uint64_t order = 0;
    for (std::size_t seg = 0; seg < spec.segments.size(); ++seg) {
        const fading::ChannelSpec& channel = spec.segments[seg];
        for (std::size_t i = 0; i < spec.block; ++i, ++order) {
            const std::uint64_t rseed = nn::derive_seed(spec.seed, order);
            nn::Rng rng(nn::derive_seed(rseed, 0xAD));
            const double snr_db = rng.uniform(spec.snr_min_db, spec.snr_max_db);
            const auto cr = channel.realize(ofdm::FrameConfig::n_s, rseed);
            const ofdm::Slot h = ofdm::slot_from_channel(cr);
            const ofdm::Slot x = ofdm::build_slot(ofdm::random_payload(pattern, rng), pattern);
            const ofdm::Slot y = ofdm::apply_channel(x, h, ofdm::SnrSpec{snr_db}, rng);
            const est::PilotEstimate ls =
                est::ls_estimate(ofdm::extract_pilot_ls_input(y, pattern));

            res.trace.segment.push_back(channel.pdp.name);
            res.trace.adapt.push_back(metric_mse(model::estimate_frame(adapt, ls), h));
            res.trace.adapt_pruned.push_back(
                metric_mse(model::estimate_frame(adapt_pruned, ls), h));
            res.trace.frozen.push_back(metric_mse(model::estimate_frame(frozen, ls), h));
            res.trace.frozen_pruned.push_back(
                metric_mse(model::estimate_frame(frozen_pruned, ls), h));

            window.push_back(train::make_online_sample(y, pattern, spec.label,
                                                       filter_for(snr_db), order));
            if (window.size() > static_cast<std::size_t>(spec.step_hp.batch_size))
                window.pop_front();
            if (window.size() == static_cast<std::size_t>(spec.step_hp.batch_size)) {
                const std::vector<train::OnlineSample> batch(window.begin(), window.end());
                train::online_step(adapt, batch, spec.step_hp, st_adapt);
                train::online_step(adapt_pruned, batch, spec.step_hp, st_pruned);
            }
        }
    }

    const std::size_t n = res.trace.adapt.size();
    for (std::size_t b = 0; b < n; b += spec.avg_window) {
        const std::size_t e = std::min(n, b + spec.avg_window);
        AdaptationRow row;
        row.index = b;
        row.segment = res.trace.segment[b];
        for (std::size_t i = b; i < e; ++i) {
            row.adapt += res.trace.adapt[i];
            row.adapt_pruned += res.trace.adapt_pruned[i];
            row.frozen += res.trace.frozen[i];
            row.frozen_pruned += res.trace.frozen_pruned[i];
        }
        const double inv = 1.0 / static_cast<double>(e - b);
        row.adapt *= inv;
        row.adapt_pruned *= inv;
        row.frozen *= inv;
        row.frozen_pruned *= inv;
        res.rows.push_back(row);
    }
    return res;
}

// ---------------------------------------------------------------------------
// CSV output. Formatting goes through snprintf so repeated runs are
// byte-identical.

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_provenance(std::ostream& out, const std::string& kind,
                             const std::string& config_hash, std::uint64_t seed) {
    out << "# " << kVersion << " kind=" << kind << " config_hash=" << config_hash
        << " seed=" << seed << "\n";
}

inline void write_result_csv(const std::string& path, const ExperimentResult& res) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_provenance(out, res.kind, res.config_hash, res.seed);
    out << "axis,estimator,mean,std_error,n\n";
    for (const auto& r : res.rows)
        out << format_double(r.axis) << "," << r.estimator << "," << format_double(r.mean) << ","
            << format_double(r.std_error) << "," << r.n << "\n";
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline void write_adaptation_csv(const std::string& path, const AdaptationResult& res,
                                 const std::string& config_hash, std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_provenance(out, "dynamic_adaptation", config_hash, seed);
    out << "index,segment,mse_online,mse_online_pruned,mse_frozen,mse_frozen_pruned\n";
    for (const auto& r : res.rows)
        out << r.index << "," << r.segment << "," << format_double(r.adapt) << ","
            << format_double(r.adapt_pruned) << "," << format_double(r.frozen) << ","
            << format_double(r.frozen_pruned) << "\n";
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline void write_probe_csv(const std::string& path,
                            const std::vector<std::pair<std::string, model::ProbeSummary>>& probes,
                            const std::string& config_hash, std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_provenance(out, "attention_probe", config_hash, seed);
    out << "profile,head,channel,element,mean_abs\n";
    for (const auto& [profile, summary] : probes)
        for (std::size_t h = 0; h < summary.mean_abs.size(); ++h) {
            const nn::Tensor& t = summary.mean_abs[h];
            for (std::size_t ch = 0; ch < t.shape[1]; ++ch)
                for (std::size_t i = 0; i < t.shape[0]; ++i)
                    out << profile << "," << h + 1 << "," << ch + 1 << "," << i + 1 << ","
                        << format_double(t.at(i, ch)) << "\n";
        }
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline void write_loss_curve_csv(const std::string& path,
                                 const std::vector<train::EpochStats>& curve,
                                 const std::string& config_hash, std::uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_provenance(out, "loss_curve", config_hash, seed);
    out << "epoch,train_loss,val_loss,lr\n";
    for (const auto& e : curve)
        out << e.epoch << "," << format_double(e.train_loss) << "," << format_double(e.val_loss)
            << "," << format_double(e.lr) << "\n";
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace chanest::sim
