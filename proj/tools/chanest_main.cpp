// Command-line front end: dataset generation, training, pruning,
// fine-tuning, metric sweeps, the online adaptation run and the attention
// probe. Every subcommand takes a key-value config file; outputs land in
// --out and are byte-reproducible for a fixed (config, seed).

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "chanest/config.hpp"
#include "chanest/experiments.hpp"

namespace fs = std::filesystem;
using namespace chanest;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 1;
    int threads = 0;
    bool quiet = false;
    bool json_log = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool config_required = true) {
    auto* opt = cmd->add_option("--config", a.config_path, "key-value config file");
    if (config_required) opt->required();
    cmd->add_option("--out", a.out_dir, "output directory");
    cmd->add_option("--seed", a.seed, "master seed");
    cmd->add_option("--threads", a.threads, "worker threads (0 = hardware)");
    cmd->add_flag("--quiet", a.quiet, "suppress progress output");
    cmd->add_flag("--json-log", a.json_log, "emit progress as JSON lines");
}

void log_line(const CommonArgs& a, const std::string& event, const std::string& detail) {
    if (a.quiet) return;
    if (a.json_log)
        std::cerr << "{\"event\":\"" << event << "\",\"detail\":\"" << detail << "\"}\n";
    else
        std::cerr << event << ": " << detail << "\n";
}

std::string out_path(const CommonArgs& a, const std::string& name) {
    fs::create_directories(a.out_dir);
    return (fs::path(a.out_dir) / name).string();
}

fading::PowerDelayProfile resolve_profile(const std::string& name) {
    if (name == "EPA" || name == "EVA" || name == "ETU" || name == "CUSTOM")
        return fading::standard_pdp(name);
    if (name == "LONGDELAY") return sim::long_delay_pdp();
    return fading::load_pdp_file(name);
}

fading::ChannelSpec channel_from(const config::Config& cfg, const CommonArgs&) {
    fading::ChannelSpec spec;
    spec.pdp = resolve_profile(cfg.get_string("profile"));
    spec.f_d_max = cfg.get_double("doppler_max_hz", 97.0);
    return spec;
}

train::Hyperparams hyperparams_from(const config::Config& cfg, train::Hyperparams hp) {
    hp.max_epochs = static_cast<int>(cfg.get_int("epochs", hp.max_epochs));
    hp.initial_lr = cfg.get_double("lr", hp.initial_lr);
    hp.lr_drop_period = static_cast<int>(cfg.get_int("lr_drop_period", hp.lr_drop_period));
    hp.lr_drop_factor = cfg.get_double("lr_drop_factor", hp.lr_drop_factor);
    hp.batch_size = static_cast<int>(cfg.get_int("batch", hp.batch_size));
    hp.l2 = cfg.get_double("l2", hp.l2);
    const std::string loss = cfg.get_string("loss", "huber");
    if (loss == "huber")
        hp.loss = nn::LossSpec::huber(cfg.get_double("huber_delta", 1.0));
    else if (loss == "mse")
        hp.loss = nn::LossSpec::mse();
    else
        throw std::runtime_error("unknown loss '" + loss + "'");
    hp.validate();
    return hp;
}

// -----------------------------------------------------------------------
// Subcommand bodies.

int cmd_pdp_list() {
    for (const auto& name : fading::standard_pdp_names()) {
        const auto p = fading::standard_pdp(name);
        std::cout << name << ": " << p.paths() << " paths, max delay " << p.delays_ns.back()
                  << " ns\n";
    }
    return 0;
}

int cmd_gen_dataset(const CommonArgs& a) {
    const auto cfg = config::Config::from_file(a.config_path);
    train::DatasetSpec spec;
    spec.channel = channel_from(cfg, a);
    spec.snr_min_db = cfg.get_double("snr_min_db", 5.0);
    spec.snr_max_db = cfg.get_double("snr_max_db", 25.0);
    spec.count = static_cast<std::size_t>(cfg.get_int("samples", 20000));
    spec.noiseless = cfg.get_int("noiseless", 0) != 0;
    const std::string label = cfg.get_string("label", "full_slot");
    if (label == "full_slot")
        spec.label = train::LabelKind::full_slot;
    else if (label == "pilot_symbols")
        spec.label = train::LabelKind::pilot_symbols;
    else
        throw std::runtime_error("unknown label kind '" + label + "'");
    log_line(a, "gen-dataset", "generating " + std::to_string(spec.count) + " samples on " +
                                   spec.channel.pdp.name);
    const train::Dataset ds = train::generate_offline_dataset(spec, a.seed, a.threads);
    const std::string path = out_path(a, cfg.get_string("output", "dataset.cfds"));
    train::write_dataset(path, ds);
    log_line(a, "gen-dataset", "wrote " + path);
    return 0;
}

int cmd_train(const CommonArgs& a) {
    const auto cfg = config::Config::from_file(a.config_path);
    const std::string mode = cfg.get_string("mode");
    model::ModelConfig mc;
    train::Hyperparams hp;
    if (mode == "offline") {
        mc = model::ModelConfig::offline();
        train::Hyperparams base = train::Hyperparams::offline_defaults();
        // the published 100-epoch schedule sits behind full_scale = 1;
        // the desk default trains 20 epochs
        if (cfg.get_int("full_scale", 0) == 0) base.max_epochs = 20;
        hp = hyperparams_from(cfg, base);
    } else if (mode == "online") {
        mc = model::ModelConfig::online();
        hp = hyperparams_from(cfg, train::Hyperparams::online_defaults());
    } else {
        throw std::runtime_error("mode must be 'offline' or 'online', got '" + mode + "'");
    }
    const train::Dataset ds = train::read_dataset(cfg.get_string("dataset"));
    auto m = model::Channelformer::build(mc, nn::derive_seed(a.seed, 0x1717));
    const double val_fraction = cfg.get_double("val_fraction", 0.05);
    log_line(a, "train", std::string(mc.mode_name()) + " model, " + std::to_string(ds.size()) +
                             " samples, " + std::to_string(hp.max_epochs) + " epochs");
    const auto res = train::train_offline(m, ds, hp, nn::derive_seed(a.seed, 0x7e41),
                                          val_fraction, a.threads,
                                          [&](const train::EpochStats& es) {
                                              log_line(a, "epoch",
                                                       std::to_string(es.epoch) + " train=" +
                                                           sim::format_double(es.train_loss) +
                                                           " val=" +
                                                           sim::format_double(es.val_loss));
                                          });
    m.save(out_path(a, cfg.get_string("output", "weights.cfw")));
    sim::write_loss_curve_csv(out_path(a, cfg.get_string("curve", "loss_curve.csv")), res.curve,
                              cfg.hash(), a.seed);
    log_line(a, "train", "best epoch " + std::to_string(res.best_epoch) + " val=" +
                             sim::format_double(res.best_val));
    return 0;
}

int cmd_prune(const CommonArgs& a) {
    const auto cfg = config::Config::from_file(a.config_path);
    auto m = model::Channelformer::load(cfg.get_string("weights"));
    const double ratio = cfg.get_double("ratio");
    const auto mask = prune::prune_by_magnitude(m, ratio);
    m.save(out_path(a, cfg.get_string("output", "pruned.cfw")));
    std::cout << "pruned encoder " << mask.encoder.pruned << "/" << mask.encoder.total
              << " (ratio " << sim::format_double(mask.encoder.achieved_ratio()) << "), decoder "
              << mask.decoder.pruned << "/" << mask.decoder.total << " (ratio "
              << sim::format_double(mask.decoder.achieved_ratio()) << ")\n";
    return 0;
}

int cmd_finetune(const CommonArgs& a) {
    const auto cfg = config::Config::from_file(a.config_path);
    auto m = model::Channelformer::load(cfg.get_string("weights"));
    const train::Dataset ds = train::read_dataset(cfg.get_string("dataset"));
    const auto hp = hyperparams_from(cfg, train::Hyperparams::finetune_defaults());
    const double significance = cfg.get_double("significance", 5.0);
    const auto res = prune::fine_tune(m, ds, hp, nn::derive_seed(a.seed, 0xF7), a.threads,
                                      significance);
    m.save(out_path(a, cfg.get_string("output", "finetuned.cfw")));
    std::size_t pruned = 0, total = 0;
    for (const auto& pm : m.mask) {
        total += pm.size();
        for (auto v : pm)
            if (!v) ++pruned;
    }
    std::cout << "finetuned " << res.curve.size() << " epochs, final loss "
              << sim::format_double(res.curve.empty() ? 0.0 : res.curve.back().train_loss)
              << ", reactivated " << res.reactivated << " parameters, remaining pruned " << pruned
              << "/" << total << "\n";
    return 0;
}

est::GenieCorrelations correlations_for(const config::Config& cfg, const CommonArgs& a,
                                        const fading::ChannelSpec& channel, bool with_full) {
    const std::size_t n_mc = static_cast<std::size_t>(cfg.get_int("corr_ensemble", 20000));
    const std::uint64_t corr_seed = nn::derive_seed(a.seed, 0xC0DE);
    const std::string cache_dir = cfg.get_string("corr_cache_dir", "");
    std::string cache_path;
    if (!cache_dir.empty()) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "corr_%s_%g_%zu_%llu_%s.cfm", channel.pdp.name.c_str(),
                      channel.f_d_max, n_mc, static_cast<unsigned long long>(corr_seed),
                      with_full ? "full" : "pilot");
        fs::create_directories(cache_dir);
        cache_path = (fs::path(cache_dir) / buf).string();
        if (fs::exists(cache_path)) {
            log_line(a, "correlations", "loading cache " + cache_path);
            return est::load_correlations(cache_path);
        }
    }
    log_line(a, "correlations",
             "estimating over " + std::to_string(n_mc) + " realizations");
    auto corr = est::genie_correlations(channel, n_mc, corr_seed, with_full, a.threads);
    if (!cache_path.empty()) est::save_correlations(cache_path, corr);
    return corr;
}

int cmd_eval_sweep(const CommonArgs& a) {
    const auto cfg = config::Config::from_file(a.config_path);
    const std::string kind = cfg.get_string("kind");
    sim::SweepSpec spec;
    spec.axis = cfg.get_double_list("axis");
    spec.realizations = static_cast<std::size_t>(cfg.get_int("realizations", 1000));
    spec.channel = channel_from(cfg, a);
    spec.seed = a.seed;
    spec.snr_fixed_db = cfg.get_double("snr_db", 10.0);

    sim::ExperimentResult res;
    if (kind == "dg_vs_prune_ratio") {
        spec.kind = sim::SweepSpec::Kind::dg_vs_prune_ratio;
        auto base = model::Channelformer::load(cfg.get_string("weights_online"));
        const train::Dataset ft = train::read_dataset(cfg.get_string("finetune_dataset"));
        const auto hp = hyperparams_from(cfg, train::Hyperparams::finetune_defaults());
        res = sim::run_dg_prune_sweep(spec, base, ft, hp, a.threads);
    } else {
        if (kind == "mse_vs_snr")
            spec.kind = sim::SweepSpec::Kind::mse_vs_snr;
        else if (kind == "mse_vs_doppler")
            spec.kind = sim::SweepSpec::Kind::mse_vs_doppler;
        else if (kind == "ber_vs_snr")
            spec.kind = sim::SweepSpec::Kind::ber_vs_snr;
        else
            throw std::runtime_error("unknown sweep kind '" + kind + "'");
        spec.estimators = cfg.get_string_list("estimators");
        sim::Evaluator ev;
        ev.names = spec.estimators;
        model::Channelformer offline_net, online_net;
        if (ev.wants("offline-cf")) {
            offline_net = model::Channelformer::load(cfg.get_string("weights_offline"));
            ev.offline_net = &offline_net;
        }
        if (ev.wants("online-cf")) {
            online_net = model::Channelformer::load(cfg.get_string("weights_online"));
            ev.online_net = &online_net;
        }
        est::GenieCorrelations corr;
        if (ev.wants("1D-MMSE") || ev.wants("2D-MMSE")) {
            corr = correlations_for(cfg, a, spec.channel, ev.wants("2D-MMSE"));
            ev.corr = &corr;
        }
        res = sim::run_sweep(spec, ev, a.threads);
    }
    res.config_hash = cfg.hash();
    const std::string path = out_path(a, cfg.get_string("output", "sweep.csv"));
    sim::write_result_csv(path, res);
    log_line(a, "eval-sweep", "wrote " + path);
    return 0;
}

int cmd_online_sim(const CommonArgs& a) {
    const auto cfg = config::Config::from_file(a.config_path);
    auto base = model::Channelformer::load(cfg.get_string("weights"));
    sim::AdaptationSpec spec;
    spec.seed = a.seed;
    const double fd = cfg.get_double("doppler_max_hz", 97.0);
    for (const auto& name : cfg.get_string_list("segments"))
        spec.segments.push_back({resolve_profile(name), fd, false});
    spec.block = static_cast<std::size_t>(cfg.get_int("block", 2000));
    spec.snr_min_db = cfg.get_double("snr_min_db", 15.0);
    spec.snr_max_db = cfg.get_double("snr_max_db", 25.0);
    spec.prune_ratio = cfg.get_double("prune_ratio", 0.7);
    spec.avg_window = static_cast<std::size_t>(cfg.get_int("avg_window", 50));
    spec.step_hp.batch_size = static_cast<int>(cfg.get_int("batch", 3));
    spec.step_hp.initial_lr = cfg.get_double("lr", spec.step_hp.initial_lr);
    const std::string label = cfg.get_string("label", "power_boost");
    if (label == "power_boost")
        spec.label = train::OnlineLabelDesign::power_boost;
    else if (label == "mmse")
        spec.label = train::OnlineLabelDesign::mmse;
    else
        throw std::runtime_error("unknown label design '" + label + "'");
    spec.label_boost_db = cfg.get_double("boost_db", 5.0);
    log_line(a, "online-sim", std::to_string(spec.segments.size()) + " segments x " +
                                  std::to_string(spec.block) + " realizations");
    const auto res = sim::run_dynamic_adaptation(base, spec);
    const std::string path = out_path(a, cfg.get_string("output", "adaptation.csv"));
    sim::write_adaptation_csv(path, res, cfg.hash(), a.seed);
    log_line(a, "online-sim", "wrote " + path);
    return 0;
}

int cmd_probe_attention(const CommonArgs& a) {
    const auto cfg = config::Config::from_file(a.config_path);
    auto m = model::Channelformer::load(cfg.get_string("weights"));
    const double snr_db = cfg.get_double("snr_db", 10.0);
    const std::size_t n = static_cast<std::size_t>(cfg.get_int("inputs", 200));
    const double fd = cfg.get_double("doppler_max_hz", 97.0);
    std::vector<std::pair<std::string, model::ProbeSummary>> probes;
    for (const auto& name : cfg.get_string_list("profiles")) {
        fading::ChannelSpec channel{resolve_profile(name), fd, false};
        std::vector<nn::Tensor> inputs;
        inputs.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto ctx = sim::simulate_realization(channel, snr_db,
                                                       nn::derive_seed(a.seed, i));
            inputs.push_back(model::input_from_ls(ctx.ls));
        }
        probes.emplace_back(name, model::attention_probe_run(m, inputs));
    }
    const std::string path = out_path(a, cfg.get_string("output", "attention.csv"));
    sim::write_probe_csv(path, probes, cfg.hash(), a.seed);
    log_line(a, "probe-attention", "wrote " + path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OFDM channel estimation toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    auto* gen = app.add_subcommand("gen-dataset", "generate a training dataset");
    auto* tr = app.add_subcommand("train", "train a model on a dataset");
    auto* pr = app.add_subcommand("prune", "magnitude-prune trained weights");
    auto* ft = app.add_subcommand("finetune", "fine-tune pruned weights");
    auto* ev = app.add_subcommand("eval-sweep", "run a metric sweep");
    auto* os = app.add_subcommand("online-sim", "dynamic online adaptation run");
    auto* pa = app.add_subcommand("probe-attention", "collect attention magnitudes");
    auto* pdp = app.add_subcommand("pdp", "power delay profile utilities");
    auto* pdp_list = pdp->add_subcommand("list", "list built-in profiles");
    for (auto* cmd : {gen, tr, pr, ft, ev, os, pa}) add_common(cmd, args);

    try {
        app.parse(argc, argv);
        if (pdp_list->parsed() || pdp->parsed()) return cmd_pdp_list();
        if (gen->parsed()) return cmd_gen_dataset(args);
        if (tr->parsed()) return cmd_train(args);
        if (pr->parsed()) return cmd_prune(args);
        if (ft->parsed()) return cmd_finetune(args);
        if (ev->parsed()) return cmd_eval_sweep(args);
        if (os->parsed()) return cmd_online_sim(args);
        if (pa->parsed()) return cmd_probe_attention(args);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
