#pragma once

#include <unordered_map>

#include "binio.hpp"
#include "estimators.hpp"
#include "layers.hpp"
#include "optim.hpp"

namespace chanest::model {

using cd = std::complex<double>;

struct ModelConfig {
    enum class Mode { offline, online };
    Mode mode = Mode::online;
    int residual_blocks = 1;  // K
    int enc_filters = 5;      // encoder Pre-Network width
    int dec_filters = 2;      // decoder width
    int kernel = 2;           // square kernel extent
    int n_heads = 2;          // equals the number of pilot symbols

    static ModelConfig offline() { return {Mode::offline, 3, 5, 12, 5, 2}; }
    static ModelConfig online() { return {Mode::online, 1, 5, 2, 2, 2}; }

    std::size_t out_rows() const {
        return mode == Mode::offline ? ofdm::FrameConfig::n_f * ofdm::FrameConfig::n_s
                                     : ofdm::FrameConfig::n_f * ofdm::FrameConfig::n_pilot;
    }

    const char* mode_name() const { return mode == Mode::offline ? "offline" : "online"; }
};

/// Per-head attention state captured during a forward pass.
struct AttentionProbe {
    std::vector<nn::Tensor> probabilities;  // N x N, rows sum to 1
    std::vector<nn::Tensor> outputs;        // 36 x 2 per head
};

/// Attention pre-processor encoder plus residual convolutional decoder.
/// The encoder is identical in both configurations; the decoder depth/width
/// and the upsampling target distinguish offline from online.
class Channelformer {
public:
    static constexpr std::size_t kInRows = 72;

    static Channelformer build(const ModelConfig& cfg, std::uint64_t seed) {
        Channelformer m;
        m.cfg_ = cfg;
        nn::Rng rng(seed);

        const std::size_t g = cfg.kernel;
        const std::size_t nd = cfg.dec_filters;
        const std::size_t ne = cfg.enc_filters;
        const std::size_t out_rows = cfg.out_rows();

        m.add_fc("enc.fc1", 3 * kInRows, kInRows, rng);
        m.add_fc("enc.fc2", kInRows, kInRows, rng);
        m.add_norm("enc.norm1", kInRows);
        m.add_conv("enc.pre.conv1", 2, 2, 1, ne, rng);
        m.add_conv("enc.pre.conv2", 2, 2, ne, 1, rng);
        m.add_norm("enc.norm2", kInRows);

        m.add_conv("dec.conv_in", g, g, 1, nd, rng);
        for (int k = 0; k < cfg.residual_blocks; ++k) {
            const std::string p = "dec.block" + std::to_string(k);
            m.add_conv(p + ".conv1", g, g, nd, nd, rng);
            m.add_conv(p + ".conv2", g, g, nd, nd, rng);
            m.add_norm(p + ".norm", kInRows);
        }
        m.add_fc("dec.fc_up", out_rows, kInRows, rng);
        m.add_conv("dec.conv_out", g, g, nd, 1, rng);
        return m;
    }

    const ModelConfig& config() const { return cfg_; }
    const std::vector<std::string>& names() const { return names_; }
    std::vector<nn::Var>& params() { return params_; }
    const std::vector<nn::Var>& params() const { return params_; }

    nn::ParamMask mask;  // empty when nothing is pruned

    bool is_encoder_param(std::size_t i) const { return names_[i].rfind("enc.", 0) == 0; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }
    std::size_t encoder_parameter_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (is_encoder_param(i)) n += params_[i]->value.numel();
        return n;
    }
    std::size_t decoder_parameter_count() const {
        return parameter_count() - encoder_parameter_count();
    }

    Channelformer clone() const {
        Channelformer m;
        m.cfg_ = cfg_;
        m.names_ = names_;
        m.index_ = index_;
        m.mask = mask;
        m.params_.reserve(params_.size());
        for (const auto& p : params_) m.params_.push_back(nn::make_leaf(p->value, true));
        return m;
    }

    /// Copy parameter values (not nodes) from another instance of the same
    /// configuration.
    void assign_values(const Channelformer& other) {
        if (other.params_.size() != params_.size())
            throw std::invalid_argument("assign_values: parameter list mismatch");
        for (std::size_t i = 0; i < params_.size(); ++i)
            params_[i]->value = other.params_[i]->value;
        mask = other.mask;
    }

    /// Attention pre-processor: fc -> multi-head attention -> Add & Norm,
    /// then the convolutional Pre-Network with its own Add & Norm. Identical
    /// in both configurations; output is 72 x 2 x 1.
    nn::Var encode(const nn::Tensor& x, AttentionProbe* probe = nullptr) const {
        if (x.shape != std::vector<std::size_t>{kInRows, 2})
            throw std::invalid_argument("Channelformer: input must be 72x2, got " +
                                        nn::shape_string(x.shape));
        nn::Var in = nn::make_leaf(x, false);
        nn::Var y = nn::fully_connected(in, p("enc.fc1.W"), p("enc.fc1.b"));
        nn::MultiHeadOut mh = nn::multi_head_attention(y, static_cast<std::size_t>(cfg_.n_heads),
                                                       p("enc.fc2.W"), p("enc.fc2.b"));
        if (probe) {
            probe->probabilities.clear();
            probe->outputs.clear();
            for (const auto& v : mh.head_probabilities) probe->probabilities.push_back(v->value);
            for (const auto& v : mh.head_outputs) probe->outputs.push_back(v->value);
        }
        nn::Var a1 = nn::layer_norm(nn::add(mh.output, in), p("enc.norm1.w"), p("enc.norm1.b"));
        nn::Var z = nn::reshape(a1, {kInRows, 2, 1});
        nn::Var c1 = nn::gelu(nn::conv2d(z, p("enc.pre.conv1.K"), p("enc.pre.conv1.b")));
        nn::Var c2 = nn::conv2d(c1, p("enc.pre.conv2.K"), p("enc.pre.conv2.b"));
        return nn::layer_norm(nn::add(c2, z), p("enc.norm2.w"), p("enc.norm2.b"));
    }

    /// Residual convolutional decoder: conv-in, K residual blocks with Add &
    /// Norm, the shared per-channel upsampling map, and the single-filter
    /// output convolution.
    nn::Var decode(const nn::Var& enc) const {
        if (enc->value.shape != std::vector<std::size_t>{kInRows, 2, 1})
            throw std::invalid_argument("Channelformer: decoder input must be 72x2x1, got " +
                                        nn::shape_string(enc->value.shape));
        nn::Var d = nn::conv2d(enc, p("dec.conv_in.K"), p("dec.conv_in.b"));
        for (int k = 0; k < cfg_.residual_blocks; ++k) {
            const std::string blk = "dec.block" + std::to_string(k);
            nn::Var t = nn::conv2d(nn::relu(nn::conv2d(d, p(blk + ".conv1.K"), p(blk + ".conv1.b"))),
                                   p(blk + ".conv2.K"), p(blk + ".conv2.b"));
            d = nn::layer_norm(nn::add(t, d), p(blk + ".norm.w"), p(blk + ".norm.b"));
        }
        std::vector<nn::Var> chans;
        chans.reserve(static_cast<std::size_t>(cfg_.dec_filters));
        for (int c = 0; c < cfg_.dec_filters; ++c)
            chans.push_back(nn::fully_connected(nn::slice_channel(d, static_cast<std::size_t>(c)),
                                                p("dec.fc_up.W"), p("dec.fc_up.b")));
        nn::Var up = nn::stack_channels(chans);
        nn::Var out = nn::conv2d(up, p("dec.conv_out.K"), p("dec.conv_out.b"));
        return nn::reshape(out, {cfg_.out_rows(), 2});
    }

    nn::Var forward(const nn::Tensor& x, AttentionProbe* probe = nullptr) const {
        return decode(encode(x, probe));
    }

    const nn::Var& p(const std::string& name) const {
        const auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("Channelformer: no parameter named '" + name + "'");
        return params_[it->second];
    }

    // -----------------------------------------------------------------------
    // Versioned little-endian weight file with named tensors and prune mask.

    void save(const std::string& path) const {
        auto out = binio::open_out(path);
        out.write("CFW1", 4);
        binio::write_pod<std::uint32_t>(out, 1);
        binio::write_pod<std::uint8_t>(out, cfg_.mode == ModelConfig::Mode::offline ? 0 : 1);
        binio::write_pod<std::int32_t>(out, cfg_.residual_blocks);
        binio::write_pod<std::int32_t>(out, cfg_.enc_filters);
        binio::write_pod<std::int32_t>(out, cfg_.dec_filters);
        binio::write_pod<std::int32_t>(out, cfg_.kernel);
        binio::write_pod<std::int32_t>(out, cfg_.n_heads);
        binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size()));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            binio::write_string(out, names_[i]);
            const nn::Tensor& t = params_[i]->value;
            binio::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
            for (auto e : t.shape) binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e));
            binio::write_doubles(out, t.data);
            const bool has_mask = !mask.empty() && !mask[i].empty();
            binio::write_pod<std::uint8_t>(out, has_mask ? 1 : 0);
            if (has_mask)
                out.write(reinterpret_cast<const char*>(mask[i].data()),
                          static_cast<std::streamsize>(mask[i].size()));
        }
        if (!out) throw std::runtime_error("failed writing weight file '" + path + "'");
    }

    static Channelformer load(const std::string& path) {
        auto in = binio::open_in(path);
        binio::expect_magic(in, "CFW1", "weight");
        const auto version = binio::read_pod<std::uint32_t>(in, "version");
        if (version != 1)
            throw std::runtime_error("weight file version " + std::to_string(version) +
                                     " not supported");
        ModelConfig cfg;
        cfg.mode = binio::read_pod<std::uint8_t>(in, "mode") == 0 ? ModelConfig::Mode::offline
                                                                  : ModelConfig::Mode::online;
        cfg.residual_blocks = binio::read_pod<std::int32_t>(in, "residual_blocks");
        cfg.enc_filters = binio::read_pod<std::int32_t>(in, "enc_filters");
        cfg.dec_filters = binio::read_pod<std::int32_t>(in, "dec_filters");
        cfg.kernel = binio::read_pod<std::int32_t>(in, "kernel");
        cfg.n_heads = binio::read_pod<std::int32_t>(in, "n_heads");
        Channelformer m = build(cfg, 0);
        const auto n_params = binio::read_pod<std::uint32_t>(in, "parameter count");
        if (n_params != m.params_.size())
            throw std::runtime_error("weight file lists " + std::to_string(n_params) +
                                     " parameters, expected " + std::to_string(m.params_.size()));
        bool any_mask = false;
        nn::ParamMask file_mask(m.params_.size());
        for (std::uint32_t i = 0; i < n_params; ++i) {
            const std::string name = binio::read_string(in, "parameter name");
            const auto it = m.index_.find(name);
            if (it == m.index_.end())
                throw std::runtime_error("weight file has unknown parameter '" + name + "'");
            nn::Tensor& t = m.params_[it->second]->value;
            const auto ndim = binio::read_pod<std::uint8_t>(in, "rank");
            std::vector<std::size_t> shape(ndim);
            for (auto& e : shape) e = binio::read_pod<std::uint32_t>(in, "extent");
            if (shape != t.shape)
                throw std::runtime_error("weight file shape mismatch on '" + name + "'");
            binio::read_doubles(in, t.data, name.c_str());
            if (binio::read_pod<std::uint8_t>(in, "mask flag")) {
                any_mask = true;
                file_mask[it->second].resize(t.data.size());
                in.read(reinterpret_cast<char*>(file_mask[it->second].data()),
                        static_cast<std::streamsize>(t.data.size()));
                if (!in) throw std::runtime_error("truncated mask in weight file");
            }
        }
        if (any_mask) m.mask = std::move(file_mask);
        return m;
    }

private:
    ModelConfig cfg_;
    std::vector<std::string> names_;
    std::vector<nn::Var> params_;
    std::unordered_map<std::string, std::size_t> index_;

    void push(const std::string& name, nn::Tensor t) {
        index_[name] = params_.size();
        names_.push_back(name);
        params_.push_back(nn::make_leaf(std::move(t), true));
    }

    static double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
        return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    }

    void add_fc(const std::string& name, std::size_t rows, std::size_t cols, nn::Rng& rng) {
        nn::Tensor w({rows, cols});
        const double lim = glorot_limit(cols, rows);
        for (double& v : w.data) v = rng.uniform(-lim, lim);
        push(name + ".W", std::move(w));
        push(name + ".b", nn::Tensor({rows}, 0.0));
    }

    void add_conv(const std::string& name, std::size_t kh, std::size_t kw, std::size_t ci,
                  std::size_t co, nn::Rng& rng) {
        nn::Tensor k({kh, kw, ci, co});
        const double lim = glorot_limit(kh * kw * ci, kh * kw * co);
        for (double& v : k.data) v = rng.uniform(-lim, lim);
        push(name + ".K", std::move(k));
        push(name + ".b", nn::Tensor({co}, 0.0));
    }

    void add_norm(const std::string& name, std::size_t n) {
        push(name + ".w", nn::Tensor({n}, 1.0));
        push(name + ".b", nn::Tensor({n}, 0.0));
    }
};

// ---------------------------------------------------------------------------
// Marshalling between complex grids and the real two-channel tensors.

/// Stack the two pilot-symbol combs into one column; channel 0 real,
/// channel 1 imaginary.
inline nn::Tensor input_from_ls(const est::PilotEstimate& e) {
    constexpr std::size_t nc = ofdm::FrameConfig::comb_size;
    nn::Tensor x({2 * nc, 2});
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < nc; ++i) {
            const cd v = e.at(i, j);
            x.at(j * nc + i, 0) = v.real();
            x.at(j * nc + i, 1) = v.imag();
        }
    return x;
}

/// Inverse of the online output layout: rows [0,72) are the first pilot
/// symbol, rows [72,144) the second. Returns h[k*2 + j].
inline std::vector<cd> output_to_pilot_columns(const nn::Tensor& y) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    if (y.shape != std::vector<std::size_t>{2 * n_f, 2})
        throw std::invalid_argument("output_to_pilot_columns: need 144x2, got " +
                                    nn::shape_string(y.shape));
    std::vector<cd> h(n_f * 2);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < n_f; ++k)
            h[k * 2 + j] = cd{y.at(j * n_f + k, 0), y.at(j * n_f + k, 1)};
    return h;
}

/// Offline output rows are stacked column-major over the grid: r = l*72 + k.
inline ofdm::Slot output_to_frame(const nn::Tensor& y) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    constexpr std::size_t n_s = ofdm::FrameConfig::n_s;
    if (y.shape != std::vector<std::size_t>{n_f * n_s, 2})
        throw std::invalid_argument("output_to_frame: need 1008x2, got " +
                                    nn::shape_string(y.shape));
    ofdm::Slot s(ofdm::SlotRole::estimate);
    for (std::size_t l = 0; l < n_s; ++l)
        for (std::size_t k = 0; k < n_f; ++k)
            s.at(k, l) = cd{y.at(l * n_f + k, 0), y.at(l * n_f + k, 1)};
    return s;
}

inline nn::Tensor marshal_full_slot(const ofdm::Slot& h) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    constexpr std::size_t n_s = ofdm::FrameConfig::n_s;
    nn::Tensor t({n_f * n_s, 2});
    for (std::size_t l = 0; l < n_s; ++l)
        for (std::size_t k = 0; k < n_f; ++k) {
            t.at(l * n_f + k, 0) = h.at(k, l).real();
            t.at(l * n_f + k, 1) = h.at(k, l).imag();
        }
    return t;
}

/// h[k*2 + j] for the two pilot symbols -> 144 x 2 tensor.
inline nn::Tensor marshal_pilot_columns(const std::vector<cd>& h) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    if (h.size() != n_f * 2)
        throw std::invalid_argument("marshal_pilot_columns: need 72x2 values");
    nn::Tensor t({2 * n_f, 2});
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t k = 0; k < n_f; ++k) {
            t.at(j * n_f + k, 0) = h[k * 2 + j].real();
            t.at(j * n_f + k, 1) = h[k * 2 + j].imag();
        }
    return t;
}

/// Full-slot channel estimate of a model from a pilot LS input; online
/// outputs go through the shared linear time interpolation.
inline ofdm::Slot estimate_frame(const Channelformer& m, const est::PilotEstimate& ls) {
    const nn::Var out = m.forward(input_from_ls(ls));
    if (m.config().mode == ModelConfig::Mode::offline) return output_to_frame(out->value);
    return est::linear_time_to_frame(output_to_pilot_columns(out->value));
}

/// Mean |attention output| per head over a batch of inputs (36 x 2 each).
struct ProbeSummary {
    std::vector<nn::Tensor> mean_abs;  // per head
    std::vector<nn::Tensor> last_probabilities;
};

inline ProbeSummary attention_probe_run(const Channelformer& m,
                                        const std::vector<nn::Tensor>& inputs) {
    if (inputs.empty()) throw std::invalid_argument("attention_probe_run: empty batch");
    ProbeSummary s;
    AttentionProbe probe;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        (void)m.forward(inputs[b], &probe);
        if (b == 0) {
            for (const auto& t : probe.outputs) s.mean_abs.emplace_back(t.shape, 0.0);
        }
        for (std::size_t h = 0; h < probe.outputs.size(); ++h)
            for (std::size_t i = 0; i < probe.outputs[h].data.size(); ++i)
                s.mean_abs[h].data[i] += std::abs(probe.outputs[h].data[i]);
    }
    for (auto& t : s.mean_abs)
        for (double& v : t.data) v /= static_cast<double>(inputs.size());
    s.last_probabilities = probe.probabilities;
    return s;
}

}  // namespace chanest::model
