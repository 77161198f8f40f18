#pragma once

#include <array>
#include <limits>

#include "fading.hpp"

namespace chanest::ofdm {

using cd = std::complex<double>;

/// 6 resource blocks, 14 symbols, single- or double-symbol DM-RS at symbols
/// 1 and 13 (1-based).
struct FrameConfig {
    static constexpr std::size_t n_f = 72;
    static constexpr std::size_t n_s = 14;
    static constexpr std::size_t n_pilot = 2;
    static constexpr std::size_t l_s = 2;
    static constexpr std::array<std::size_t, 2> pilot_symbols = {0, 12};  // 0-based
    static constexpr int t_cp = fading::kCpSamples;
    static constexpr int t_sym = fading::kSymbolSamples;
    static constexpr double sample_rate = fading::kSampleRate;
    static constexpr double subcarrier_spacing_hz = 15e3;
    static constexpr std::size_t comb_size = n_f / l_s;  // 36
};

enum class SlotRole { transmitted, received, channel, estimate };

/// Complex resource grid, n_f x n_s, stored column-major by OFDM symbol.
struct Slot {
    std::vector<cd> g;
    SlotRole role = SlotRole::transmitted;

    Slot() : g(FrameConfig::n_f * FrameConfig::n_s, cd{0.0, 0.0}) {}
    explicit Slot(SlotRole r) : Slot() { role = r; }

    cd& at(std::size_t k, std::size_t l) { return g[l * FrameConfig::n_f + k]; }
    cd at(std::size_t k, std::size_t l) const { return g[l * FrameConfig::n_f + k]; }
};

inline Slot slot_from_channel(const fading::ChannelRealization& cr) {
    if (cr.n_f != FrameConfig::n_f || cr.n_symbols != FrameConfig::n_s)
        throw std::invalid_argument("slot_from_channel: realization is " +
                                    std::to_string(cr.n_f) + "x" + std::to_string(cr.n_symbols));
    Slot s(SlotRole::channel);
    s.g = cr.h;
    return s;
}

// ---------------------------------------------------------------------------
// QPSK with Gray coding: 00 -> (+1+i)/sqrt2, 01 -> (+1-i)/sqrt2,
// 11 -> (-1-i)/sqrt2, 10 -> (-1+i)/sqrt2.

inline cd qpsk_modulate(int b0, int b1) {
    constexpr double a = 0.70710678118654752440;
    return {b0 ? -a : a, b1 ? -a : a};
}

inline std::pair<int, int> qpsk_demodulate(cd y) {
    return {y.real() < 0.0 ? 1 : 0, y.imag() < 0.0 ? 1 : 0};
}

inline cd qpsk_hard_decision(cd y) {
    const auto [b0, b1] = qpsk_demodulate(y);
    return qpsk_modulate(b0, b1);
}

// ---------------------------------------------------------------------------

struct SnrSpec {
    double snr_db = 0.0;

    double sigma2() const {
        return std::isinf(snr_db) ? 0.0 : std::pow(10.0, -snr_db / 10.0);
    }
    static SnrSpec noiseless() { return {std::numeric_limits<double>::infinity()}; }
};

/// Pilot layout. single_dmrs: symbol 1 carries odd subcarriers (1-based),
/// symbol 13 even ones, the rest of those symbols is zero. double_dmrs adds a
/// full-band label symbol right after each feature pilot symbol.
struct PilotPattern {
    enum class Kind { single_dmrs, double_dmrs };
    Kind kind = Kind::single_dmrs;
    double label_boost_db = 0.0;
    std::uint64_t pilot_seq_seed = 0x70696C6FULL;  // fixed across realizations

    static PilotPattern single() { return {}; }
    static PilotPattern doubled(double boost_db = 5.0) {
        PilotPattern p;
        p.kind = Kind::double_dmrs;
        p.label_boost_db = boost_db;
        return p;
    }

    static constexpr std::array<std::size_t, 2> feature_symbols = {0, 12};
    static constexpr std::array<std::size_t, 2> label_symbols = {1, 13};

    bool is_feature_symbol(std::size_t l) const { return l == 0 || l == 12; }
    bool is_label_symbol(std::size_t l) const {
        return kind == Kind::double_dmrs && (l == 1 || l == 13);
    }
    bool is_data_symbol(std::size_t l) const { return !is_feature_symbol(l) && !is_label_symbol(l); }

    /// Active subcarriers of feature pilot symbol `which` (0 or 1).
    static std::vector<std::size_t> comb(std::size_t which) {
        std::vector<std::size_t> out(FrameConfig::comb_size);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2 * i + which;
        return out;
    }

    std::size_t data_symbol_count() const {
        return FrameConfig::n_s - (kind == Kind::double_dmrs ? 4 : 2);
    }
    std::size_t payload_bits() const { return data_symbol_count() * FrameConfig::n_f * 2; }

    /// Unit-modulus pilot value at a feature-comb or label resource element.
    cd pilot_value(std::size_t k, std::size_t l) const {
        std::uint64_t s = pilot_seq_seed ^ (0x9E3779B97F4A7C15ULL * (l * FrameConfig::n_f + k + 1));
        const std::uint64_t r = nn::splitmix64(s);
        return qpsk_modulate(static_cast<int>(r & 1), static_cast<int>((r >> 1) & 1));
    }

    double label_amplitude() const { return std::pow(10.0, label_boost_db / 20.0); }
};

/// Assembles the transmitted grid. Payload bits fill the data symbols in
/// (symbol, subcarrier) order, two bits per resource element.
inline Slot build_slot(const std::vector<int>& payload_bits, const PilotPattern& pattern) {
    if (payload_bits.size() != pattern.payload_bits())
        throw std::invalid_argument("build_slot: expected " +
                                    std::to_string(pattern.payload_bits()) + " payload bits, got " +
                                    std::to_string(payload_bits.size()));
    Slot x(SlotRole::transmitted);
    std::size_t bit = 0;
    for (std::size_t l = 0; l < FrameConfig::n_s; ++l) {
        if (pattern.is_feature_symbol(l)) {
            const std::size_t which = (l == 0) ? 0 : 1;
            for (std::size_t k = which; k < FrameConfig::n_f; k += FrameConfig::l_s)
                x.at(k, l) = pattern.pilot_value(k, l);
        } else if (pattern.is_label_symbol(l)) {
            const double boost = pattern.label_amplitude();
            for (std::size_t k = 0; k < FrameConfig::n_f; ++k)
                x.at(k, l) = boost * pattern.pilot_value(k, l);
        } else {
            for (std::size_t k = 0; k < FrameConfig::n_f; ++k) {
                x.at(k, l) = qpsk_modulate(payload_bits[bit], payload_bits[bit + 1]);
                bit += 2;
            }
        }
    }
    return x;
}

inline std::vector<int> random_payload(const PilotPattern& pattern, nn::Rng& rng) {
    std::vector<int> bits(pattern.payload_bits());
    for (auto& b : bits) b = static_cast<int>(rng.next() & 1);
    return bits;
}

/// Y = H o X + W with W i.i.d. circular complex gaussian of variance sigma_N^2.
inline Slot apply_channel(const Slot& x, const Slot& h, const SnrSpec& snr, nn::Rng& rng) {
    if (x.g.size() != h.g.size())
        throw std::invalid_argument("apply_channel: grid dimension mismatch");
    Slot y(SlotRole::received);
    const double s2 = snr.sigma2();
    for (std::size_t i = 0; i < y.g.size(); ++i) {
        y.g[i] = h.g[i] * x.g[i];
        if (s2 > 0.0) y.g[i] += rng.cgaussian(s2);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Unitary 72-point DFT pair, used by the time-domain validation path.

namespace detail {
inline const std::vector<cd>& dft_twiddles() {
    static const std::vector<cd> tw = [] {
        std::vector<cd> t(FrameConfig::n_f);
        for (std::size_t j = 0; j < FrameConfig::n_f; ++j)
            t[j] = std::polar(1.0, -kTwoPi * static_cast<double>(j) / FrameConfig::n_f);
        return t;
    }();
    return tw;
}
}  // namespace detail

/// Unitary DFT pair (1/sqrt(N) scaling) for one length-72 sequence.
inline std::vector<cd> dft72(const std::vector<cd>& x, bool inverse) {
    const std::size_t n = FrameConfig::n_f;
    if (x.size() != n) throw std::invalid_argument("dft72: need length 72");
    const auto& tw = detail::dft_twiddles();
    std::vector<cd> y(n, cd{0.0, 0.0});
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k) {
        cd acc{0.0, 0.0};
        for (std::size_t m = 0; m < n; ++m) {
            const cd w = tw[(k * m) % n];
            acc += x[m] * (inverse ? std::conj(w) : w);
        }
        y[k] = acc * scale;
    }
    return y;
}

/// IFFT + CP prepend, CP strip + FFT, per symbol, both with 1/sqrt(N_f)
/// scaling. Returns the reconstructed grid.
inline Slot ofdm_time_domain_roundtrip(const Slot& x) {
    const std::size_t n = FrameConfig::n_f;
    Slot out(x.role);
    std::vector<cd> col(n);
    for (std::size_t l = 0; l < FrameConfig::n_s; ++l) {
        for (std::size_t k = 0; k < n; ++k) col[k] = x.at(k, l);
        const std::vector<cd> t = dft72(col, true);
        std::vector<cd> with_cp(n + FrameConfig::t_cp);
        for (int i = 0; i < FrameConfig::t_cp; ++i) with_cp[i] = t[n - FrameConfig::t_cp + i];
        std::copy(t.begin(), t.end(), with_cp.begin() + FrameConfig::t_cp);
        std::vector<cd> body(with_cp.begin() + FrameConfig::t_cp, with_cp.end());
        const std::vector<cd> back = dft72(body, false);
        for (std::size_t k = 0; k < n; ++k) out.at(k, l) = back[k];
    }
    return out;
}

// ---------------------------------------------------------------------------

/// Received and transmitted pilot values, 36 x 2, ascending subcarrier order,
/// column 0 = first pilot symbol, column 1 = second.
struct PilotObservation {
    std::vector<cd> y;  // 36 x 2, y[i * 2 + j]
    std::vector<cd> x;

    cd& y_at(std::size_t i, std::size_t j) { return y[i * 2 + j]; }
    cd y_at(std::size_t i, std::size_t j) const { return y[i * 2 + j]; }
    cd& x_at(std::size_t i, std::size_t j) { return x[i * 2 + j]; }
    cd x_at(std::size_t i, std::size_t j) const { return x[i * 2 + j]; }
};

inline PilotObservation extract_pilot_ls_input(const Slot& y, const PilotPattern& pattern) {
    PilotObservation obs;
    obs.y.assign(FrameConfig::comb_size * 2, cd{0.0, 0.0});
    obs.x.assign(FrameConfig::comb_size * 2, cd{0.0, 0.0});
    for (std::size_t j = 0; j < 2; ++j) {
        const std::size_t l = PilotPattern::feature_symbols[j];
        const auto comb = PilotPattern::comb(j);
        for (std::size_t i = 0; i < comb.size(); ++i) {
            obs.y_at(i, j) = y.at(comb[i], l);
            obs.x_at(i, j) = pattern.pilot_value(comb[i], l);
        }
    }
    return obs;
}

struct BerResult {
    double errored_bits = 0.0;
    std::size_t total_bits = 0;
    double ber() const { return total_bits ? errored_bits / static_cast<double>(total_bits) : 0.0; }
};

/// Equalize X_hat = Y / H_hat on data resource elements and count hard
/// decision bit errors. Near-zero denominators become erasures worth half a
/// bit error per bit.
inline BerResult equalize_and_count_errors(const Slot& y, const Slot& h_hat,
                                           const std::vector<int>& payload_bits,
                                           const PilotPattern& pattern) {
    if (payload_bits.size() != pattern.payload_bits())
        throw std::invalid_argument("equalize_and_count_errors: payload bit count mismatch");
    BerResult r;
    r.total_bits = payload_bits.size();
    std::size_t bit = 0;
    for (std::size_t l = 0; l < FrameConfig::n_s; ++l) {
        if (!pattern.is_data_symbol(l)) continue;
        for (std::size_t k = 0; k < FrameConfig::n_f; ++k) {
            const cd den = h_hat.at(k, l);
            if (std::abs(den) < 1e-12) {
                r.errored_bits += 1.0;  // two bits at half each
                bit += 2;
                continue;
            }
            const auto [b0, b1] = qpsk_demodulate(y.at(k, l) / den);
            if (b0 != payload_bits[bit]) r.errored_bits += 1.0;
            if (b1 != payload_bits[bit + 1]) r.errored_bits += 1.0;
            bit += 2;
        }
    }
    return r;
}

}  // namespace chanest::ofdm
