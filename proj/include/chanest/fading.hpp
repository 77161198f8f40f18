#pragma once

#include <fstream>
#include <sstream>

#include "cmat.hpp"
#include "tensor.hpp"

namespace chanest::fading {

using cd = std::complex<double>;

inline constexpr double kSampleRate = 1.08e6;
inline constexpr int kSymbolSamples = 72;
inline constexpr int kCpSamples = 16;
inline constexpr int kSymbolSpacingSamples = kSymbolSamples + kCpSamples;  // 88

/// Tapped-delay-line profile; linear gains are normalized to unit total power
/// before use.
struct PowerDelayProfile {
    std::string name;
    std::vector<double> delays_ns;
    std::vector<double> gains_db;

    std::size_t paths() const { return delays_ns.size(); }

    std::vector<double> delays_samples(double fs = kSampleRate) const {
        std::vector<double> d(delays_ns.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = delays_ns[i] * 1e-9 * fs;
        return d;
    }

    std::vector<double> linear_gains() const {
        std::vector<double> g(gains_db.size());
        double total = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = std::pow(10.0, gains_db[i] / 10.0);
            total += g[i];
        }
        for (double& v : g) v /= total;
        return g;
    }

    void validate() const {
        if (delays_ns.empty() || delays_ns.size() != gains_db.size())
            throw std::invalid_argument("pdp '" + name + "': delays/gains length mismatch");
        for (std::size_t i = 0; i < delays_ns.size(); ++i) {
            if (delays_ns[i] < 0.0)
                throw std::invalid_argument("pdp '" + name + "': negative delay");
            if (i > 0 && delays_ns[i] <= delays_ns[i - 1])
                throw std::invalid_argument("pdp '" + name + "': delays not strictly increasing");
        }
        const double max_samples = delays_ns.back() * 1e-9 * kSampleRate;
        if (max_samples >= static_cast<double>(kCpSamples))
            throw std::invalid_argument("pdp '" + name + "': max delay " +
                                        std::to_string(max_samples) + " samples exceeds CP");
    }
};

/// 3GPP TS 36.101 tapped-delay-line profiles plus the long-delay custom one.
inline PowerDelayProfile standard_pdp(const std::string& name) {
    PowerDelayProfile p;
    p.name = name;
    if (name == "EPA") {
        p.delays_ns = {0, 30, 70, 90, 110, 190, 410};
        p.gains_db = {0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8};
    } else if (name == "EVA") {
        p.delays_ns = {0, 30, 150, 310, 370, 710, 1090, 1730, 2510};
        p.gains_db = {0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9};
    } else if (name == "ETU") {
        p.delays_ns = {0, 50, 120, 200, 230, 500, 1600, 2300, 5000};
        p.gains_db = {-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0};
    } else if (name == "CUSTOM") {
        p.delays_ns = {0, 30, 200, 300, 500, 1500, 2500, 5000, 7000, 9000};
        p.gains_db = {-1.0, 0.0, 0.0, -1.0, -2.0, -1.0, -1.0, -1.5, -3.0, -5.0};
    } else {
        throw std::invalid_argument("unknown power delay profile '" + name + "'");
    }
    p.validate();
    return p;
}

inline std::vector<std::string> standard_pdp_names() { return {"EPA", "EVA", "ETU", "CUSTOM"}; }

/// Reads a profile from a key-value file with keys name, delays_ns, gains_db
/// (lists comma-separated).
inline PowerDelayProfile load_pdp_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pdp file '" + path + "'");
    PowerDelayProfile p;
    std::string line;
    auto parse_list = [](const std::string& s) {
        std::vector<double> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.find_first_not_of(" \t") == std::string::npos) continue;
            out.push_back(std::stod(item));
        }
        return out;
    };
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r\n");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r\n");
            return s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "name")
            p.name = val;
        else if (key == "delays_ns")
            p.delays_ns = parse_list(val);
        else if (key == "gains_db")
            p.gains_db = parse_list(val);
    }
    if (p.name.empty()) p.name = path;
    p.validate();
    return p;
}

struct DopplerSpec {
    double f_max_hz = 0.0;
    int n_sinusoids = 20;

    void validate() const {
        if (f_max_hz < 0.0) throw std::invalid_argument("DopplerSpec: negative f_max");
        if (n_sinusoids < 8) throw std::invalid_argument("DopplerSpec: need >= 8 sinusoids");
    }
};

/// Per-symbol complex tap gains plus the derived noise-free frequency
/// response H[k + n_f*l].
struct ChannelRealization {
    PowerDelayProfile pdp;
    double f_d = 0.0;
    std::size_t n_symbols = 0;
    std::size_t n_f = 72;
    std::vector<cd> taps;  // taps[m * n_symbols + l]
    std::vector<cd> h;     // h[l * n_f + k]

    cd tap(std::size_t m, std::size_t l) const { return taps[m * n_symbols + l]; }
    cd H(std::size_t k, std::size_t l) const { return h[l * n_f + k]; }
};

/// Rayleigh multipath realization: sum-of-sinusoids Jakes fading per path,
/// quasi-static over each OFDM symbol and sampled at symbol midpoints spaced
/// T_Sym + T_CP. Fractional-sample delays are kept exact in H.
inline ChannelRealization realize_channel(const PowerDelayProfile& pdp, const DopplerSpec& dop,
                                          std::size_t n_symbols, std::uint64_t seed,
                                          std::size_t n_f = 72) {
    if (n_symbols < 1) throw std::invalid_argument("realize_channel: need n_symbols >= 1");
    pdp.validate();
    dop.validate();

    ChannelRealization cr;
    cr.pdp = pdp;
    cr.f_d = dop.f_max_hz;
    cr.n_symbols = n_symbols;
    cr.n_f = n_f;

    const std::size_t m_paths = pdp.paths();
    const std::vector<double> gains = pdp.linear_gains();
    const std::vector<double> delays = pdp.delays_samples();
    const int n_sin = dop.n_sinusoids;

    cr.taps.assign(m_paths * n_symbols, cd{0.0, 0.0});
    nn::Rng rng(seed);
    const double amp = std::sqrt(2.0 / static_cast<double>(n_sin));
    for (std::size_t m = 0; m < m_paths; ++m) {
        const double g = std::sqrt(gains[m] * 0.5);
        // deterministic per-path, per-component rotation of the arrival angles
        for (int q = 0; q < 2; ++q) {
            const double rot = (q == 0 ? 1.0 : -1.0) * (kPi / (4.0 * n_sin)) *
                               (static_cast<double>(m) + 1.0) /
                               (static_cast<double>(m_paths) + 2.0);
            std::vector<double> omega(n_sin), phase(n_sin);
            for (int s = 0; s < n_sin; ++s) {
                const double alpha = (kPi / (2.0 * n_sin)) * (static_cast<double>(s) + 0.5) + rot;
                omega[s] = kTwoPi * dop.f_max_hz * std::cos(alpha);
                phase[s] = rng.uniform(0.0, kTwoPi);
            }
            for (std::size_t l = 0; l < n_symbols; ++l) {
                const double t = (static_cast<double>(l) * kSymbolSpacingSamples + kCpSamples +
                                  0.5 * kSymbolSamples) /
                                 kSampleRate;
                double acc = 0.0;
                for (int s = 0; s < n_sin; ++s) acc += std::cos(omega[s] * t + phase[s]);
                acc *= amp * g;
                cd& tap = cr.taps[m * n_symbols + l];
                tap += (q == 0) ? cd{acc, 0.0} : cd{0.0, acc};
            }
        }
    }

    cr.h.assign(n_f * n_symbols, cd{0.0, 0.0});
    for (std::size_t l = 0; l < n_symbols; ++l)
        for (std::size_t k = 0; k < n_f; ++k) {
            cd acc{0.0, 0.0};
            for (std::size_t m = 0; m < m_paths; ++m) {
                const double ang = -kTwoPi * static_cast<double>(k) * delays[m] /
                                   static_cast<double>(n_f);
                acc += cr.taps[m * n_symbols + l] * std::polar(1.0, ang);
            }
            cr.h[l * n_f + k] = acc;
        }
    return cr;
}

/// Jakes time correlation J0(2 pi f_D (T_Sym + T_CP) lag).
inline double time_correlation(double f_d_hz, int lag_symbols) {
    const double x = kTwoPi * f_d_hz * (static_cast<double>(kSymbolSpacingSamples) / kSampleRate) *
                     static_cast<double>(lag_symbols);
    return std::cyl_bessel_j(0.0, std::abs(x));
}

/// Frequency correlation for delays uniform over the CP, normalized to unit
/// diagonal: r_{i,j} = (1 - exp(-2 pi i T_CP d / N_f)) / (2 pi i T_CP d / N_f).
inline cmat::Mat uniform_delay_correlation(int n_f, int t_cp_samples) {
    if (n_f <= 0 || t_cp_samples <= 0)
        throw std::invalid_argument("uniform_delay_correlation: N_f and T_CP must be positive");
    cmat::Mat r(static_cast<std::size_t>(n_f), static_cast<std::size_t>(n_f));
    for (int i = 0; i < n_f; ++i)
        for (int j = 0; j < n_f; ++j) {
            if (i == j) {
                r.at(i, j) = 1.0;
                continue;
            }
            // the exponent is a whole number of turns: exact zero
            if ((std::abs(i - j) * t_cp_samples) % n_f == 0) continue;
            const double c = kTwoPi * t_cp_samples * static_cast<double>(i - j) / n_f;
            const cd num = cd{1.0, 0.0} - std::polar(1.0, -c);
            r.at(i, j) = num / cd{0.0, c};
        }
    return r;
}

/// How experiments draw channels: a profile plus a max-Doppler cap; each
/// realization's f_D is uniform on [0, cap] unless fixed_doppler is set.
struct ChannelSpec {
    PowerDelayProfile pdp;
    double f_d_max = 0.0;
    bool fixed_doppler = false;
    int n_sinusoids = 20;

    ChannelRealization realize(std::size_t n_symbols, std::uint64_t seed) const {
        nn::Rng rng(nn::derive_seed(seed, 0xD0));
        const double fd = fixed_doppler ? f_d_max : rng.uniform(0.0, f_d_max);
        return realize_channel(pdp, DopplerSpec{fd, n_sinusoids}, n_symbols,
                               nn::derive_seed(seed, 0xC1));
    }
};

}  // namespace chanest::fading
