#pragma once

#include "binio.hpp"
#include "cmat.hpp"
#include "ofdm.hpp"
#include "parallel.hpp"

namespace chanest::est {

using cd = std::complex<double>;
using cmat::Mat;

enum class EstimateSource { ls, mmse, network };

/// Channel estimate at the 36 x 2 pilot resource elements.
struct PilotEstimate {
    std::vector<cd> h;  // h[i * 2 + j], ascending subcarrier, column j = pilot symbol j
    EstimateSource source = EstimateSource::ls;

    PilotEstimate() : h(ofdm::FrameConfig::comb_size * 2, cd{0.0, 0.0}) {}

    cd& at(std::size_t i, std::size_t j) { return h[i * 2 + j]; }
    cd at(std::size_t i, std::size_t j) const { return h[i * 2 + j]; }
};

/// Elementwise division of received by transmitted pilots.
inline PilotEstimate ls_estimate(const ofdm::PilotObservation& obs) {
    PilotEstimate e;
    e.source = EstimateSource::ls;
    for (std::size_t i = 0; i < e.h.size(); ++i) e.h[i] = obs.y[i] / obs.x[i];
    return e;
}

// ---------------------------------------------------------------------------
// Interpolation to the full frame.

namespace detail {

/// Linear interpolation of one pilot comb (36 values at subcarriers
/// offset, offset+2, ...) onto all 72 subcarriers, extrapolating the boundary
/// gradient past the comb ends.
inline void comb_to_band(const cd* comb, std::size_t offset, cd* out) {
    constexpr std::size_t n = ofdm::FrameConfig::comb_size;
    for (std::size_t k = 0; k < ofdm::FrameConfig::n_f; ++k) {
        const double t = (static_cast<double>(k) - static_cast<double>(offset)) / 2.0;
        double fi = std::floor(t);
        if (fi < 0.0) fi = 0.0;
        if (fi > static_cast<double>(n - 2)) fi = static_cast<double>(n - 2);
        const std::size_t i = static_cast<std::size_t>(fi);
        const double frac = t - fi;
        out[k] = comb[i] + (comb[i + 1] - comb[i]) * frac;
    }
}

}  // namespace detail

/// Per-subcarrier linear interpolation between the two pilot symbols; the
/// final symbol continues the line.
inline ofdm::Slot linear_time_to_frame(const std::vector<cd>& h_pilot_sym) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    if (h_pilot_sym.size() != n_f * 2)
        throw std::invalid_argument("linear_time_to_frame: need 72x2 values");
    ofdm::Slot out(ofdm::SlotRole::estimate);
    const double span = static_cast<double>(ofdm::FrameConfig::pilot_symbols[1] -
                                            ofdm::FrameConfig::pilot_symbols[0]);  // 12
    for (std::size_t k = 0; k < n_f; ++k) {
        const cd a = h_pilot_sym[k * 2];
        const cd b = h_pilot_sym[k * 2 + 1];
        for (std::size_t l = 0; l < ofdm::FrameConfig::n_s; ++l)
            out.at(k, l) = a + (b - a) * (static_cast<double>(l) / span);
    }
    return out;
}

/// Bilinear resize of the 36 x 2 pilot lattice to the 72 x 14 frame:
/// frequency pass per pilot symbol, then the shared linear time pass.
inline ofdm::Slot bilinear_to_frame(const PilotEstimate& e) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    std::vector<cd> comb(ofdm::FrameConfig::comb_size);
    std::vector<cd> cols(n_f * 2);
    std::vector<cd> band(n_f);
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t i = 0; i < comb.size(); ++i) comb[i] = e.at(i, j);
        detail::comb_to_band(comb.data(), j, band.data());
        for (std::size_t k = 0; k < n_f; ++k) cols[k * 2 + j] = band[k];
    }
    return linear_time_to_frame(cols);
}

// ---------------------------------------------------------------------------
// Genie correlation statistics (ensemble estimates over noise-free
// realizations) and the FD-MMSE estimators built on them.

struct GenieCorrelations {
    Mat r_hhp[2];    // 72 x 36 per pilot symbol
    Mat r_hphp[2];   // 36 x 36 per pilot symbol
    std::vector<Mat> r_full;  // per OFDM symbol, 72 x 72; empty unless built with_full_grid
    std::size_t n_mc = 0;

    bool has_full_grid() const { return !r_full.empty(); }
};

inline GenieCorrelations genie_correlations(const fading::ChannelSpec& spec, std::size_t n_mc,
                                            std::uint64_t seed, bool with_full_grid = false,
                                            int threads = 0) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    constexpr std::size_t n_s = ofdm::FrameConfig::n_s;
    constexpr std::size_t nc = ofdm::FrameConfig::comb_size;
    if (n_mc == 0) throw std::invalid_argument("genie_correlations: n_mc must be positive");

    struct Accum {
        Mat hhp[2] = {Mat(n_f, nc), Mat(n_f, nc)};
        Mat hphp[2] = {Mat(nc, nc), Mat(nc, nc)};
        std::vector<Mat> full;
    };
    const int t = threads <= 0 ? default_threads() : threads;
    std::vector<Accum> acc(static_cast<std::size_t>(std::min<std::size_t>(t, n_mc)));
    for (auto& a : acc)
        if (with_full_grid) a.full.assign(n_s, Mat(n_f, n_f));

    parallel_chunks(n_mc, static_cast<int>(acc.size()), [&](std::size_t w, std::size_t b,
                                                            std::size_t e) {
        Accum& a = acc[w];
        std::vector<cd> hp(nc);
        for (std::size_t r = b; r < e; ++r) {
            const auto cr = spec.realize(n_s, nn::derive_seed(seed, r));
            for (std::size_t j = 0; j < 2; ++j) {
                const std::size_t l = ofdm::FrameConfig::pilot_symbols[j];
                const cd* h = &cr.h[l * n_f];
                for (std::size_t i = 0; i < nc; ++i) hp[i] = h[2 * i + j];
                for (std::size_t r1 = 0; r1 < n_f; ++r1)
                    for (std::size_t c1 = 0; c1 < nc; ++c1)
                        a.hhp[j].at(r1, c1) += h[r1] * std::conj(hp[c1]);
                for (std::size_t r1 = 0; r1 < nc; ++r1)
                    for (std::size_t c1 = 0; c1 < nc; ++c1)
                        a.hphp[j].at(r1, c1) += hp[r1] * std::conj(hp[c1]);
            }
            if (with_full_grid) {
                for (std::size_t l = 0; l < n_s; ++l) {
                    const cd* h = &cr.h[l * n_f];
                    Mat& m = a.full[l];
                    for (std::size_t r1 = 0; r1 < n_f; ++r1) {
                        const cd hr = h[r1];
                        for (std::size_t c1 = 0; c1 < n_f; ++c1)
                            m.at(r1, c1) += hr * std::conj(h[c1]);
                    }
                }
            }
        }
    });

    GenieCorrelations out;
    out.n_mc = n_mc;
    for (std::size_t j = 0; j < 2; ++j) {
        out.r_hhp[j] = Mat(n_f, nc);
        out.r_hphp[j] = Mat(nc, nc);
    }
    if (with_full_grid) out.r_full.assign(n_s, Mat(n_f, n_f));
    const double inv = 1.0 / static_cast<double>(n_mc);
    for (const auto& a : acc) {
        for (std::size_t j = 0; j < 2; ++j) {
            for (std::size_t i = 0; i < a.hhp[j].a.size(); ++i)
                out.r_hhp[j].a[i] += a.hhp[j].a[i] * inv;
            for (std::size_t i = 0; i < a.hphp[j].a.size(); ++i)
                out.r_hphp[j].a[i] += a.hphp[j].a[i] * inv;
        }
        if (with_full_grid)
            for (std::size_t l = 0; l < n_s; ++l)
                for (std::size_t i = 0; i < a.full[l].a.size(); ++i)
                    out.r_full[l].a[i] += a.full[l].a[i] * inv;
    }
    // enforce exact hermitian symmetry of the sample covariances
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t r = 0; r < nc; ++r)
            for (std::size_t c = 0; c < r; ++c) {
                const cd avg = 0.5 * (out.r_hphp[j].at(r, c) + std::conj(out.r_hphp[j].at(c, r)));
                out.r_hphp[j].at(r, c) = avg;
                out.r_hphp[j].at(c, r) = std::conj(avg);
            }
    for (auto& m : out.r_full)
        for (std::size_t r = 0; r < n_f; ++r)
            for (std::size_t c = 0; c < r; ++c) {
                const cd avg = 0.5 * (m.at(r, c) + std::conj(m.at(c, r)));
                m.at(r, c) = avg;
                m.at(c, r) = std::conj(avg);
            }
    return out;
}

namespace detail {

/// F = R_hhp (R_hphp + s2 I)^-1. A vanishing noise term gets a tiny ridge,
/// which is the regularized equivalent of the pseudo-inverse solve.
inline Mat mmse_filter(const Mat& r_hhp, const Mat& r_hphp, double s2) {
    Mat a = r_hphp;
    double load = s2;
    if (load <= 0.0) {
        double tr = 0.0;
        for (std::size_t i = 0; i < a.rows; ++i) tr += a.at(i, i).real();
        load = 1e-12 * (tr / static_cast<double>(a.rows) + 1.0);
    }
    a.add_scaled_identity(load);
    // A is hermitian, so F = (A^-1 R_hhp^H)^H
    return cmat::solve(a, r_hhp.hermitian()).hermitian();
}

}  // namespace detail

/// Per-pilot-symbol frequency-domain LMMSE, precomputed for one SNR.
struct Fd1dFilter {
    Mat f[2];  // 72 x 36

    static Fd1dFilter make(const GenieCorrelations& corr, const ofdm::SnrSpec& snr) {
        Fd1dFilter out;
        for (std::size_t j = 0; j < 2; ++j)
            out.f[j] = detail::mmse_filter(corr.r_hhp[j], corr.r_hphp[j], snr.sigma2());
        return out;
    }

    /// 72 x 2 pilot-symbol estimate from the 36 x 2 LS input.
    std::vector<cd> apply(const PilotEstimate& e) const {
        std::vector<cd> out(ofdm::FrameConfig::n_f * 2);
        std::vector<cd> col(ofdm::FrameConfig::comb_size);
        for (std::size_t j = 0; j < 2; ++j) {
            for (std::size_t i = 0; i < col.size(); ++i) col[i] = e.at(i, j);
            const std::vector<cd> y = cmat::mul_vec(f[j], col);
            for (std::size_t k = 0; k < y.size(); ++k) out[k * 2 + j] = y[k];
        }
        return out;
    }
};

inline std::vector<cd> fd_mmse_1d(const PilotEstimate& e, const GenieCorrelations& corr,
                                  const ofdm::SnrSpec& snr) {
    return Fd1dFilter::make(corr, snr).apply(e);
}

/// Genie per-symbol LMMSE: pilot symbols filter the comb LS, every other
/// symbol filters a full-band LS formed with the known transmitted grid.
struct Fd2dFilter {
    Fd1dFilter pilot;
    std::vector<Mat> data;  // 72 x 72 per OFDM symbol

    static Fd2dFilter make(const GenieCorrelations& corr, const ofdm::SnrSpec& snr) {
        if (!corr.has_full_grid())
            throw std::invalid_argument("fd_mmse_2d: correlations lack per-symbol statistics");
        Fd2dFilter out;
        out.pilot = Fd1dFilter::make(corr, snr);
        out.data.resize(ofdm::FrameConfig::n_s);
        for (std::size_t l = 0; l < out.data.size(); ++l)
            out.data[l] = detail::mmse_filter(corr.r_full[l], corr.r_full[l], snr.sigma2());
        return out;
    }
};

inline ofdm::Slot fd_mmse_2d(const ofdm::Slot& y, const ofdm::Slot& x, const Fd2dFilter& filt,
                             const ofdm::PilotPattern& pattern) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    ofdm::Slot out(ofdm::SlotRole::estimate);
    const PilotEstimate ls = ls_estimate(ofdm::extract_pilot_ls_input(y, pattern));
    const std::vector<cd> pilot_cols = filt.pilot.apply(ls);
    std::vector<cd> col(n_f);
    for (std::size_t l = 0; l < ofdm::FrameConfig::n_s; ++l) {
        if (pattern.is_feature_symbol(l)) {
            const std::size_t j = (l == 0) ? 0 : 1;
            for (std::size_t k = 0; k < n_f; ++k) out.at(k, l) = pilot_cols[k * 2 + j];
            continue;
        }
        for (std::size_t k = 0; k < n_f; ++k) {
            const cd xv = x.at(k, l);
            if (std::abs(xv) < 1e-12)
                throw std::invalid_argument("fd_mmse_2d: zero transmitted value at data symbol");
            col[k] = y.at(k, l) / xv;
        }
        const std::vector<cd> f = cmat::mul_vec(filt.data[l], col);
        for (std::size_t k = 0; k < n_f; ++k) out.at(k, l) = f[k];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Wiener denoiser from the uniform-delay correlation (profile agnostic).

struct WienerFilter {
    Mat f;  // 72 x 72

    static WienerFilter uniform_delay(const ofdm::SnrSpec& snr) {
        const Mat r = fading::uniform_delay_correlation(ofdm::FrameConfig::n_f,
                                                        ofdm::FrameConfig::t_cp);
        WienerFilter w;
        w.f = detail::mmse_filter(r, r, snr.sigma2());
        return w;
    }

    std::vector<cd> apply(const std::vector<cd>& col) const { return cmat::mul_vec(f, col); }
};

/// Decision-directed channel estimation seeded by an interpolated LS frame.
/// Iterates hard decisions against re-estimates until the decisions settle
/// (or 100 iterations), then Wiener-denoises every OFDM symbol in frequency.
inline ofdm::Slot dd_ce(const ofdm::Slot& y, const ofdm::Slot& h_ls_frame,
                        const ofdm::PilotPattern& pattern, const ofdm::SnrSpec& snr,
                        int max_iter = 100) {
    constexpr std::size_t n_f = ofdm::FrameConfig::n_f;
    constexpr std::size_t n_s = ofdm::FrameConfig::n_s;
    ofdm::Slot h = h_ls_frame;
    h.role = ofdm::SlotRole::estimate;

    // known symbols are never decision-directed
    std::vector<cd> xhat(n_f * n_s, cd{0.0, 0.0});
    std::vector<bool> decided(n_f * n_s, false);
    for (std::size_t l = 0; l < n_s; ++l)
        for (std::size_t k = 0; k < n_f; ++k) {
            const std::size_t idx = l * n_f + k;
            if (pattern.is_data_symbol(l)) {
                decided[idx] = true;
                xhat[idx] = ofdm::qpsk_hard_decision(y.at(k, l) / h.at(k, l));
            } else if (pattern.is_feature_symbol(l)) {
                const std::size_t which = (l == 0) ? 0 : 1;
                if ((k % ofdm::FrameConfig::l_s) == which) xhat[idx] = pattern.pilot_value(k, l);
            } else if (pattern.is_label_symbol(l)) {
                xhat[idx] = pattern.label_amplitude() * pattern.pilot_value(k, l);
            }
        }

    for (int it = 0; it < max_iter; ++it) {
        for (std::size_t l = 0; l < n_s; ++l)
            for (std::size_t k = 0; k < n_f; ++k) {
                const std::size_t idx = l * n_f + k;
                if (std::abs(xhat[idx]) > 0.0) h.at(k, l) = y.at(k, l) / xhat[idx];
            }
        bool changed = false;
        for (std::size_t l = 0; l < n_s; ++l)
            for (std::size_t k = 0; k < n_f; ++k) {
                const std::size_t idx = l * n_f + k;
                if (!decided[idx]) continue;
                const cd d = ofdm::qpsk_hard_decision(y.at(k, l) / h.at(k, l));
                if (d != xhat[idx]) {
                    xhat[idx] = d;
                    changed = true;
                }
            }
        if (!changed) break;
    }

    const WienerFilter w = WienerFilter::uniform_delay(snr);
    std::vector<cd> col(n_f);
    for (std::size_t l = 0; l < n_s; ++l) {
        for (std::size_t k = 0; k < n_f; ++k) col[k] = h.at(k, l);
        const std::vector<cd> d = w.apply(col);
        for (std::size_t k = 0; k < n_f; ++k) h.at(k, l) = d[k];
    }
    return h;
}

// ---------------------------------------------------------------------------
// Correlation cache files: magic, version, named row-major complex matrices.

inline void save_correlations(const std::string& path, const GenieCorrelations& corr) {
    auto out = binio::open_out(path);
    out.write("CFM1", 4);
    binio::write_pod<std::uint32_t>(out, 1);
    binio::write_pod<std::uint64_t>(out, corr.n_mc);
    const std::uint32_t count = 4 + static_cast<std::uint32_t>(corr.r_full.size());
    binio::write_pod<std::uint32_t>(out, count);
    auto write_mat = [&out](const std::string& name, const Mat& m) {
        binio::write_string(out, name);
        binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows));
        binio::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols));
        out.write(reinterpret_cast<const char*>(m.a.data()),
                  static_cast<std::streamsize>(m.a.size() * sizeof(cd)));
    };
    for (std::size_t j = 0; j < 2; ++j) {
        write_mat("r_hhp" + std::to_string(j), corr.r_hhp[j]);
        write_mat("r_hphp" + std::to_string(j), corr.r_hphp[j]);
    }
    for (std::size_t l = 0; l < corr.r_full.size(); ++l)
        write_mat("r_full" + std::to_string(l), corr.r_full[l]);
    if (!out) throw std::runtime_error("failed writing correlation cache '" + path + "'");
}

inline GenieCorrelations load_correlations(const std::string& path) {
    auto in = binio::open_in(path);
    binio::expect_magic(in, "CFM1", "correlation cache");
    const auto version = binio::read_pod<std::uint32_t>(in, "version");
    if (version != 1)
        throw std::runtime_error("correlation cache version " + std::to_string(version) +
                                 " not supported");
    GenieCorrelations corr;
    corr.n_mc = binio::read_pod<std::uint64_t>(in, "n_mc");
    const auto count = binio::read_pod<std::uint32_t>(in, "matrix count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = binio::read_string(in, "matrix name");
        const auto rows = binio::read_pod<std::uint32_t>(in, "rows");
        const auto cols = binio::read_pod<std::uint32_t>(in, "cols");
        Mat m(rows, cols);
        in.read(reinterpret_cast<char*>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(cd)));
        if (!in) throw std::runtime_error("truncated correlation cache '" + path + "'");
        if (name == "r_hhp0")
            corr.r_hhp[0] = std::move(m);
        else if (name == "r_hhp1")
            corr.r_hhp[1] = std::move(m);
        else if (name == "r_hphp0")
            corr.r_hphp[0] = std::move(m);
        else if (name == "r_hphp1")
            corr.r_hphp[1] = std::move(m);
        else if (name.rfind("r_full", 0) == 0) {
            const std::size_t l = std::stoul(name.substr(6));
            if (corr.r_full.size() <= l) corr.r_full.resize(l + 1);
            corr.r_full[l] = std::move(m);
        }
    }
    return corr;
}

}  // namespace chanest::est
