#pragma once

#include "autodiff.hpp"

namespace chanest::nn {

/// y[:,c] = W x[:,c] + b, independently per channel c.
inline Var fully_connected(const Var& x, const Var& W, const Var& b) {
    const Tensor& X = x->value;
    const Tensor& Wm = W->value;
    const Tensor& bv = b->value;
    if (X.shape.size() != 2 || Wm.shape.size() != 2 || Wm.shape[1] != X.shape[0])
        throw std::invalid_argument("fully_connected: W " + shape_string(Wm.shape) +
                                    " does not conform with x " + shape_string(X.shape));
    const std::size_t f = X.shape[0], c = X.shape[1], g = Wm.shape[0];
    if (bv.shape.size() != 1 || bv.shape[0] != g)
        throw std::invalid_argument("fully_connected: bias " + shape_string(bv.shape) +
                                    " does not conform with W " + shape_string(Wm.shape));

    // Column-major staging keeps the inner dot products contiguous.
    std::vector<double> xt(c * f);
    for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < c; ++j) xt[j * f + i] = X.data[i * c + j];

    Tensor out({g, c});
    for (std::size_t r = 0; r < g; ++r) {
        const double* w = &Wm.data[r * f];
        for (std::size_t j = 0; j < c; ++j) {
            const double* xc = &xt[j * f];
            double s = 0.0;
            for (std::size_t i = 0; i < f; ++i) s += w[i] * xc[i];
            out.data[r * c + j] = s + bv.data[r];
        }
    }

    Var node = make_node(std::move(out), {x, W, b});
    Node* nr = node.get();
    Node* xr = x.get();
    Node* wr = W.get();
    Node* br = b.get();
    node->backprop = [nr, xr, wr, br, f, c, g, xt = std::move(xt)]() {
        const double* gd = nr->grad.data.data();
        if (br->requires_grad) {
            br->ensure_grad();
            double* gb = br->grad.data.data();
            for (std::size_t r = 0; r < g; ++r) {
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += gd[r * c + j];
                gb[r] += s;
            }
        }
        if (wr->requires_grad) {
            wr->ensure_grad();
            double* gw = wr->grad.data.data();
            for (std::size_t r = 0; r < g; ++r)
                for (std::size_t j = 0; j < c; ++j) {
                    const double gv = gd[r * c + j];
                    const double* xc = &xt[j * f];
                    double* gwr = &gw[r * f];
                    for (std::size_t i = 0; i < f; ++i) gwr[i] += gv * xc[i];
                }
        }
        if (xr->requires_grad) {
            xr->ensure_grad();
            double* gx = xr->grad.data.data();
            const double* wd = wr->value.data.data();
            for (std::size_t r = 0; r < g; ++r) {
                const double* w = &wd[r * f];
                for (std::size_t j = 0; j < c; ++j) {
                    const double gv = gd[r * c + j];
                    for (std::size_t i = 0; i < f; ++i) gx[i * c + j] += gv * w[i];
                }
            }
        }
    };
    return node;
}

/// Spatial-size-preserving convolution, x: H x W x Cin, kernels: kh x kw x Cin x Cout.
/// Even kernels pad floor((k-1)/2) before and ceil((k-1)/2) after.
inline Var conv2d(const Var& x, const Var& kernels, const Var& bias) {
    const Tensor& X = x->value;
    const Tensor& K = kernels->value;
    const Tensor& B = bias->value;
    if (X.shape.size() != 3 || K.shape.size() != 4)
        throw std::invalid_argument("conv2d: need x HxWxC and kernels khxkwxCixCo, got " +
                                    shape_string(X.shape) + " and " + shape_string(K.shape));
    const std::size_t h = X.shape[0], w = X.shape[1], ci = X.shape[2];
    const std::size_t kh = K.shape[0], kw = K.shape[1], co = K.shape[3];
    if (K.shape[2] != ci)
        throw std::invalid_argument("conv2d: channel mismatch, x " + shape_string(X.shape) +
                                    " vs kernels " + shape_string(K.shape));
    if (B.shape.size() != 1 || B.shape[0] != co)
        throw std::invalid_argument("conv2d: bias " + shape_string(B.shape) + " vs Cout " +
                                    std::to_string(co));
    const std::ptrdiff_t pbh = static_cast<std::ptrdiff_t>((kh - 1) / 2);
    const std::ptrdiff_t pbw = static_cast<std::ptrdiff_t>((kw - 1) / 2);

    constexpr std::size_t kMaxCo = 64;
    if (co > kMaxCo) throw std::invalid_argument("conv2d: more than 64 output channels");
    Tensor out({h, w, co});
    double acc[kMaxCo];
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            for (std::size_t o = 0; o < co; ++o) acc[o] = B.data[o];
            for (std::size_t di = 0; di < kh; ++di) {
                const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(i + di) - pbh;
                if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < kw; ++dj) {
                    const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + dj) - pbw;
                    if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const double* xp = &X.data[(static_cast<std::size_t>(xi) * w +
                                                static_cast<std::size_t>(xj)) * ci];
                    const double* kp = &K.data[(di * kw + dj) * ci * co];
                    for (std::size_t cc = 0; cc < ci; ++cc) {
                        const double xv = xp[cc];
                        const double* kc = &kp[cc * co];
                        for (std::size_t o = 0; o < co; ++o) acc[o] += xv * kc[o];
                    }
                }
            }
            double* y = &out.data[(i * w + j) * co];
            for (std::size_t o = 0; o < co; ++o) y[o] = acc[o];
        }

    Var node = make_node(std::move(out), {x, kernels, bias});
    Node* nr = node.get();
    Node* xr = x.get();
    Node* kr = kernels.get();
    Node* br = bias.get();
    node->backprop = [nr, xr, kr, br, h, w, ci, kh, kw, co, pbh, pbw]() {
        const double* g = nr->grad.data.data();
        if (br->requires_grad) {
            br->ensure_grad();
            double* gb = br->grad.data.data();
            for (std::size_t i = 0; i < h * w; ++i)
                for (std::size_t o = 0; o < co; ++o) gb[o] += g[i * co + o];
        }
        const bool want_k = kr->requires_grad;
        const bool want_x = xr->requires_grad;
        if (!want_k && !want_x) return;
        if (want_k) kr->ensure_grad();
        if (want_x) xr->ensure_grad();
        double* gk = want_k ? kr->grad.data.data() : nullptr;
        double* gx = want_x ? xr->grad.data.data() : nullptr;
        const double* xd = xr->value.data.data();
        const double* kd = kr->value.data.data();
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double* gy = &g[(i * w + j) * co];
                for (std::size_t di = 0; di < kh; ++di) {
                    const std::ptrdiff_t xi = static_cast<std::ptrdiff_t>(i + di) - pbh;
                    if (xi < 0 || xi >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t dj = 0; dj < kw; ++dj) {
                        const std::ptrdiff_t xj = static_cast<std::ptrdiff_t>(j + dj) - pbw;
                        if (xj < 0 || xj >= static_cast<std::ptrdiff_t>(w)) continue;
                        const std::size_t xoff = (static_cast<std::size_t>(xi) * w +
                                                  static_cast<std::size_t>(xj)) * ci;
                        const std::size_t koff = (di * kw + dj) * ci * co;
                        for (std::size_t cc = 0; cc < ci; ++cc) {
                            if (want_k) {
                                const double xv = xd[xoff + cc];
                                double* gkc = &gk[koff + cc * co];
                                for (std::size_t o = 0; o < co; ++o) gkc[o] += xv * gy[o];
                            }
                            if (want_x) {
                                const double* kc = &kd[koff + cc * co];
                                double s = 0.0;
                                for (std::size_t o = 0; o < co; ++o) s += kc[o] * gy[o];
                                gx[xoff + cc] += s;
                            }
                        }
                    }
                }
            }
    };
    return node;
}

/// Normalize over the first dimension, per trailing index; shared w, b of
/// length F. epsilon fixed at 1e-5.
inline Var layer_norm(const Var& x, const Var& w, const Var& b) {
    constexpr double kEps = 1e-5;
    const Tensor& X = x->value;
    if (X.shape.empty() || X.shape[0] < 2)
        throw std::invalid_argument("layer_norm: first extent must be >= 2, got " +
                                    shape_string(X.shape));
    const std::size_t f = X.shape[0];
    const std::size_t t = X.numel() / f;
    const Tensor& Wv = w->value;
    const Tensor& Bv = b->value;
    if (Wv.numel() != f || Bv.numel() != f)
        throw std::invalid_argument("layer_norm: w/b " + shape_string(Wv.shape) + "/" +
                                    shape_string(Bv.shape) + " vs first extent " +
                                    std::to_string(f));

    Tensor out(X.shape);
    std::vector<double> mean(t), inv_std(t);
    for (std::size_t j = 0; j < t; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < f; ++i) mu += X.data[i * t + j];
        mu /= static_cast<double>(f);
        double var = 0.0;
        for (std::size_t i = 0; i < f; ++i) {
            const double d = X.data[i * t + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(f);
        mean[j] = mu;
        inv_std[j] = 1.0 / std::sqrt(var + kEps);
        for (std::size_t i = 0; i < f; ++i) {
            const double xh = (X.data[i * t + j] - mu) * inv_std[j];
            out.data[i * t + j] = Wv.data[i] * xh + Bv.data[i];
        }
    }

    Var node = make_node(std::move(out), {x, w, b});
    Node* nr = node.get();
    Node* xr = x.get();
    Node* wr = w.get();
    Node* br = b.get();
    node->backprop = [nr, xr, wr, br, f, t, mean = std::move(mean),
                      inv_std = std::move(inv_std)]() {
        const double* g = nr->grad.data.data();
        const double* xd = xr->value.data.data();
        const double* wd = wr->value.data.data();
        double* gw = nullptr;
        double* gb = nullptr;
        if (wr->requires_grad) {
            wr->ensure_grad();
            gw = wr->grad.data.data();
        }
        if (br->requires_grad) {
            br->ensure_grad();
            gb = br->grad.data.data();
        }
        double* gx = nullptr;
        if (xr->requires_grad) {
            xr->ensure_grad();
            gx = xr->grad.data.data();
        }
        std::vector<double> xh(f);
        for (std::size_t j = 0; j < t; ++j) {
            const double mu = mean[j];
            const double is = inv_std[j];
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t i = 0; i < f; ++i) {
                xh[i] = (xd[i * t + j] - mu) * is;
                const double gij = g[i * t + j];
                if (gw) gw[i] += gij * xh[i];
                if (gb) gb[i] += gij;
                const double a = gij * wd[i];
                s1 += a;
                s2 += a * xh[i];
            }
            if (gx) {
                const double invf = 1.0 / static_cast<double>(f);
                for (std::size_t i = 0; i < f; ++i) {
                    const double a = g[i * t + j] * wd[i];
                    gx[i * t + j] += is * (a - s1 * invf - xh[i] * s2 * invf);
                }
            }
        }
    };
    return node;
}

inline Var relu(const Var& x) {
    Tensor out = x->value;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    Var node = make_node(std::move(out), {x});
    Node* nr = node.get();
    Node* xr = x.get();
    node->backprop = [nr, xr]() {
        if (!xr->requires_grad) return;
        xr->ensure_grad();
        const double* g = nr->grad.data.data();
        const double* xd = xr->value.data.data();
        double* gx = xr->grad.data.data();
        for (std::size_t i = 0; i < nr->grad.data.size(); ++i)
            if (xd[i] > 0.0) gx[i] += g[i];
    };
    return node;
}

/// Tanh approximation of GeLU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
inline Var gelu(const Var& x) {
    constexpr double kC0 = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kC1 = 0.044715;
    Tensor out = x->value;
    for (double& v : out.data) {
        const double u = kC0 * (v + kC1 * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    Var node = make_node(std::move(out), {x});
    Node* nr = node.get();
    Node* xr = x.get();
    node->backprop = [nr, xr]() {
        if (!xr->requires_grad) return;
        xr->ensure_grad();
        const double* g = nr->grad.data.data();
        const double* xd = xr->value.data.data();
        double* gx = xr->grad.data.data();
        for (std::size_t i = 0; i < nr->grad.data.size(); ++i) {
            const double v = xd[i];
            const double u = kC0 * (v + kC1 * v * v * v);
            const double th = std::tanh(u);
            const double du = kC0 * (1.0 + 3.0 * kC1 * v * v);
            gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
        }
    };
    return node;
}

/// Row-wise softmax with per-row max subtraction.
inline Var softmax_rows(const Var& x) {
    const Tensor& X = x->value;
    if (X.shape.size() != 2)
        throw std::invalid_argument("softmax_rows: need 2-D, got " + shape_string(X.shape));
    const std::size_t n = X.shape[0], m = X.shape[1];
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = &X.data[i * m];
        double mx = xi[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        double* yi = &out.data[i * m];
        for (std::size_t j = 0; j < m; ++j) {
            yi[j] = std::exp(xi[j] - mx);
            z += yi[j];
        }
        for (std::size_t j = 0; j < m; ++j) yi[j] /= z;
    }
    Var node = make_node(std::move(out), {x});
    Node* nr = node.get();
    Node* xr = x.get();
    node->backprop = [nr, xr, n, m]() {
        if (!xr->requires_grad) return;
        xr->ensure_grad();
        const double* g = nr->grad.data.data();
        const double* p = nr->value.data.data();
        double* gx = xr->grad.data.data();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * p[i * m + j];
            for (std::size_t j = 0; j < m; ++j)
                gx[i * m + j] += p[i * m + j] * (g[i * m + j] - dot);
        }
    };
    return node;
}

struct AttentionOut {
    Var output;
    Var probabilities;  // N x N row-stochastic matrix
};

/// softmax(Q K^T / sqrt(d_k)) V. Q, K, V share one shape.
inline AttentionOut scaled_dot_product_attention(const Var& q, const Var& k, const Var& v,
                                                 double d_k) {
    if (d_k <= 0.0) throw std::invalid_argument("attention: d_k must be positive");
    if (!q->value.same_shape(k->value) || !q->value.same_shape(v->value))
        throw std::invalid_argument("attention: Q/K/V shapes differ: " +
                                    shape_string(q->value.shape) + ", " +
                                    shape_string(k->value.shape) + ", " +
                                    shape_string(v->value.shape));
    Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(d_k));
    Var probs = softmax_rows(scores);
    return {matmul(probs, v), probs};
}

struct MultiHeadOut {
    Var output;
    std::vector<Var> head_probabilities;
    std::vector<Var> head_outputs;
};

/// Splits y contiguously into [K | Q | V], each third contiguously into
/// n_heads slices, runs attention per head, concatenates head-major and
/// applies the final per-channel fully-connected map.
inline MultiHeadOut multi_head_attention(const Var& y, std::size_t n_heads, const Var& w_out,
                                         const Var& b_out) {
    const Tensor& Y = y->value;
    if (Y.shape.size() != 2)
        throw std::invalid_argument("multi_head_attention: need 2-D input, got " +
                                    shape_string(Y.shape));
    const std::size_t rows = Y.shape[0];
    if (n_heads == 0 || rows % (3 * n_heads) != 0)
        throw std::invalid_argument("multi_head_attention: first extent " + std::to_string(rows) +
                                    " not divisible by 3*n_heads=" + std::to_string(3 * n_heads));
    const std::size_t third = rows / 3;
    const std::size_t hlen = third / n_heads;
    Var ks = slice_rows(y, 0, third);
    Var qs = slice_rows(y, third, 2 * third);
    Var vs = slice_rows(y, 2 * third, rows);

    MultiHeadOut out;
    std::vector<Var> heads;
    for (std::size_t h = 0; h < n_heads; ++h) {
        Var kh = slice_rows(ks, h * hlen, (h + 1) * hlen);
        Var qh = slice_rows(qs, h * hlen, (h + 1) * hlen);
        Var vh = slice_rows(vs, h * hlen, (h + 1) * hlen);
        AttentionOut a = scaled_dot_product_attention(qh, kh, vh, static_cast<double>(hlen));
        heads.push_back(a.output);
        out.head_probabilities.push_back(a.probabilities);
        out.head_outputs.push_back(a.output);
    }
    out.output = fully_connected(concat_rows(heads), w_out, b_out);
    return out;
}

// ---------------------------------------------------------------------------
// Losses (means over all elements).

struct LossSpec {
    enum class Kind { huber, mse };
    Kind kind = Kind::huber;
    double delta = 1.0;

    static LossSpec huber(double delta = 1.0) {
        if (delta <= 0.0) throw std::invalid_argument("LossSpec: delta must be positive");
        return {Kind::huber, delta};
    }
    static LossSpec mse() { return {Kind::mse, 1.0}; }
};

inline Var huber_loss(const Var& pred, const Tensor& target, double delta = 1.0) {
    if (!pred->value.same_shape(target))
        throw std::invalid_argument("huber_loss: shape mismatch " +
                                    shape_string(pred->value.shape) + " vs " +
                                    shape_string(target.shape));
    if (delta <= 0.0) throw std::invalid_argument("huber_loss: delta must be positive");
    const std::size_t n = target.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = pred->value.data[i] - target.data[i];
        const double aa = std::abs(a);
        acc += aa <= delta ? 0.5 * a * a : delta * (aa - 0.5 * delta);
    }
    Var node = make_node(Tensor::scalar(acc / static_cast<double>(n)), {pred});
    Node* nr = node.get();
    Node* pr = pred.get();
    auto tgt = std::make_shared<Tensor>(target);
    node->backprop = [nr, pr, tgt, delta, n]() {
        if (!pr->requires_grad) return;
        pr->ensure_grad();
        const double g = nr->grad.data[0] / static_cast<double>(n);
        double* gp = pr->grad.data.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double a = pr->value.data[i] - tgt->data[i];
            gp[i] += g * (std::abs(a) <= delta ? a : (a > 0.0 ? delta : -delta));
        }
    };
    return node;
}

inline Var mse_loss(const Var& pred, const Tensor& target) {
    if (!pred->value.same_shape(target))
        throw std::invalid_argument("mse_loss: shape mismatch " + shape_string(pred->value.shape) +
                                    " vs " + shape_string(target.shape));
    const std::size_t n = target.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = pred->value.data[i] - target.data[i];
        acc += a * a;
    }
    Var node = make_node(Tensor::scalar(acc / static_cast<double>(n)), {pred});
    Node* nr = node.get();
    Node* pr = pred.get();
    auto tgt = std::make_shared<Tensor>(target);
    node->backprop = [nr, pr, tgt, n]() {
        if (!pr->requires_grad) return;
        pr->ensure_grad();
        const double g = nr->grad.data[0] * 2.0 / static_cast<double>(n);
        double* gp = pr->grad.data.data();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g * (pr->value.data[i] - tgt->data[i]);
    };
    return node;
}

inline Var loss_of(const LossSpec& spec, const Var& pred, const Tensor& target) {
    return spec.kind == LossSpec::Kind::huber ? huber_loss(pred, target, spec.delta)
                                              : mse_loss(pred, target);
}

}  // namespace chanest::nn
