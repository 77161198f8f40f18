#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>

#include "tensor.hpp"

namespace chanest::nn {

struct Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. Gradients accumulate into `grad`,
/// which lets a parameter that feeds several graph sites (or several samples
/// of a mini-batch) collect all contributions before the optimizer runs.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void()> backprop;

    void ensure_grad() {
        if (grad.data.size() != value.data.size()) {
            grad.shape = value.shape;
            grad.data.assign(value.data.size(), 0.0);
        }
    }
};

inline Var make_leaf(Tensor v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

inline Var make_node(Tensor v, std::vector<Var> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    return n;
}

inline void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params) {
        p->ensure_grad();
        std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
    }
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate; fresh
/// interior nodes start at zero because every forward builds a new graph.
inline void backward(const Var& loss) {
    if (loss->value.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_string(loss->value.shape));
    if (!loss->requires_grad) return;

    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Frame> stack;
    stack.push_back({loss.get(), 0});
    seen.insert(loss.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad.data[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop();
    }
}

// ---------------------------------------------------------------------------
// Elementwise / structural primitives.

inline Var add(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument("add: shape mismatch " + shape_string(a->value.shape) +
                                    " vs " + shape_string(b->value.shape));
    Tensor out = a->value;
    const double* bd = b->value.data.data();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bd[i];
    Var n = make_node(std::move(out), {a, b});
    Node* nr = n.get();
    Node* ar = a.get();
    Node* br = b.get();
    n->backprop = [nr, ar, br]() {
        const double* g = nr->grad.data.data();
        const std::size_t m = nr->grad.data.size();
        if (ar->requires_grad) {
            ar->ensure_grad();
            double* ga = ar->grad.data.data();
            for (std::size_t i = 0; i < m; ++i) ga[i] += g[i];
        }
        if (br->requires_grad) {
            br->ensure_grad();
            double* gb = br->grad.data.data();
            for (std::size_t i = 0; i < m; ++i) gb[i] += g[i];
        }
    };
    return n;
}

inline Var scale(const Var& a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v *= c;
    Var n = make_node(std::move(out), {a});
    Node* nr = n.get();
    Node* ar = a.get();
    n->backprop = [nr, ar, c]() {
        if (!ar->requires_grad) return;
        ar->ensure_grad();
        const double* g = nr->grad.data.data();
        double* ga = ar->grad.data.data();
        for (std::size_t i = 0; i < nr->grad.data.size(); ++i) ga[i] += c * g[i];
    };
    return n;
}

inline Var reshape(const Var& a, std::vector<std::size_t> shape) {
    if (Tensor::numel_of(shape) != a->value.numel())
        throw std::invalid_argument("reshape: element count mismatch " +
                                    shape_string(a->value.shape) + " vs " + shape_string(shape));
    Tensor out = a->value;
    out.shape = std::move(shape);
    Var n = make_node(std::move(out), {a});
    Node* nr = n.get();
    Node* ar = a.get();
    n->backprop = [nr, ar]() {
        if (!ar->requires_grad) return;
        ar->ensure_grad();
        const double* g = nr->grad.data.data();
        double* ga = ar->grad.data.data();
        for (std::size_t i = 0; i < nr->grad.data.size(); ++i) ga[i] += g[i];
    };
    return n;
}

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    Var n = make_node(Tensor::scalar(s), {a});
    Node* nr = n.get();
    Node* ar = a.get();
    n->backprop = [nr, ar]() {
        if (!ar->requires_grad) return;
        ar->ensure_grad();
        const double g = nr->grad.data[0];
        for (double& v : ar->grad.data) v += g;
    };
    return n;
}

/// Rows [r0, r1) of a 2-D tensor.
inline Var slice_rows(const Var& a, std::size_t r0, std::size_t r1) {
    const Tensor& x = a->value;
    if (x.shape.size() != 2 || r1 > x.shape[0] || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range on " + shape_string(x.shape));
    const std::size_t c = x.shape[1];
    Tensor out({r1 - r0, c});
    std::copy(x.data.begin() + r0 * c, x.data.begin() + r1 * c, out.data.begin());
    Var n = make_node(std::move(out), {a});
    Node* nr = n.get();
    Node* ar = a.get();
    n->backprop = [nr, ar, r0, c]() {
        if (!ar->requires_grad) return;
        ar->ensure_grad();
        const double* g = nr->grad.data.data();
        double* ga = ar->grad.data.data() + r0 * c;
        for (std::size_t i = 0; i < nr->grad.data.size(); ++i) ga[i] += g[i];
    };
    return n;
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    const std::size_t c = parts[0]->value.shape[1];
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p->value.shape.size() != 2 || p->value.shape[1] != c)
            throw std::invalid_argument("concat_rows: incompatible shape " +
                                        shape_string(p->value.shape));
        rows += p->value.shape[0];
    }
    Tensor out({rows, c});
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), out.data.begin() + off);
        off += p->value.data.size();
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    Var n = make_node(std::move(out), std::move(parents));
    Node* nr = n.get();
    n->backprop = [nr]() {
        const double* g = nr->grad.data.data();
        std::size_t off = 0;
        for (const auto& p : nr->parents) {
            const std::size_t m = p->value.data.size();
            if (p->requires_grad) {
                p->ensure_grad();
                double* gp = p->grad.data.data();
                for (std::size_t i = 0; i < m; ++i) gp[i] += g[off + i];
            }
            off += m;
        }
    };
    return n;
}

/// Channel c of an H x W x C tensor, as H x W.
inline Var slice_channel(const Var& a, std::size_t c) {
    const Tensor& x = a->value;
    if (x.shape.size() != 3 || c >= x.shape[2])
        throw std::invalid_argument("slice_channel: bad channel on " + shape_string(x.shape));
    const std::size_t hw = x.shape[0] * x.shape[1];
    const std::size_t nc = x.shape[2];
    Tensor out({x.shape[0], x.shape[1]});
    for (std::size_t i = 0; i < hw; ++i) out.data[i] = x.data[i * nc + c];
    Var n = make_node(std::move(out), {a});
    Node* nr = n.get();
    Node* ar = a.get();
    n->backprop = [nr, ar, c, hw, nc]() {
        if (!ar->requires_grad) return;
        ar->ensure_grad();
        const double* g = nr->grad.data.data();
        double* ga = ar->grad.data.data();
        for (std::size_t i = 0; i < hw; ++i) ga[i * nc + c] += g[i];
    };
    return n;
}

/// Stack C tensors of shape H x W into H x W x C.
inline Var stack_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack_channels: empty input");
    const std::size_t h = parts[0]->value.shape[0];
    const std::size_t w = parts[0]->value.shape[1];
    for (const auto& p : parts)
        if (p->value.shape.size() != 2 || p->value.shape[0] != h || p->value.shape[1] != w)
            throw std::invalid_argument("stack_channels: incompatible shape " +
                                        shape_string(p->value.shape));
    const std::size_t nc = parts.size();
    Tensor out({h, w, nc});
    for (std::size_t c = 0; c < nc; ++c) {
        const double* src = parts[c]->value.data.data();
        for (std::size_t i = 0; i < h * w; ++i) out.data[i * nc + c] = src[i];
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    Var n = make_node(std::move(out), std::move(parents));
    Node* nr = n.get();
    n->backprop = [nr, h, w, nc]() {
        const double* g = nr->grad.data.data();
        for (std::size_t c = 0; c < nc; ++c) {
            Node* p = nr->parents[c].get();
            if (!p->requires_grad) continue;
            p->ensure_grad();
            double* gp = p->grad.data.data();
            for (std::size_t i = 0; i < h * w; ++i) gp[i] += g[i * nc + c];
        }
    };
    return n;
}

// ---------------------------------------------------------------------------
// Dense algebra.

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
        throw std::invalid_argument("matmul: shape mismatch " + shape_string(A.shape) + " vs " +
                                    shape_string(B.shape));
    const std::size_t n = A.shape[0], k = A.shape[1], m = B.shape[1];
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        double* yi = &out.data[i * m];
        const double* ai = &A.data[i * k];
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ai[l];
            const double* bl = &B.data[l * m];
            for (std::size_t j = 0; j < m; ++j) yi[j] += av * bl[j];
        }
    }
    Var node = make_node(std::move(out), {a, b});
    Node* nr = node.get();
    Node* ar = a.get();
    Node* br = b.get();
    node->backprop = [nr, ar, br, n, k, m]() {
        const double* g = nr->grad.data.data();
        if (ar->requires_grad) {
            ar->ensure_grad();
            double* ga = ar->grad.data.data();
            const double* B = br->value.data.data();
            // dA = G * B^T
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t l = 0; l < k; ++l) {
                    double s = 0.0;
                    const double* gi = &g[i * m];
                    const double* bl = &B[l * m];
                    for (std::size_t j = 0; j < m; ++j) s += gi[j] * bl[j];
                    ga[i * k + l] += s;
                }
        }
        if (br->requires_grad) {
            br->ensure_grad();
            double* gb = br->grad.data.data();
            const double* A = ar->value.data.data();
            // dB = A^T * G
            for (std::size_t l = 0; l < k; ++l)
                for (std::size_t i = 0; i < n; ++i) {
                    const double av = A[i * k + l];
                    const double* gi = &g[i * m];
                    double* gbl = &gb[l * m];
                    for (std::size_t j = 0; j < m; ++j) gbl[j] += av * gi[j];
                }
        }
    };
    return node;
}

inline Var transpose(const Var& a) {
    const Tensor& A = a->value;
    if (A.shape.size() != 2)
        throw std::invalid_argument("transpose: need 2-D, got " + shape_string(A.shape));
    const std::size_t n = A.shape[0], m = A.shape[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.data[j * n + i] = A.data[i * m + j];
    Var node = make_node(std::move(out), {a});
    Node* nr = node.get();
    Node* ar = a.get();
    node->backprop = [nr, ar, n, m]() {
        if (!ar->requires_grad) return;
        ar->ensure_grad();
        const double* g = nr->grad.data.data();
        double* ga = ar->grad.data.data();
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t i = 0; i < n; ++i) ga[i * m + j] += g[j * n + i];
    };
    return node;
}

}  // namespace chanest::nn
