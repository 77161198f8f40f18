#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace chanest::cmat {

using cd = std::complex<double>;

/// Small dense complex matrix, row-major.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<cd> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, cd{0.0, 0.0}) {}

    cd& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    cd at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    Mat hermitian() const {
        Mat m(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) m.at(j, i) = std::conj(at(i, j));
        return m;
    }

    void add_scaled_identity(double s) {
        if (rows != cols) throw std::invalid_argument("add_scaled_identity: matrix not square");
        for (std::size_t i = 0; i < rows; ++i) at(i, i) += s;
    }
};

inline Mat mul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows)
        throw std::invalid_argument("cmat::mul: " + std::to_string(x.rows) + "x" +
                                    std::to_string(x.cols) + " * " + std::to_string(y.rows) + "x" +
                                    std::to_string(y.cols));
    Mat z(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const cd v = x.at(i, k);
            if (v == cd{0.0, 0.0}) continue;
            for (std::size_t j = 0; j < y.cols; ++j) z.at(i, j) += v * y.at(k, j);
        }
    return z;
}

inline std::vector<cd> mul_vec(const Mat& x, const std::vector<cd>& v) {
    if (x.cols != v.size())
        throw std::invalid_argument("cmat::mul_vec: dimension mismatch " + std::to_string(x.cols) +
                                    " vs " + std::to_string(v.size()));
    std::vector<cd> y(x.rows, cd{0.0, 0.0});
    for (std::size_t i = 0; i < x.rows; ++i) {
        cd s{0.0, 0.0};
        const cd* row = &x.a[i * x.cols];
        for (std::size_t j = 0; j < x.cols; ++j) s += row[j] * v[j];
        y[i] = s;
    }
    return y;
}

/// Solve A X = B by Gaussian elimination with partial pivoting.
inline Mat solve(Mat A, Mat B) {
    if (A.rows != A.cols || A.rows != B.rows)
        throw std::invalid_argument("cmat::solve: incompatible dimensions");
    const std::size_t n = A.rows;
    const std::size_t m = B.cols;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        double best = std::abs(A.at(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            const double mag = std::abs(A.at(r, col));
            if (mag > best) {
                best = mag;
                piv = r;
            }
        }
        if (best == 0.0) throw std::runtime_error("cmat::solve: singular matrix");
        if (piv != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(A.at(col, j), A.at(piv, j));
            for (std::size_t j = 0; j < m; ++j) std::swap(B.at(col, j), B.at(piv, j));
        }
        const cd d = A.at(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const cd f = A.at(r, col) / d;
            if (f == cd{0.0, 0.0}) continue;
            A.at(r, col) = 0.0;
            for (std::size_t j = col + 1; j < n; ++j) A.at(r, j) -= f * A.at(col, j);
            for (std::size_t j = 0; j < m; ++j) B.at(r, j) -= f * B.at(col, j);
        }
    }
    Mat X(n, m);
    for (std::size_t ri = n; ri-- > 0;) {
        for (std::size_t j = 0; j < m; ++j) {
            cd s = B.at(ri, j);
            for (std::size_t k = ri + 1; k < n; ++k) s -= A.at(ri, k) * X.at(k, j);
            X.at(ri, j) = s / A.at(ri, ri);
        }
    }
    return X;
}

inline Mat inverse(const Mat& A) { return solve(A, Mat::identity(A.rows)); }

/// Largest-magnitude eigenvalue of a hermitian matrix by power iteration.
inline double power_iteration_lambda_max(const Mat& A, int iters = 300) {
    if (A.rows != A.cols) throw std::invalid_argument("power_iteration: matrix not square");
    std::vector<cd> v(A.rows);
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = cd{1.0 + 0.37 * static_cast<double>(i % 7), 0.11 * static_cast<double>(i % 5)};
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        std::vector<cd> w = mul_vec(A, v);
        double norm = 0.0;
        for (const cd& z : w) norm += std::norm(z);
        norm = std::sqrt(norm);
        if (norm == 0.0) return 0.0;
        for (cd& z : w) z /= norm;
        cd q{0.0, 0.0};
        std::vector<cd> aw = mul_vec(A, w);
        for (std::size_t i = 0; i < w.size(); ++i) q += std::conj(w[i]) * aw[i];
        lambda = q.real();
        v = std::move(w);
    }
    return lambda;
}

}  // namespace chanest::cmat
