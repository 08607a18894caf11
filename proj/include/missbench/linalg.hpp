#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "missbench/errors.hpp"

namespace missbench {

using Vec = std::vector<double>;

/// Dense row-major matrix. Small and value-semantic; everything the library
/// needs at d <= 50 plus the batched kernels the training loop leans on.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    std::span<const double> row_span(std::size_t i) const { return {row(i), cols}; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    bool operator==(const Mat& o) const = default;
};

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double trace(const Mat& m) {
    double t = 0.0;
    for (std::size_t i = 0; i < m.rows && i < m.cols; ++i) t += m(i, i);
    return t;
}

inline Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}

inline Vec matvec(const Mat& m, std::span<const double> x) {
    if (x.size() != m.cols) throw DimensionMismatch("matvec: size mismatch");
    Vec y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) y[i] = dot(m.row_span(i), x);
    return y;
}

/// y = A^T x.
inline Vec matvec_t(const Mat& m, std::span<const double> x) {
    if (x.size() != m.rows) throw DimensionMismatch("matvec_t: size mismatch");
    Vec y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += xi * r[j];
    }
    return y;
}

// Raw kernels, shared by Mat and the autodiff tensors. Loop orders are
// chosen so the innermost loop is contiguous and auto-vectorizes.

/// C += A(n x k) * B(k x m)
inline void mm_nn_acc(const double* A, const double* B, double* C,
                      std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = B + p * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

/// C += A(n x k) * B(m x k)^T. Non-trivial inner lengths go through a
/// transposed copy of B so the accumulation runs on the contiguous kernel;
/// the path choice depends only on the shapes, so results stay reproducible.
inline void mm_nt_acc(const double* A, const double* B, double* C,
                      std::size_t n, std::size_t k, std::size_t m) {
    if (k >= 16 && m >= 4) {
        std::vector<double> bt(k * m);
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = B[j * k + p];
        mm_nn_acc(A, bt.data(), C, n, k, m);
        return;
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = A + i * k;
        double* ci = C + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = B + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

/// C += A(k x n)^T * B(k x m)
inline void mm_tn_acc(const double* A, const double* B, double* C,
                      std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = A + p * n;
        const double* bp = B + p * m;
        for (std::size_t i = 0; i < n; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = C + i * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
        }
    }
}

inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols != b.rows) throw DimensionMismatch("matmul: inner dims differ");
    Mat c(a.rows, b.cols);
    mm_nn_acc(a.a.data(), b.a.data(), c.a.data(), a.rows, a.cols, b.cols);
    return c;
}

inline bool is_symmetric(const Mat& m, double rel_tol = 1e-12) {
    if (m.rows != m.cols) return false;
    double scale = 0.0;
    for (double v : m.a) scale = std::max(scale, std::fabs(v));
    if (scale == 0.0) return true;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = i + 1; j < m.cols; ++j)
            if (std::fabs(m(i, j) - m(j, i)) > rel_tol * scale) return false;
    return true;
}

inline void symmetrize(Mat& m) {
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = i + 1; j < m.cols; ++j) {
            const double v = 0.5 * (m(i, j) + m(j, i));
            m(i, j) = v;
            m(j, i) = v;
        }
}

/// Lower Cholesky factor of a symmetric PSD matrix. A pivot at or below
/// 1e-12 * trace / d is treated as a degenerate covariance.
inline Mat cholesky(const Mat& s) {
    if (s.rows != s.cols) throw DimensionMismatch("cholesky: not square");
    const std::size_t n = s.rows;
    const double tol = 1e-12 * trace(s) / std::max<std::size_t>(n, 1);
    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = s(i, j);
            for (std::size_t p = 0; p < j; ++p) sum -= l(i, p) * l(j, p);
            if (i == j) {
                if (sum <= tol)
                    throw NotPositiveDefinite("cholesky: pivot " + std::to_string(sum) +
                                              " at index " + std::to_string(i));
                l(i, i) = std::sqrt(sum);
            } else {
                l(i, j) = sum / l(j, j);
            }
        }
    }
    return l;
}

/// Solve L y = b (L lower-triangular).
inline Vec forward_subst(const Mat& l, std::span<const double> b) {
    const std::size_t n = l.rows;
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t j = 0; j < i; ++j) s -= l(i, j) * y[j];
        y[i] = s / l(i, i);
    }
    return y;
}

/// Solve L^T x = y.
inline Vec backward_subst_t(const Mat& l, std::span<const double> y) {
    const std::size_t n = l.rows;
    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t j = ii + 1; j < n; ++j) s -= l(j, ii) * x[j];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

/// Solve (L L^T) x = b.
inline Vec chol_solve(const Mat& l, std::span<const double> b) {
    return backward_subst_t(l, forward_subst(l, b));
}

/// Solve (L L^T) X = B column-wise.
inline Mat chol_solve_mat(const Mat& l, const Mat& b) {
    if (l.rows != b.rows) throw DimensionMismatch("chol_solve_mat: size mismatch");
    Mat x(b.rows, b.cols);
    Vec col(b.rows);
    for (std::size_t j = 0; j < b.cols; ++j) {
        for (std::size_t i = 0; i < b.rows; ++i) col[i] = b(i, j);
        Vec sol = chol_solve(l, col);
        for (std::size_t i = 0; i < b.rows; ++i) x(i, j) = sol[i];
    }
    return x;
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Eigenvalues ascending; eigenvectors in the columns of `vecs`.
inline void sym_eigen(const Mat& m, Vec& vals, Mat& vecs) {
    if (m.rows != m.cols) throw DimensionMismatch("sym_eigen: not square");
    const std::size_t n = m.rows;
    Mat a = m;
    vecs = Mat::identity(n);
    double norm = 0.0;
    for (double v : a.a) norm += v * v;
    norm = std::sqrt(norm);
    const double tol = 1e-14 * std::max(norm, 1e-300);
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * a(i, j) * a(i, j);
        if (std::sqrt(off) <= tol) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::fabs(a(p, q)) <= tol / (10.0 * n)) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vecs(k, p), vkq = vecs(k, q);
                    vecs(k, p) = c * vkp - s * vkq;
                    vecs(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    vals.resize(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = a(i, i);
    // insertion sort ascending, carrying the eigenvector columns along
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = i; j > 0 && vals[j - 1] > vals[j]; --j) {
            std::swap(vals[j - 1], vals[j]);
            for (std::size_t k = 0; k < n; ++k) std::swap(vecs(k, j - 1), vecs(k, j));
        }
    }
}

} // namespace missbench
