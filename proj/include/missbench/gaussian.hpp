#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "missbench/linalg.hpp"
#include "missbench/rng.hpp"

namespace missbench {

/// Missingness pattern, one flag per coordinate. 1 = missing.
using Mask = std::vector<std::uint8_t>;

inline std::vector<std::size_t> mis_indices(const Mask& m) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < m.size(); ++j)
        if (m[j]) idx.push_back(j);
    return idx;
}

inline std::vector<std::size_t> obs_indices(const Mask& m) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < m.size(); ++j)
        if (!m[j]) idx.push_back(j);
    return idx;
}

/// Standard Gaussian cdf.
inline double std_normal_cdf(double x) {
    return 0.5 * std::erfc(-x * 0.70710678118654752440);
}

/// The data distribution N(mu, Sigma) with its Cholesky factor cached.
class GaussianModel {
public:
    GaussianModel() = default;

    /// Validates symmetry (1e-12 relative) and factors Sigma up front so the
    /// model is safe to share read-only across threads.
    static GaussianModel create(Vec mu, Mat sigma) {
        if (mu.size() != sigma.rows || sigma.rows != sigma.cols)
            throw DimensionMismatch("GaussianModel: mu/sigma shape mismatch");
        if (!is_symmetric(sigma))
            throw DimensionMismatch("GaussianModel: sigma not symmetric");
        GaussianModel m;
        m.mu_ = std::move(mu);
        m.sigma_ = std::move(sigma);
        m.chol_ = cholesky(m.sigma_);
        return m;
    }

    std::size_t dim() const { return mu_.size(); }
    const Vec& mu() const { return mu_; }
    const Mat& sigma() const { return sigma_; }
    const Mat& chol() const { return chol_; }

private:
    Vec mu_;
    Mat sigma_;
    Mat chol_;
};

/// Pattern-specific distribution of X_mis given the observed values (and,
/// under self-masking, the mask itself). mu_c/sigma_c are indexed by the
/// missing coordinates in ascending order.
struct ConditionalGaussian {
    Mask pattern;
    Vec mu_c;
    Mat sigma_c;
};

/// n i.i.d. rows of N(mu, Sigma) via mu + L z.
inline Mat sample_gaussian(const GaussianModel& model, std::size_t n, Rng& rng) {
    const std::size_t d = model.dim();
    Mat out(n, d);
    Vec z(d);
    const Mat& l = model.chol();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) z[j] = rng.normal();
        double* row = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            double s = model.mu()[j];
            const double* lj = l.row(j);
            for (std::size_t k = 0; k <= j; ++k) s += lj[k] * z[k];
            row[j] = s;
        }
    }
    return out;
}

/// Conditional distribution of X_mis | X_obs under MCAR:
///   mu_c    = mu_mis + Sigma_mis,obs Sigma_obs^-1 (x_obs - mu_obs)
///   Sigma_c = Sigma_mis,mis - Sigma_mis,obs Sigma_obs^-1 Sigma_obs,mis
/// computed through Cholesky solves. x_obs holds the observed values in
/// ascending coordinate order. An all-missing pattern returns (mu, Sigma).
inline ConditionalGaussian condition_mcar(const GaussianModel& model, const Mask& m,
                                          std::span<const double> x_obs) {
    const std::size_t d = model.dim();
    if (m.size() != d) throw DimensionMismatch("condition_mcar: pattern length");
    const auto mis = mis_indices(m);
    const auto obs = obs_indices(m);
    if (x_obs.size() != obs.size())
        throw DimensionMismatch("condition_mcar: x_obs length");

    ConditionalGaussian cond;
    cond.pattern = m;
    if (mis.empty()) return cond;
    if (obs.empty()) {
        cond.mu_c = model.mu();
        cond.sigma_c = model.sigma();
        return cond;
    }

    const std::size_t no = obs.size(), nm = mis.size();
    Mat s_oo(no, no), s_om(no, nm), s_mm(nm, nm);
    for (std::size_t i = 0; i < no; ++i)
        for (std::size_t j = 0; j < no; ++j) s_oo(i, j) = model.sigma()(obs[i], obs[j]);
    for (std::size_t i = 0; i < no; ++i)
        for (std::size_t j = 0; j < nm; ++j) s_om(i, j) = model.sigma()(obs[i], mis[j]);
    for (std::size_t i = 0; i < nm; ++i)
        for (std::size_t j = 0; j < nm; ++j) s_mm(i, j) = model.sigma()(mis[i], mis[j]);

    const Mat l_oo = cholesky(s_oo); // throws NotPositiveDefinite on singular Sigma_obs
    const Mat a = chol_solve_mat(l_oo, s_om); // Sigma_obs^-1 Sigma_obs,mis  (no x nm)

    Vec dev(no);
    for (std::size_t i = 0; i < no; ++i) dev[i] = x_obs[i] - model.mu()[obs[i]];

    cond.mu_c.resize(nm);
    const Vec proj = matvec_t(a, dev);
    for (std::size_t j = 0; j < nm; ++j) cond.mu_c[j] = model.mu()[mis[j]] + proj[j];

    cond.sigma_c = s_mm;
    for (std::size_t i = 0; i < nm; ++i)
        for (std::size_t j = 0; j < nm; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < no; ++k) s += s_om(k, i) * a(k, j);
            cond.sigma_c(i, j) -= s;
        }
    symmetrize(cond.sigma_c);
    return cond;
}

/// Per-feature Gaussian self-masking mechanism:
///   P(M_j = 1 | X_j = x) = K_j exp(-(x - mu_tilde_j)^2 / (2 sigma_tilde_sq_j)).
struct GsmParams {
    Vec mu_tilde;
    Vec sigma_tilde_sq;
    Vec k;
};

/// Conditional distribution of X_mis | X_obs, M under Gaussian self-masking:
///   Sigma_c = (D^-1 + S^-1)^-1,   mu_c = Sigma_c (D^-1 mu_tilde + S^-1 mu_mcar)
/// with S the MCAR conditional covariance and D = diag(sigma_tilde_sq) on the
/// missing block. Evaluated as S(S+D)^-1 D and S(S+D)^-1 mu_tilde +
/// D(S+D)^-1 mu_mcar so only the well-conditioned sum S+D is ever factored.
inline ConditionalGaussian condition_gsm(const GaussianModel& model, const GsmParams& gsm,
                                         const Mask& m, std::span<const double> x_obs) {
    if (gsm.mu_tilde.size() != model.dim() || gsm.sigma_tilde_sq.size() != model.dim())
        throw DimensionMismatch("condition_gsm: gsm params must cover all features");
    ConditionalGaussian base = condition_mcar(model, m, x_obs);
    const auto mis = mis_indices(m);
    if (mis.empty()) return base;

    const std::size_t nm = mis.size();
    const Mat& s = base.sigma_c;
    Mat sum = s;
    for (std::size_t i = 0; i < nm; ++i) sum(i, i) += gsm.sigma_tilde_sq[mis[i]];
    const Mat l_sum = cholesky(sum);

    // Sigma_c = S (S+D)^-1 D
    Mat d_cols(nm, nm);
    for (std::size_t i = 0; i < nm; ++i) d_cols(i, i) = gsm.sigma_tilde_sq[mis[i]];
    const Mat inv_d = chol_solve_mat(l_sum, d_cols); // (S+D)^-1 D
    Mat sigma_c(nm, nm);
    mm_nn_acc(s.a.data(), inv_d.a.data(), sigma_c.a.data(), nm, nm, nm);
    symmetrize(sigma_c);

    // mu_c = S (S+D)^-1 mu_tilde_mis + D (S+D)^-1 mu_mcar
    Vec mt(nm);
    for (std::size_t i = 0; i < nm; ++i) mt[i] = gsm.mu_tilde[mis[i]];
    const Vec t1 = chol_solve(l_sum, mt);
    const Vec t2 = chol_solve(l_sum, base.mu_c);
    Vec mu_c = matvec(s, t1);
    for (std::size_t i = 0; i < nm; ++i) mu_c[i] += gsm.sigma_tilde_sq[mis[i]] * t2[i];

    ConditionalGaussian cond;
    cond.pattern = m;
    cond.mu_c = std::move(mu_c);
    cond.sigma_c = std::move(sigma_c);
    return cond;
}

/// Largest eigenvalue of a PSD matrix by power iteration. Stops when the
/// relative Rayleigh-quotient change drops below 1e-10 (or at 1e4 iterations).
inline double top_eigenvalue(const Mat& sigma) {
    if (sigma.rows != sigma.cols) throw DimensionMismatch("top_eigenvalue: not square");
    const std::size_t n = sigma.rows;
    if (n == 0) return 0.0;
    Rng rng(0x9d2c5680u); // fixed internal stream, result is value-only
    Vec v(n);
    for (auto& x : v) x = rng.normal();
    double nv = std::sqrt(dot(v, v));
    for (auto& x : v) x /= nv;
    double lambda = 0.0;
    for (int it = 0; it < 10000; ++it) {
        Vec w = matvec(sigma, v);
        const double next = dot(v, w);
        const double wn = std::sqrt(dot(w, w));
        if (wn <= 1e-300) return 0.0;
        for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
        if (it > 0 && std::fabs(next - lambda) <= 1e-10 * std::max(std::fabs(next), 1e-300)) {
            return next;
        }
        lambda = next;
    }
    return lambda;
}

} // namespace missbench
