#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>

#include "missbench/synth.hpp"

namespace missbench {

/// Ground-truth information for the oracle predictors: the data distribution,
/// the masking mechanism, and the response function.
struct OracleContext {
    GaussianModel model;
    Mechanism mechanism = Mechanism::mcar;
    std::optional<GsmParams> gsm;
    RidgeFunctionSpec fstar;
};

inline OracleContext make_oracle_context(const SynthProblem& p) {
    return OracleContext{p.model, p.spec.mechanism, p.gsm, p.fstar};
}

/// Mechanism-appropriate conditional of X_mis given the observed values.
inline ConditionalGaussian condition_for(const OracleContext& ctx, const Mask& m,
                                         std::span<const double> x_obs) {
    if (ctx.mechanism == Mechanism::gsm) {
        if (!ctx.gsm) throw Error("OracleContext: gsm mechanism without params");
        return condition_gsm(ctx.model, *ctx.gsm, m, x_obs);
    }
    return condition_mcar(ctx.model, m, x_obs);
}

namespace detail {

/// beta split into observed/missing parts plus the projection of x_obs.
struct RidgeSplit {
    double u;       // beta_obs^T x_obs + beta_mis^T mu_c + beta0
    double var;     // beta_mis^T Sigma_c beta_mis
};

inline RidgeSplit ridge_split(const OracleContext& ctx, const ConditionalGaussian& cond,
                              std::span<const double> x_obs) {
    const auto& beta = ctx.fstar.beta;
    const auto obs = obs_indices(cond.pattern);
    const auto mis = mis_indices(cond.pattern);
    double u = ctx.fstar.beta0;
    for (std::size_t i = 0; i < obs.size(); ++i) u += beta[obs[i]] * x_obs[i];
    Vec beta_mis(mis.size());
    for (std::size_t i = 0; i < mis.size(); ++i) beta_mis[i] = beta[mis[i]];
    for (std::size_t i = 0; i < mis.size(); ++i) u += beta_mis[i] * cond.mu_c[i];
    double var = 0.0;
    if (!mis.empty()) {
        const Vec sv = matvec(cond.sigma_c, beta_mis);
        var = dot(beta_mis, sv);
    }
    return {u, var};
}

} // namespace detail

/// Bayes predictor E[Y | X_obs, M] for the three ridge families.
/// With u = beta_obs^T x_obs + beta_mis^T mu_c + beta0 and
/// v = beta_mis^T Sigma_c beta_mis:
///   bowl:   (u - 1)^2 + v
///   wave:   (u - 1) + sum_i a_i Phi((u + b_i) / sqrt(1/gamma^2 + v))
///   linear: u - 1
inline double bayes_predict(const OracleContext& ctx, std::span<const double> x_obs,
                            const Mask& m) {
    if (mis_indices(m).empty()) return eval_fstar(ctx.fstar, x_obs); // Sigma_c empty
    const ConditionalGaussian cond = condition_for(ctx, m, x_obs);
    const auto [u, var] = detail::ridge_split(ctx, cond, x_obs);
    switch (ctx.fstar.kind) {
        case Fstar::bowl:
            return (u - 1.0) * (u - 1.0) + var;
        case Fstar::wave: {
            double out = u - 1.0;
            const double denom =
                std::sqrt(1.0 / (ctx.fstar.gamma * ctx.fstar.gamma) + var);
            for (const auto& [a, b] : ctx.fstar.bumps)
                out += a * std_normal_cdf((u + b) / denom);
            return out;
        }
        default:
            return u - 1.0;
    }
}

/// Conditional imputation Phi^CI: observed coordinates verbatim, missing
/// coordinates replaced by the mechanism-appropriate conditional mean.
inline Vec oracle_ci_impute(const OracleContext& ctx, std::span<const double> x_obs,
                            const Mask& m) {
    const ConditionalGaussian cond = condition_for(ctx, m, x_obs);
    Vec out(m.size());
    std::size_t io = 0, im = 0;
    for (std::size_t j = 0; j < m.size(); ++j)
        out[j] = m[j] ? cond.mu_c[im++] : x_obs[io++];
    return out;
}

/// f* applied to conditionally imputed data (the chained-oracle predictor).
inline double chained_oracle_predict(const OracleContext& ctx, std::span<const double> x_obs,
                                     const Mask& m) {
    const Vec imputed = oracle_ci_impute(ctx, x_obs, m);
    return eval_fstar(ctx.fstar, imputed);
}

struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    double ess = 0.0;
};

/// Brute-force Monte-Carlo estimate of E[f*(X) | X_obs, M]. MCAR draws come
/// straight from the conditional Gaussian; GSM reweights those draws by the
/// self-masking likelihood of the missing coordinates (self-normalized, so
/// the K_j factors cancel).
inline McEstimate mc_bayes(const OracleContext& ctx, std::span<const double> x_obs,
                           const Mask& m, std::size_t n_samples, Rng& rng) {
    if (n_samples < 1000) throw Error("mc_bayes: n_samples must be >= 1e3");
    const ConditionalGaussian cond = condition_mcar(ctx.model, m, x_obs);
    const auto mis = mis_indices(m);
    const std::size_t nm = mis.size();

    Vec x(m.size());
    {
        std::size_t io = 0;
        for (std::size_t j = 0; j < m.size(); ++j)
            if (!m[j]) x[j] = x_obs[io++];
    }
    if (nm == 0) {
        return {eval_fstar(ctx.fstar, x), 0.0, static_cast<double>(n_samples)};
    }

    const Mat l = cholesky(cond.sigma_c);
    Vec z(nm), draw(nm);
    Vec log_weights(n_samples, 0.0), values(n_samples);
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (std::size_t j = 0; j < nm; ++j) z[j] = rng.normal();
        for (std::size_t j = 0; j < nm; ++j) {
            double v = cond.mu_c[j];
            const double* lj = l.row(j);
            for (std::size_t k = 0; k <= j; ++k) v += lj[k] * z[k];
            draw[j] = v;
        }
        if (ctx.mechanism == Mechanism::gsm) {
            double log_w = 0.0;
            for (std::size_t j = 0; j < nm; ++j) {
                const double dev = draw[j] - ctx.gsm->mu_tilde[mis[j]];
                log_w -= dev * dev / (2.0 * ctx.gsm->sigma_tilde_sq[mis[j]]);
            }
            log_weights[s] = log_w;
        }
        for (std::size_t j = 0; j < nm; ++j) x[mis[j]] = draw[j];
        values[s] = eval_fstar(ctx.fstar, x);
    }
    // shift by the max log-weight so self-normalization survives extreme
    // mechanisms instead of underflowing to an all-zero sum
    const double shift = *std::max_element(log_weights.begin(), log_weights.end());
    Vec weights(n_samples);
    double sw = 0.0, sw2 = 0.0, swf = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        const double w = std::exp(log_weights[s] - shift);
        weights[s] = w;
        sw += w;
        sw2 += w * w;
        swf += w * values[s];
    }
    const double ess = sw * sw / sw2;
    if (!(ess >= 100.0))
        throw EffectiveSampleTooSmall("mc_bayes: ESS = " + std::to_string(ess));
    const double est = swf / sw;
    // linearized variance of the self-normalized estimator
    double var = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        const double dev = values[s] - est;
        var += weights[s] * weights[s] * dev * dev;
    }
    var /= sw * sw;
    return {est, std::sqrt(var), ess};
}

} // namespace missbench
