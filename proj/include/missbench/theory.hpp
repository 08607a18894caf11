#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <json.hpp>

#include "missbench/oracles.hpp"

namespace missbench {

/// One probe of the first-order bracket: the gap between the Bayes predictor
/// and the chained oracle against 1/2 tr(H_mis,mis Sigma_mis|obs,M) on both
/// sides (the bowl and linear responses have constant Hessians, so lower and
/// upper bounds coincide).
struct BoundProbe {
    Mask pattern;
    double lower = 0.0;
    double upper = 0.0;
    double gap = 0.0;
    bool satisfied = true;
};

struct BoundReport {
    std::vector<BoundProbe> probes;
    std::size_t violations = 0;
};

namespace theory_detail {

inline Mask draw_mask(const SynthProblem& p, std::span<const double> x, Rng& rng) {
    Mask m(p.spec.d, 0);
    if (p.spec.mechanism == Mechanism::mcar) {
        for (auto& b : m) b = rng.bernoulli(p.spec.missing_rate) ? 1 : 0;
    } else {
        for (std::size_t j = 0; j < p.spec.d; ++j) {
            const double dev = x[j] - p.gsm->mu_tilde[j];
            const double prob =
                p.gsm->k[j] * std::exp(-dev * dev / (2.0 * p.gsm->sigma_tilde_sq[j]));
            m[j] = rng.bernoulli(prob) ? 1 : 0;
        }
    }
    return m;
}

/// tr(H_mis,mis Sigma_c) for the constant-Hessian responses:
/// bowl H = 2 beta beta^T, linear H = 0.
inline double hessian_trace_term(const OracleContext& ctx, const ConditionalGaussian& cond) {
    if (ctx.fstar.kind == Fstar::linear) return 0.0;
    const auto mis = mis_indices(cond.pattern);
    Vec beta_mis(mis.size());
    for (std::size_t i = 0; i < mis.size(); ++i) beta_mis[i] = ctx.fstar.beta[mis[i]];
    const Vec sv = matvec(cond.sigma_c, beta_mis);
    return 2.0 * dot(beta_mis, sv);
}

} // namespace theory_detail

/// Checks lower <= bayes - chained <= upper pointwise over random probes.
/// Only bowl and linear responses are supported: they are the cases with
/// constant Hessians, where the bracket is available in closed form.
inline BoundReport gap_bracket_check(const SynthProblem& p, std::size_t probes, Rng& rng) {
    if (p.spec.fstar == Fstar::wave)
        throw UnsupportedFstar("gap_bracket_check: wave has no constant Hessian bracket");
    const OracleContext ctx = make_oracle_context(p);
    BoundReport report;
    Rng xr = rng.derive("x");
    Rng mr = rng.derive("m");
    const Mat x = sample_gaussian(p.model, probes, xr);
    for (std::size_t i = 0; i < probes; ++i) {
        const Mask m = theory_detail::draw_mask(p, x.row_span(i), mr);
        Vec x_obs;
        for (std::size_t j = 0; j < p.spec.d; ++j)
            if (!m[j]) x_obs.push_back(x(i, j));
        BoundProbe probe;
        probe.pattern = m;
        probe.gap = bayes_predict(ctx, x_obs, m) - chained_oracle_predict(ctx, x_obs, m);
        const ConditionalGaussian cond = condition_for(ctx, m, x_obs);
        const double tr = theory_detail::hessian_trace_term(ctx, cond);
        probe.lower = 0.5 * tr;
        probe.upper = 0.5 * tr;
        const double tol = 1e-8 * std::max(1.0, std::fabs(tr));
        probe.satisfied = probe.gap >= probe.lower - tol && probe.gap <= probe.upper + tol;
        if (!probe.satisfied) ++report.violations;
        report.probes.push_back(std::move(probe));
    }
    return report;
}

struct ExcessRiskResult {
    double mc_excess = 0.0;
    double mc_stderr = 0.0;
    double bound = 0.0;
    std::size_t n_samples = 0;
};

/// Monte-Carlo excess risk of the chained oracle against the Bayes risk,
/// next to the quarter-trace-squared bound
///   1/4 E_M[max(tr(H^- Sigma_c)^2, tr(H^+ Sigma_c)^2)]
/// estimated over the same sampled patterns. Fresh responses carry noise at
/// the given SNR so the risk difference is measured on realistic targets.
inline ExcessRiskResult excess_risk_bound_check(const SynthProblem& p, std::size_t n_mc, Rng& rng,
                                           double snr = 10.0) {
    if (p.spec.fstar == Fstar::wave)
        throw UnsupportedFstar("excess_risk_bound_check: wave not covered by the constant bracket");
    const OracleContext ctx = make_oracle_context(p);
    Rng xr = rng.derive("x");
    Rng mr = rng.derive("m");
    Rng er = rng.derive("eps");
    const Mat x = sample_gaussian(p.model, n_mc, xr);

    Vec fx(n_mc);
    for (std::size_t i = 0; i < n_mc; ++i) fx[i] = eval_fstar(p.fstar, x.row_span(i));
    double mean_f = 0.0;
    for (double v : fx) mean_f += v;
    mean_f /= static_cast<double>(n_mc);
    double var_f = 0.0;
    for (double v : fx) var_f += (v - mean_f) * (v - mean_f);
    var_f /= static_cast<double>(n_mc);
    const double noise_sd = std::sqrt(var_f / snr);

    double sum = 0.0, sum_sq = 0.0, bound_acc = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) {
        const Mask m = theory_detail::draw_mask(p, x.row_span(i), mr);
        Vec x_obs;
        for (std::size_t j = 0; j < p.spec.d; ++j)
            if (!m[j]) x_obs.push_back(x(i, j));
        const double y = fx[i] + noise_sd * er.normal();
        const double bayes = bayes_predict(ctx, x_obs, m);
        const double chained = chained_oracle_predict(ctx, x_obs, m);
        // factored form of (y-chained)^2 - (y-bayes)^2: exactly zero when the
        // predictors coincide, independent of FMA contraction
        const double delta = (bayes - chained) * ((y - chained) + (y - bayes));
        sum += delta;
        sum_sq += delta * delta;
        const ConditionalGaussian cond = condition_for(ctx, m, x_obs);
        const double tr = theory_detail::hessian_trace_term(ctx, cond);
        bound_acc += 0.25 * tr * tr; // H^- = H^+ here, so the max is just tr^2
    }
    ExcessRiskResult r;
    r.n_samples = n_mc;
    r.mc_excess = sum / static_cast<double>(n_mc);
    const double var = sum_sq / static_cast<double>(n_mc) - r.mc_excess * r.mc_excess;
    r.mc_stderr = std::sqrt(std::max(var, 0.0) / static_cast<double>(n_mc));
    r.bound = bound_acc / static_cast<double>(n_mc);
    return r;
}

/// Bivariate corrected-imputation identity: standard bivariate normal with correlation
/// rho, f*(x1,x2) = x1^2 + x2^2, x2 missing. The imputation
/// Phi(x1) = sqrt(rho^2 x1^2 + (1 - rho^2)) makes f* o Phi match the Bayes
/// predictor x1^2 + rho^2 x1^2 + (1 - rho^2) identically; returns the max
/// absolute deviation over the grid x1 in [-4, 4] with step 1e-3.
inline double corrected_imputation_2d(double rho, double step = 1e-3) {
    double worst = 0.0;
    const double r2 = rho * rho;
    for (double x1 = -4.0; x1 <= 4.0 + 0.5 * step; x1 += step) {
        const double phi = std::sqrt(r2 * x1 * x1 + (1.0 - r2));
        const double pred = x1 * x1 + phi * phi;
        const double bayes = x1 * x1 + r2 * x1 * x1 + (1.0 - r2);
        worst = std::max(worst, std::fabs(pred - bayes));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Cubic impossibility demonstration: f*(x1, x2) = x2^3 - 3 x2 with
// x2 = x1 + eps, eps ~ N(0, sigma^2), sigma^2 > 1, and x2 always missing.
// The Bayes predictor is x1^3 + 3 x1 (sigma^2 - 1); it is monotone while
// v -> v^3 - 3v is not, so no continuous imputation can chain to it.
// ---------------------------------------------------------------------------

inline double cubic_response(double x2) { return x2 * x2 * x2 - 3.0 * x2; }

inline double cubic_bayes(double x1, double sigma_sq) {
    return x1 * x1 * x1 + 3.0 * x1 * (sigma_sq - 1.0);
}

/// MC estimate of E[f*(x1 + eps)] at a fixed x1.
inline McEstimate cubic_bayes_mc(double x1, double sigma_sq, std::size_t n, Rng& rng) {
    const double sd = std::sqrt(sigma_sq);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = cubic_response(x1 + sd * rng.normal());
        sum += v;
        sum_sq += v * v;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum_sq / static_cast<double>(n) - mean * mean;
    return {mean, std::sqrt(std::max(var, 0.0) / static_cast<double>(n)),
            static_cast<double>(n)};
}

/// Continuous piecewise-linear imputation on a fixed knot grid, clamped
/// outside the knot range.
struct PiecewiseLinear {
    Vec knots;  // ascending
    Vec values; // same length

    double operator()(double x) const {
        if (x <= knots.front()) return values.front();
        if (x >= knots.back()) return values.back();
        const auto it = std::upper_bound(knots.begin(), knots.end(), x);
        const std::size_t hi = static_cast<std::size_t>(it - knots.begin());
        const std::size_t lo = hi - 1;
        const double t = (x - knots[lo]) / (knots[hi] - knots[lo]);
        return values[lo] + t * (values[hi] - values[lo]);
    }
};

namespace theory_detail {

/// Golden-section refinement of a 1D objective around [lo, hi].
inline double golden_min(const std::function<double(double)>& f, double lo, double hi,
                         int iters = 48) {
    const double inv_phi = 0.6180339887498949;
    double a = lo, b = hi;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    return fc < fd ? c : d;
}

} // namespace theory_detail

struct CubicGapResult {
    double sigma_sq = 0.0;
    std::size_t knots = 0;
    double bayes_risk = 0.0;
    double chain_risk = 0.0;
    double margin = 0.0;        // E[(bayes - f* o Phi)^2], exact excess risk
    double margin_stderr = 0.0;
    double direct_margin = 0.0; // paired risk difference on fresh draws
    double direct_stderr = 0.0;
    double lookup_gap = 0.0;    // unrestricted per-x1 root: should be ~0
    PiecewiseLinear phi;
};

/// Root of v^3 - 3v = c with the branch selection an unrestricted (not
/// necessarily continuous) imputation is free to make: the largest real root.
inline double largest_cubic_root(double c) {
    double lo, hi;
    if (c >= -2.0) { // outer increasing branch, v >= 1
        lo = 1.0;
        hi = 2.0;
        while (cubic_response(hi) < c) hi *= 2.0;
    } else { // only the decreasing-side branch exists, v <= -1
        lo = -2.0;
        while (cubic_response(lo) > c) lo *= 2.0;
        hi = -1.0;
    }
    for (int i = 0; i < 90; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (cubic_response(mid) < c)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Fits the best continuous piecewise-linear imputation by coordinate descent
/// on a Gaussian-weighted quadrature of the chained risk, then measures the
/// remaining gap to the Bayes risk by Monte Carlo.
inline CubicGapResult cubic_counterexample(double sigma_sq, std::size_t n_knots, Rng& rng,
                                  std::size_t n_mc = 1000000) {
    if (!(sigma_sq > 1.0)) throw Error("cubic_counterexample: needs sigma^2 > 1");
    CubicGapResult res;
    res.sigma_sq = sigma_sq;
    res.knots = n_knots;

    // quadrature nodes over x1 ~ N(0,1)
    const std::size_t nq = 2001;
    Vec xq(nq), wq(nq);
    double wsum = 0.0;
    for (std::size_t i = 0; i < nq; ++i) {
        xq[i] = -5.0 + 10.0 * static_cast<double>(i) / static_cast<double>(nq - 1);
        wq[i] = std::exp(-0.5 * xq[i] * xq[i]);
        wsum += wq[i];
    }
    for (auto& w : wq) w /= wsum;

    PiecewiseLinear phi;
    phi.knots.resize(n_knots);
    phi.values.resize(n_knots);
    for (std::size_t k = 0; k < n_knots; ++k) {
        phi.knots[k] = -4.0 + 8.0 * static_cast<double>(k) / static_cast<double>(n_knots - 1);
        phi.values[k] = largest_cubic_root(cubic_bayes(phi.knots[k], sigma_sq));
    }

    auto segment_cost = [&](std::size_t k, double v) {
        const double saved = phi.values[k];
        phi.values[k] = v;
        const double lo = k == 0 ? -1e300 : phi.knots[k - 1];
        const double hi = k + 1 == n_knots ? 1e300 : phi.knots[k + 1];
        double acc = 0.0;
        for (std::size_t i = 0; i < nq; ++i) {
            if (xq[i] < lo || xq[i] > hi) continue;
            const double dev = cubic_response(phi(xq[i])) - cubic_bayes(xq[i], sigma_sq);
            acc += wq[i] * dev * dev;
        }
        phi.values[k] = saved;
        return acc;
    };

    double prev_total = std::numeric_limits<double>::infinity();
    for (int pass = 0; pass < 80; ++pass) {
        for (std::size_t k = 0; k < n_knots; ++k) {
            // coarse scan (the 1D slice is a sextic polynomial piecewise in v,
            // not unimodal), then golden refinement around the best cell
            double best_v = phi.values[k];
            double best_c = segment_cost(k, best_v);
            for (double v = -6.0; v <= 6.0; v += 0.05) {
                const double c = segment_cost(k, v);
                if (c < best_c) {
                    best_c = c;
                    best_v = v;
                }
            }
            const double refined = theory_detail::golden_min(
                [&](double v) { return segment_cost(k, v); }, best_v - 0.06, best_v + 0.06);
            if (segment_cost(k, refined) < best_c) best_v = refined;
            phi.values[k] = best_v;
        }
        double total = 0.0;
        for (std::size_t i = 0; i < nq; ++i) {
            const double dev = cubic_response(phi(xq[i])) - cubic_bayes(xq[i], sigma_sq);
            total += wq[i] * dev * dev;
        }
        if (prev_total - total < 1e-12 * std::max(1.0, total)) break;
        prev_total = total;
    }
    res.phi = phi;

    // Monte-Carlo risks. Exact decomposition: for any predictor g(x1),
    // E[(Y - g)^2] = bayes_risk + E[(bayes - g)^2].
    const double sd = std::sqrt(sigma_sq);
    Rng mc = rng.derive("cubicmc");
    double bayes_acc = 0.0;
    double gap_acc = 0.0, gap_sq = 0.0;
    double direct_acc = 0.0, direct_sq = 0.0;
    double lookup_acc = 0.0;
    for (std::size_t i = 0; i < n_mc; ++i) {
        const double x1 = mc.normal();
        const double y = cubic_response(x1 + sd * mc.normal());
        const double bayes = cubic_bayes(x1, sigma_sq);
        const double chain = cubic_response(phi(x1));
        bayes_acc += (y - bayes) * (y - bayes);
        const double gap = (bayes - chain) * (bayes - chain);
        gap_acc += gap;
        gap_sq += gap * gap;
        const double direct = (y - chain) * (y - chain) - (y - bayes) * (y - bayes);
        direct_acc += direct;
        direct_sq += direct * direct;
        const double free_pred = cubic_response(largest_cubic_root(bayes));
        lookup_acc += (bayes - free_pred) * (bayes - free_pred);
    }
    const double n = static_cast<double>(n_mc);
    res.bayes_risk = bayes_acc / n;
    res.margin = gap_acc / n;
    res.margin_stderr = std::sqrt(std::max(gap_sq / n - res.margin * res.margin, 0.0) / n);
    res.direct_margin = direct_acc / n;
    res.direct_stderr =
        std::sqrt(std::max(direct_sq / n - res.direct_margin * res.direct_margin, 0.0) / n);
    res.chain_risk = res.bayes_risk + res.margin;
    res.lookup_gap = lookup_acc / n;
    return res;
}

inline nlohmann::json bound_report_to_json(const BoundReport& r) {
    nlohmann::json j;
    j["probes"] = r.probes.size();
    j["violations"] = r.violations;
    double max_gap = 0.0, max_err = 0.0;
    for (const auto& p : r.probes) {
        max_gap = std::max(max_gap, std::fabs(p.gap));
        max_err = std::max(max_err, std::fabs(p.gap - 0.5 * (p.lower + p.upper)));
    }
    j["max_abs_gap"] = max_gap;
    j["max_bracket_error"] = max_err;
    return j;
}

inline nlohmann::json excess_to_json(const ExcessRiskResult& r) {
    return {{"mc_excess", r.mc_excess},
            {"mc_stderr", r.mc_stderr},
            {"bound", r.bound},
            {"n_samples", r.n_samples}};
}

inline nlohmann::json cubic_gap_to_json(const CubicGapResult& r) {
    return {{"sigma_sq", r.sigma_sq},
            {"knots", r.knots},
            {"bayes_risk", r.bayes_risk},
            {"chain_risk", r.chain_risk},
            {"margin", r.margin},
            {"margin_stderr", r.margin_stderr},
            {"direct_margin", r.direct_margin},
            {"direct_stderr", r.direct_stderr},
            {"lookup_gap", r.lookup_gap}};
}

} // namespace missbench
