#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "missbench/synth.hpp"

namespace missbench {

/// A fitted imputation transform. Mean imputation stores the observed column
/// means; the iterative variant additionally stores one ridge regressor per
/// (round, feature), and transform replays the whole schedule so the state a
/// regressor sees at test time matches the state it was fit against.
struct FittedImputer {
    enum class Variant { mean, iterative };

    struct Ridge {
        Vec coef;        // length d-1, other features in ascending order
        double intercept = 0.0;
    };

    Variant variant = Variant::mean;
    std::size_t d = 0;
    Vec mu_hat;
    std::vector<std::vector<Ridge>> rounds; // iterative only, [round][feature]
    std::size_t n_iter = 0;
    double lambda = 0.0;
};

/// Observed-entry column means.
inline FittedImputer fit_mean(const MaskedDataset& train) {
    const std::size_t n = train.n(), d = train.d();
    FittedImputer imp;
    imp.variant = FittedImputer::Variant::mean;
    imp.d = d;
    imp.mu_hat.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!train.missing(i, j)) {
                sum += train.observed(i, j);
                ++cnt;
            }
        }
        if (cnt == 0)
            throw EmptyColumn("fit_mean: feature " + std::to_string(j) + " never observed");
        imp.mu_hat[j] = sum / static_cast<double>(cnt);
    }
    return imp;
}

namespace detail {

/// Ridge fit of column j on all other columns of `work`, restricted to rows
/// where j is observed. lambda <= 0 selects the default 1e-3 * n_obs.
inline FittedImputer::Ridge ridge_fit_feature(const Mat& work, const MaskedDataset& train,
                                              std::size_t j, double lambda) {
    const std::size_t n = work.rows, d = work.cols, p = d - 1;
    Mat g(p + 1, p + 1);
    Vec b(p + 1, 0.0);
    Vec xi(p);
    std::size_t n_obs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (train.missing(i, j)) continue;
        ++n_obs;
        std::size_t c = 0;
        for (std::size_t k = 0; k < d; ++k)
            if (k != j) xi[c++] = work(i, k);
        const double y = work(i, j);
        g(0, 0) += 1.0;
        b[0] += y;
        for (std::size_t a = 0; a < p; ++a) {
            g(a + 1, 0) += xi[a];
            b[a + 1] += xi[a] * y;
            for (std::size_t c2 = 0; c2 <= a; ++c2) g(a + 1, c2 + 1) += xi[a] * xi[c2];
        }
    }
    if (n_obs == 0)
        throw EmptyColumn("fit_iterative: feature " + std::to_string(j) + " never observed");
    for (std::size_t a = 0; a < p + 1; ++a)
        for (std::size_t c = a + 1; c < p + 1; ++c) g(a, c) = g(c, a);
    const double ridge = lambda > 0.0 ? lambda : 1e-3 * static_cast<double>(n_obs);
    for (std::size_t a = 1; a < p + 1; ++a) g(a, a) += ridge; // intercept unpenalized
    const Mat l = cholesky(g);
    const Vec sol = chol_solve(l, b);
    FittedImputer::Ridge r;
    r.intercept = sol[0];
    r.coef.assign(sol.begin() + 1, sol.end());
    return r;
}

inline double ridge_predict(const FittedImputer::Ridge& r, const double* row, std::size_t d,
                            std::size_t j) {
    double v = r.intercept;
    std::size_t c = 0;
    for (std::size_t k = 0; k < d; ++k)
        if (k != j) v += r.coef[c++] * row[k];
    return v;
}

} // namespace detail

/// Round-robin chained-equations imputer: start from column means, then for
/// each round regress every feature on the current completion of the others
/// (rows where it is observed) and overwrite its missing entries. Every
/// round's regressors are kept so transform can replay the same schedule.
inline FittedImputer fit_iterative(const MaskedDataset& train, double lambda = 0.0,
                                   std::size_t n_iter = 10) {
    FittedImputer imp = fit_mean(train);
    imp.variant = FittedImputer::Variant::iterative;
    imp.n_iter = n_iter;
    imp.lambda = lambda;
    const std::size_t n = train.n(), d = train.d();

    Mat work(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j)
            work(i, j) = train.missing(i, j) ? imp.mu_hat[j] : train.observed(i, j);

    if (n_iter == 0) return imp; // mean initialization only

    imp.rounds.resize(n_iter);
    for (std::size_t round = 0; round < n_iter; ++round) {
        imp.rounds[round].resize(d);
        for (std::size_t j = 0; j < d; ++j) {
            const auto r = detail::ridge_fit_feature(work, train, j, lambda);
            for (std::size_t i = 0; i < n; ++i)
                if (train.missing(i, j))
                    work(i, j) = detail::ridge_predict(r, work.row(i), d, j);
            imp.rounds[round][j] = r;
        }
    }
    return imp;
}

/// Impute one row given as values-with-NaN. Mean variant fills means; the
/// iterative variant fills means and then replays the stored rounds.
inline Vec transform_row(const FittedImputer& imp, std::span<const double> x_with_nan) {
    if (x_with_nan.size() != imp.d) throw DimensionMismatch("transform_row: length");
    Vec out(x_with_nan.begin(), x_with_nan.end());
    std::vector<std::uint8_t> miss(imp.d);
    for (std::size_t j = 0; j < imp.d; ++j) {
        miss[j] = std::isnan(out[j]) ? 1 : 0;
        if (miss[j]) out[j] = imp.mu_hat[j];
    }
    if (imp.variant == FittedImputer::Variant::iterative) {
        for (const auto& round : imp.rounds)
            for (std::size_t j = 0; j < imp.d; ++j)
                if (miss[j]) out[j] = detail::ridge_predict(round[j], out.data(), imp.d, j);
    }
    return out;
}

/// Impute a whole dataset; rows are independent.
inline Mat transform(const FittedImputer& imp, const MaskedDataset& data) {
    if (data.d() != imp.d) throw DimensionMismatch("transform: dimension mismatch");
    const Mat nanview = data.learner_matrix();
    Mat out(data.n(), data.d());
    for (std::size_t i = 0; i < data.n(); ++i) {
        const Vec row = transform_row(imp, nanview.row_span(i));
        for (std::size_t j = 0; j < data.d(); ++j) out(i, j) = row[j];
    }
    return out;
}

/// [imputed | mask] as an n x 2d design matrix.
inline Mat concat_mask(const Mat& imputed, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != imputed.rows * imputed.cols)
        throw DimensionMismatch("concat_mask: mask size");
    const std::size_t n = imputed.rows, d = imputed.cols;
    Mat out(n, 2 * d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out(i, j) = imputed(i, j);
        for (std::size_t j = 0; j < d; ++j)
            out(i, d + j) = mask[i * d + j] ? 1.0 : 0.0;
    }
    return out;
}

/// Pairwise-complete first and second moments of a masked dataset.
struct MaskedMoments {
    Vec mu_hat;
    Mat sigma_hat;
    Mat pair_counts;
    bool psd_repaired = false;
};

/// Column means over observed entries; covariance of (i,j) over rows where
/// both are observed. A non-PSD estimate is repaired by clipping eigenvalues
/// below 1e-8 * trace / d, with the repair recorded.
inline MaskedMoments masked_moments(const MaskedDataset& train) {
    const std::size_t n = train.n(), d = train.d();
    MaskedMoments mm;
    mm.mu_hat.assign(d, 0.0);
    Vec counts(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            if (!train.missing(i, j)) {
                mm.mu_hat[j] += train.observed(i, j);
                counts[j] += 1.0;
            }
        }
        if (counts[j] == 0.0)
            throw EmptyColumn("masked_moments: feature " + std::to_string(j) +
                              " never observed");
        mm.mu_hat[j] /= counts[j];
    }
    mm.sigma_hat = Mat(d, d);
    mm.pair_counts = Mat(d, d);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = a; b < d; ++b) {
            double acc = 0.0;
            double cnt = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!train.missing(i, a) && !train.missing(i, b)) {
                    acc += (train.observed(i, a) - mm.mu_hat[a]) *
                           (train.observed(i, b) - mm.mu_hat[b]);
                    cnt += 1.0;
                }
            }
            if (cnt < 2.0)
                throw EmptyPair("masked_moments: features " + std::to_string(a) + "," +
                                std::to_string(b) + " observed together " +
                                std::to_string(static_cast<int>(cnt)) + " times");
            const double v = acc / (cnt - 1.0);
            mm.sigma_hat(a, b) = v;
            mm.sigma_hat(b, a) = v;
            mm.pair_counts(a, b) = cnt;
            mm.pair_counts(b, a) = cnt;
        }
    }
    // eigen-clip if the pairwise estimate is not PSD
    Vec vals;
    Mat vecs;
    sym_eigen(mm.sigma_hat, vals, vecs);
    const double floor = 1e-8 * std::max(trace(mm.sigma_hat), 0.0) / static_cast<double>(d);
    if (vals.front() < floor) {
        mm.psd_repaired = true;
        for (auto& v : vals) v = std::max(v, floor);
        Mat repaired(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < d; ++k)
                    acc += vecs(i, k) * vals[k] * vecs(j, k);
                repaired(i, j) = acc;
            }
        symmetrize(repaired);
        mm.sigma_hat = repaired;
    }
    return mm;
}

inline nlohmann::json imputer_to_json(const FittedImputer& imp) {
    nlohmann::json j;
    j["variant"] = imp.variant == FittedImputer::Variant::mean ? "mean" : "iterative";
    j["d"] = imp.d;
    j["mu_hat"] = imp.mu_hat;
    j["n_iter"] = imp.n_iter;
    j["lambda"] = imp.lambda;
    if (imp.variant == FittedImputer::Variant::iterative) {
        nlohmann::json rounds = nlohmann::json::array();
        for (const auto& round : imp.rounds) {
            nlohmann::json regs = nlohmann::json::array();
            for (const auto& r : round)
                regs.push_back({{"coef", r.coef}, {"intercept", r.intercept}});
            rounds.push_back(regs);
        }
        j["rounds"] = rounds;
    }
    return j;
}

inline FittedImputer imputer_from_json(const nlohmann::json& j) {
    FittedImputer imp;
    imp.variant = j.at("variant").get<std::string>() == "mean"
                      ? FittedImputer::Variant::mean
                      : FittedImputer::Variant::iterative;
    imp.d = j.at("d").get<std::size_t>();
    imp.mu_hat = j.at("mu_hat").get<Vec>();
    imp.n_iter = j.at("n_iter").get<std::size_t>();
    imp.lambda = j.at("lambda").get<double>();
    if (imp.variant == FittedImputer::Variant::iterative) {
        for (const auto& round : j.at("rounds")) {
            std::vector<FittedImputer::Ridge> regs;
            for (const auto& r : round) {
                FittedImputer::Ridge reg;
                reg.coef = r.at("coef").get<Vec>();
                reg.intercept = r.at("intercept").get<double>();
                regs.push_back(std::move(reg));
            }
            imp.rounds.push_back(std::move(regs));
        }
    }
    return imp;
}

} // namespace missbench
