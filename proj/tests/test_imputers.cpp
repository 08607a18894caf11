#include <catch_amalgamated.hpp>

#include <cmath>

#include "missbench/imputers.hpp"
#include "missbench/oracles.hpp"

using namespace missbench;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

MaskedDataset tiny(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size(), d = rows[0].size();
    Mat values(n, d);
    std::vector<std::uint8_t> mask(n * d, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            if (std::isnan(rows[i][j])) {
                mask[i * d + j] = 1;
                values(i, j) = 0.0;
            } else {
                values(i, j) = rows[i][j];
            }
        }
    return MaskedDataset(std::move(values), std::move(mask), Vec(n, 0.0));
}

/// R^2 of imputed vs true over the masked entries.
double imputation_r2(const Mat& imputed, const MaskedDataset& data) {
    double sse = 0.0, mean = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < data.n(); ++i)
        for (std::size_t j = 0; j < data.d(); ++j)
            if (data.missing(i, j)) {
                mean += data.ground_truth()(i, j);
                ++cnt;
            }
    mean /= static_cast<double>(cnt);
    double sst = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i)
        for (std::size_t j = 0; j < data.d(); ++j)
            if (data.missing(i, j)) {
                const double t = data.ground_truth()(i, j);
                sse += (imputed(i, j) - t) * (imputed(i, j) - t);
                sst += (t - mean) * (t - mean);
            }
    return 1.0 - sse / sst;
}

} // namespace

TEST_CASE("fit_mean basics", "[imputers]") {
    const auto ds = tiny({{1.0, 2.0}, {kNaN, 4.0}, {3.0, 6.0}});
    const auto imp = fit_mean(ds);
    CHECK(imp.mu_hat[0] == Catch::Approx(2.0));
    CHECK(imp.mu_hat[1] == Catch::Approx(4.0));

    const auto empty_col = tiny({{kNaN, 1.0}, {kNaN, 2.0}});
    CHECK_THROWS_AS(fit_mean(empty_col), EmptyColumn);
}

TEST_CASE("fit_mean concentrates around the true mean under MCAR", "[imputers]") {
    DataSpec spec;
    spec.d = 4;
    spec.seed = 31;
    const auto p = make_problem(spec);
    const auto data = make_dataset(p, 100000, "train");
    const auto imp = fit_mean(data);
    for (std::size_t j = 0; j < 4; ++j) {
        const double sd = std::sqrt(p.model.sigma()(j, j));
        CHECK(std::fabs(imp.mu_hat[j] - p.model.mu()[j]) <
              3.0 * sd / std::sqrt(100000.0 / 2.0));
    }
}

TEST_CASE("transform fills rows as specified", "[imputers]") {
    const auto ds = tiny({{1.0, 2.0, 3.0}, {kNaN, kNaN, kNaN}, {2.0, kNaN, 5.0}});
    const auto imp = fit_mean(ds);
    const Mat out = transform(imp, ds);
    // complete row passes through untouched
    CHECK(out(0, 0) == 1.0);
    CHECK(out(0, 1) == 2.0);
    CHECK(out(0, 2) == 3.0);
    // all-missing row becomes the column means
    CHECK(out(1, 0) == imp.mu_hat[0]);
    CHECK(out(1, 1) == imp.mu_hat[1]);
    CHECK(out(1, 2) == imp.mu_hat[2]);
    // observed entries always preserved
    CHECK(out(2, 0) == 2.0);
    CHECK(out(2, 2) == 5.0);

    const auto wrong = tiny({{1.0, 2.0}});
    CHECK_THROWS_AS(transform(imp, wrong), DimensionMismatch);
}

TEST_CASE("fit_iterative recovers an exact linear relation", "[imputers]") {
    Rng rng(17);
    const std::size_t n = 400;
    Mat values(n, 2);
    std::vector<std::uint8_t> mask(n * 2, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double x1 = rng.normal();
        values(i, 0) = x1;
        values(i, 1) = 2.0 * x1;
        if (i % 2 == 0) mask[i * 2 + 1] = 1;
    }
    MaskedDataset ds(std::move(values), std::move(mask), Vec(n, 0.0));
    const auto imp = fit_iterative(ds, 1e-6, 10);
    const Mat out = transform(imp, ds);
    for (std::size_t i = 0; i < n; i += 2)
        CHECK(std::fabs(out(i, 1) - 2.0 * out(i, 0)) < 1e-3);
}

TEST_CASE("fit_iterative with zero rounds is mean imputation", "[imputers]") {
    DataSpec spec;
    spec.d = 3;
    spec.seed = 8;
    const auto p = make_problem(spec);
    const auto data = make_dataset(p, 500, "train");
    const auto it0 = fit_iterative(data, 0.0, 0);
    const auto mean = fit_mean(data);
    CHECK(transform(it0, data) == transform(mean, data));
}

TEST_CASE("iterative imputation beats mean imputation on correlated data", "[imputers]") {
    DataSpec spec;
    spec.d = 5;
    spec.corr_level = Corr::high;
    spec.seed = 23;
    const auto p = make_problem(spec);
    const auto train = make_dataset(p, 20000, "train");
    const auto test = make_dataset(p, 5000, "test");

    const auto mean_imp = fit_mean(train);
    const auto iter_imp = fit_iterative(train);
    const Mat mean_out = transform(mean_imp, test);
    const Mat iter_out = transform(iter_imp, test);

    double mse_mean = 0.0, mse_iter = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < test.n(); ++i)
        for (std::size_t j = 0; j < test.d(); ++j)
            if (test.missing(i, j)) {
                const double t = test.ground_truth()(i, j);
                mse_mean += (mean_out(i, j) - t) * (mean_out(i, j) - t);
                mse_iter += (iter_out(i, j) - t) * (iter_out(i, j) - t);
                ++cnt;
            }
    CHECK(cnt > 0);
    CHECK(mse_iter <= mse_mean);
}

TEST_CASE("iterative imputation tracks the oracle conditional mean", "[imputers]") {
    DataSpec spec;
    spec.d = 5;
    spec.corr_level = Corr::high;
    spec.seed = 29;
    const auto p = make_problem(spec);
    const auto ctx = make_oracle_context(p);
    const auto train = make_dataset(p, 100000, "train");
    const auto test = make_dataset(p, 20000, "test");

    const auto imp = fit_iterative(train);
    const Mat iter_out = transform(imp, test);

    Mat oracle_out(test.n(), test.d());
    for (std::size_t i = 0; i < test.n(); ++i) {
        const Vec full = oracle_ci_impute(ctx, test.x_obs_row(i), test.mask_row(i));
        for (std::size_t j = 0; j < test.d(); ++j) oracle_out(i, j) = full[j];
    }
    const double r2_iter = imputation_r2(iter_out, test);
    const double r2_oracle = imputation_r2(oracle_out, test);
    CHECK(std::fabs(r2_oracle - r2_iter) < 0.05);
}

TEST_CASE("concat_mask layout", "[imputers]") {
    Mat x(2, 3);
    for (std::size_t k = 0; k < 6; ++k) x.a[k] = static_cast<double>(k);
    const std::vector<std::uint8_t> none(6, 0), all(6, 1);
    const Mat with_none = concat_mask(x, none);
    REQUIRE(with_none.rows == 2);
    REQUIRE(with_none.cols == 6);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(with_none(i, j) == x(i, j));
            CHECK(with_none(i, 3 + j) == 0.0);
        }
    const Mat with_all = concat_mask(x, all);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(with_all(i, 3 + j) == 1.0);
    CHECK_THROWS_AS(concat_mask(x, std::vector<std::uint8_t>(5, 0)), DimensionMismatch);
}

TEST_CASE("masked_moments equals sample moments on complete data", "[imputers]") {
    DataSpec spec;
    spec.d = 4;
    spec.seed = 3;
    spec.missing_rate = 0.0;
    Rng mr(3);
    auto model = make_model(spec, mr);
    Rng xr(4);
    const Mat x = sample_gaussian(model, 3000, xr);
    MaskedDataset ds(x, std::vector<std::uint8_t>(3000 * 4, 0), Vec(3000, 0.0));
    const auto mm = masked_moments(ds);
    CHECK_FALSE(mm.psd_repaired);
    Vec mean(4, 0.0);
    for (std::size_t i = 0; i < 3000; ++i)
        for (std::size_t j = 0; j < 4; ++j) mean[j] += x(i, j);
    for (auto& v : mean) v /= 3000.0;
    for (std::size_t j = 0; j < 4; ++j) CHECK(mm.mu_hat[j] == Catch::Approx(mean[j]));
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) {
            double cov = 0.0;
            for (std::size_t i = 0; i < 3000; ++i)
                cov += (x(i, a) - mean[a]) * (x(i, b) - mean[b]);
            cov /= 2999.0;
            CHECK(mm.sigma_hat(a, b) == Catch::Approx(cov).margin(1e-12));
        }
}

TEST_CASE("masked_moments is consistent under MCAR", "[imputers]") {
    DataSpec spec;
    spec.d = 5;
    spec.seed = 51;
    const auto p = make_problem(spec);
    const auto data = make_dataset(p, 100000, "train");
    const auto mm = masked_moments(data);
    double num = 0.0, den = 0.0;
    for (std::size_t a = 0; a < 5; ++a)
        for (std::size_t b = 0; b < 5; ++b) {
            const double diff = mm.sigma_hat(a, b) - p.model.sigma()(a, b);
            num += diff * diff;
            den += p.model.sigma()(a, b) * p.model.sigma()(a, b);
        }
    CHECK(std::sqrt(num / den) < 0.05);
}

TEST_CASE("masked_moments repairs a non-PSD pairwise estimate", "[imputers]") {
    // three features observed only in pairs, with correlations +1, +1, -1:
    // the pairwise-complete covariance cannot be PSD
    std::vector<std::vector<double>> rows;
    for (int rep = 0; rep < 2; ++rep) {
        rows.push_back({+1.0, +1.0, kNaN});
        rows.push_back({-1.0, -1.0, kNaN});
        rows.push_back({kNaN, +1.0, +1.0});
        rows.push_back({kNaN, -1.0, -1.0});
        rows.push_back({+1.0, kNaN, -1.0});
        rows.push_back({-1.0, kNaN, +1.0});
    }
    const auto ds = tiny(rows);
    const auto mm = masked_moments(ds);
    CHECK(mm.psd_repaired);
    CHECK_NOTHROW(cholesky(mm.sigma_hat));
}

TEST_CASE("masked_moments requires co-observed pairs", "[imputers]") {
    const auto ds = tiny({{1.0, kNaN}, {kNaN, 2.0}, {3.0, kNaN}, {kNaN, 1.0}});
    CHECK_THROWS_AS(masked_moments(ds), EmptyPair);
}

TEST_CASE("imputers never read masked ground truth", "[imputers]") {
    DataSpec spec;
    spec.d = 4;
    spec.seed = 13;
    const auto p = make_problem(spec);
    auto a = make_dataset(p, 2000, "train");
    auto b = make_dataset(p, 2000, "train");
    Rng noise(5);
    for (std::size_t i = 0; i < b.n(); ++i)
        for (std::size_t j = 0; j < b.d(); ++j)
            if (b.missing(i, j)) b.set_hidden_value(i, j, 1e6 * noise.normal());

    const auto mean_a = fit_mean(a);
    const auto mean_b = fit_mean(b);
    CHECK(transform(mean_a, a) == transform(mean_b, b));

    const auto it_a = fit_iterative(a);
    const auto it_b = fit_iterative(b);
    CHECK(transform(it_a, a) == transform(it_b, b));

    const auto mm_a = masked_moments(a);
    const auto mm_b = masked_moments(b);
    CHECK(mm_a.sigma_hat == mm_b.sigma_hat);
}

TEST_CASE("iterative fitting is deterministic", "[imputers]") {
    DataSpec spec;
    spec.d = 4;
    spec.seed = 77;
    const auto p = make_problem(spec);
    const auto data = make_dataset(p, 1500, "train");
    const auto i1 = fit_iterative(data);
    const auto i2 = fit_iterative(data);
    CHECK(transform(i1, data) == transform(i2, data));
}

TEST_CASE("observed entries recoverable after mean imputation plus mask", "[imputers]") {
    DataSpec spec;
    spec.d = 3;
    spec.seed = 6;
    const auto p = make_problem(spec);
    const auto data = make_dataset(p, 300, "train");
    const auto imp = fit_mean(data);
    const Mat design = concat_mask(transform(imp, data), data.mask_flat());
    for (std::size_t i = 0; i < data.n(); ++i)
        for (std::size_t j = 0; j < data.d(); ++j) {
            const bool missing = design(i, data.d() + j) == 1.0;
            CHECK(missing == data.missing(i, j));
            if (!missing) CHECK(design(i, j) == data.observed(i, j));
        }
}

TEST_CASE("imputer state survives a JSON round trip", "[imputers]") {
    DataSpec spec;
    spec.d = 4;
    spec.seed = 21;
    const auto p = make_problem(spec);
    const auto data = make_dataset(p, 1000, "train");
    for (const auto& imp : {fit_mean(data), fit_iterative(data)}) {
        const auto j = imputer_to_json(imp);
        const auto back = imputer_from_json(nlohmann::json::parse(j.dump()));
        CHECK(transform(back, data) == transform(imp, data));
    }
}
