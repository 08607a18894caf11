#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "missbench/oracles.hpp"
#include "support/test_oracles.hpp"

using namespace missbench;

namespace {

SynthProblem problem(std::size_t d, Fstar f, Mechanism mech, std::uint64_t seed) {
    DataSpec spec;
    spec.d = d;
    spec.fstar = f;
    spec.mechanism = mech;
    spec.seed = seed;
    return make_problem(spec);
}

Mask random_proper_mask(std::size_t d, Rng& rng) {
    while (true) {
        Mask m(d, 0);
        std::size_t nm = 0;
        for (auto& b : m) {
            b = rng.bernoulli(0.5) ? 1 : 0;
            nm += b;
        }
        if (nm > 0 && nm < d) return m;
    }
}

} // namespace

TEST_CASE("bayes equals f* when everything is observed", "[oracles]") {
    for (Fstar f : {Fstar::bowl, Fstar::wave, Fstar::linear}) {
        const auto p = problem(4, f, Mechanism::mcar, 7);
        const auto ctx = make_oracle_context(p);
        Rng rng(1);
        Vec x(4);
        for (auto& v : x) v = rng.normal();
        const Mask none(4, 0);
        CHECK(bayes_predict(ctx, x, none) == eval_fstar(p.fstar, x));
        CHECK(chained_oracle_predict(ctx, x, none) == eval_fstar(p.fstar, x));
    }
}

TEST_CASE("bayes bowl all-missing closed form vs MC", "[oracles]") {
    const auto p = problem(5, Fstar::bowl, Mechanism::mcar, 3);
    const auto ctx = make_oracle_context(p);
    const Mask all(5, 1);
    const double pred = bayes_predict(ctx, {}, all);
    // by construction beta^T mu + beta0 = 1 and beta^T Sigma beta = 1
    CHECK(pred == Catch::Approx(1.0).margin(1e-10));
    Rng rng(12);
    const auto mc = mc_bayes(ctx, {}, all, 1000000, rng);
    CHECK(std::fabs(mc.estimate - pred) < 3.0 * mc.stderr_);
}

TEST_CASE("bayes wave matches MC on random patterns", "[oracles]") {
    for (Mechanism mech : {Mechanism::mcar, Mechanism::gsm}) {
        const auto p = problem(5, Fstar::wave, mech, 11);
        const auto ctx = make_oracle_context(p);
        Rng rng(5);
        for (int rep = 0; rep < 3; ++rep) {
            const Mask m = random_proper_mask(5, rng);
            const auto obs = obs_indices(m);
            Vec x_obs(obs.size());
            for (std::size_t i = 0; i < obs.size(); ++i)
                x_obs[i] = p.model.mu()[obs[i]] + rng.normal();
            const double pred = bayes_predict(ctx, x_obs, m);
            Rng mc_rng(100 + rep);
            const auto mc = mc_bayes(ctx, x_obs, m, 1000000, mc_rng);
            CHECK(std::fabs(mc.estimate - pred) < 3.0 * mc.stderr_ + 1e-5);
        }
    }
}

TEST_CASE("oracle_ci_impute basics", "[oracles]") {
    const double rho = 0.45;
    Mat s(2, 2);
    s(0, 0) = 1;
    s(0, 1) = rho;
    s(1, 0) = rho;
    s(1, 1) = 1;
    OracleContext ctx;
    ctx.model = GaussianModel::create(Vec(2, 0.0), s);
    ctx.mechanism = Mechanism::mcar;
    DataSpec spec;
    spec.d = 2;
    ctx.fstar = make_fstar(spec, ctx.model);

    const Vec x{0.3, -0.7};
    const Mask none{0, 0};
    CHECK(oracle_ci_impute(ctx, x, none) == x);

    const Vec x1{1.2};
    const auto imp = oracle_ci_impute(ctx, x1, Mask{0, 1});
    CHECK(imp[0] == 1.2);
    CHECK(imp[1] == Catch::Approx(rho * 1.2).epsilon(1e-12));
}

TEST_CASE("oracle_ci_impute GSM matches weighted MC mean", "[oracles]") {
    const auto p = problem(3, Fstar::bowl, Mechanism::gsm, 19);
    const auto ctx = make_oracle_context(p);
    const Mask m{1, 0, 1};
    const Vec x_obs{p.model.mu()[1] + 0.6};
    const auto imp = oracle_ci_impute(ctx, x_obs, m);
    CHECK(imp[1] == x_obs[0]);

    const auto mcar = condition_mcar(p.model, m, x_obs);
    const Mat l = cholesky(mcar.sigma_c);
    Rng rng(31);
    const std::size_t n = 400000;
    Mat draws(n, 2);
    Vec w(n), z(2);
    const auto mis = mis_indices(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : z) v = rng.normal();
        double log_w = 0.0;
        for (std::size_t a = 0; a < 2; ++a) {
            double v = mcar.mu_c[a];
            for (std::size_t k = 0; k <= a; ++k) v += l(a, k) * z[k];
            draws(i, a) = v;
            const double dev = v - p.gsm->mu_tilde[mis[a]];
            log_w -= dev * dev / (2.0 * p.gsm->sigma_tilde_sq[mis[a]]);
        }
        w[i] = std::exp(log_w);
    }
    const auto [wmean, wcov] = testsupport::weighted_moments(draws, w);
    double sw = 0, sw2 = 0;
    for (double v : w) {
        sw += v;
        sw2 += v * v;
    }
    const double ess = sw * sw / sw2;
    CHECK(std::fabs(wmean[0] - imp[0]) < 3.0 * std::sqrt(wcov(0, 0) / ess) + 1e-4);
    CHECK(std::fabs(wmean[1] - imp[2]) < 3.0 * std::sqrt(wcov(1, 1) / ess) + 1e-4);
}

TEST_CASE("chained oracle equals bayes for linear f*", "[oracles]") {
    for (Mechanism mech : {Mechanism::mcar, Mechanism::gsm}) {
        const auto p = problem(6, Fstar::linear, mech, 23);
        const auto ctx = make_oracle_context(p);
        Rng rng(9);
        for (int rep = 0; rep < 20; ++rep) {
            const Mask m = random_proper_mask(6, rng);
            const auto obs = obs_indices(m);
            Vec x_obs(obs.size());
            for (std::size_t i = 0; i < obs.size(); ++i)
                x_obs[i] = p.model.mu()[obs[i]] + rng.normal();
            CHECK(bayes_predict(ctx, x_obs, m) ==
                  Catch::Approx(chained_oracle_predict(ctx, x_obs, m)).margin(1e-10));
        }
    }
}

TEST_CASE("bowl gap equals the conditional quadratic form", "[oracles]") {
    const double rho = 0.8;
    Mat s(2, 2);
    s(0, 0) = 1;
    s(0, 1) = rho;
    s(1, 0) = rho;
    s(1, 1) = 1;
    OracleContext ctx;
    ctx.model = GaussianModel::create(Vec(2, 0.0), s);
    ctx.mechanism = Mechanism::mcar;
    DataSpec spec;
    spec.d = 2;
    spec.fstar = Fstar::bowl;
    ctx.fstar = make_fstar(spec, ctx.model);

    const Mask m{0, 1};
    const Vec x_obs{0.9};
    const double gap =
        bayes_predict(ctx, x_obs, m) - chained_oracle_predict(ctx, x_obs, m);
    const auto cond = condition_mcar(ctx.model, m, x_obs);
    const double expected = ctx.fstar.beta[1] * ctx.fstar.beta[1] * cond.sigma_c(0, 0);
    CHECK(gap == Catch::Approx(expected).margin(1e-12));
    CHECK(gap > 0.0);
}

TEST_CASE("mc_bayes constant function has zero spread", "[oracles]") {
    OracleContext ctx;
    ctx.model = GaussianModel::create(Vec(3, 0.0), Mat::identity(3));
    ctx.mechanism = Mechanism::mcar;
    ctx.fstar.kind = Fstar::linear;
    ctx.fstar.beta = Vec(3, 0.0);
    ctx.fstar.beta0 = 3.5; // f* == 2.5 everywhere
    Rng rng(1);
    const auto mc = mc_bayes(ctx, Vec{0.2}, Mask{1, 0, 1}, 2000, rng);
    CHECK(mc.estimate == Catch::Approx(2.5).margin(1e-14));
    CHECK(mc.stderr_ == 0.0);
}

TEST_CASE("mc_bayes agrees with linear and GSM closed forms", "[oracles]") {
    {
        const auto p = problem(4, Fstar::linear, Mechanism::mcar, 2);
        const auto ctx = make_oracle_context(p);
        const Mask m{1, 0, 0, 1};
        const Vec x_obs{p.model.mu()[1], p.model.mu()[2] + 1.0};
        Rng rng(3);
        const auto mc = mc_bayes(ctx, x_obs, m, 200000, rng);
        CHECK(std::fabs(mc.estimate - bayes_predict(ctx, x_obs, m)) <
              3.0 * mc.stderr_ + 1e-6);
    }
    {
        const auto p = problem(4, Fstar::bowl, Mechanism::gsm, 6);
        const auto ctx = make_oracle_context(p);
        const Mask m{1, 1, 0, 0};
        const Vec x_obs{p.model.mu()[2] - 0.4, p.model.mu()[3] + 0.2};
        Rng rng(4);
        const auto mc = mc_bayes(ctx, x_obs, m, 1000000, rng);
        CHECK(std::fabs(mc.estimate - bayes_predict(ctx, x_obs, m)) < 3.0 * mc.stderr_);
    }
}

TEST_CASE("mc_bayes rejects tiny sample budgets", "[oracles]") {
    const auto p = problem(3, Fstar::bowl, Mechanism::mcar, 8);
    const auto ctx = make_oracle_context(p);
    Rng rng(1);
    CHECK_THROWS_AS(mc_bayes(ctx, Vec{0.0}, Mask{1, 1, 0}, 500, rng), Error);
}

TEST_CASE("mc_bayes reports tiny effective samples", "[oracles]") {
    const auto p = problem(3, Fstar::bowl, Mechanism::gsm, 8);
    auto ctx = make_oracle_context(p);
    // absurdly narrow self-masking far from the conditional mean: one draw
    // carries almost all the weight
    ctx.gsm->sigma_tilde_sq.assign(3, 1e-8);
    for (std::size_t j = 0; j < 3; ++j)
        ctx.gsm->mu_tilde[j] = ctx.model.mu()[j] + 5.0;
    Rng rng(10);
    CHECK_THROWS_AS(mc_bayes(ctx, Vec{0.0}, Mask{1, 1, 0}, 2000, rng),
                    EffectiveSampleTooSmall);
}

TEST_CASE("bayes vs MC probe sweep stays within 3 stderr", "[oracles]") {
    std::size_t total = 0, within = 0;
    for (Fstar f : {Fstar::bowl, Fstar::wave, Fstar::linear}) {
        for (Mechanism mech : {Mechanism::mcar, Mechanism::gsm}) {
            const auto p = problem(6, f, mech, 41);
            const auto ctx = make_oracle_context(p);
            const auto data = make_dataset(p, 40, "probes");
            for (std::size_t i = 0; i < data.n(); ++i) {
                const Mask m = data.mask_row(i);
                const Vec x_obs = data.x_obs_row(i);
                const double pred = bayes_predict(ctx, x_obs, m);
                Rng rng(1000 + i);
                const auto mc = mc_bayes(ctx, x_obs, m, 100000, rng);
                ++total;
                if (std::fabs(mc.estimate - pred) <= 3.0 * mc.stderr_ + 1e-6) ++within;
            }
        }
    }
    CHECK(total == 240);
    CHECK(static_cast<double>(within) / static_cast<double>(total) >= 0.95);
}

TEST_CASE("bayes_predict is invariant under joint coordinate permutation", "[oracles]") {
    const auto p = problem(5, Fstar::wave, Mechanism::gsm, 13);
    auto ctx = make_oracle_context(p);
    Rng rng(2);
    const Mask m{1, 0, 0, 1, 0};
    const auto obs = obs_indices(m);
    Vec x_obs(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) x_obs[i] = p.model.mu()[obs[i]] + rng.normal();
    const double base = bayes_predict(ctx, x_obs, m);

    const std::vector<std::size_t> perm{3, 0, 4, 2, 1};
    OracleContext pctx;
    pctx.mechanism = ctx.mechanism;
    Vec pmu(5);
    Mat psigma(5, 5);
    for (std::size_t i = 0; i < 5; ++i) {
        pmu[i] = ctx.model.mu()[perm[i]];
        for (std::size_t j = 0; j < 5; ++j)
            psigma(i, j) = ctx.model.sigma()(perm[i], perm[j]);
    }
    pctx.model = GaussianModel::create(pmu, psigma);
    pctx.fstar = ctx.fstar;
    for (std::size_t i = 0; i < 5; ++i) pctx.fstar.beta[i] = ctx.fstar.beta[perm[i]];
    pctx.gsm = GsmParams{};
    pctx.gsm->mu_tilde.resize(5);
    pctx.gsm->sigma_tilde_sq.resize(5);
    pctx.gsm->k.resize(5);
    for (std::size_t i = 0; i < 5; ++i) {
        pctx.gsm->mu_tilde[i] = ctx.gsm->mu_tilde[perm[i]];
        pctx.gsm->sigma_tilde_sq[i] = ctx.gsm->sigma_tilde_sq[perm[i]];
        pctx.gsm->k[i] = ctx.gsm->k[perm[i]];
    }
    Mask pm(5);
    for (std::size_t i = 0; i < 5; ++i) pm[i] = m[perm[i]];
    // x_obs must follow the permuted ascending order of observed coords
    Vec full(5, 0.0);
    {
        std::size_t io = 0;
        for (std::size_t j = 0; j < 5; ++j)
            if (!m[j]) full[j] = x_obs[io++];
    }
    Vec px_obs;
    for (std::size_t i = 0; i < 5; ++i)
        if (!pm[i]) px_obs.push_back(full[perm[i]]);
    CHECK(bayes_predict(pctx, px_obs, pm) == Catch::Approx(base).margin(1e-10));
}
