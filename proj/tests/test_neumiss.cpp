#include <catch_amalgamated.hpp>

#include <cmath>

#include "missbench/neumiss.hpp"
#include "missbench/oracles.hpp"
#include "support/graph_probes.hpp"
#include "support/test_oracles.hpp"

using namespace missbench;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

TEST_CASE("init_neumiss closed forms", "[neumiss]") {
    {
        MaskedMoments mm;
        mm.mu_hat = {0.5, -0.5, 1.0};
        mm.sigma_hat = Mat::identity(3);
        const auto p = init_neumiss(mm, 7);
        CHECK(p.c == Catch::Approx(2.0).epsilon(1e-9));
        CHECK(p.depth == 7);
        CHECK(p.mu == mm.mu_hat);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                CHECK(p.w(i, j) == Catch::Approx(i == j ? -1.0 : 0.0).margin(1e-9));
        CHECK(p.w_mix == mm.sigma_hat);
    }
    {
        MaskedMoments mm;
        mm.mu_hat = {0.0, 0.0};
        mm.sigma_hat = Mat(2, 2);
        mm.sigma_hat(0, 0) = 1.0;
        mm.sigma_hat(1, 1) = 2.0;
        const auto p = init_neumiss(mm, 1);
        CHECK(p.c == Catch::Approx(1.0).epsilon(1e-9));
        CHECK(p.w(0, 0) == Catch::Approx(0.0).margin(1e-9));
        CHECK(p.w(1, 1) == Catch::Approx(-1.0).margin(1e-9));
    }
}

TEST_CASE("init contraction on proper observed blocks", "[neumiss]") {
    Rng rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        const std::size_t d = 6;
        const Mat sigma = testsupport::random_psd(d, d, rng, 0.1);
        const double l_hat = top_eigenvalue(sigma);
        const double c = 2.0 / l_hat;
        for (int mrep = 0; mrep < 10; ++mrep) {
            Mask m(d, 0);
            std::size_t nm = 0;
            for (auto& b : m) {
                b = rng.bernoulli(0.5) ? 1 : 0;
                nm += b;
            }
            if (nm == 0) m[rng.index(d)] = 1, nm = 1; // proper block only
            const auto obs = obs_indices(m);
            if (obs.empty()) continue;
            Mat block(obs.size(), obs.size());
            for (std::size_t i = 0; i < obs.size(); ++i)
                for (std::size_t j = 0; j < obs.size(); ++j) {
                    block(i, j) = (i == j ? 1.0 : 0.0) - c * sigma(obs[i], obs[j]);
                }
            Vec vals;
            Mat vecs;
            sym_eigen(block, vals, vecs);
            const double rad = std::max(std::fabs(vals.front()), std::fabs(vals.back()));
            CHECK(rad < 1.0);
        }
    }
}

TEST_CASE("observed coordinates pass through for any parameters", "[neumiss]") {
    Rng rng(9);
    NeuMissParams p;
    p.depth = 4;
    p.mu = {1.0, -2.0, 0.5};
    p.w = Mat(3, 3);
    p.w_mix = Mat(3, 3);
    for (auto& v : p.w.a) v = rng.normal();
    for (auto& v : p.w_mix.a) v = rng.normal();
    p.c = rng.normal();
    const Vec x{0.25, -1.5, 3.0};
    const Vec out = neumiss_impute(p, x);
    CHECK(out == x); // exact: the mask gate multiplies the mixed branch by 0

    const Vec partial{0.25, kNaN, 3.0};
    const Vec out2 = neumiss_impute(p, partial);
    CHECK(out2[0] == 0.25);
    CHECK(out2[2] == 3.0);
}

TEST_CASE("depth-0 block is the unrolled closed form", "[neumiss]") {
    Rng rng(10);
    NeuMissParams p;
    p.depth = 0;
    p.mu = {0.3, -0.4};
    p.w = Mat(2, 2);
    p.w_mix = Mat(2, 2);
    for (auto& v : p.w.a) v = rng.normal();
    for (auto& v : p.w_mix.a) v = rng.normal();
    p.c = 0.7;
    const Vec x{1.1, kNaN};
    const Vec out = neumiss_impute(p, x);
    // h0 = ((x0 - mu) .* mbar) = (0.8, 0); out_mis = mu + c * (h0 W_mix)
    const double h0 = 1.1 - 0.3;
    const double expected = -0.4 + 0.7 * h0 * p.w_mix(0, 1);
    CHECK(out[1] == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("true-moment init converges to the conditional imputation", "[neumiss]") {
    Rng rng(21);
    const std::size_t d = 10;
    Vec evals(d);
    evals[0] = 20.0; // condition number 10
    for (std::size_t i = 1; i < d; ++i)
        evals[i] = 2.0 + 8.0 * static_cast<double>(i - 1) / static_cast<double>(d - 2);
    const Mat sigma = testsupport::psd_with_spectrum(evals, rng, /*uniform_top=*/true);
    Vec mu(d);
    for (auto& v : mu) v = rng.normal();
    const auto model = GaussianModel::create(mu, sigma);

    Rng probe_rng(5);
    const auto [max50, rms50] = testsupport::neumiss_init_deviation(model, 50, 200, probe_rng);
    CHECK(max50 < 0.01); // within 1% of the conditional std

    double prev_max = std::numeric_limits<double>::infinity();
    Vec maxes;
    for (std::size_t depth : {5, 10, 15, 20, 25}) {
        Rng r(5);
        const auto [mx, rms] = testsupport::neumiss_init_deviation(model, depth, 200, r);
        maxes.push_back(mx);
        CHECK(mx <= prev_max + 1e-13);
        prev_max = mx;
    }
    CHECK(maxes.front() / maxes.back() >= 2.0); // geometric decay 5 -> 25
}


TEST_CASE("NeuMiss+MLP gradients match finite differences", "[neumiss]") {
    Rng rng(33);
    MaskedMoments mm;
    mm.mu_hat = {0.2, -0.3, 0.7};
    mm.sigma_hat = testsupport::random_psd(3, 3, rng, 0.2);
    const NeuMissParams nm = init_neumiss(mm, 3);
    Rng init_rng(4);
    const MlpParams mlp = init_mlp(3, MlpSpec{1, 4}, init_rng);
    GraphModel model = build_neumiss_mlp(nm, mlp);

    const std::size_t n = 5;
    Tensor x({n, 3}), mbar({n, 3}), mmask({n, 3}), y({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            const bool miss = rng.bernoulli(0.4);
            x.data[i * 3 + j] = miss ? 0.0 : rng.normal();
            mbar.data[i * 3 + j] = miss ? 0.0 : 1.0;
            mmask.data[i * 3 + j] = miss ? 1.0 : 0.0;
        }
    for (auto& v : y.data) v = rng.normal();
    model.g.set_value(model.x_in, x);
    model.g.set_value(model.mbar_in, mbar);
    model.g.set_value(model.m_in, mmask);
    model.g.set_value(model.y_in, y);

    testsupport::FlatModel fm{&model};
    const Vec theta = fm.flat();
    model.g.forward(model.loss);
    model.g.backward(model.loss);
    Vec ad;
    for (int id : model.param_ids)
        for (double v : model.g.grad(id).data) ad.push_back(v);
    const Vec fd =
        testsupport::fd_gradient([&](const Vec& p) { return fm.loss_at(p); }, theta);
    CHECK(testsupport::max_rel_err(ad, fd) < 1e-4);
}

TEST_CASE("frozen NeuMiss graph equals impute-then-regress", "[neumiss]") {
    DataSpec spec;
    spec.d = 5;
    spec.seed = 44;
    const auto p = make_problem(spec);
    const auto data = make_dataset(p, 50, "train");

    const auto mm = masked_moments(data);
    const NeuMissParams nm = init_neumiss(mm, 6);
    Rng init_rng(3);
    const MlpParams mlp = init_mlp(5, MlpSpec{1, 16}, init_rng);
    GraphModel model = build_neumiss_mlp(nm, mlp);

    const SupervisedData sd = make_neumiss_data(data);
    std::vector<std::size_t> rows(data.n());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    model.bind(sd, rows);
    model.g.forward(model.pred);
    const Tensor& pred = model.g.value(model.pred);

    const Mat nanview = data.learner_matrix();
    for (std::size_t i = 0; i < data.n(); ++i) {
        const double direct = mlp_forward(mlp, neumiss_impute(nm, nanview.row_span(i)));
        CHECK(pred.data[i] == Catch::Approx(direct).margin(1e-10));
    }
}

TEST_CASE("fully observed batches give exactly zero NeuMiss gradients", "[neumiss]") {
    Rng rng(8);
    MaskedMoments mm;
    mm.mu_hat = {0.1, 0.2, 0.3};
    mm.sigma_hat = testsupport::random_psd(3, 3, rng, 0.2);
    const NeuMissParams nm = init_neumiss(mm, 4);
    Rng init_rng(5);
    GraphModel model = build_neumiss_mlp(nm, init_mlp(3, MlpSpec{1, 8}, init_rng));

    const std::size_t n = 6;
    Tensor x({n, 3}), mbar({n, 3}, Vec(n * 3, 1.0)), mmask({n, 3}), y({n, 1});
    for (auto& v : x.data) v = rng.normal();
    for (auto& v : y.data) v = rng.normal();
    model.g.set_value(model.x_in, x);
    model.g.set_value(model.mbar_in, mbar);
    model.g.set_value(model.m_in, mmask);
    model.g.set_value(model.y_in, y);
    model.g.forward(model.loss);
    model.g.backward(model.loss);
    for (std::size_t p = 0; p < 4; ++p) // mu, W, W_mix, c
        for (double v : model.g.grad(model.param_ids[p]).data) CHECK(v == 0.0);
}

TEST_CASE("train_neumiss logs one run per depth and is deterministic", "[neumiss]") {
    DataSpec spec;
    spec.d = 5;
    spec.seed = 55;
    const auto p = make_problem(spec);
    const auto train_ds = make_dataset(p, 600, "train");
    const auto val_ds = make_dataset(p, 300, "val");
    TrainConfig cfg;
    cfg.max_epochs = 8;
    cfg.seed = 5;
    const auto t1 = train_neumiss(train_ds, val_ds, cfg, {5, 15}, MlpSpec{1, 16});
    CHECK(t1.runs.size() == 2);
    CHECK((t1.best_depth == 5 || t1.best_depth == 15));

    const auto t2 = train_neumiss(train_ds, val_ds, cfg, {5, 15}, MlpSpec{1, 16});
    CHECK(t1.best_depth == t2.best_depth);
    CHECK(t1.nm.w == t2.nm.w);
    CHECK(t1.mlp.weights.size() == t2.mlp.weights.size());
    for (std::size_t l = 0; l < t1.mlp.weights.size(); ++l)
        CHECK(t1.mlp.weights[l] == t2.mlp.weights[l]);

    // joint training never ends below the frozen-init validation score
    for (const auto& run : t1.runs)
        CHECK(run.best_val_r2 >= run.history[0].val_r2 - 0.01);
}

TEST_CASE("NeuMiss beats mean imputation on bowl MCAR data", "[neumiss][slowish]") {
    Vec neumiss_r2s, mean_r2s;
    for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
        DataSpec spec;
        spec.d = 8;
        spec.corr_level = Corr::high;
        spec.fstar = Fstar::bowl;
        spec.seed = seed;
        const auto p = make_problem(spec);
        const auto train_ds = make_dataset(p, 3000, "train");
        const auto val_ds = make_dataset(p, 800, "val");
        const auto test_ds = make_dataset(p, 2000, "test");
        TrainConfig cfg;
        cfg.max_epochs = 80;
        cfg.seed = seed;

        const auto nm = train_neumiss(train_ds, val_ds, cfg, {5, 15}, MlpSpec{1, 100});
        const Mat test_nan = test_ds.learner_matrix();
        Vec pred_nm(test_ds.n());
        for (std::size_t i = 0; i < test_ds.n(); ++i)
            pred_nm[i] = nm.predict(test_nan.row_span(i));
        neumiss_r2s.push_back(r2_score(test_ds.y(), pred_nm));

        const auto imp = fit_mean(train_ds);
        SupervisedData tr, va;
        tr.x = transform(imp, train_ds);
        tr.y = train_ds.y();
        va.x = transform(imp, val_ds);
        va.y = val_ds.y();
        Rng init_rng = Rng(seed).derive("mean_mlp");
        GraphModel mlp_model = build_mlp_model(8, init_mlp(8, MlpSpec{1, 100}, init_rng));
        train(mlp_model, tr, va, cfg);
        const MlpParams mp = extract_mlp(mlp_model);
        Vec pred_mean(test_ds.n());
        for (std::size_t i = 0; i < test_ds.n(); ++i)
            pred_mean[i] = mlp_forward(mp, transform_row(imp, test_nan.row_span(i)));
        mean_r2s.push_back(r2_score(test_ds.y(), pred_mean));
    }
    std::sort(neumiss_r2s.begin(), neumiss_r2s.end());
    std::sort(mean_r2s.begin(), mean_r2s.end());
    CHECK(neumiss_r2s[1] >= mean_r2s[1]); // medians over 3 seeds
}

TEST_CASE("NeuMiss checkpoint survives a JSON round trip", "[neumiss]") {
    DataSpec spec;
    spec.d = 4;
    spec.seed = 66;
    const auto p = make_problem(spec);
    const auto train_ds = make_dataset(p, 400, "train");
    const auto val_ds = make_dataset(p, 200, "val");
    TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.seed = 9;
    const auto t = train_neumiss(train_ds, val_ds, cfg, {3}, MlpSpec{1, 8});
    const auto back = neumiss_from_json(nlohmann::json::parse(neumiss_to_json(t).dump()));
    const Vec probe{0.1, kNaN, -0.4, kNaN};
    CHECK(back.predict(probe) == t.predict(probe));
}
