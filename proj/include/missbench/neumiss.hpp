#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "missbench/imputers.hpp"
#include "missbench/train.hpp"

namespace missbench {

/// Neumann-block imputation parameters. W and W_mix act by right
/// multiplication on row vectors (h W), so at the symmetric initialization
/// this is the usual column-vector form; after training the orientation is
/// just a parametrization choice.
struct NeuMissParams {
    Vec mu;
    Mat w;      // shared across the K iterations
    Mat w_mix;  // applied once to the final iterate
    double c = 0.0;
    std::size_t depth = 0;
};

/// Moment-based initialization of the Neumann block:
///   mu = mu_hat, W = Id - (2/L_hat) Sigma_hat, W_mix = Sigma_hat,
///   c = 2/L_hat with L_hat the top eigenvalue of Sigma_hat.
/// With the true moments under MCAR the block then converges to the
/// conditional-mean imputation geometrically in the depth.
inline NeuMissParams init_neumiss(const MaskedMoments& moments, std::size_t depth) {
    const std::size_t d = moments.mu_hat.size();
    NeuMissParams p;
    p.depth = depth;
    p.mu = moments.mu_hat;
    const double l_hat = top_eigenvalue(moments.sigma_hat);
    if (l_hat <= 0.0) throw NotPositiveDefinite("init_neumiss: top eigenvalue <= 0");
    p.c = 2.0 / l_hat;
    p.w = Mat::identity(d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) p.w(i, j) -= p.c * moments.sigma_hat(i, j);
    p.w_mix = moments.sigma_hat;
    return p;
}

/// Single-row Neumann-block imputation. Missing entries are marked by NaN.
///   h0 = (x0 - mu) .* mbar,   h_k = (h_{k-1} W) .* mbar + h0,
///   out = x0 .* mbar + (mu + c (h_K W_mix)) .* m
inline Vec neumiss_impute(const NeuMissParams& p, std::span<const double> x_with_nan) {
    const std::size_t d = p.mu.size();
    if (x_with_nan.size() != d) throw DimensionMismatch("neumiss_impute: length");
    Vec x0(d), mbar(d);
    for (std::size_t j = 0; j < d; ++j) {
        const bool miss = std::isnan(x_with_nan[j]);
        x0[j] = miss ? 0.0 : x_with_nan[j];
        mbar[j] = miss ? 0.0 : 1.0;
    }
    Vec h0(d);
    for (std::size_t j = 0; j < d; ++j) h0[j] = (x0[j] - p.mu[j]) * mbar[j];
    Vec h = h0;
    Vec next(d);
    for (std::size_t k = 0; k < p.depth; ++k) {
        std::fill(next.begin(), next.end(), 0.0);
        mm_nn_acc(h.data(), p.w.a.data(), next.data(), 1, d, d);
        for (std::size_t j = 0; j < d; ++j) next[j] = next[j] * mbar[j] + h0[j];
        std::swap(h, next);
    }
    Vec mixed(d, 0.0);
    for (auto& v : h) v *= p.c;
    mm_nn_acc(h.data(), p.w_mix.a.data(), mixed.data(), 1, d, d);
    Vec out(d);
    for (std::size_t j = 0; j < d; ++j)
        out[j] = mbar[j] != 0.0 ? x0[j] : p.mu[j] + mixed[j];
    return out;
}

/// NeuMiss block chained with an MLP as one differentiable graph. Every
/// iterate is gated by mbar, the output by m, and the residual connection
/// feeds h0 into each layer; mu, W, W_mix, c and the MLP all receive
/// gradients. Param order: mu, W, W_mix, c, then MLP weights.
inline GraphModel build_neumiss_mlp(const NeuMissParams& nm, const MlpParams& mlp) {
    GraphModel model;
    Graph& g = model.g;
    const std::size_t d = nm.mu.size();
    model.input_dim = d;
    model.wants_masks = true;
    model.x_in = g.add_input();
    model.mbar_in = g.add_input();
    model.m_in = g.add_input();
    model.y_in = g.add_input();

    const int mu = g.add_param(Tensor::from_vec(nm.mu));
    const int w = g.add_param(Tensor::from_mat(nm.w));
    const int w_mix = g.add_param(Tensor::from_mat(nm.w_mix));
    const int c = g.add_param(Tensor::scalar(nm.c));
    model.param_ids = {mu, w, w_mix, c};

    const int neg_mu = g.scale_const(mu, -1.0);
    const int h0 = g.mask_mul(g.add_bias(model.x_in, neg_mu), model.mbar_in);
    int h = h0;
    for (std::size_t k = 0; k < nm.depth; ++k)
        h = g.add(g.mask_mul(g.matmul(h, w), model.mbar_in), h0);
    const int mixed = g.add_bias(g.matmul(g.scale(h, c), w_mix), mu);
    const int imputed =
        g.add(g.mask_mul(model.x_in, model.mbar_in), g.mask_mul(mixed, model.m_in));

    int cur = imputed;
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
        const int wl = g.add_param(Tensor::from_mat(mlp.weights[l]));
        const int bl = g.add_param(Tensor::from_vec(mlp.biases[l]));
        model.param_ids.push_back(wl);
        model.param_ids.push_back(bl);
        cur = g.add_bias(g.matmul(cur, wl), bl);
        if (l + 1 < mlp.weights.size()) cur = g.relu(cur);
    }
    model.pred = cur;
    model.loss = g.mse_loss(model.pred, model.y_in);
    return model;
}

/// Design tensors for mask-gated models: values with missing zeroed, plus the
/// observed (mbar) and missing (m) indicators.
inline SupervisedData make_neumiss_data(const MaskedDataset& data) {
    SupervisedData out;
    const std::size_t n = data.n(), d = data.d();
    out.x = Mat(n, d);
    out.mbar = Mat(n, d);
    out.m = Mat(n, d);
    out.y = data.y();
    out.has_masks = true;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const bool miss = data.missing(i, j);
            out.x(i, j) = miss ? 0.0 : data.observed(i, j);
            out.mbar(i, j) = miss ? 0.0 : 1.0;
            out.m(i, j) = miss ? 1.0 : 0.0;
        }
    return out;
}

struct TrainedNeuMiss {
    NeuMissParams nm;
    MlpParams mlp;
    std::vector<TrainResult> runs; // one per candidate depth
    std::size_t best_depth = 0;
    double best_val_r2 = 0.0;

    double predict(std::span<const double> x_with_nan) const {
        return mlp_forward(mlp, neumiss_impute(nm, x_with_nan));
    }
};

inline NeuMissParams extract_neumiss(const GraphModel& model, std::size_t depth) {
    NeuMissParams p;
    p.depth = depth;
    p.mu = model.g.value(model.param_ids[0]).data;
    const Tensor& w = model.g.value(model.param_ids[1]);
    p.w = Mat(w.rows(), w.cols());
    p.w.a = w.data;
    const Tensor& wm = model.g.value(model.param_ids[2]);
    p.w_mix = Mat(wm.rows(), wm.cols());
    p.w_mix.a = wm.data;
    p.c = model.g.value(model.param_ids[3]).data[0];
    return p;
}

/// Joint training: initialize from the training split's masked moments, train
/// one model per candidate depth, keep the best validation R^2. The MLP head
/// is one hidden layer of 100 units; depth is the selected hyperparameter.
inline TrainedNeuMiss train_neumiss(const MaskedDataset& train_ds, const MaskedDataset& val_ds,
                                    const TrainConfig& cfg,
                                    std::vector<std::size_t> depths = {5, 15},
                                    MlpSpec head = MlpSpec{1, 100}) {
    const MaskedMoments moments = masked_moments(train_ds);
    const SupervisedData tr = make_neumiss_data(train_ds);
    const SupervisedData va = make_neumiss_data(val_ds);

    TrainedNeuMiss out;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < depths.size(); ++c) {
        const NeuMissParams init = init_neumiss(moments, depths[c]);
        Rng init_rng = Rng(cfg.seed).derive("neumiss_mlp_init").derive(c);
        const MlpParams mlp0 = init_mlp(train_ds.d(), head, init_rng);
        GraphModel model = build_neumiss_mlp(init, mlp0);
        TrainResult run = train(model, tr, va, cfg);
        if (run.best_val_r2 > best) {
            best = run.best_val_r2;
            out.best_depth = depths[c];
            out.best_val_r2 = run.best_val_r2;
            out.nm = extract_neumiss(model, depths[c]);
            out.mlp = extract_mlp(model, 4);
        }
        out.runs.push_back(std::move(run));
    }
    return out;
}

inline nlohmann::json neumiss_to_json(const TrainedNeuMiss& t) {
    nlohmann::json j;
    j["depth"] = t.nm.depth;
    j["mu"] = t.nm.mu;
    j["w"] = mat_to_json(t.nm.w);
    j["w_mix"] = mat_to_json(t.nm.w_mix);
    j["c"] = t.nm.c;
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < t.mlp.weights.size(); ++l)
        layers.push_back({{"w", mat_to_json(t.mlp.weights[l])}, {"b", t.mlp.biases[l]}});
    j["mlp"] = layers;
    return j;
}

inline TrainedNeuMiss neumiss_from_json(const nlohmann::json& j) {
    TrainedNeuMiss t;
    t.nm.depth = j.at("depth").get<std::size_t>();
    t.nm.mu = j.at("mu").get<Vec>();
    t.nm.w = mat_from_json(j.at("w"));
    t.nm.w_mix = mat_from_json(j.at("w_mix"));
    t.nm.c = j.at("c").get<double>();
    t.best_depth = t.nm.depth;
    for (const auto& layer : j.at("mlp")) {
        t.mlp.weights.push_back(mat_from_json(layer.at("w")));
        t.mlp.biases.push_back(layer.at("b").get<Vec>());
    }
    return t;
}

} // namespace missbench
