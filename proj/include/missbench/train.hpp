#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "missbench/autodiff.hpp"
#include "missbench/metrics.hpp"
#include "missbench/rng.hpp"

namespace missbench {

/// MLP architecture: `hidden_layers` ReLU layers of `width` units and a
/// scalar linear head.
struct MlpSpec {
    std::size_t hidden_layers = 1;
    std::size_t width = 100;
};

/// Weights in (in x out) orientation so a batch forward is X W + b.
struct MlpParams {
    std::vector<Mat> weights;
    std::vector<Vec> biases;

    std::size_t n_params() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.a.size();
        for (const auto& b : biases) n += b.size();
        return n;
    }
};

/// He-style init: N(0, sqrt(2 / fan_in)) weights, zero biases.
inline MlpParams init_mlp(std::size_t input_dim, const MlpSpec& spec, Rng& rng) {
    MlpParams p;
    std::size_t in = input_dim;
    for (std::size_t l = 0; l < spec.hidden_layers; ++l) {
        Mat w(in, spec.width);
        const double sd = std::sqrt(2.0 / static_cast<double>(in));
        for (auto& v : w.a) v = sd * rng.normal();
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(spec.width, 0.0);
        in = spec.width;
    }
    Mat w(in, 1);
    const double sd = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& v : w.a) v = sd * rng.normal();
    p.weights.push_back(std::move(w));
    p.biases.emplace_back(1, 0.0);
    return p;
}

/// Pure single-row forward pass, shared by every fitted pipeline.
inline double mlp_forward(const MlpParams& p, std::span<const double> x) {
    Vec cur(x.begin(), x.end());
    for (std::size_t l = 0; l + 1 < p.weights.size(); ++l) {
        const Mat& w = p.weights[l];
        Vec next(w.cols);
        for (std::size_t j = 0; j < w.cols; ++j) {
            double s = p.biases[l][j];
            for (std::size_t i = 0; i < w.rows; ++i) s += cur[i] * w(i, j);
            next[j] = s > 0.0 ? s : 0.0;
        }
        cur = std::move(next);
    }
    const Mat& w = p.weights.back();
    double s = p.biases.back()[0];
    for (std::size_t i = 0; i < w.rows; ++i) s += cur[i] * w(i, 0);
    return s;
}

/// Fixed design matrices for one split. mbar/m are only populated for models
/// that gate on the missingness pattern (NeuMiss).
struct SupervisedData {
    Mat x;
    Vec y;
    Mat mbar;
    Mat m;
    bool has_masks = false;

    std::size_t n() const { return x.rows; }
};

/// A differentiable model: the graph plus the node ids needed to feed batches
/// and read predictions.
struct GraphModel {
    Graph g;
    int x_in = -1;
    int mbar_in = -1;
    int m_in = -1;
    int y_in = -1;
    int pred = -1;
    int loss = -1;
    std::vector<int> param_ids;
    std::size_t input_dim = 0;
    bool wants_masks = false;

    std::size_t n_params() {
        std::size_t n = 0;
        for (int id : param_ids) n += g.value(id).size();
        return n;
    }

    void bind(const SupervisedData& data, std::span<const std::size_t> rows) {
        const std::size_t n = rows.size(), p = data.x.cols;
        Tensor xb({n, p});
        Tensor yb({n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            const double* src = data.x.row(rows[i]);
            std::copy(src, src + p, xb.data.begin() + static_cast<long>(i * p));
            yb.data[i] = data.y[rows[i]];
        }
        g.set_value(x_in, std::move(xb));
        g.set_value(y_in, std::move(yb));
        if (wants_masks) {
            if (!data.has_masks) throw Error("GraphModel: data lacks masks");
            Tensor mb({n, p}), mm({n, p});
            for (std::size_t i = 0; i < n; ++i) {
                const double* sb = data.mbar.row(rows[i]);
                const double* sm = data.m.row(rows[i]);
                std::copy(sb, sb + p, mb.data.begin() + static_cast<long>(i * p));
                std::copy(sm, sm + p, mm.data.begin() + static_cast<long>(i * p));
            }
            g.set_value(mbar_in, std::move(mb));
            g.set_value(m_in, std::move(mm));
        }
    }
};

/// Plain MLP graph over an already-imputed design matrix.
inline GraphModel build_mlp_model(std::size_t input_dim, const MlpParams& init) {
    GraphModel m;
    m.input_dim = input_dim;
    m.x_in = m.g.add_input();
    m.y_in = m.g.add_input();
    int cur = m.x_in;
    for (std::size_t l = 0; l < init.weights.size(); ++l) {
        const int w = m.g.add_param(Tensor::from_mat(init.weights[l]));
        const int b = m.g.add_param(Tensor::from_vec(init.biases[l]));
        m.param_ids.push_back(w);
        m.param_ids.push_back(b);
        cur = m.g.add_bias(m.g.matmul(cur, w), b);
        if (l + 1 < init.weights.size()) cur = m.g.relu(cur);
    }
    m.pred = cur;
    m.loss = m.g.mse_loss(m.pred, m.y_in);
    return m;
}

/// Read trained MLP weights back out of a graph whose params are laid out as
/// W0, b0, W1, b1, ... starting at `first_param_index`.
inline MlpParams extract_mlp(const GraphModel& model, std::size_t first_param_index = 0) {
    MlpParams p;
    for (std::size_t i = first_param_index; i + 1 < model.param_ids.size(); i += 2) {
        const Tensor& w = model.g.value(model.param_ids[i]);
        const Tensor& b = model.g.value(model.param_ids[i + 1]);
        Mat wm(w.rows(), w.cols());
        wm.a = w.data;
        p.weights.push_back(std::move(wm));
        p.biases.push_back(b.data);
    }
    return p;
}

/// Adam hyperparameters follow the common defaults; the learning-rate
/// schedule on top of it comes from TrainConfig.
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Vec> m;
    std::vector<Vec> v;

    static AdamState for_params(Graph& g, const std::vector<int>& ids) {
        AdamState s;
        for (int id : ids) {
            s.m.emplace_back(g.value(id).size(), 0.0);
            s.v.emplace_back(g.value(id).size(), 0.0);
        }
        return s;
    }
};

/// One bias-corrected Adam update over all parameters.
inline void adam_step(AdamState& st, Graph& g, const std::vector<int>& ids, double lr) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t p = 0; p < ids.size(); ++p) {
        Tensor& theta = g.param_value(ids[p]);
        const Tensor& grad = g.grad(ids[p]);
        Vec& m = st.m[p];
        Vec& v = st.v[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = grad.data[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta.data[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

/// Optimizer schedule: Adam with the plateau rule (lr divided by
/// lr_drop_factor when lr_patience consecutive epochs fail to improve the
/// train loss by lr_min_delta) and early stopping on the validation score.
struct TrainConfig {
    double lr0 = 1e-2;
    double lr_drop_factor = 5.0;
    std::size_t lr_patience = 2;
    double lr_min_delta = 1e-4;
    std::size_t es_patience = 10;
    double es_min_delta = 1e-4;
    std::size_t batch_size = 200;
    std::size_t max_epochs = 500;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    std::size_t epoch;
    double train_mse;
    double val_r2;
    double lr;
};

struct TrainResult {
    std::vector<Tensor> best_params;
    std::vector<EpochRecord> history;
    double best_val_r2 = 0.0;
    std::size_t best_epoch = 0;
};

namespace detail {

/// Chunked forward pass collecting predictions (bounded memory).
inline Vec predict_all(GraphModel& model, const SupervisedData& data,
                       std::size_t chunk = 4096) {
    Vec out;
    out.reserve(data.n());
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.n(); start += chunk) {
        const std::size_t stop = std::min(data.n(), start + chunk);
        rows.resize(stop - start);
        for (std::size_t i = start; i < stop; ++i) rows[i - start] = i;
        model.bind(data, rows);
        model.g.forward(model.pred);
        const Tensor& p = model.g.value(model.pred);
        out.insert(out.end(), p.data.begin(), p.data.end());
    }
    return out;
}

inline double full_mse(GraphModel& model, const SupervisedData& data) {
    const Vec pred = predict_all(model, data);
    double acc = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i)
        acc += (pred[i] - data.y[i]) * (pred[i] - data.y[i]);
    return acc / static_cast<double>(data.n());
}

inline double full_r2(GraphModel& model, const SupervisedData& data) {
    const Vec pred = predict_all(model, data);
    return r2_score(data.y, pred);
}

} // namespace detail

/// Mini-batch training loop. History row 0 is the pre-training evaluation;
/// the parameters returned are those of the best validation epoch (never
/// worse than the initialization).
inline TrainResult train(GraphModel& model, const SupervisedData& train_data,
                         const SupervisedData& val_data, const TrainConfig& cfg) {
    const std::vector<int>& ids = model.param_ids;
    AdamState adam = AdamState::for_params(model.g, ids);
    Rng shuffle_root = Rng(cfg.seed).derive("shuffle");

    TrainResult result;
    auto snapshot = [&]() {
        std::vector<Tensor> out;
        out.reserve(ids.size());
        for (int id : ids) out.push_back(model.g.value(id));
        return out;
    };

    double lr = cfg.lr0;
    double prev_train = std::numeric_limits<double>::infinity();
    double best_val = -std::numeric_limits<double>::infinity();
    std::size_t lr_fails = 0, es_fails = 0;

    {
        const double mse0 = detail::full_mse(model, train_data);
        const double r20 = detail::full_r2(model, val_data);
        result.history.push_back({0, mse0, r20, lr});
        best_val = r20;
        prev_train = mse0;
        result.best_val_r2 = r20;
        result.best_epoch = 0;
        result.best_params = snapshot();
    }

    std::vector<std::size_t> order(train_data.n());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng srng = shuffle_root.derive(epoch);
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[srng.index(i)]);

        try {
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                model.bind(train_data,
                           std::span<const std::size_t>(order.data() + start, stop - start));
                model.g.forward(model.loss);
                model.g.backward(model.loss);
                adam_step(adam, model.g, ids, lr);
            }
        } catch (const NonFiniteValue& e) {
            throw NonFiniteValue(std::string(e.what()) + " at epoch " +
                                 std::to_string(epoch));
        }

        const double train_mse = detail::full_mse(model, train_data);
        const double val_r2 = detail::full_r2(model, val_data);
        result.history.push_back({epoch, train_mse, val_r2, lr});

        if (val_r2 > best_val + cfg.es_min_delta) {
            best_val = val_r2;
            result.best_val_r2 = val_r2;
            result.best_epoch = epoch;
            result.best_params = snapshot();
            es_fails = 0;
        } else {
            ++es_fails;
        }

        // each epoch is compared against its predecessor; lr_patience
        // consecutive non-improving epochs trigger one drop
        if (train_mse < prev_train - cfg.lr_min_delta) {
            lr_fails = 0;
        } else {
            ++lr_fails;
            if (lr_fails >= cfg.lr_patience) {
                lr /= cfg.lr_drop_factor;
                lr_fails = 0;
            }
        }
        prev_train = train_mse;

        if (es_fails > cfg.es_patience) break;
    }

    // leave the graph holding the best parameters
    for (std::size_t p = 0; p < ids.size(); ++p)
        model.g.param_value(ids[p]) = result.best_params[p];
    return result;
}

/// Training history as CSV (epoch, train_mse, val_r2, lr).
inline void write_history_csv(const std::vector<EpochRecord>& hist, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("write_history_csv: cannot open " + path);
    out << "epoch,train_mse,val_r2,lr\n";
    char buf[128];
    for (const auto& r : hist) {
        std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%.12g\n", r.epoch, r.train_mse,
                      r.val_r2, r.lr);
        out << buf;
    }
}

struct ArchSelection {
    std::size_t best_index = 0;
    MlpParams best_mlp;
    std::vector<TrainResult> runs;
    double best_val_r2 = 0.0;
};

/// Trains every candidate architecture and keeps the best validation R^2;
/// exact ties go to the model with fewer parameters.
inline ArchSelection select_architecture(const std::vector<MlpSpec>& candidates,
                                         const SupervisedData& train_data,
                                         const SupervisedData& val_data,
                                         const TrainConfig& cfg) {
    if (candidates.empty()) throw Error("select_architecture: no candidates");
    ArchSelection sel;
    double best_r2 = -std::numeric_limits<double>::infinity();
    std::size_t best_params = 0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        Rng init_rng = Rng(cfg.seed).derive("mlp_init").derive(c);
        const MlpParams init = init_mlp(train_data.x.cols, candidates[c], init_rng);
        GraphModel model = build_mlp_model(train_data.x.cols, init);
        TrainResult run = train(model, train_data, val_data, cfg);
        const std::size_t np = model.n_params();
        const bool better = run.best_val_r2 > best_r2 ||
                            (run.best_val_r2 == best_r2 && np < best_params);
        if (better) {
            best_r2 = run.best_val_r2;
            best_params = np;
            sel.best_index = c;
            sel.best_val_r2 = run.best_val_r2;
            sel.best_mlp = extract_mlp(model);
        }
        sel.runs.push_back(std::move(run));
    }
    return sel;
}

} // namespace missbench
