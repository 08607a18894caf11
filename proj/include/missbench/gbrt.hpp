#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include <json.hpp>

#include "missbench/synth.hpp"

namespace missbench {

/// Defaults mirror common histogram-GBRT behavior: best-first growth to 31
/// leaves, no depth cap, 256 quantile bins, squared loss.
struct GbrtConfig {
    std::size_t n_trees = 100;
    double learning_rate = 0.1;
    int max_depth = -1; // < 0: unlimited
    std::size_t max_leaf_nodes = 31;
    std::size_t min_leaf = 20;
    std::size_t n_bins = 256;
};

struct SplitResult {
    bool valid = false;
    double threshold = 0.0; // x <= threshold goes left; +inf = observed vs missing
    bool missing_left = false;
    double gain = 0.0;
};

namespace gbrt_detail {

struct BinStats {
    Vec sum;          // residual sum per bin
    std::vector<std::size_t> count;
    double miss_sum = 0.0;
    std::size_t miss_count = 0;
    double total_sum = 0.0;
    std::size_t total_count = 0;
};

/// Shared scan over a per-bin histogram. Candidates are every inter-bin
/// threshold with the missing bucket sent to either side, plus the pure
/// observed/missing separation (threshold +inf, missing right). Strictly
/// larger gain wins, so ties keep the earliest candidate.
inline SplitResult scan_histogram(const BinStats& h, const Vec& thresholds,
                                  std::size_t min_leaf) {
    SplitResult best;
    const double parent =
        h.total_count > 0
            ? h.total_sum * h.total_sum / static_cast<double>(h.total_count)
            : 0.0;
    auto consider = [&](double thr, bool miss_left, double sum_l, std::size_t n_l) {
        const std::size_t n_r = h.total_count - n_l;
        if (n_l < min_leaf || n_r < min_leaf) return;
        const double sum_r = h.total_sum - sum_l;
        const double gain = sum_l * sum_l / static_cast<double>(n_l) +
                            sum_r * sum_r / static_cast<double>(n_r) - parent;
        if (gain > best.gain || !best.valid) {
            if (gain <= 0.0) return;
            best = {true, thr, miss_left, gain};
        }
    };
    double prefix_sum = 0.0;
    std::size_t prefix_count = 0;
    for (std::size_t b = 0; b < thresholds.size(); ++b) {
        prefix_sum += h.sum[b];
        prefix_count += h.count[b];
        consider(thresholds[b], false, prefix_sum, prefix_count);
        consider(thresholds[b], true, prefix_sum + h.miss_sum,
                 prefix_count + h.miss_count);
    }
    if (h.miss_count > 0 && thresholds.size() + 1 == h.sum.size()) {
        // all observed left, missing right
        consider(std::numeric_limits<double>::infinity(), false,
                 h.total_sum - h.miss_sum, h.total_count - h.miss_count);
    }
    return best;
}

/// Per-feature binning: thresholds midway between quantile cut values.
/// When a feature has no more distinct values than bins, every distinct
/// value gets its own bin and the histogram scan is exhaustive.
struct FeatureBins {
    Vec thresholds;                 // sorted; bin b = # thresholds < x
    std::size_t n_bins() const { return thresholds.size() + 1; }

    static FeatureBins build(Vec observed_sorted, std::size_t n_bins) {
        FeatureBins fb;
        const std::size_t n = observed_sorted.size();
        if (n == 0) return fb;
        Vec distinct;
        for (double v : observed_sorted)
            if (distinct.empty() || v > distinct.back()) distinct.push_back(v);
        if (distinct.size() <= n_bins) {
            for (std::size_t i = 0; i + 1 < distinct.size(); ++i)
                fb.thresholds.push_back(0.5 * (distinct[i] + distinct[i + 1]));
        } else {
            for (std::size_t k = 1; k < n_bins; ++k) {
                const std::size_t idx = k * n / n_bins;
                if (idx == 0 || idx >= n) continue;
                const double lo = observed_sorted[idx - 1], hi = observed_sorted[idx];
                if (hi > lo) {
                    const double t = 0.5 * (lo + hi);
                    if (fb.thresholds.empty() || t > fb.thresholds.back())
                        fb.thresholds.push_back(t);
                }
            }
        }
        return fb;
    }

    int bin(double x) const {
        if (std::isnan(x)) return -1;
        return static_cast<int>(
            std::upper_bound(thresholds.begin(), thresholds.end(), x) -
            thresholds.begin());
    }
};

} // namespace gbrt_detail

/// MIA split search over one feature given residuals: every threshold is
/// tried with the missing rows sent left and sent right, and the pure
/// observed/missing separation is a candidate; the largest gain wins.
/// Throws NoValidSplit when the feature is all-missing or constant, or no
/// candidate respects min_leaf.
inline SplitResult best_split(std::span<const double> values_with_nan,
                              std::span<const double> residuals,
                              std::size_t min_leaf = 1) {
    if (values_with_nan.size() != residuals.size())
        throw DimensionMismatch("best_split: length mismatch");
    Vec observed;
    for (double v : values_with_nan)
        if (!std::isnan(v)) observed.push_back(v);
    std::sort(observed.begin(), observed.end());
    const auto fb = gbrt_detail::FeatureBins::build(
        std::move(observed), std::numeric_limits<std::size_t>::max());

    gbrt_detail::BinStats h;
    h.sum.assign(fb.n_bins(), 0.0);
    h.count.assign(fb.n_bins(), 0);
    for (std::size_t i = 0; i < values_with_nan.size(); ++i) {
        const int b = fb.bin(values_with_nan[i]);
        h.total_sum += residuals[i];
        ++h.total_count;
        if (b < 0) {
            h.miss_sum += residuals[i];
            ++h.miss_count;
        } else {
            h.sum[static_cast<std::size_t>(b)] += residuals[i];
            ++h.count[static_cast<std::size_t>(b)];
        }
    }
    const SplitResult r = gbrt_detail::scan_histogram(h, fb.thresholds, min_leaf);
    if (!r.valid) throw NoValidSplit("best_split: no admissible split");
    return r;
}

struct TreeNode {
    bool leaf = true;
    double value = 0.0;
    std::size_t feature = 0;
    double threshold = 0.0;
    bool missing_left = false;
    int left = -1, right = -1;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> x_with_nan) const {
        int id = 0;
        while (!nodes[static_cast<std::size_t>(id)].leaf) {
            const TreeNode& n = nodes[static_cast<std::size_t>(id)];
            const double v = x_with_nan[n.feature];
            const bool go_left = std::isnan(v) ? n.missing_left : v <= n.threshold;
            id = go_left ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(id)].value;
    }
};

struct GbrtModel {
    double base = 0.0;
    double learning_rate = 0.1;
    std::vector<Tree> trees;
    GbrtConfig config;

    double predict(std::span<const double> x_with_nan) const {
        double p = base;
        for (const auto& t : trees) p += learning_rate * t.predict(x_with_nan);
        return p;
    }
};

namespace gbrt_detail {

struct Candidate {
    double gain;
    std::size_t order; // creation index, for deterministic ties
    int node_id;
    std::size_t feature;
    SplitResult split;
    std::vector<std::size_t> rows;
    std::size_t depth;

    bool operator<(const Candidate& o) const {
        if (gain != o.gain) return gain < o.gain; // max-heap on gain
        return order > o.order;                   // then earliest first
    }
};

/// Best split of a node across all features, using the precomputed bins.
inline bool node_best(const Mat& x, const Vec& residuals,
                      const std::vector<FeatureBins>& bins,
                      const std::vector<std::vector<int>>& row_bins,
                      const std::vector<std::size_t>& rows, std::size_t min_leaf,
                      std::size_t& out_feature, SplitResult& out_split) {
    bool any = false;
    for (std::size_t j = 0; j < x.cols; ++j) {
        BinStats h;
        h.sum.assign(bins[j].n_bins(), 0.0);
        h.count.assign(bins[j].n_bins(), 0);
        for (std::size_t i : rows) {
            const double r = residuals[i];
            h.total_sum += r;
            ++h.total_count;
            const int b = row_bins[j][i];
            if (b < 0) {
                h.miss_sum += r;
                ++h.miss_count;
            } else {
                h.sum[static_cast<std::size_t>(b)] += r;
                ++h.count[static_cast<std::size_t>(b)];
            }
        }
        const SplitResult s = scan_histogram(h, bins[j].thresholds, min_leaf);
        if (s.valid && (!any || s.gain > out_split.gain)) {
            any = true;
            out_feature = j;
            out_split = s;
        }
    }
    return any;
}

inline Tree grow_tree(const Mat& x, const Vec& residuals,
                      const std::vector<FeatureBins>& bins,
                      const std::vector<std::vector<int>>& row_bins,
                      const GbrtConfig& cfg) {
    Tree tree;
    std::vector<std::size_t> all(x.rows);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    auto leaf_value = [&](const std::vector<std::size_t>& rows) {
        double s = 0.0;
        for (std::size_t i : rows) s += residuals[i];
        return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
    };

    tree.nodes.push_back({true, leaf_value(all), 0, 0.0, false, -1, -1});
    std::priority_queue<Candidate> queue;
    std::size_t order = 0;

    auto enqueue = [&](int node_id, std::vector<std::size_t> rows, std::size_t depth) {
        if (rows.size() < 2 * cfg.min_leaf) return;
        if (cfg.max_depth >= 0 && depth >= static_cast<std::size_t>(cfg.max_depth)) return;
        std::size_t feature = 0;
        SplitResult split;
        if (!node_best(x, residuals, bins, row_bins, rows, cfg.min_leaf, feature, split))
            return;
        queue.push({split.gain, order++, node_id, feature, split, std::move(rows), depth});
    };

    enqueue(0, std::move(all), 0);
    std::size_t leaves = 1;
    while (!queue.empty() && leaves < cfg.max_leaf_nodes) {
        Candidate c = std::move(const_cast<Candidate&>(queue.top()));
        queue.pop();
        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t i : c.rows) {
            const double v = x(i, c.feature);
            const bool go_left =
                std::isnan(v) ? c.split.missing_left : v <= c.split.threshold;
            (go_left ? left_rows : right_rows).push_back(i);
        }
        const std::size_t id = static_cast<std::size_t>(c.node_id);
        const int left_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({true, leaf_value(left_rows), 0, 0.0, false, -1, -1});
        const int right_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({true, leaf_value(right_rows), 0, 0.0, false, -1, -1});
        tree.nodes[id].leaf = false;
        tree.nodes[id].feature = c.feature;
        tree.nodes[id].threshold = c.split.threshold;
        tree.nodes[id].missing_left = c.split.missing_left;
        tree.nodes[id].left = left_id;
        tree.nodes[id].right = right_id;
        ++leaves;
        enqueue(left_id, std::move(left_rows), c.depth + 1);
        enqueue(right_id, std::move(right_rows), c.depth + 1);
    }
    return tree;
}

} // namespace gbrt_detail

/// Squared-loss boosting on residuals with MIA splits throughout.
inline GbrtModel fit_gbrt(const Mat& x_with_nan, const Vec& y, const GbrtConfig& cfg = {}) {
    const std::size_t n = x_with_nan.rows, d = x_with_nan.cols;
    if (y.size() != n) throw DimensionMismatch("fit_gbrt: y length");
    if (n < 2 * cfg.min_leaf) throw Error("fit_gbrt: too few rows");

    GbrtModel model;
    model.learning_rate = cfg.learning_rate;
    model.config = cfg;
    double base = 0.0;
    for (double v : y) base += v;
    model.base = base / static_cast<double>(n);

    std::vector<gbrt_detail::FeatureBins> bins(d);
    std::vector<std::vector<int>> row_bins(d, std::vector<int>(n));
    for (std::size_t j = 0; j < d; ++j) {
        Vec observed;
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isnan(x_with_nan(i, j))) observed.push_back(x_with_nan(i, j));
        std::sort(observed.begin(), observed.end());
        bins[j] = gbrt_detail::FeatureBins::build(std::move(observed), cfg.n_bins);
        for (std::size_t i = 0; i < n; ++i) row_bins[j][i] = bins[j].bin(x_with_nan(i, j));
    }

    Vec pred(n, model.base);
    Vec residuals(n);
    for (std::size_t t = 0; t < cfg.n_trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) residuals[i] = y[i] - pred[i];
        Tree tree = gbrt_detail::grow_tree(x_with_nan, residuals, bins, row_bins, cfg);
        for (std::size_t i = 0; i < n; ++i)
            pred[i] += cfg.learning_rate * tree.predict(x_with_nan.row_span(i));
        model.trees.push_back(std::move(tree));
    }
    return model;
}

inline GbrtModel fit_gbrt(const MaskedDataset& train, const GbrtConfig& cfg = {}) {
    return fit_gbrt(train.learner_matrix(), train.y(), cfg);
}

inline double predict_gbrt(const GbrtModel& model, std::span<const double> x_with_nan) {
    return model.predict(x_with_nan);
}

inline nlohmann::json tree_to_json(const Tree& t) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
        nlohmann::json jn;
        jn["leaf"] = n.leaf;
        if (n.leaf) {
            jn["value"] = n.value;
        } else {
            jn["feature"] = n.feature;
            jn["threshold"] =
                std::isinf(n.threshold) ? nlohmann::json("inf") : nlohmann::json(n.threshold);
            jn["missing_left"] = n.missing_left;
            jn["left"] = n.left;
            jn["right"] = n.right;
        }
        nodes.push_back(jn);
    }
    return nodes;
}

inline nlohmann::json gbrt_to_json(const GbrtModel& m) {
    nlohmann::json j;
    j["base"] = m.base;
    j["learning_rate"] = m.learning_rate;
    j["config"] = {{"n_trees", m.config.n_trees},
                   {"learning_rate", m.config.learning_rate},
                   {"max_depth", m.config.max_depth},
                   {"max_leaf_nodes", m.config.max_leaf_nodes},
                   {"min_leaf", m.config.min_leaf},
                   {"n_bins", m.config.n_bins}};
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : m.trees) trees.push_back(tree_to_json(t));
    j["trees"] = trees;
    return j;
}

inline GbrtModel gbrt_from_json(const nlohmann::json& j) {
    GbrtModel m;
    m.base = j.at("base").get<double>();
    m.learning_rate = j.at("learning_rate").get<double>();
    const auto& c = j.at("config");
    m.config.n_trees = c.at("n_trees").get<std::size_t>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.max_depth = c.at("max_depth").get<int>();
    m.config.max_leaf_nodes = c.at("max_leaf_nodes").get<std::size_t>();
    m.config.min_leaf = c.at("min_leaf").get<std::size_t>();
    m.config.n_bins = c.at("n_bins").get<std::size_t>();
    for (const auto& jt : j.at("trees")) {
        Tree t;
        for (const auto& jn : jt) {
            TreeNode n;
            n.leaf = jn.at("leaf").get<bool>();
            if (n.leaf) {
                n.value = jn.at("value").get<double>();
            } else {
                n.feature = jn.at("feature").get<std::size_t>();
                n.threshold = jn.at("threshold").is_string()
                                  ? std::numeric_limits<double>::infinity()
                                  : jn.at("threshold").get<double>();
                n.missing_left = jn.at("missing_left").get<bool>();
                n.left = jn.at("left").get<int>();
                n.right = jn.at("right").get<int>();
            }
            t.nodes.push_back(n);
        }
        m.trees.push_back(std::move(t));
    }
    return m;
}

} // namespace missbench
