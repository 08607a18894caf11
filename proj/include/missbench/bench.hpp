#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "missbench/gbrt.hpp"
#include "missbench/imputers.hpp"
#include "missbench/metrics.hpp"
#include "missbench/neumiss.hpp"
#include "missbench/oracles.hpp"
#include "missbench/theory.hpp"
#include "missbench/train.hpp"

namespace missbench {

enum class Method {
    bayes,
    chained_oracle,
    oracle_mlp,
    mean_mlp,
    mean_mask_mlp,
    mice_mlp,
    mice_mask_mlp,
    gbrt,
    neumiss_mlp,
};

inline const char* to_string(Method m) {
    switch (m) {
        case Method::bayes: return "bayes";
        case Method::chained_oracle: return "chained_oracle";
        case Method::oracle_mlp: return "oracle_mlp";
        case Method::mean_mlp: return "mean_mlp";
        case Method::mean_mask_mlp: return "mean_mask_mlp";
        case Method::mice_mlp: return "mice_mlp";
        case Method::mice_mask_mlp: return "mice_mask_mlp";
        case Method::gbrt: return "gbrt";
        default: return "neumiss_mlp";
    }
}

inline Method method_from_string(const std::string& s) {
    for (Method m : {Method::bayes, Method::chained_oracle, Method::oracle_mlp,
                     Method::mean_mlp, Method::mean_mask_mlp, Method::mice_mlp,
                     Method::mice_mask_mlp, Method::gbrt, Method::neumiss_mlp})
        if (s == to_string(m)) return m;
    throw Error("unknown method: " + s);
}

inline Corr corr_from_string(const std::string& s) {
    if (s == "high") return Corr::high;
    if (s == "low") return Corr::low;
    throw Error("unknown correlation level: " + s);
}

inline Fstar fstar_from_string(const std::string& s) {
    if (s == "bowl") return Fstar::bowl;
    if (s == "wave") return Fstar::wave;
    if (s == "linear") return Fstar::linear;
    throw Error("unknown fstar: " + s);
}

inline Mechanism mechanism_from_string(const std::string& s) {
    if (s == "mcar") return Mechanism::mcar;
    if (s == "gsm") return Mechanism::gsm;
    throw Error("unknown mechanism: " + s);
}

/// Full grid description. Defaults are the desk-scale setup; --paper-scale
/// switches to the d=50 configuration.
struct ExperimentConfig {
    std::size_t d = 10;
    std::size_t n_train = 20000;
    std::size_t n_val = 5000;
    std::size_t n_test = 5000;
    double missing_rate = 0.5;
    double snr = 10.0;
    std::vector<Corr> corr_levels = {Corr::high, Corr::low};
    std::vector<Fstar> fstars = {Fstar::bowl, Fstar::wave};
    std::vector<Mechanism> mechanisms = {Mechanism::mcar, Mechanism::gsm};
    std::vector<Method> methods = {Method::bayes,       Method::chained_oracle,
                                   Method::oracle_mlp,  Method::mean_mlp,
                                   Method::mean_mask_mlp, Method::mice_mlp,
                                   Method::mice_mask_mlp, Method::gbrt,
                                   Method::neumiss_mlp};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    TrainConfig train;
    std::vector<std::size_t> neumiss_depths = {5, 15};
    std::vector<MlpSpec> mlp_candidates = {{0, 100}, {1, 100}, {2, 100}};

    void apply_paper_scale() {
        d = 50;
        n_train = 100000;
        n_val = 10000;
        n_test = 10000;
        seeds.clear();
        for (std::uint64_t s = 1; s <= 10; ++s) seeds.push_back(s);
    }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["d"] = c.d;
    j["n_train"] = c.n_train;
    j["n_val"] = c.n_val;
    j["n_test"] = c.n_test;
    j["missing_rate"] = c.missing_rate;
    j["snr"] = c.snr;
    auto names = [](const auto& xs) {
        std::vector<std::string> out;
        for (const auto& x : xs) out.push_back(to_string(x));
        return out;
    };
    j["corr_levels"] = names(c.corr_levels);
    j["fstars"] = names(c.fstars);
    j["mechanisms"] = names(c.mechanisms);
    j["methods"] = names(c.methods);
    j["seeds"] = c.seeds;
    j["train"] = {{"lr0", c.train.lr0},
                  {"lr_drop_factor", c.train.lr_drop_factor},
                  {"lr_patience", c.train.lr_patience},
                  {"lr_min_delta", c.train.lr_min_delta},
                  {"es_patience", c.train.es_patience},
                  {"es_min_delta", c.train.es_min_delta},
                  {"batch_size", c.train.batch_size},
                  {"max_epochs", c.train.max_epochs}};
    j["neumiss_depths"] = c.neumiss_depths;
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& m : c.mlp_candidates)
        cands.push_back({{"hidden_layers", m.hidden_layers}, {"width", m.width}});
    j["mlp_candidates"] = cands;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("d")) c.d = j["d"].get<std::size_t>();
    if (j.contains("n_train")) c.n_train = j["n_train"].get<std::size_t>();
    if (j.contains("n_val")) c.n_val = j["n_val"].get<std::size_t>();
    if (j.contains("n_test")) c.n_test = j["n_test"].get<std::size_t>();
    if (j.contains("missing_rate")) c.missing_rate = j["missing_rate"].get<double>();
    if (j.contains("snr")) c.snr = j["snr"].get<double>();
    if (j.contains("corr_levels")) {
        c.corr_levels.clear();
        for (const auto& s : j["corr_levels"]) c.corr_levels.push_back(corr_from_string(s));
    }
    if (j.contains("fstars")) {
        c.fstars.clear();
        for (const auto& s : j["fstars"]) c.fstars.push_back(fstar_from_string(s));
    }
    if (j.contains("mechanisms")) {
        c.mechanisms.clear();
        for (const auto& s : j["mechanisms"])
            c.mechanisms.push_back(mechanism_from_string(s));
    }
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& s : j["methods"]) c.methods.push_back(method_from_string(s));
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("train")) {
        const auto& t = j["train"];
        if (t.contains("lr0")) c.train.lr0 = t["lr0"].get<double>();
        if (t.contains("lr_drop_factor"))
            c.train.lr_drop_factor = t["lr_drop_factor"].get<double>();
        if (t.contains("lr_patience")) c.train.lr_patience = t["lr_patience"].get<std::size_t>();
        if (t.contains("lr_min_delta")) c.train.lr_min_delta = t["lr_min_delta"].get<double>();
        if (t.contains("es_patience")) c.train.es_patience = t["es_patience"].get<std::size_t>();
        if (t.contains("es_min_delta")) c.train.es_min_delta = t["es_min_delta"].get<double>();
        if (t.contains("batch_size")) c.train.batch_size = t["batch_size"].get<std::size_t>();
        if (t.contains("max_epochs")) c.train.max_epochs = t["max_epochs"].get<std::size_t>();
    }
    if (j.contains("neumiss_depths"))
        c.neumiss_depths = j["neumiss_depths"].get<std::vector<std::size_t>>();
    if (j.contains("mlp_candidates")) {
        c.mlp_candidates.clear();
        for (const auto& m : j["mlp_candidates"])
            c.mlp_candidates.push_back(
                {m["hidden_layers"].get<std::size_t>(), m["width"].get<std::size_t>()});
    }
    return c;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
    return fnv1a(config_to_json(c).dump());
}

struct ResultRecord {
    Method method = Method::bayes;
    Corr corr = Corr::high;
    Fstar fstar = Fstar::bowl;
    Mechanism mechanism = Mechanism::mcar;
    std::uint64_t seed = 0;
    double r2 = std::numeric_limits<double>::quiet_NaN();
    double r2_bayes = std::numeric_limits<double>::quiet_NaN();
    double delta = std::numeric_limits<double>::quiet_NaN();
    double wall_time = 0.0;
    std::string status = "ok";
    std::uint64_t config_hash = 0;
};

// ---------------------------------------------------------------------------
// Predictor pipelines: one tagged union with a uniform predict-on-masked-row
// interface (rows are values-with-NaN).
// ---------------------------------------------------------------------------

struct BayesOraclePipe {
    OracleContext ctx;
};
struct ChainedOraclePipe {
    OracleContext ctx;
};
struct OracleMlpPipe {
    OracleContext ctx;
    MlpParams mlp;
};
struct ImputeMlpPipe {
    FittedImputer imputer;
    bool with_mask = false;
    MlpParams mlp;
};
struct GbrtPipe {
    GbrtModel model;
};
struct NeuMissPipe {
    TrainedNeuMiss model;
};

using PredictorPipeline = std::variant<BayesOraclePipe, ChainedOraclePipe, OracleMlpPipe,
                                       ImputeMlpPipe, GbrtPipe, NeuMissPipe>;

namespace bench_detail {

inline std::pair<Vec, Mask> split_row(std::span<const double> x_with_nan) {
    Vec x_obs;
    Mask m(x_with_nan.size(), 0);
    for (std::size_t j = 0; j < x_with_nan.size(); ++j) {
        if (std::isnan(x_with_nan[j]))
            m[j] = 1;
        else
            x_obs.push_back(x_with_nan[j]);
    }
    return {std::move(x_obs), std::move(m)};
}

} // namespace bench_detail

inline double pipeline_predict(const PredictorPipeline& pipe,
                               std::span<const double> x_with_nan) {
    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, BayesOraclePipe>) {
                const auto [x_obs, m] = bench_detail::split_row(x_with_nan);
                return bayes_predict(p.ctx, x_obs, m);
            } else if constexpr (std::is_same_v<T, ChainedOraclePipe>) {
                const auto [x_obs, m] = bench_detail::split_row(x_with_nan);
                return chained_oracle_predict(p.ctx, x_obs, m);
            } else if constexpr (std::is_same_v<T, OracleMlpPipe>) {
                const auto [x_obs, m] = bench_detail::split_row(x_with_nan);
                return mlp_forward(p.mlp, oracle_ci_impute(p.ctx, x_obs, m));
            } else if constexpr (std::is_same_v<T, ImputeMlpPipe>) {
                Vec design = transform_row(p.imputer, x_with_nan);
                if (p.with_mask) {
                    design.reserve(2 * x_with_nan.size());
                    for (double v : x_with_nan) design.push_back(std::isnan(v) ? 1.0 : 0.0);
                }
                return mlp_forward(p.mlp, design);
            } else if constexpr (std::is_same_v<T, GbrtPipe>) {
                return p.model.predict(x_with_nan);
            } else {
                return p.model.predict(x_with_nan);
            }
        },
        pipe);
}

namespace bench_detail {

inline SupervisedData plain_data(const Mat& x, const Vec& y) {
    SupervisedData d;
    d.x = x;
    d.y = y;
    return d;
}

/// Oracle-imputed design matrix (conditional means from the true model).
inline Mat oracle_design(const OracleContext& ctx, const MaskedDataset& data) {
    Mat out(data.n(), data.d());
    for (std::size_t i = 0; i < data.n(); ++i) {
        const Vec full = oracle_ci_impute(ctx, data.x_obs_row(i), data.mask_row(i));
        for (std::size_t j = 0; j < data.d(); ++j) out(i, j) = full[j];
    }
    return out;
}

} // namespace bench_detail

/// Trains the pipeline for one method on one problem instance.
inline PredictorPipeline build_pipeline(Method method, const ExperimentConfig& cfg,
                                        const SynthProblem& problem,
                                        const MaskedDataset& train_ds,
                                        const MaskedDataset& val_ds,
                                        const TrainConfig& tcfg) {
    const OracleContext ctx = make_oracle_context(problem);
    switch (method) {
        case Method::bayes:
            return BayesOraclePipe{ctx};
        case Method::chained_oracle:
            return ChainedOraclePipe{ctx};
        case Method::oracle_mlp: {
            const SupervisedData tr =
                bench_detail::plain_data(bench_detail::oracle_design(ctx, train_ds), train_ds.y());
            const SupervisedData va =
                bench_detail::plain_data(bench_detail::oracle_design(ctx, val_ds), val_ds.y());
            const auto sel = select_architecture(cfg.mlp_candidates, tr, va, tcfg);
            return OracleMlpPipe{ctx, sel.best_mlp};
        }
        case Method::mean_mlp:
        case Method::mean_mask_mlp:
        case Method::mice_mlp:
        case Method::mice_mask_mlp: {
            const bool mice = method == Method::mice_mlp || method == Method::mice_mask_mlp;
            const bool with_mask =
                method == Method::mean_mask_mlp || method == Method::mice_mask_mlp;
            FittedImputer imp = mice ? fit_iterative(train_ds) : fit_mean(train_ds);
            Mat tr_x = transform(imp, train_ds);
            Mat va_x = transform(imp, val_ds);
            if (with_mask) {
                tr_x = concat_mask(tr_x, train_ds.mask_flat());
                va_x = concat_mask(va_x, val_ds.mask_flat());
            }
            const SupervisedData tr = bench_detail::plain_data(tr_x, train_ds.y());
            const SupervisedData va = bench_detail::plain_data(va_x, val_ds.y());
            const auto sel = select_architecture(cfg.mlp_candidates, tr, va, tcfg);
            return ImputeMlpPipe{std::move(imp), with_mask, sel.best_mlp};
        }
        case Method::gbrt:
            return GbrtPipe{fit_gbrt(train_ds)};
        case Method::neumiss_mlp: {
            auto model = train_neumiss(train_ds, val_ds, tcfg, cfg.neumiss_depths);
            return NeuMissPipe{std::move(model)};
        }
    }
    throw Error("build_pipeline: unreachable");
}

/// Deterministic per-cell data seed: depends on the experiment seed and the
/// data setting but never on the method, so every method in a cell sees the
/// same masked dataset.
inline std::uint64_t cell_data_seed(std::uint64_t seed, Corr c, Fstar f, Mechanism m) {
    std::string tag = "cell/";
    tag += to_string(c);
    tag += '/';
    tag += to_string(f);
    tag += '/';
    tag += to_string(m);
    std::uint64_t x = fnv1a(tag) ^ (0x9e3779b97f4a7c15ull * (seed + 1));
    return splitmix64(x);
}

inline ResultRecord run_cell(const ExperimentConfig& cfg, Corr corr, Fstar fstar,
                             Mechanism mechanism, Method method, std::uint64_t seed) {
    ResultRecord rec;
    rec.method = method;
    rec.corr = corr;
    rec.fstar = fstar;
    rec.mechanism = mechanism;
    rec.seed = seed;
    rec.config_hash = config_hash(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    try {
        DataSpec spec;
        spec.d = cfg.d;
        spec.corr_level = corr;
        spec.fstar = fstar;
        spec.mechanism = mechanism;
        spec.missing_rate = cfg.missing_rate;
        spec.snr = cfg.snr;
        spec.seed = cell_data_seed(seed, corr, fstar, mechanism);
        const SynthProblem problem = make_problem(spec);
        const MaskedDataset train_ds = make_dataset(problem, cfg.n_train, "train");
        const MaskedDataset val_ds = make_dataset(problem, cfg.n_val, "val");
        const MaskedDataset test_ds = make_dataset(problem, cfg.n_test, "test");

        TrainConfig tcfg = cfg.train;
        tcfg.seed = spec.seed ^ fnv1a(to_string(method));

        const PredictorPipeline pipe =
            build_pipeline(method, cfg, problem, train_ds, val_ds, tcfg);

        const OracleContext ctx = make_oracle_context(problem);
        const Mat test_nan = test_ds.learner_matrix();
        Vec pred(test_ds.n()), bayes(test_ds.n());
        for (std::size_t i = 0; i < test_ds.n(); ++i) {
            pred[i] = pipeline_predict(pipe, test_nan.row_span(i));
            bayes[i] = bayes_predict(ctx, test_ds.x_obs_row(i), test_ds.mask_row(i));
        }
        rec.r2 = r2_score(test_ds.y(), pred);
        rec.r2_bayes = r2_score(test_ds.y(), bayes);
        rec.delta = rec.r2 - rec.r2_bayes;
    } catch (const std::exception& e) {
        rec.status = std::string("failed: ") + e.what();
        for (auto& c : rec.status)
            if (c == ',' || c == '\n') c = ';';
    }
    rec.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

inline std::string record_to_csv(const ResultRecord& r) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%s,%llu,%.12g,%.12g,%.12g,%.3f,%s",
                  to_string(r.method), to_string(r.corr), to_string(r.fstar),
                  to_string(r.mechanism), static_cast<unsigned long long>(r.seed), r.r2,
                  r.r2_bayes, r.delta, r.wall_time, r.status.c_str());
    return buf;
}

inline constexpr const char* kResultsHeader =
    "method,corr,fstar,mechanism,seed,r2,r2_bayes,delta,wall_time,status";

struct GridCell {
    Corr corr;
    Fstar fstar;
    Mechanism mechanism;
    Method method;
    std::uint64_t seed;
};

inline std::vector<GridCell> enumerate_cells(const ExperimentConfig& cfg) {
    std::vector<GridCell> cells;
    for (Corr c : cfg.corr_levels)
        for (Fstar f : cfg.fstars)
            for (Mechanism m : cfg.mechanisms)
                for (Method method : cfg.methods)
                    for (std::uint64_t seed : cfg.seeds)
                        cells.push_back({c, f, m, method, seed});
    return cells;
}

/// Executes the whole grid with a bounded worker pool. One crashing cell
/// becomes a failed row; results are written in deterministic grid order.
inline std::vector<ResultRecord> run_grid(const ExperimentConfig& cfg,
                                          const std::string& out_dir, std::size_t jobs = 2,
                                          bool echo = false) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::vector<GridCell> cells = enumerate_cells(cfg);
    std::vector<ResultRecord> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};

    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) break;
            const GridCell& c = cells[i];
            results[i] = run_cell(cfg, c.corr, c.fstar, c.mechanism, c.method, c.seed);
            const std::size_t k = done.fetch_add(1) + 1;
            if (echo) {
                std::fprintf(stderr, "[%zu/%zu] %s\n", k, cells.size(),
                             record_to_csv(results[i]).c_str());
            }
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n_workers = std::max<std::size_t>(1, jobs);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    std::ofstream csv(out_dir + "/results.csv");
    if (!csv) throw Error("run_grid: cannot open " + out_dir + "/results.csv");
    csv << kResultsHeader << "\n";
    for (const auto& r : results) csv << record_to_csv(r) << "\n";

    nlohmann::json meta;
    meta["config"] = config_to_json(cfg);
    meta["config_hash"] = config_hash(cfg);
    meta["cells"] = cells.size();
    std::ofstream mf(out_dir + "/run_meta.json");
    mf << meta.dump(2) << "\n";
    return results;
}

// ---------------------------------------------------------------------------
// Summaries and SVG boxplots.
// ---------------------------------------------------------------------------

struct CellSummary {
    std::string corr, fstar, mechanism, method;
    std::size_t n = 0;
    double median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0;
};

inline double quantile_sorted(const Vec& sorted, double p) {
    if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

struct ParsedResults {
    std::vector<ResultRecord> rows;
};

inline ParsedResults parse_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("parse_results_csv: cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line != kResultsHeader) throw Error("parse_results_csv: unexpected header");
    ParsedResults out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[10];
        for (auto& s : f) std::getline(ss, s, ',');
        ResultRecord r;
        r.method = method_from_string(f[0]);
        r.corr = corr_from_string(f[1]);
        r.fstar = fstar_from_string(f[2]);
        r.mechanism = mechanism_from_string(f[3]);
        r.seed = std::stoull(f[4]);
        r.r2 = std::stod(f[5]);
        r.r2_bayes = std::stod(f[6]);
        r.delta = std::stod(f[7]);
        r.wall_time = std::stod(f[8]);
        r.status = f[9];
        out.rows.push_back(std::move(r));
    }
    return out;
}

inline std::vector<CellSummary> summarize_records(const std::vector<ResultRecord>& rows) {
    std::map<std::string, std::pair<CellSummary, Vec>> groups;
    for (const auto& r : rows) {
        if (r.status != "ok") continue;
        const std::string key = std::string(to_string(r.corr)) + "," + to_string(r.fstar) +
                                "," + to_string(r.mechanism) + "," + to_string(r.method);
        auto& [summary, deltas] = groups[key];
        summary.corr = to_string(r.corr);
        summary.fstar = to_string(r.fstar);
        summary.mechanism = to_string(r.mechanism);
        summary.method = to_string(r.method);
        deltas.push_back(r.delta);
    }
    std::vector<CellSummary> out;
    for (auto& [key, entry] : groups) {
        auto& [summary, deltas] = entry;
        std::sort(deltas.begin(), deltas.end());
        summary.n = deltas.size();
        summary.median = quantile_sorted(deltas, 0.5);
        summary.q1 = quantile_sorted(deltas, 0.25);
        summary.q3 = quantile_sorted(deltas, 0.75);
        summary.min = deltas.front();
        summary.max = deltas.back();
        out.push_back(summary);
    }
    return out;
}

inline std::string summary_table(const std::vector<CellSummary>& cells) {
    std::string out =
        "corr  fstar   mech  method           n   median       q1           q3\n";
    char buf[200];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof buf, "%-5s %-7s %-5s %-16s %-3zu %-12.5f %-12.5f %-12.5f\n",
                      c.corr.c_str(), c.fstar.c_str(), c.mechanism.c_str(), c.method.c_str(),
                      c.n, c.median, c.q1, c.q3);
        out += buf;
    }
    return out;
}

/// One SVG boxplot panel per (corr, fstar, mechanism); methods on the x-axis,
/// delta distribution in the boxes. Plain SVG, no plotting dependency.
inline void write_svg_boxplots(const std::vector<CellSummary>& cells,
                               const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::map<std::string, std::vector<CellSummary>> panels;
    for (const auto& c : cells)
        panels[c.corr + "_" + c.fstar + "_" + c.mechanism].push_back(c);
    for (const auto& [name, methods] : panels) {
        const double box_w = 60.0, gap = 30.0, left = 70.0, top = 30.0;
        const double plot_h = 320.0;
        const double width = left + (box_w + gap) * static_cast<double>(methods.size()) + 40.0;
        const double height = top + plot_h + 90.0;
        double lo = 0.0, hi = 0.0;
        for (const auto& m : methods) {
            lo = std::min(lo, m.min);
            hi = std::max(hi, m.max);
        }
        const double pad = 0.05 * std::max(hi - lo, 1e-6);
        lo -= pad;
        hi += pad;
        auto ycoord = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

        std::ostringstream svg;
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
            << "\" height=\"" << height << "\">\n";
        svg << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">delta vs Bayes ("
            << name << ")</text>\n";
        // zero line and axis labels
        svg << "<line x1=\"" << left - 10 << "\" y1=\"" << ycoord(0.0) << "\" x2=\""
            << width - 20 << "\" y2=\"" << ycoord(0.0)
            << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
        for (double v : {lo + pad, 0.0, hi - pad}) {
            svg << "<text x=\"4\" y=\"" << ycoord(v) + 4
                << "\" font-size=\"10\">" << fmt_double(std::round(v * 1e4) / 1e4)
                << "</text>\n";
        }
        for (std::size_t i = 0; i < methods.size(); ++i) {
            const auto& m = methods[i];
            const double x0 = left + (box_w + gap) * static_cast<double>(i);
            const double xm = x0 + box_w / 2.0;
            svg << "<line x1=\"" << xm << "\" y1=\"" << ycoord(m.min) << "\" x2=\"" << xm
                << "\" y2=\"" << ycoord(m.max) << "\" stroke=\"black\"/>\n";
            svg << "<rect x=\"" << x0 << "\" y=\"" << ycoord(m.q3) << "\" width=\"" << box_w
                << "\" height=\"" << std::max(1.0, ycoord(m.q1) - ycoord(m.q3))
                << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
            svg << "<line x1=\"" << x0 << "\" y1=\"" << ycoord(m.median) << "\" x2=\""
                << x0 + box_w << "\" y2=\"" << ycoord(m.median)
                << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
            svg << "<text x=\"" << xm << "\" y=\"" << top + plot_h + 16
                << "\" font-size=\"9\" text-anchor=\"middle\" transform=\"rotate(30 " << xm
                << " " << top + plot_h + 16 << ")\">" << m.method << "</text>\n";
        }
        svg << "</svg>\n";
        std::ofstream out(dir + "/" + name + ".svg");
        out << svg.str();
    }
}

} // namespace missbench
