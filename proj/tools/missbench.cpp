#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "missbench/bench.hpp"

namespace fs = std::filesystem;
using namespace missbench;

namespace {

/// MISSBENCH_SEED overrides the config's seed list (single integer or a
/// comma-separated list).
void apply_seed_env(ExperimentConfig& cfg) {
    const char* env = std::getenv("MISSBENCH_SEED");
    if (!env || !*env) return;
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(env);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) seeds.push_back(std::stoull(tok));
    }
    if (!seeds.empty()) cfg.seeds = std::move(seeds);
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::size_t jobs,
            bool paper_scale) {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) {
            std::fprintf(stderr, "cannot open config: %s\n", config_path.c_str());
            return 1;
        }
        nlohmann::json j;
        in >> j;
        cfg = config_from_json(j);
    }
    if (paper_scale) cfg.apply_paper_scale();
    apply_seed_env(cfg);

    const auto cells = enumerate_cells(cfg);
    std::fprintf(stderr, "running %zu cells (d=%zu, n_train=%zu) with %zu jobs -> %s\n",
                 cells.size(), cfg.d, cfg.n_train, jobs, out_dir.c_str());
    const auto results = run_grid(cfg, out_dir, jobs, /*echo=*/true);

    std::size_t failed = 0;
    for (const auto& r : results)
        if (r.status != "ok") ++failed;
    std::fprintf(stderr, "done: %zu cells, %zu failed; results in %s/results.csv\n",
                 results.size(), failed, out_dir.c_str());
    return 0;
}

int cmd_summarize(const std::string& csv_path, const std::string& svg_dir) {
    const auto parsed = parse_results_csv(csv_path);
    const auto cells = summarize_records(parsed.rows);
    const std::string table = summary_table(cells);
    std::fputs(table.c_str(), stdout);
    const fs::path out_txt = fs::path(csv_path).parent_path() / "summary.txt";
    std::ofstream out(out_txt);
    out << table;
    std::fprintf(stderr, "summary written to %s\n", out_txt.string().c_str());
    if (!svg_dir.empty()) {
        write_svg_boxplots(cells, svg_dir);
        std::fprintf(stderr, "boxplots written to %s\n", svg_dir.c_str());
    }
    return 0;
}

int cmd_verify(const std::string& report_path) {
    nlohmann::json report;
    bool all_ok = true;
    auto line = [&](const char* name, bool ok, const std::string& detail) {
        std::printf("%-52s %s  %s\n", name, ok ? "PASS" : "FAIL", detail.c_str());
        all_ok = all_ok && ok;
    };
    char buf[160];

    // first-order gap bracket, bowl and linear, both mechanisms
    for (Fstar f : {Fstar::bowl, Fstar::linear}) {
        for (Mechanism mech : {Mechanism::mcar, Mechanism::gsm}) {
            DataSpec spec;
            spec.d = 10;
            spec.fstar = f;
            spec.mechanism = mech;
            spec.seed = 5;
            const auto p = make_problem(spec);
            Rng rng(17);
            const auto rep = gap_bracket_check(p, 1000, rng);
            const std::string name =
                std::string("gap bracket ") + to_string(f) + "/" + to_string(mech);
            std::snprintf(buf, sizeof buf, "%zu probes, %zu violations", rep.probes.size(),
                          rep.violations);
            line(name.c_str(), rep.violations == 0, buf);
            report["gap_bracket"][to_string(f)][to_string(mech)] = bound_report_to_json(rep);
        }
    }

    // excess-risk bound over the bowl/linear grid
    for (Fstar f : {Fstar::bowl, Fstar::linear}) {
        for (Corr c : {Corr::high, Corr::low}) {
            for (Mechanism mech : {Mechanism::mcar, Mechanism::gsm}) {
                DataSpec spec;
                spec.d = 10;
                spec.fstar = f;
                spec.corr_level = c;
                spec.mechanism = mech;
                spec.seed = 3;
                const auto p = make_problem(spec);
                Rng rng(11);
                const auto r = excess_risk_bound_check(p, 100000, rng);
                const bool ok = r.mc_excess <= r.bound + 3.0 * r.mc_stderr;
                const std::string name = std::string("excess-risk bound ") + to_string(f) + "/" +
                                         to_string(c) + "/" + to_string(mech);
                std::snprintf(buf, sizeof buf, "excess %.5f (se %.5f) <= bound %.5f",
                              r.mc_excess, r.mc_stderr, r.bound);
                line(name.c_str(), ok, buf);
                report["excess_risk_bound"][to_string(f)][to_string(c)][to_string(mech)] =
                    excess_to_json(r);
            }
        }
    }

    // corrected-imputation identity
    for (double rho : {0.0, 0.3, 0.5, 0.9, 1.0}) {
        const double dev = corrected_imputation_2d(rho);
        std::snprintf(buf, sizeof buf, "max deviation %.2e", dev);
        char rho_str[16];
        std::snprintf(rho_str, sizeof rho_str, "%.2g", rho);
        line(("corrected imputation rho=" + std::string(rho_str)).c_str(), dev < 1e-12, buf);
        report["corrected_imputation"][rho_str] = dev;
    }

    // cubic counterexample: no continuous imputation chains to the Bayes predictor
    {
        Rng rng(7);
        const auto r = cubic_counterexample(2.0, 50, rng, 400000);
        std::snprintf(buf, sizeof buf, "margin %.4f (se %.4f), lookup gap %.1e", r.margin,
                      r.margin_stderr, r.lookup_gap);
        line("cubic impossibility (50-knot PL imputation)",
             r.margin > 5.0 * r.margin_stderr && r.lookup_gap < 1e-9, buf);
        report["cubic_counterexample"] = cubic_gap_to_json(r);
    }

    if (!report_path.empty()) {
        std::ofstream out(report_path);
        out << report.dump(2) << "\n";
        std::fprintf(stderr, "report written to %s\n", report_path.c_str());
    }
    return all_ok ? 0 : 1;
}

int cmd_oracle_check(std::size_t probes, std::size_t samples, std::size_t d) {
    bool all_ok = true;
    for (Fstar f : {Fstar::bowl, Fstar::wave, Fstar::linear}) {
        for (Mechanism mech : {Mechanism::mcar, Mechanism::gsm}) {
            DataSpec spec;
            spec.d = d;
            spec.fstar = f;
            spec.mechanism = mech;
            spec.seed = 41;
            const auto p = make_problem(spec);
            const auto ctx = make_oracle_context(p);
            const auto data = make_dataset(p, probes, "probes");
            std::size_t within = 0;
            for (std::size_t i = 0; i < data.n(); ++i) {
                const double pred =
                    bayes_predict(ctx, data.x_obs_row(i), data.mask_row(i));
                Rng rng(1000 + i);
                const auto mc =
                    mc_bayes(ctx, data.x_obs_row(i), data.mask_row(i), samples, rng);
                if (std::fabs(mc.estimate - pred) <= 3.0 * mc.stderr_ + 1e-6) ++within;
            }
            const double frac =
                static_cast<double>(within) / static_cast<double>(probes);
            const bool ok = frac >= 0.95;
            all_ok = all_ok && ok;
            std::printf("oracle-check %-6s %-4s: %zu/%zu within 3 stderr (%.1f%%)  %s\n",
                        to_string(f), to_string(mech), within, probes, 100.0 * frac,
                        ok ? "PASS" : "FAIL");
        }
    }
    return all_ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"missbench: impute-then-regress benchmarks with missing values"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "results", svg_dir, csv_path;
    std::string report_path = "theory_report.json";
    std::size_t jobs = 2, probes = 200, samples = 200000, d = 10;
    bool paper_scale = false;

    auto* run = app.add_subcommand("run", "run the benchmark grid");
    run->add_option("--config", config_path, "JSON config file");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--jobs", jobs, "parallel cells");
    run->add_flag("--paper-scale", paper_scale, "d=50, n_train=100000, 10 seeds");

    auto* summarize = app.add_subcommand("summarize", "summarize a results.csv");
    summarize->add_option("csv", csv_path, "results.csv path")->required();
    summarize->add_option("--svg", svg_dir, "directory for SVG boxplots");

    auto* verify = app.add_subcommand("verify", "run the analytic-results suite");
    verify->add_option("--report", report_path, "JSON report path");

    auto* oracle = app.add_subcommand("oracle-check", "Bayes predictors vs MC oracle");
    oracle->add_option("--probes", probes, "probes per setting");
    oracle->add_option("--samples", samples, "MC samples per probe");
    oracle->add_option("--dim", d, "problem dimension");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, jobs, paper_scale);
        if (summarize->parsed()) return cmd_summarize(csv_path, svg_dir);
        if (verify->parsed()) return cmd_verify(report_path);
        if (oracle->parsed()) return cmd_oracle_check(probes, samples, d);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
