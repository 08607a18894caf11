#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "missbench/gaussian.hpp"

namespace missbench {

enum class Corr { high, low };
enum class Fstar { bowl, wave, linear };
enum class Mechanism { mcar, gsm };

inline const char* to_string(Corr c) { return c == Corr::high ? "high" : "low"; }
inline const char* to_string(Fstar f) {
    switch (f) {
        case Fstar::bowl: return "bowl";
        case Fstar::wave: return "wave";
        default: return "linear";
    }
}
inline const char* to_string(Mechanism m) { return m == Mechanism::mcar ? "mcar" : "gsm"; }

/// One synthetic regression problem: Gaussian covariates with a factor
/// covariance, a ridge-function response at fixed SNR, and a missingness
/// mechanism. High correlation corresponds to the low factor rank.
struct DataSpec {
    std::size_t d = 10;
    Corr corr_level = Corr::high;
    Fstar fstar = Fstar::bowl;
    Mechanism mechanism = Mechanism::mcar;
    double missing_rate = 0.5;
    double snr = 10.0;
    std::uint64_t seed = 0;

    std::size_t q() const {
        const double f = corr_level == Corr::high ? 0.3 : 0.7;
        auto r = static_cast<std::size_t>(f * static_cast<double>(d));
        return std::max<std::size_t>(r, 1);
    }
};

/// f*(x) = g(beta^T x + beta0) for g in {bowl, wave, linear}; beta is scaled
/// so that var(beta^T X) = 1 and beta0 centers z = beta^T X + beta0 at 1.
struct RidgeFunctionSpec {
    Fstar kind = Fstar::bowl;
    Vec beta;
    double beta0 = 0.0;
    double gamma = 0.0;
    std::vector<std::pair<double, double>> bumps; // (a_i, b_i)
};

/// Rows of (values, mask, response). The full value matrix is carried so that
/// oracle predictors can be scored, but learners must go through
/// learner_matrix()/observed(), which only expose unmasked entries.
class MaskedDataset {
public:
    MaskedDataset() = default;
    MaskedDataset(Mat values, std::vector<std::uint8_t> mask, Vec y)
        : values_(std::move(values)), mask_(std::move(mask)), y_(std::move(y)) {
        if (mask_.size() != values_.rows * values_.cols || y_.size() != values_.rows)
            throw DimensionMismatch("MaskedDataset: shape mismatch");
    }

    std::size_t n() const { return values_.rows; }
    std::size_t d() const { return values_.cols; }

    bool missing(std::size_t i, std::size_t j) const { return mask_[i * d() + j] != 0; }

    /// Observed entry accessor; throws on masked entries so learner code
    /// cannot silently read ground truth.
    double observed(std::size_t i, std::size_t j) const {
        if (missing(i, j)) throw Error("MaskedDataset: entry is masked");
        return values_(i, j);
    }

    /// Learner view: observed values with NaN at masked entries.
    Mat learner_matrix() const {
        Mat m = values_;
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = 0; j < m.cols; ++j)
                if (missing(i, j)) m(i, j) = std::numeric_limits<double>::quiet_NaN();
        return m;
    }

    Mask mask_row(std::size_t i) const {
        return Mask(mask_.begin() + static_cast<long>(i * d()),
                    mask_.begin() + static_cast<long>((i + 1) * d()));
    }

    /// Observed values of row i in ascending coordinate order.
    Vec x_obs_row(std::size_t i) const {
        Vec v;
        for (std::size_t j = 0; j < d(); ++j)
            if (!missing(i, j)) v.push_back(values_(i, j));
        return v;
    }

    const Vec& y() const { return y_; }
    const std::vector<std::uint8_t>& mask_flat() const { return mask_; }

    /// Privileged view of the complete matrix; for oracle predictors and
    /// imputation-error measurement only.
    const Mat& ground_truth() const { return values_; }

    /// Privileged mutation of a masked entry (metamorphic tests).
    void set_hidden_value(std::size_t i, std::size_t j, double v) {
        if (!missing(i, j)) throw Error("MaskedDataset: entry is observed");
        values_(i, j) = v;
    }

private:
    Mat values_;
    std::vector<std::uint8_t> mask_;
    Vec y_;
};

/// Sigma = B B^T + D with B (d x q) standard normal and
/// D_jj = 0.01 (B B^T)_jj + 1e-6; mu drawn from N(0, I).
inline GaussianModel make_model(const DataSpec& spec, Rng& rng) {
    const std::size_t d = spec.d, q = spec.q();
    Vec mu(d);
    for (auto& v : mu) v = rng.normal();
    Mat b(d, q);
    for (auto& v : b.a) v = rng.normal();
    Mat sigma(d, d);
    mm_nt_acc(b.a.data(), b.a.data(), sigma.a.data(), d, q, d);
    symmetrize(sigma);
    for (std::size_t j = 0; j < d; ++j) sigma(j, j) += 0.01 * sigma(j, j) + 1e-6;
    return GaussianModel::create(std::move(mu), std::move(sigma));
}

/// beta = ones / sqrt(1^T Sigma 1), beta0 = 1 - beta^T mu, so that
/// z = beta^T X + beta0 is N(1, 1). Wave uses the fixed bump set.
inline RidgeFunctionSpec make_fstar(const DataSpec& spec, const GaussianModel& model) {
    const std::size_t d = model.dim();
    double s11 = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) s11 += model.sigma()(i, j);
    if (s11 <= 0.0)
        throw DegenerateVariance("make_fstar: 1^T Sigma 1 = " + std::to_string(s11));
    RidgeFunctionSpec f;
    f.kind = spec.fstar;
    f.beta.assign(d, 1.0 / std::sqrt(s11));
    double bm = 0.0;
    for (std::size_t j = 0; j < d; ++j) bm += f.beta[j] * model.mu()[j];
    f.beta0 = 1.0 - bm;
    if (spec.fstar == Fstar::wave) {
        f.gamma = 20.0 * std::sqrt(M_PI / 8.0);
        f.bumps = {{2.0, -0.8}, {-4.0, -1.0}, {2.0, -1.2}};
    }
    return f;
}

/// Ridge response evaluated at the projection z = beta^T x + beta0:
/// bowl (z-1)^2, wave (z-1) + sum a_i Phi(gamma (z+b_i)), linear z-1.
inline double eval_fstar_at_z(const RidgeFunctionSpec& f, double z) {
    switch (f.kind) {
        case Fstar::bowl:
            return (z - 1.0) * (z - 1.0);
        case Fstar::wave: {
            double v = z - 1.0;
            for (const auto& [a, b] : f.bumps) v += a * std_normal_cdf(f.gamma * (z + b));
            return v;
        }
        default:
            return z - 1.0;
    }
}

inline double eval_fstar(const RidgeFunctionSpec& f, std::span<const double> x) {
    if (x.size() != f.beta.size()) throw DimensionMismatch("eval_fstar: x length");
    return eval_fstar_at_z(f, dot(f.beta, x) + f.beta0);
}

/// y = f*(x) + eps with eps ~ N(0, var_hat(f*(X)) / snr); var_hat is the
/// empirical variance over the rows actually generated.
inline Vec gen_response(const Mat& x, const RidgeFunctionSpec& f, double snr, Rng& rng) {
    if (snr <= 0.0) throw Error("gen_response: snr must be positive");
    const std::size_t n = x.rows;
    Vec fx(n);
    for (std::size_t i = 0; i < n; ++i) fx[i] = eval_fstar(f, x.row_span(i));
    double mean = 0.0;
    for (double v : fx) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : fx) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var / snr);
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng row = rng.derive(i);
        y[i] = fx[i] + sd * row.normal();
    }
    return y;
}

/// Entry-independent missingness flags at the given rate.
inline std::vector<std::uint8_t> mask_mcar(std::size_t n, std::size_t d, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw Error("mask_mcar: rate must be in [0,1)");
    std::vector<std::uint8_t> m(n * d, 0);
    for (std::size_t i = 0; i < n; ++i) {
        Rng row = rng.derive(i);
        for (std::size_t j = 0; j < d; ++j) m[i * d + j] = row.bernoulli(rate) ? 1 : 0;
    }
    return m;
}

/// Self-masking parameters with mu_tilde_j = mu_j + sigma_j and
/// sigma_tilde_j = sigma_j; K_j solves the marginal-rate equation
///   K sigma_tilde / sqrt(sigma_tilde^2 + sigma_j^2)
///     * exp(-(mu_j - mu_tilde_j)^2 / (2 (sigma_tilde^2 + sigma_j^2))) = rate.
inline GsmParams calibrate_gsm(const GaussianModel& model, double rate) {
    const std::size_t d = model.dim();
    GsmParams p;
    p.mu_tilde.resize(d);
    p.sigma_tilde_sq.resize(d);
    p.k.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double var = model.sigma()(j, j);
        const double sd = std::sqrt(var);
        p.mu_tilde[j] = model.mu()[j] + sd;
        p.sigma_tilde_sq[j] = var;
        const double denom_var = p.sigma_tilde_sq[j] + var;
        const double attenuation = std::sqrt(p.sigma_tilde_sq[j] / denom_var) *
                                   std::exp(-var / (2.0 * denom_var));
        const double k = rate / attenuation;
        if (k > 1.0)
            throw UnreachableRate("calibrate_gsm: feature " + std::to_string(j) +
                                  " needs K = " + std::to_string(k));
        p.k[j] = k;
    }
    return p;
}

/// Entry (i,j) missing with probability
/// K_j exp(-(x_ij - mu_tilde_j)^2 / (2 sigma_tilde_sq_j)), independent given X.
inline std::vector<std::uint8_t> mask_gsm(const Mat& x, const GsmParams& p, Rng& rng) {
    const std::size_t n = x.rows, d = x.cols;
    if (p.k.size() != d) throw DimensionMismatch("mask_gsm: params dim");
    std::vector<std::uint8_t> m(n * d, 0);
    for (std::size_t i = 0; i < n; ++i) {
        Rng row = rng.derive(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dev = x(i, j) - p.mu_tilde[j];
            const double prob = p.k[j] * std::exp(-dev * dev / (2.0 * p.sigma_tilde_sq[j]));
            m[i * d + j] = row.bernoulli(prob) ? 1 : 0;
        }
    }
    return m;
}

/// A generated problem instance: the model, the response spec, the calibrated
/// mechanism, and one masked dataset per requested split size.
struct SynthProblem {
    DataSpec spec;
    GaussianModel model;
    RidgeFunctionSpec fstar;
    std::optional<GsmParams> gsm;
};

inline SynthProblem make_problem(const DataSpec& spec) {
    Rng root(spec.seed);
    Rng model_rng = root.derive("model");
    SynthProblem p;
    p.spec = spec;
    p.model = make_model(spec, model_rng);
    p.fstar = make_fstar(spec, p.model);
    if (spec.mechanism == Mechanism::gsm)
        p.gsm = calibrate_gsm(p.model, spec.missing_rate);
    return p;
}

/// Draws one split. Splits are identified by name ("train", "val", "test",
/// ...) so different splits of one seed never share a stream.
inline MaskedDataset make_dataset(const SynthProblem& p, std::size_t n, std::string_view split) {
    Rng root(p.spec.seed);
    Rng split_rng = root.derive(split);
    Rng x_rng = split_rng.derive("x");
    Rng noise_rng = split_rng.derive("noise");
    Rng mask_rng = split_rng.derive("mask");

    const std::size_t d = p.spec.d;
    Mat x(n, d);
    Vec z(d);
    const Mat& l = p.model.chol();
    for (std::size_t i = 0; i < n; ++i) {
        Rng row = x_rng.derive(i);
        for (std::size_t j = 0; j < d; ++j) z[j] = row.normal();
        double* out = x.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            double s = p.model.mu()[j];
            const double* lj = l.row(j);
            for (std::size_t k = 0; k <= j; ++k) s += lj[k] * z[k];
            out[j] = s;
        }
    }
    Vec y = gen_response(x, p.fstar, p.spec.snr, noise_rng);
    std::vector<std::uint8_t> mask =
        p.spec.mechanism == Mechanism::mcar
            ? mask_mcar(n, d, p.spec.missing_rate, mask_rng)
            : mask_gsm(x, *p.gsm, mask_rng);
    return MaskedDataset(std::move(x), std::move(mask), std::move(y));
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// CSV export: x0..x{d-1} (missing entries empty), m0..m{d-1}, y.
inline void export_csv(const MaskedDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("export_csv: cannot open " + path);
    const std::size_t d = data.d();
    for (std::size_t j = 0; j < d; ++j) out << "x" << j << ",";
    for (std::size_t j = 0; j < d; ++j) out << "m" << j << ",";
    out << "y\n";
    for (std::size_t i = 0; i < data.n(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (!data.missing(i, j)) out << fmt_double(data.observed(i, j));
            out << ",";
        }
        for (std::size_t j = 0; j < d; ++j) out << (data.missing(i, j) ? 1 : 0) << ",";
        out << fmt_double(data.y()[i]) << "\n";
    }
}

inline nlohmann::json spec_to_json(const DataSpec& s) {
    return {{"d", s.d},
            {"corr_level", to_string(s.corr_level)},
            {"fstar", to_string(s.fstar)},
            {"mechanism", to_string(s.mechanism)},
            {"missing_rate", s.missing_rate},
            {"snr", s.snr},
            {"seed", s.seed}};
}

inline nlohmann::json mat_to_json(const Mat& m) {
    return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.a}};
}

inline Mat mat_from_json(const nlohmann::json& j) {
    Mat m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.a = j.at("data").get<std::vector<double>>();
    if (m.a.size() != m.rows * m.cols) throw Error("mat_from_json: bad payload");
    return m;
}

inline DataSpec spec_from_json(const nlohmann::json& j) {
    DataSpec s;
    s.d = j.at("d").get<std::size_t>();
    const std::string corr = j.at("corr_level").get<std::string>();
    s.corr_level = corr == "high" ? Corr::high : Corr::low;
    const std::string f = j.at("fstar").get<std::string>();
    s.fstar = f == "bowl" ? Fstar::bowl : (f == "wave" ? Fstar::wave : Fstar::linear);
    s.mechanism =
        j.at("mechanism").get<std::string>() == "mcar" ? Mechanism::mcar : Mechanism::gsm;
    s.missing_rate = j.at("missing_rate").get<double>();
    s.snr = j.at("snr").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

/// JSON sidecar with the DataSpec and generating model, so oracles can be
/// rebuilt against an exported CSV.
inline void export_sidecar(const SynthProblem& p, const std::string& path) {
    nlohmann::json j;
    j["spec"] = spec_to_json(p.spec);
    j["model"] = {{"mu", p.model.mu()}, {"sigma", mat_to_json(p.model.sigma())}};
    if (p.gsm)
        j["gsm"] = {{"mu_tilde", p.gsm->mu_tilde},
                    {"sigma_tilde_sq", p.gsm->sigma_tilde_sq},
                    {"k", p.gsm->k}};
    std::ofstream out(path);
    if (!out) throw Error("export_sidecar: cannot open " + path);
    out << j.dump(2) << "\n";
}

/// Rebuild a problem (model, response spec, mechanism) from a sidecar, so
/// oracle predictors can be evaluated against a previously exported dataset.
inline SynthProblem import_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("import_sidecar: cannot open " + path);
    nlohmann::json j;
    in >> j;
    SynthProblem p;
    p.spec = spec_from_json(j.at("spec"));
    p.model = GaussianModel::create(j.at("model").at("mu").get<Vec>(),
                                    mat_from_json(j.at("model").at("sigma")));
    p.fstar = make_fstar(p.spec, p.model);
    if (j.contains("gsm")) {
        GsmParams g;
        g.mu_tilde = j["gsm"].at("mu_tilde").get<Vec>();
        g.sigma_tilde_sq = j["gsm"].at("sigma_tilde_sq").get<Vec>();
        g.k = j["gsm"].at("k").get<Vec>();
        p.gsm = std::move(g);
    }
    return p;
}

} // namespace missbench
