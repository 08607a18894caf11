#pragma once

#include <span>

#include "missbench/errors.hpp"

namespace missbench {

/// R^2 = 1 - sum (y - yhat)^2 / sum (y - ybar)^2.
inline double r2_score(std::span<const double> y_true, std::span<const double> y_pred) {
    if (y_true.size() != y_pred.size() || y_true.size() < 2)
        throw DimensionMismatch("r2_score: need equal lengths >= 2");
    double mean = 0.0;
    for (double v : y_true) mean += v;
    mean /= static_cast<double>(y_true.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        ss_res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
        ss_tot += (y_true[i] - mean) * (y_true[i] - mean);
    }
    if (ss_tot <= 0.0) throw ZeroVariance("r2_score: y_true has zero variance");
    return 1.0 - ss_res / ss_tot;
}

} // namespace missbench
