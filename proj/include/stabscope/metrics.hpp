#pragma once

// Regression quality metrics. Besides the usual RSQ/MSE/RMSE, the maximum
// over- and under-estimation errors are tracked separately (an over-estimated
// clearing limit is a security risk, an under-estimate a cost), overall and
// restricted to critical faults (actual CCT below 0.30 s).

#include <cmath>
#include <stdexcept>
#include <vector>

namespace stabscope {

struct Metrics {
    double rsq = 0.0;
    double mse = 0.0;          // s^2
    double rmse = 0.0;         // s
    double moe = 0.0;          // s, max over-estimation
    double mue = 0.0;          // s, max under-estimation
    double moe_critical = 0.0; // s, over rows with actual < critical_threshold
    double mue_critical = 0.0;
    std::size_t n = 0;
    std::size_t n_critical = 0;
};

constexpr double kCriticalCctThreshold = 0.30; // s

inline double r_squared(const std::vector<double>& y, const std::vector<double>& yhat) {
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
    return 1.0 - ss_res / ss_tot;
}

inline Metrics compute_metrics(const std::vector<double>& y, const std::vector<double>& yhat,
                               double critical_threshold = kCriticalCctThreshold) {
    if (y.empty() || y.size() != yhat.size())
        throw std::invalid_argument("compute_metrics: bad input sizes");
    Metrics m;
    m.n = y.size();
    double ss_res = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double err = yhat[i] - y[i];
        ss_res += err * err;
        if (err > 0.0) m.moe = std::max(m.moe, err);
        if (err < 0.0) m.mue = std::max(m.mue, -err);
        if (y[i] < critical_threshold) {
            ++m.n_critical;
            if (err > 0.0) m.moe_critical = std::max(m.moe_critical, err);
            if (err < 0.0) m.mue_critical = std::max(m.mue_critical, -err);
        }
    }
    m.mse = ss_res / static_cast<double>(y.size());
    m.rmse = std::sqrt(m.mse);
    m.rsq = r_squared(y, yhat);
    return m;
}

} // namespace stabscope
