#pragma once

// Locational trend identification: sample covariance between a variable of
// interest and its SHAP column in every location-specific model. The sign
// tells whether raising the variable moves the local stability limit up or
// down; magnitudes carry s * [voi unit] and are only comparable per VOI.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "stabscope/shap.hpp"
#include "stabscope/tsdb.hpp"

namespace stabscope {

// Sample covariance with the N-1 divisor.
inline double covariance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("covariance: length mismatch");
    if (a.size() < 2) throw std::invalid_argument("covariance: need at least 2 samples");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
    ma /= n;
    mb /= n;
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - ma) * (b[i] - mb);
    return acc / (n - 1.0);
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double cov = covariance(a, b);
    const double sa = std::sqrt(covariance(a, a));
    const double sb = std::sqrt(covariance(b, b));
    if (sa == 0.0 || sb == 0.0) return 0.0;
    return cov / (sa * sb);
}

struct TrendReport {
    std::string voi;
    std::vector<std::string> locations;
    std::vector<double> covariances;
    std::vector<double> correlations; // secondary, unit-free
    std::size_t samples = 0;
};

inline TrendReport voi_trend(const ShapCube& cube, const TSDb& db, const std::string& voi) {
    if (cube.scenario_ids != db.scenario_ids)
        throw std::invalid_argument("voi_trend: cube and database rows are misaligned");
    const std::size_t feature = db.schema.index(voi);
    const std::vector<double> actual = db.feature_column(voi);

    TrendReport report;
    report.voi = voi;
    report.samples = actual.size();
    for (const auto& loc : cube.locations) {
        const auto shap_col = cube.feature_column(loc, feature);
        report.locations.push_back(loc);
        report.covariances.push_back(covariance(actual, shap_col));
        report.correlations.push_back(correlation(actual, shap_col));
    }
    return report;
}

inline CsvTable trend_report_table(const TrendReport& report) {
    CsvTable t;
    t.header = {"location", "covariance", "correlation"};
    for (std::size_t i = 0; i < report.locations.size(); ++i)
        t.rows.push_back({report.locations[i], format_double(report.covariances[i]),
                          format_double(report.correlations[i])});
    return t;
}

} // namespace stabscope
