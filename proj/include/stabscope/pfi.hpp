#pragma once

// Permutation feature importance: score drop when one feature column of the
// test copy is shuffled, averaged over K seeded repeats. Kept as the
// benchmark technique against SHAP; it ranks features but carries no effect
// direction or units.

#include <cstdint>
#include <functional>
#include <vector>

#include "stabscope/metrics.hpp"
#include "stabscope/rng.hpp"
#include "stabscope/shap.hpp"

namespace stabscope {

using ScoreFn = std::function<double(const std::vector<double>& y, const std::vector<double>& yhat)>;

inline double rsq_score(const std::vector<double>& y, const std::vector<double>& yhat) {
    return r_squared(y, yhat);
}

struct PfiReport {
    std::vector<double> importance; // per feature
    double reference_score = 0.0;
    std::size_t repeats = 0;
    std::uint64_t seed = 0;
};

inline std::uint64_t pfi_repeat_seed(std::uint64_t seed, std::size_t k) {
    return derive_seed(seed, static_cast<std::uint64_t>(k));
}

// Explicit-seed variant: one permutation stream per repeat. importance is
// accumulated as the mean of (reference - permuted) differences so a feature
// the model never reads comes out exactly zero.
inline PfiReport pfi_with_repeat_seeds(const PredictFn& f, const std::vector<std::vector<double>>& x,
                                       const std::vector<double>& y,
                                       const std::vector<std::uint64_t>& repeat_seeds,
                                       const ScoreFn& score = rsq_score) {
    if (x.empty() || repeat_seeds.empty()) throw std::invalid_argument("pfi: empty input");
    const std::size_t n = x.size();
    const std::size_t m = x[0].size();

    std::vector<double> yhat(n);
    for (std::size_t i = 0; i < n; ++i) yhat[i] = f(x[i]);
    PfiReport report;
    report.reference_score = score(y, yhat);
    report.repeats = repeat_seeds.size();
    report.importance.assign(m, 0.0);

    std::vector<std::vector<double>> corrupted(x);
    for (std::size_t feat = 0; feat < m; ++feat) {
        double acc = 0.0;
        for (std::size_t k = 0; k < repeat_seeds.size(); ++k) {
            Rng rng = make_rng(derive_seed(repeat_seeds[k], static_cast<std::uint64_t>(feat)));
            const auto perm = random_permutation(n, rng);
            for (std::size_t i = 0; i < n; ++i) corrupted[i][feat] = x[perm[i]][feat];
            for (std::size_t i = 0; i < n; ++i) yhat[i] = f(corrupted[i]);
            acc += report.reference_score - score(y, yhat);
        }
        for (std::size_t i = 0; i < n; ++i) corrupted[i][feat] = x[i][feat];
        report.importance[feat] = acc / static_cast<double>(repeat_seeds.size());
    }
    return report;
}

inline PfiReport pfi(const PredictFn& f, const std::vector<std::vector<double>>& x,
                     const std::vector<double>& y, std::size_t repeats, std::uint64_t seed,
                     const ScoreFn& score = rsq_score) {
    if (repeats < 1) throw std::invalid_argument("pfi: repeats must be >= 1");
    std::vector<std::uint64_t> seeds;
    for (std::size_t k = 0; k < repeats; ++k) seeds.push_back(pfi_repeat_seed(seed, k));
    PfiReport report = pfi_with_repeat_seeds(f, x, y, seeds, score);
    report.seed = seed;
    return report;
}

} // namespace stabscope
