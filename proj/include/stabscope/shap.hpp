#pragma once

// Model-agnostic Shapley attribution. Coalition values use the interventional
// expectation over a background sample: features outside the coalition are
// replaced by background values and the model re-queried. Two estimators are
// provided — exact enumeration over all coalitions, and the Shapley-kernel
// weighted regression with optional coalition sampling. Both report the base
// value as the mean background prediction, so base + sum(phi) = f(x).

#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stabscope/linalg.hpp"
#include "stabscope/rng.hpp"

namespace stabscope {

using PredictFn = std::function<double(const std::vector<double>&)>;

struct Explanation {
    double base_value = 0.0;
    std::vector<double> phi;
    double fx = 0.0;
    std::vector<double> x;
};

namespace shapdetail {

inline double coalition_value(const PredictFn& f, const std::vector<double>& x,
                              const std::vector<std::vector<double>>& background,
                              std::uint64_t mask) {
    const std::size_t m = x.size();
    std::vector<double> z(m);
    double acc = 0.0;
    for (const auto& b : background) {
        for (std::size_t i = 0; i < m; ++i) z[i] = (mask >> i) & 1ULL ? x[i] : b[i];
        acc += f(z);
    }
    return acc / static_cast<double>(background.size());
}

inline double binomial(std::size_t n, std::size_t k) {
    double r = 1.0;
    for (std::size_t i = 0; i < k; ++i) r = r * static_cast<double>(n - i) / static_cast<double>(i + 1);
    return r;
}

// Coalitions with arbitrarily many features: packed bit words, usable as map
// keys through lexicographic ordering.
struct Coalition {
    std::vector<std::uint64_t> words;

    explicit Coalition(std::size_t m = 0) : words((m + 63) / 64, 0) {}
    void set(std::size_t i) { words[i / 64] |= 1ULL << (i % 64); }
    bool test(std::size_t i) const { return (words[i / 64] >> (i % 64)) & 1ULL; }
    void flip_all(std::size_t m) {
        for (std::size_t i = 0; i < words.size(); ++i) words[i] = ~words[i];
        const std::size_t tail = m % 64;
        if (tail) words.back() &= (1ULL << tail) - 1ULL;
    }
    bool operator<(const Coalition& o) const { return words < o.words; }
};

inline double coalition_value(const PredictFn& f, const std::vector<double>& x,
                              const std::vector<std::vector<double>>& background,
                              const Coalition& mask) {
    const std::size_t m = x.size();
    std::vector<double> z(m);
    double acc = 0.0;
    for (const auto& b : background) {
        for (std::size_t i = 0; i < m; ++i) z[i] = mask.test(i) ? x[i] : b[i];
        acc += f(z);
    }
    return acc / static_cast<double>(background.size());
}

} // namespace shapdetail

// Exact Shapley values by enumerating all 2^M coalitions. Guarded to small M;
// larger feature counts go through kernel_shap.
inline Explanation shapley_exact(const PredictFn& f, const std::vector<double>& x,
                                 const std::vector<std::vector<double>>& background,
                                 std::size_t max_features = 15) {
    const std::size_t m = x.size();
    if (m > max_features)
        throw std::invalid_argument("shapley_exact: too many features (" + std::to_string(m) +
                                    " > " + std::to_string(max_features) + "); use kernel_shap");
    if (background.empty()) throw std::invalid_argument("shapley_exact: empty background");

    const std::uint64_t n_masks = 1ULL << m;
    std::vector<double> v(n_masks);
    for (std::uint64_t mask = 0; mask < n_masks; ++mask)
        v[mask] = shapdetail::coalition_value(f, x, background, mask);

    std::vector<double> fact(m + 1, 1.0);
    for (std::size_t i = 1; i <= m; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);

    Explanation ex;
    ex.x = x;
    ex.base_value = v[0];
    ex.fx = v[n_masks - 1];
    ex.phi.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::uint64_t bit = 1ULL << i;
        for (std::uint64_t mask = 0; mask < n_masks; ++mask) {
            if (mask & bit) continue;
            const std::size_t s = static_cast<std::size_t>(std::popcount(mask));
            const double w = fact[s] * fact[m - s - 1] / fact[m];
            ex.phi[i] += w * (v[mask | bit] - v[mask]);
        }
    }
    return ex;
}

struct KernelShapConfig {
    // 0 means full enumeration; guarded so 2^M stays tractable.
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    std::size_t full_enumeration_limit = 1ULL << 18;
};

// Shapley-kernel weighted least squares over feature coalitions, constrained
// so the attributions sum exactly to f(x) - base. With every coalition
// enumerated the solution coincides with exact Shapley values.
inline Explanation kernel_shap(const PredictFn& f, const std::vector<double>& x,
                               const std::vector<std::vector<double>>& background,
                               const KernelShapConfig& cfg = {}) {
    const std::size_t m = x.size();
    if (background.empty()) throw std::invalid_argument("kernel_shap: empty background");
    if (m == 0) throw std::invalid_argument("kernel_shap: no features");

    using shapdetail::Coalition;
    const Coalition empty_mask(m);
    Coalition full_mask(m);
    full_mask.flip_all(m);

    Explanation ex;
    ex.x = x;
    ex.base_value = shapdetail::coalition_value(f, x, background, empty_mask);
    ex.fx = shapdetail::coalition_value(f, x, background, full_mask);
    ex.phi.assign(m, 0.0);
    if (m == 1) {
        ex.phi[0] = ex.fx - ex.base_value;
        return ex;
    }

    const bool tractable = m < 60 && (1ULL << m) <= cfg.full_enumeration_limit;
    const std::uint64_t total_masks = tractable ? (1ULL << m) - 2 : 0;
    const bool full = (cfg.budget == 0 || (tractable && cfg.budget >= total_masks));
    if (cfg.budget == 0 && !tractable)
        throw std::invalid_argument("kernel_shap: 2^M too large for full enumeration; set a budget");
    if (!full && cfg.budget < m + 2)
        throw std::invalid_argument("kernel_shap: budget too small; need at least M + 2 = " +
                                    std::to_string(m + 2) + " coalitions");

    auto kernel_weight = [&](std::size_t s) {
        return (static_cast<double>(m) - 1.0) /
               (shapdetail::binomial(m, s) * static_cast<double>(s) * static_cast<double>(m - s));
    };

    // coalition -> accumulated regression weight
    std::map<Coalition, double> coalitions;
    if (full) {
        for (std::uint64_t bits = 1; bits < (1ULL << m) - 1ULL; ++bits) {
            Coalition mask(m);
            mask.words[0] = bits;
            coalitions[mask] = kernel_weight(static_cast<std::size_t>(std::popcount(bits)));
        }
    } else {
        // Outside-in size groups: fully enumerate a (s, M-s) pair when the
        // budget covers it, sample the rest proportionally to kernel mass.
        const std::size_t half = m / 2;
        std::vector<double> group_mass(half + 1, 0.0);
        for (std::size_t s = 1; s <= half; ++s) {
            const double per = (static_cast<double>(m) - 1.0) /
                               (static_cast<double>(s) * static_cast<double>(m - s));
            group_mass[s] = (s == m - s) ? per : 2.0 * per;
        }
        std::size_t budget_left = cfg.budget;
        std::vector<bool> enumerated(half + 1, false);
        Rng rng = make_rng(cfg.seed);

        if (budget_left < 2 * m) {
            // Too tight to cover the outermost paired group: seed the design
            // with singleton coalitions (they alone make the regression
            // identifiable), then complements while the budget lasts.
            enumerated[1] = true;
            const double w1 = kernel_weight(1);
            for (std::size_t i = 0; i < m && budget_left > 0; ++i, --budget_left) {
                Coalition mask(m);
                mask.set(i);
                coalitions[mask] += w1;
            }
            if (m > 2)
                for (std::size_t i = 0; i < m && budget_left > 0; ++i, --budget_left) {
                    Coalition mask(m);
                    mask.set(i);
                    mask.flip_all(m);
                    coalitions[mask] += w1;
                }
        }

        for (std::size_t s = 1; s <= half; ++s) {
            if (enumerated[s]) continue;
            double count = shapdetail::binomial(m, s);
            if (s != m - s) count *= 2.0;
            if (count > static_cast<double>(budget_left))
                break; // groups grow toward the middle; nothing further fits
            enumerated[s] = true;
            budget_left -= static_cast<std::size_t>(count);
            const double w_exact_s = kernel_weight(s);
            std::vector<std::size_t> pick(s);
            for (std::size_t i = 0; i < s; ++i) pick[i] = i;
            while (true) {
                Coalition mask(m);
                for (std::size_t i : pick) mask.set(i);
                coalitions[mask] += w_exact_s;
                if (s != m - s) {
                    Coalition comp = mask;
                    comp.flip_all(m);
                    coalitions[comp] += w_exact_s;
                }
                std::size_t i = s;
                while (i > 0 && pick[i - 1] == m - s + i - 1) --i;
                if (i == 0) break;
                ++pick[i - 1];
                for (std::size_t j = i; j < s; ++j) pick[j] = pick[j - 1] + 1;
            }
        }

        double leftover_mass = 0.0;
        std::vector<std::size_t> open_sizes;
        for (std::size_t s = 1; s <= half; ++s)
            if (!enumerated[s]) {
                leftover_mass += group_mass[s];
                open_sizes.push_back(s);
            }
        if (!open_sizes.empty() && budget_left > 1) {
            std::vector<double> cum;
            double acc = 0.0;
            for (std::size_t s : open_sizes) {
                acc += group_mass[s];
                cum.push_back(acc);
            }
            std::map<Coalition, double> sampled; // coalition -> draw count
            std::size_t n_drawn = 0;
            std::vector<std::size_t> items(m);
            while (budget_left >= 2) {
                const double u = uniform_real(rng) * acc;
                std::size_t gi = 0;
                while (gi + 1 < cum.size() && u > cum[gi]) ++gi;
                const std::size_t s = open_sizes[gi];
                for (std::size_t i = 0; i < m; ++i) items[i] = i;
                shuffle_inplace(items, rng);
                Coalition mask(m);
                for (std::size_t i = 0; i < s; ++i) mask.set(items[i]);
                Coalition comp = mask;
                comp.flip_all(m);
                sampled[mask] += 1.0;
                sampled[comp] += 1.0; // paired complement
                n_drawn += 2;
                budget_left -= 2;
            }
            for (const auto& [mask, count] : sampled)
                coalitions[mask] += leftover_mass * count / static_cast<double>(n_drawn);
        }
    }

    // Weighted regression with phi_{m-1} eliminated through the sum constraint.
    const std::size_t p = m - 1;
    RealMatrix ata(p, p);
    std::vector<double> atb(p, 0.0);
    const double fx_delta = ex.fx - ex.base_value;
    std::vector<double> arow(p);
    for (const auto& [mask, w] : coalitions) {
        const double v = shapdetail::coalition_value(f, x, background, mask);
        const double z_last = mask.test(m - 1) ? 1.0 : 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            const double zi = mask.test(i) ? 1.0 : 0.0;
            arow[i] = zi - z_last;
        }
        const double b = v - ex.base_value - fx_delta * z_last;
        for (std::size_t i = 0; i < p; ++i) {
            if (arow[i] == 0.0) continue;
            atb[i] += w * arow[i] * b;
            for (std::size_t j = 0; j < p; ++j) ata(i, j) += w * arow[i] * arow[j];
        }
    }
    std::vector<double> phi_head;
    try {
        phi_head = solve(ata, atb);
    } catch (const std::runtime_error&) {
        throw std::runtime_error("kernel_shap: rank-deficient coalition design; increase the budget (need at least M + 2 = " +
                                 std::to_string(m + 2) + ")");
    }
    double tail = fx_delta;
    for (std::size_t i = 0; i < p; ++i) {
        ex.phi[i] = phi_head[i];
        tail -= phi_head[i];
    }
    ex.phi[m - 1] = tail;
    return ex;
}

// --- global explanations ---------------------------------------------------

struct ExplainerConfig {
    enum class Method { Exact, Kernel } method = Method::Kernel;
    KernelShapConfig kernel;
    std::size_t background_max = 0; // 0 = use the full background set
    std::uint64_t seed = 0;
};

struct GlobalShap {
    RealMatrix values; // rows = explained points, cols = features
    double base_value = 0.0;
};

inline std::vector<std::vector<double>> subsample_background(
    const std::vector<std::vector<double>>& background, std::size_t max_rows, std::uint64_t seed) {
    if (max_rows == 0 || background.size() <= max_rows) return background;
    Rng rng = make_rng(seed);
    auto perm = random_permutation(background.size(), rng);
    std::vector<std::vector<double>> out;
    out.reserve(max_rows);
    perm.resize(max_rows);
    std::sort(perm.begin(), perm.end());
    for (std::size_t i : perm) out.push_back(background[i]);
    return out;
}

inline Explanation explain_one(const PredictFn& f, const std::vector<double>& x,
                               const std::vector<std::vector<double>>& background,
                               const ExplainerConfig& cfg) {
    if (cfg.method == ExplainerConfig::Method::Exact) return shapley_exact(f, x, background);
    KernelShapConfig k = cfg.kernel;
    k.seed = cfg.kernel.seed == 0 ? cfg.seed : cfg.kernel.seed;
    return kernel_shap(f, x, background, k);
}

// One row of SHAP values per row of X (Fig.-5-style 2D matrix for one model).
inline GlobalShap explain_global(const PredictFn& f, const std::vector<std::vector<double>>& x,
                                 const std::vector<std::vector<double>>& background,
                                 const ExplainerConfig& cfg = {}) {
    if (x.empty()) throw std::invalid_argument("explain_global: empty X");
    const auto bg = subsample_background(background, cfg.background_max, derive_seed(cfg.seed, "background"));
    GlobalShap g;
    g.values = RealMatrix(x.size(), x[0].size());
    for (std::size_t r = 0; r < x.size(); ++r) {
        Explanation ex;
        try {
            ex = explain_one(f, x[r], bg, cfg);
        } catch (const std::exception& e) {
            throw std::runtime_error("explain_global: row " + std::to_string(r) + ": " + e.what());
        }
        if (r == 0) g.base_value = ex.base_value;
        for (std::size_t c = 0; c < ex.phi.size(); ++c) g.values(r, c) = ex.phi[c];
    }
    return g;
}

// Per-location stack of global SHAP matrices over a shared scenario set.
struct ShapCube {
    std::vector<std::string> locations; // target names, cct_min last
    std::vector<int> scenario_ids;
    std::vector<std::string> feature_names;
    std::vector<RealMatrix> values; // one scenarios x features matrix per location
    std::vector<double> base_values;

    std::size_t location_index(const std::string& name) const {
        for (std::size_t i = 0; i < locations.size(); ++i)
            if (locations[i] == name) return i;
        throw std::runtime_error("shap cube: unknown location '" + name + "'");
    }

    std::vector<double> feature_column(const std::string& location, std::size_t feature) const {
        const auto& mat = values[location_index(location)];
        std::vector<double> col(mat.rows());
        for (std::size_t r = 0; r < mat.rows(); ++r) col[r] = mat(r, feature);
        return col;
    }
};

// Explains the same X under every location-specific model. Models must share
// the feature schema; location order is preserved from `locations`.
inline ShapCube explain_all_locations(const std::vector<std::string>& locations,
                                      const std::vector<PredictFn>& models,
                                      const std::vector<std::vector<double>>& x,
                                      const std::vector<int>& scenario_ids,
                                      const std::vector<std::string>& feature_names,
                                      const std::vector<std::vector<double>>& background,
                                      const ExplainerConfig& cfg = {}) {
    if (locations.size() != models.size())
        throw std::invalid_argument("explain_all_locations: locations/models size mismatch");
    for (const auto& row : x)
        if (row.size() != feature_names.size())
            throw std::invalid_argument("explain_all_locations: X does not match the feature schema");
    ShapCube cube;
    cube.locations = locations;
    cube.scenario_ids = scenario_ids;
    cube.feature_names = feature_names;
    for (std::size_t l = 0; l < models.size(); ++l) {
        const GlobalShap g = explain_global(models[l], x, background, cfg);
        cube.values.push_back(g.values);
        cube.base_values.push_back(g.base_value);
    }
    return cube;
}

// --- plot-data extraction ----------------------------------------------------

struct SummaryEntry {
    std::string feature;
    double mean_abs_phi = 0.0;
    std::vector<double> phi;    // per scenario
    std::vector<double> value;  // per scenario, raw feature values
};

// Top-k features by mean |phi|; ties resolve to schema order.
inline std::vector<SummaryEntry> summary_data(const RealMatrix& shap, const std::vector<std::vector<double>>& x,
                                              const std::vector<std::string>& feature_names, std::size_t top_k) {
    const std::size_t m = shap.cols();
    if (top_k > m) throw std::invalid_argument("summary_data: top_k exceeds feature count");
    std::vector<std::pair<double, std::size_t>> ranked;
    for (std::size_t c = 0; c < m; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < shap.rows(); ++r) acc += std::fabs(shap(r, c));
        ranked.emplace_back(acc / static_cast<double>(shap.rows()), c);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first > b.first; // stable sort keeps schema order on ties
    });
    std::vector<SummaryEntry> out;
    for (std::size_t k = 0; k < top_k; ++k) {
        SummaryEntry e;
        e.feature = feature_names[ranked[k].second];
        e.mean_abs_phi = ranked[k].first;
        for (std::size_t r = 0; r < shap.rows(); ++r) {
            e.phi.push_back(shap(r, ranked[k].second));
            e.value.push_back(x[r][ranked[k].second]);
        }
        out.push_back(std::move(e));
    }
    return out;
}

struct DependenceRecord {
    double x_value = 0.0;
    double phi = 0.0;
    double color_value = 0.0;
};

// One record per scenario, no aggregation: the vertical spread at a given
// x carries the interaction information.
inline std::vector<DependenceRecord> dependence_data(const RealMatrix& shap,
                                                     const std::vector<std::vector<double>>& x,
                                                     const std::vector<std::string>& feature_names,
                                                     const std::string& primary_voi,
                                                     const std::string& color_voi) {
    auto index_of = [&](const std::string& name) {
        for (std::size_t i = 0; i < feature_names.size(); ++i)
            if (feature_names[i] == name) return i;
        throw std::runtime_error("dependence_data: unknown feature '" + name + "'");
    };
    const std::size_t pi = index_of(primary_voi);
    const std::size_t ci = index_of(color_voi);
    std::vector<DependenceRecord> out;
    out.reserve(x.size());
    for (std::size_t r = 0; r < x.size(); ++r)
        out.push_back({x[r][pi], shap(r, pi), x[r][ci]});
    return out;
}

} // namespace stabscope
