#pragma once

// Algorithm selection ladder: walk the algorithms in increasing complexity,
// train one model per target (every fault location plus the minimum-CCT
// model), and stop at the first tier whose worst-case over- and under-
// estimation errors both clear the accuracy threshold.

#include <map>
#include <string>
#include <vector>

#include "stabscope/models.hpp"
#include "stabscope/tsdb.hpp"

namespace stabscope {

struct TierReport {
    Algorithm algorithm = Algorithm::Cart;
    double avg_rsq = 0.0;
    double avg_mse = 0.0;
    double avg_rmse = 0.0;
    double max_moe = 0.0;
    double max_mue = 0.0;
    double max_moe_critical = 0.0;
    double max_mue_critical = 0.0;
    bool passed = false;
    std::map<std::string, Metrics> per_target;
};

struct SelectionConfig {
    std::vector<Algorithm> ladder{Algorithm::Cart, Algorithm::RandomForest,
                                  Algorithm::GradientBoosting, Algorithm::Mlp};
    double threshold = 0.02; // s, on worst MOE and worst MUE
    double test_fraction = 0.2;
    Hyperparameters hyper;
};

struct SelectionResult {
    std::vector<TierReport> tiers; // evaluated tiers, ladder order
    int selected_tier = -1;        // index into `tiers`
    bool threshold_met = false;
    std::map<std::string, Regressor> models; // selected tier, keyed by target
    DataSplit split;
};

namespace selectiondetail {

inline void gather(const TSDb& db, const std::vector<std::size_t>& idx,
                   const std::string& target, std::vector<std::vector<double>>& x,
                   std::vector<double>& y) {
    x.clear();
    y.clear();
    const auto& t = db.target(target);
    for (std::size_t i : idx) {
        x.push_back(db.x[i]);
        y.push_back(t[i]);
    }
}

} // namespace selectiondetail

inline SelectionResult select_algorithm(const TSDb& db, const SelectionConfig& cfg, std::uint64_t seed) {
    if (db.rows() < 20) throw std::invalid_argument("select_algorithm: fewer than 20 rows");
    SelectionResult out;
    out.split = make_split(db.rows(), cfg.test_fraction, derive_seed(seed, "split"));

    std::vector<std::map<std::string, Regressor>> tier_models;
    std::vector<std::vector<double>> x_train, x_test;
    std::vector<double> y_train, y_test;

    for (const Algorithm algo : cfg.ladder) {
        TierReport tier;
        tier.algorithm = algo;
        std::map<std::string, Regressor> models;
        for (const auto& target : db.target_names) {
            selectiondetail::gather(db, out.split.train_idx, target, x_train, y_train);
            selectiondetail::gather(db, out.split.test_idx, target, x_test, y_test);
            const std::uint64_t model_seed = derive_seed(seed, algorithm_name(algo) + ":" + target);
            Regressor model = train(x_train, y_train, algo, cfg.hyper, model_seed, target, db.schema.hash());
            const Metrics m = evaluate(model, x_test, y_test);
            tier.avg_rsq += m.rsq;
            tier.avg_mse += m.mse;
            tier.avg_rmse += m.rmse;
            tier.max_moe = std::max(tier.max_moe, m.moe);
            tier.max_mue = std::max(tier.max_mue, m.mue);
            tier.max_moe_critical = std::max(tier.max_moe_critical, m.moe_critical);
            tier.max_mue_critical = std::max(tier.max_mue_critical, m.mue_critical);
            tier.per_target[target] = m;
            models[target] = std::move(model);
        }
        const double k = static_cast<double>(db.target_names.size());
        tier.avg_rsq /= k;
        tier.avg_mse /= k;
        tier.avg_rmse /= k;
        tier.passed = tier.max_moe < cfg.threshold && tier.max_mue < cfg.threshold;
        out.tiers.push_back(tier);
        tier_models.push_back(std::move(models));
        if (tier.passed) {
            out.selected_tier = static_cast<int>(out.tiers.size()) - 1;
            out.threshold_met = true;
            break;
        }
    }

    if (!out.threshold_met) {
        // Ladder exhausted: fall back to the tier with the smallest worst-case
        // error, flagged for the caller.
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < out.tiers.size(); ++i) {
            const double worst = std::max(out.tiers[i].max_moe, out.tiers[i].max_mue);
            if (worst < best) {
                best = worst;
                out.selected_tier = static_cast<int>(i);
            }
        }
    }
    out.models = std::move(tier_models[static_cast<std::size_t>(out.selected_tier)]);
    return out;
}

// Table-style report: one metric per row, one evaluated tier per column.
inline CsvTable selection_report_table(const SelectionResult& sel) {
    CsvTable t;
    t.header.push_back("metric");
    for (const auto& tier : sel.tiers) t.header.push_back(algorithm_name(tier.algorithm));
    auto row = [&](const std::string& name, auto getter) {
        std::vector<std::string> r{name};
        for (const auto& tier : sel.tiers) r.push_back(format_double(getter(tier)));
        t.rows.push_back(std::move(r));
    };
    row("avg_rsq", [](const TierReport& r) { return r.avg_rsq; });
    row("avg_mse_s2", [](const TierReport& r) { return r.avg_mse; });
    row("avg_rmse_s", [](const TierReport& r) { return r.avg_rmse; });
    row("max_moe_s", [](const TierReport& r) { return r.max_moe; });
    row("max_mue_s", [](const TierReport& r) { return r.max_mue; });
    row("max_moe_critical_s", [](const TierReport& r) { return r.max_moe_critical; });
    row("max_mue_critical_s", [](const TierReport& r) { return r.max_mue_critical; });
    std::vector<std::string> passed{"passed_threshold"};
    for (const auto& tier : sel.tiers) passed.push_back(tier.passed ? "yes" : "no");
    t.rows.push_back(std::move(passed));
    return t;
}

} // namespace stabscope
