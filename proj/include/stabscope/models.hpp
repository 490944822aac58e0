#pragma once

// Regressor facade over the four algorithms plus seeded train/test splitting
// and JSON model files. A zero-variance target short-circuits every algorithm
// to a flagged constant model.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "stabscope/metrics.hpp"
#include "stabscope/mlp.hpp"
#include "stabscope/tree.hpp"

namespace stabscope {

enum class Algorithm { Cart, RandomForest, GradientBoosting, Mlp };

inline std::string algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::Cart: return "cart";
        case Algorithm::RandomForest: return "random_forest";
        case Algorithm::GradientBoosting: return "gradient_boosting";
        case Algorithm::Mlp: return "mlp";
    }
    return "?";
}

inline Algorithm algorithm_from_name(const std::string& s) {
    if (s == "cart") return Algorithm::Cart;
    if (s == "random_forest") return Algorithm::RandomForest;
    if (s == "gradient_boosting") return Algorithm::GradientBoosting;
    if (s == "mlp") return Algorithm::Mlp;
    throw std::runtime_error("unknown algorithm '" + s + "'");
}

struct Hyperparameters {
    TreeGrowParams cart{12, 5, -1};
    ForestParams forest{200, 12, 5};
    BoostParams boost{500, 4, 5, 0.05};
    MlpParams mlp{};
};

struct Regressor {
    Algorithm algorithm = Algorithm::Cart;
    std::uint64_t seed = 0;
    std::uint64_t schema_hash = 0;
    std::size_t n_features = 0;
    std::string target;
    Hyperparameters hyper;
    std::optional<double> constant; // degenerate-target fallback
    std::vector<std::string> warnings;
    std::variant<RegressionTree, RandomForest, GradientBoosting, Mlp> model;

    double predict(const std::vector<double>& x) const {
        if (x.size() != n_features)
            throw std::invalid_argument("predict: feature vector length " + std::to_string(x.size()) +
                                        " does not match the trained schema (" +
                                        std::to_string(n_features) + ")");
        if (constant) return *constant;
        return std::visit([&](const auto& m) { return m.predict(x); }, model);
    }
};

struct DataSplit {
    std::vector<std::size_t> train_idx;
    std::vector<std::size_t> test_idx;
};

// Seeded permutation split; train and test are disjoint by construction.
inline DataSplit make_split(std::size_t n, double test_fraction, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    const auto perm = random_permutation(n, rng);
    const std::size_t n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));
    DataSplit sp;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < n_test) sp.test_idx.push_back(perm[i]);
        else sp.train_idx.push_back(perm[i]);
    }
    std::sort(sp.train_idx.begin(), sp.train_idx.end());
    std::sort(sp.test_idx.begin(), sp.test_idx.end());
    return sp;
}

inline Regressor train(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                       Algorithm algo, const Hyperparameters& hyper, std::uint64_t seed,
                       std::string target_name = {}, std::uint64_t schema_hash = 0) {
    if (x.size() != y.size() || x.empty()) throw std::invalid_argument("train: bad input sizes");
    Regressor r;
    r.algorithm = algo;
    r.seed = seed;
    r.schema_hash = schema_hash;
    r.n_features = x[0].size();
    r.target = std::move(target_name);
    r.hyper = hyper;

    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    if (var == 0.0) {
        r.constant = mean;
        r.warnings.push_back("degenerate target (zero variance); constant model");
        return r;
    }

    switch (algo) {
        case Algorithm::Cart: {
            std::vector<std::size_t> all(x.size());
            std::iota(all.begin(), all.end(), 0);
            r.model = fit_tree(x, y, all, hyper.cart);
            break;
        }
        case Algorithm::RandomForest:
            r.model = fit_forest(x, y, hyper.forest, seed);
            break;
        case Algorithm::GradientBoosting:
            r.model = fit_boosting(x, y, hyper.boost);
            break;
        case Algorithm::Mlp:
            r.model = fit_mlp(x, y, hyper.mlp, seed);
            break;
    }
    return r;
}

inline Metrics evaluate(const Regressor& model, const std::vector<std::vector<double>>& x,
                        const std::vector<double>& y) {
    std::vector<double> yhat(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) yhat[i] = model.predict(x[i]);
    return compute_metrics(y, yhat);
}

// --- model files ---------------------------------------------------------

namespace modeldetail {

inline nlohmann::ordered_json tree_to_json(const RegressionTree& t) {
    nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
    for (const auto& n : t.nodes)
        nodes.push_back({n.feature, n.threshold, n.value, n.left, n.right});
    return nodes;
}

inline RegressionTree tree_from_json(const nlohmann::json& j) {
    RegressionTree t;
    for (const auto& jn : j) {
        TreeNode n;
        n.feature = jn[0].get<int>();
        n.threshold = jn[1].get<double>();
        n.value = jn[2].get<double>();
        n.left = jn[3].get<int>();
        n.right = jn[4].get<int>();
        t.nodes.push_back(n);
    }
    return t;
}

} // namespace modeldetail

inline nlohmann::ordered_json regressor_to_json(const Regressor& r) {
    nlohmann::ordered_json j;
    j["algorithm"] = algorithm_name(r.algorithm);
    j["seed"] = r.seed;
    j["schema_hash"] = r.schema_hash;
    j["n_features"] = r.n_features;
    j["target"] = r.target;
    j["hyperparameters"] = {
        {"cart", {{"max_depth", r.hyper.cart.max_depth}, {"min_leaf", r.hyper.cart.min_leaf}}},
        {"forest", {{"n_trees", r.hyper.forest.n_trees}, {"max_depth", r.hyper.forest.max_depth}, {"min_leaf", r.hyper.forest.min_leaf}}},
        {"boost", {{"n_trees", r.hyper.boost.n_trees}, {"max_depth", r.hyper.boost.max_depth}, {"min_leaf", r.hyper.boost.min_leaf}, {"learning_rate", r.hyper.boost.learning_rate}}},
        {"mlp", {{"hidden", r.hyper.mlp.hidden}, {"learning_rate", r.hyper.mlp.learning_rate}, {"momentum", r.hyper.mlp.momentum}, {"epochs", r.hyper.mlp.epochs}}},
    };
    if (!r.warnings.empty()) j["warnings"] = r.warnings;
    if (r.constant) {
        j["constant"] = *r.constant;
        return j;
    }
    switch (r.algorithm) {
        case Algorithm::Cart:
            j["tree"] = modeldetail::tree_to_json(std::get<RegressionTree>(r.model));
            break;
        case Algorithm::RandomForest: {
            nlohmann::ordered_json trees = nlohmann::ordered_json::array();
            for (const auto& t : std::get<RandomForest>(r.model).trees)
                trees.push_back(modeldetail::tree_to_json(t));
            j["trees"] = trees;
            break;
        }
        case Algorithm::GradientBoosting: {
            const auto& g = std::get<GradientBoosting>(r.model);
            j["init"] = g.init;
            j["learning_rate"] = g.learning_rate;
            nlohmann::ordered_json trees = nlohmann::ordered_json::array();
            for (const auto& t : g.trees) trees.push_back(modeldetail::tree_to_json(t));
            j["trees"] = trees;
            break;
        }
        case Algorithm::Mlp: {
            const auto& net = std::get<Mlp>(r.model);
            j["layer_sizes"] = net.layer_sizes;
            j["weights"] = net.w;
            j["biases"] = net.bias;
            j["feature_mean"] = net.feature_mean;
            j["feature_std"] = net.feature_std;
            break;
        }
    }
    return j;
}

inline Regressor regressor_from_json(const nlohmann::json& j) {
    Regressor r;
    r.algorithm = algorithm_from_name(j.at("algorithm").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.schema_hash = j.at("schema_hash").get<std::uint64_t>();
    r.n_features = j.at("n_features").get<std::size_t>();
    r.target = j.value("target", std::string{});
    if (j.contains("hyperparameters")) {
        const auto& h = j["hyperparameters"];
        r.hyper.cart.max_depth = h.at("cart").at("max_depth").get<int>();
        r.hyper.cart.min_leaf = h.at("cart").at("min_leaf").get<int>();
        r.hyper.forest.n_trees = h.at("forest").at("n_trees").get<int>();
        r.hyper.forest.max_depth = h.at("forest").at("max_depth").get<int>();
        r.hyper.forest.min_leaf = h.at("forest").at("min_leaf").get<int>();
        r.hyper.boost.n_trees = h.at("boost").at("n_trees").get<int>();
        r.hyper.boost.max_depth = h.at("boost").at("max_depth").get<int>();
        r.hyper.boost.min_leaf = h.at("boost").at("min_leaf").get<int>();
        r.hyper.boost.learning_rate = h.at("boost").at("learning_rate").get<double>();
        r.hyper.mlp.hidden = h.at("mlp").at("hidden").get<std::vector<int>>();
        r.hyper.mlp.learning_rate = h.at("mlp").at("learning_rate").get<double>();
        r.hyper.mlp.momentum = h.at("mlp").at("momentum").get<double>();
        r.hyper.mlp.epochs = h.at("mlp").at("epochs").get<int>();
    }
    if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("constant")) {
        r.constant = j.at("constant").get<double>();
        return r;
    }
    switch (r.algorithm) {
        case Algorithm::Cart:
            r.model = modeldetail::tree_from_json(j.at("tree"));
            break;
        case Algorithm::RandomForest: {
            RandomForest f;
            for (const auto& jt : j.at("trees")) f.trees.push_back(modeldetail::tree_from_json(jt));
            r.model = std::move(f);
            break;
        }
        case Algorithm::GradientBoosting: {
            GradientBoosting g;
            g.init = j.at("init").get<double>();
            g.learning_rate = j.at("learning_rate").get<double>();
            for (const auto& jt : j.at("trees")) g.trees.push_back(modeldetail::tree_from_json(jt));
            r.model = std::move(g);
            break;
        }
        case Algorithm::Mlp: {
            Mlp net;
            net.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
            net.w = j.at("weights").get<std::vector<std::vector<double>>>();
            net.bias = j.at("biases").get<std::vector<std::vector<double>>>();
            net.feature_mean = j.at("feature_mean").get<std::vector<double>>();
            net.feature_std = j.at("feature_std").get<std::vector<double>>();
            r.model = std::move(net);
            break;
        }
    }
    return r;
}

} // namespace stabscope
