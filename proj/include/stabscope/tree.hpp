#pragma once

// Regression trees and the ensembles built from them: single CART, bagged
// random forest with feature subsampling, and stage-wise gradient boosting
// on squared loss. Everything trains deterministically from an explicit seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "stabscope/rng.hpp"

namespace stabscope {

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    double value = 0.0;
    int left = -1;
    int right = -1;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(const std::vector<double>& x) const {
        int i = 0;
        while (nodes[i].feature >= 0)
            i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
        return nodes[i].value;
    }
};

struct TreeGrowParams {
    int max_depth = 12;
    int min_leaf = 5;
    int features_per_split = -1; // -1 = all features
};

namespace treedetail {

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double sse_gain = 0.0;
};

// Best SSE-reducing split over the candidate features, found by a sorted
// prefix-sum scan per feature. Ties resolve to the lowest feature index and
// then to the smallest threshold, keeping growth order-independent.
inline Split best_split(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                        const std::vector<std::size_t>& idx, const std::vector<int>& features,
                        int min_leaf) {
    Split best;
    const std::size_t n = idx.size();
    double sum = 0.0, sum2 = 0.0;
    for (std::size_t i : idx) { sum += y[i]; sum2 += y[i] * y[i]; }
    const double parent_sse = sum2 - sum * sum / static_cast<double>(n);

    std::vector<std::size_t> order(idx);
    for (int f : features) {
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (x[a][f] != x[b][f]) return x[a][f] < x[b][f];
            return a < b;
        });
        double left_sum = 0.0, left_sum2 = 0.0;
        for (std::size_t pos = 0; pos + 1 < n; ++pos) {
            const double yv = y[order[pos]];
            left_sum += yv;
            left_sum2 += yv * yv;
            const double xv = x[order[pos]][f];
            const double xn = x[order[pos + 1]][f];
            if (xv == xn) continue;
            const std::size_t nl = pos + 1, nr = n - nl;
            if (nl < static_cast<std::size_t>(min_leaf) || nr < static_cast<std::size_t>(min_leaf)) continue;
            const double right_sum = sum - left_sum;
            const double right_sum2 = sum2 - left_sum2;
            const double child_sse = (left_sum2 - left_sum * left_sum / static_cast<double>(nl)) +
                                     (right_sum2 - right_sum * right_sum / static_cast<double>(nr));
            const double gain = parent_sse - child_sse;
            const double threshold = 0.5 * (xv + xn);
            // the midpoint of two adjacent representable values can round up
            // to xn, which would leave the right side empty under <=
            if (!(threshold < xn)) continue;
            if (gain > best.sse_gain + 1e-15) {
                best.feature = f;
                best.threshold = threshold;
                best.sse_gain = gain;
            }
        }
    }
    return best;
}

inline int grow(RegressionTree& tree, const std::vector<std::vector<double>>& x,
                const std::vector<double>& y, std::vector<std::size_t> idx, int depth,
                const TreeGrowParams& params, Rng* feature_rng, int n_features) {
    double mean = 0.0;
    for (std::size_t i : idx) mean += y[i];
    mean /= static_cast<double>(idx.size());

    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({-1, 0.0, mean, -1, -1});

    if (depth >= params.max_depth || idx.size() < 2 * static_cast<std::size_t>(params.min_leaf))
        return node_id;

    std::vector<int> features(n_features);
    std::iota(features.begin(), features.end(), 0);
    if (params.features_per_split > 0 && params.features_per_split < n_features && feature_rng) {
        shuffle_inplace(features, *feature_rng);
        features.resize(params.features_per_split);
        std::sort(features.begin(), features.end());
    }

    const Split sp = best_split(x, y, idx, features, params.min_leaf);
    if (sp.feature < 0) return node_id;

    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i : idx) {
        if (x[i][sp.feature] <= sp.threshold) left_idx.push_back(i);
        else right_idx.push_back(i);
    }
    if (left_idx.empty() || right_idx.empty()) return node_id;
    idx.clear();
    idx.shrink_to_fit();

    tree.nodes[node_id].feature = sp.feature;
    tree.nodes[node_id].threshold = sp.threshold;
    tree.nodes[node_id].left = grow(tree, x, y, std::move(left_idx), depth + 1, params, feature_rng, n_features);
    tree.nodes[node_id].right = grow(tree, x, y, std::move(right_idx), depth + 1, params, feature_rng, n_features);
    return node_id;
}

} // namespace treedetail

inline RegressionTree fit_tree(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                               const std::vector<std::size_t>& idx, const TreeGrowParams& params,
                               Rng* feature_rng = nullptr) {
    RegressionTree tree;
    const int n_features = x.empty() ? 0 : static_cast<int>(x[0].size());
    treedetail::grow(tree, x, y, idx, 0, params, feature_rng, n_features);
    return tree;
}

struct ForestParams {
    int n_trees = 200;
    int max_depth = 12;
    int min_leaf = 5;
};

struct RandomForest {
    std::vector<RegressionTree> trees;

    double predict(const std::vector<double>& x) const {
        double s = 0.0;
        for (const auto& t : trees) s += t.predict(x);
        return s / static_cast<double>(trees.size());
    }
};

inline RandomForest fit_forest(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                               const ForestParams& params, std::uint64_t seed) {
    RandomForest forest;
    const std::size_t n = x.size();
    const int m = x.empty() ? 0 : static_cast<int>(x[0].size());
    const int mtry = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(m)))));
    for (int t = 0; t < params.n_trees; ++t) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> bag(n);
        for (std::size_t i = 0; i < n; ++i) bag[i] = static_cast<std::size_t>(uniform_index(rng, n));
        TreeGrowParams gp{params.max_depth, params.min_leaf, mtry};
        forest.trees.push_back(fit_tree(x, y, bag, gp, &rng));
    }
    return forest;
}

struct BoostParams {
    int n_trees = 500;
    int max_depth = 4;
    int min_leaf = 5;
    double learning_rate = 0.05;
};

// Squared-loss boosting: each stage fits the residuals of the running sum.
struct GradientBoosting {
    double init = 0.0;
    double learning_rate = 0.05;
    std::vector<RegressionTree> trees;

    double predict(const std::vector<double>& x) const {
        double s = init;
        for (const auto& t : trees) s += learning_rate * t.predict(x);
        return s;
    }
};

inline GradientBoosting fit_boosting(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                                     const BoostParams& params) {
    GradientBoosting gbm;
    gbm.learning_rate = params.learning_rate;
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : y) mean += v;
    gbm.init = mean / static_cast<double>(n);

    std::vector<double> residual(n);
    std::vector<double> current(n, gbm.init);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    TreeGrowParams gp{params.max_depth, params.min_leaf, -1};
    for (int t = 0; t < params.n_trees; ++t) {
        for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - current[i];
        RegressionTree tree = fit_tree(x, residual, all, gp);
        for (std::size_t i = 0; i < n; ++i) current[i] += params.learning_rate * tree.predict(x[i]);
        gbm.trees.push_back(std::move(tree));
    }
    return gbm;
}

} // namespace stabscope
