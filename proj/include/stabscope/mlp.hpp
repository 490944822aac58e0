#pragma once

// Feedforward network: tanh hidden layers, linear output, full-batch gradient
// descent with momentum on mean squared error. Inputs are standardized with
// stats frozen at training time; the target is left unscaled.

#include <cmath>
#include <cstdint>
#include <vector>

#include "stabscope/rng.hpp"

namespace stabscope {

struct MlpParams {
    std::vector<int> hidden{64, 64};
    double learning_rate = 1e-3;
    double momentum = 0.9;
    int epochs = 5000;
};

struct Mlp {
    std::vector<int> layer_sizes;          // input, hidden..., 1
    std::vector<std::vector<double>> w;    // per layer: (out x in) row-major
    std::vector<std::vector<double>> bias; // per layer
    std::vector<double> feature_mean;
    std::vector<double> feature_std;

    std::size_t n_layers() const { return w.size(); }

    double predict(const std::vector<double>& x) const {
        std::vector<double> a(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) a[i] = (x[i] - feature_mean[i]) / feature_std[i];
        for (std::size_t l = 0; l < n_layers(); ++l) {
            const int nin = layer_sizes[l];
            const int nout = layer_sizes[l + 1];
            std::vector<double> z(nout);
            for (int o = 0; o < nout; ++o) {
                double s = bias[l][o];
                for (int i = 0; i < nin; ++i) s += w[l][o * nin + i] * a[i];
                z[o] = (l + 1 < n_layers()) ? std::tanh(s) : s;
            }
            a = std::move(z);
        }
        return a[0];
    }
};

namespace mlpdetail {

struct Workspace {
    std::vector<std::vector<double>> activations; // per layer incl. input
    std::vector<std::vector<double>> deltas;
};

// Forward + backward over the whole batch; returns mean squared error and
// accumulates dL/dw into grads (same layout as the weights).
inline double loss_and_gradient(const Mlp& net, const std::vector<std::vector<double>>& xs,
                                const std::vector<double>& ys,
                                std::vector<std::vector<double>>& grad_w,
                                std::vector<std::vector<double>>& grad_b) {
    const std::size_t n = xs.size();
    const std::size_t layers = net.n_layers();
    for (std::size_t l = 0; l < layers; ++l) {
        grad_w[l].assign(net.w[l].size(), 0.0);
        grad_b[l].assign(net.bias[l].size(), 0.0);
    }
    double loss = 0.0;
    std::vector<std::vector<double>> act(layers + 1);
    std::vector<std::vector<double>> delta(layers);
    for (std::size_t s = 0; s < n; ++s) {
        act[0].resize(xs[s].size());
        for (std::size_t i = 0; i < xs[s].size(); ++i)
            act[0][i] = (xs[s][i] - net.feature_mean[i]) / net.feature_std[i];
        for (std::size_t l = 0; l < layers; ++l) {
            const int nin = net.layer_sizes[l];
            const int nout = net.layer_sizes[l + 1];
            act[l + 1].assign(nout, 0.0);
            for (int o = 0; o < nout; ++o) {
                double z = net.bias[l][o];
                for (int i = 0; i < nin; ++i) z += net.w[l][o * nin + i] * act[l][i];
                act[l + 1][o] = (l + 1 < layers) ? std::tanh(z) : z;
            }
        }
        const double err = act[layers][0] - ys[s];
        loss += err * err;

        delta[layers - 1].assign(1, 2.0 * err / static_cast<double>(n));
        for (std::size_t l = layers - 1; l-- > 0;) {
            const int nout = net.layer_sizes[l + 1];
            const int nnext = net.layer_sizes[l + 2];
            delta[l].assign(nout, 0.0);
            for (int o = 0; o < nout; ++o) {
                double s_up = 0.0;
                for (int k = 0; k < nnext; ++k) s_up += net.w[l + 1][k * nout + o] * delta[l + 1][k];
                const double a = act[l + 1][o];
                delta[l][o] = s_up * (1.0 - a * a); // tanh'
            }
        }
        for (std::size_t l = 0; l < layers; ++l) {
            const int nin = net.layer_sizes[l];
            const int nout = net.layer_sizes[l + 1];
            for (int o = 0; o < nout; ++o) {
                grad_b[l][o] += delta[l][o];
                for (int i = 0; i < nin; ++i) grad_w[l][o * nin + i] += delta[l][o] * act[l][i];
            }
        }
    }
    return loss / static_cast<double>(n);
}

} // namespace mlpdetail

inline Mlp fit_mlp(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys,
                   const MlpParams& params, std::uint64_t seed) {
    Mlp net;
    const std::size_t n = xs.size();
    const int m = xs.empty() ? 0 : static_cast<int>(xs[0].size());
    net.layer_sizes.push_back(m);
    for (int hsz : params.hidden) net.layer_sizes.push_back(hsz);
    net.layer_sizes.push_back(1);

    net.feature_mean.assign(m, 0.0);
    net.feature_std.assign(m, 1.0);
    for (const auto& x : xs)
        for (int i = 0; i < m; ++i) net.feature_mean[i] += x[i];
    for (int i = 0; i < m; ++i) net.feature_mean[i] /= static_cast<double>(n);
    std::vector<double> var(m, 0.0);
    for (const auto& x : xs)
        for (int i = 0; i < m; ++i) {
            const double d = x[i] - net.feature_mean[i];
            var[i] += d * d;
        }
    for (int i = 0; i < m; ++i) {
        const double sd = std::sqrt(var[i] / static_cast<double>(n));
        net.feature_std[i] = sd > 1e-12 ? sd : 1.0;
    }

    Rng rng = make_rng(seed);
    const std::size_t layers = net.layer_sizes.size() - 1;
    net.w.resize(layers);
    net.bias.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const int nin = net.layer_sizes[l];
        const int nout = net.layer_sizes[l + 1];
        const double a = std::sqrt(6.0 / static_cast<double>(nin + nout));
        net.w[l].resize(static_cast<std::size_t>(nin) * nout);
        net.bias[l].assign(nout, 0.0);
        for (auto& weight : net.w[l]) weight = (2.0 * uniform_real(rng) - 1.0) * a;
    }

    std::vector<std::vector<double>> grad_w(layers), grad_b(layers);
    std::vector<std::vector<double>> vel_w(layers), vel_b(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        vel_w[l].assign(net.w[l].size(), 0.0);
        vel_b[l].assign(net.bias[l].size(), 0.0);
    }
    for (int epoch = 0; epoch < params.epochs; ++epoch) {
        mlpdetail::loss_and_gradient(net, xs, ys, grad_w, grad_b);
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t i = 0; i < net.w[l].size(); ++i) {
                vel_w[l][i] = params.momentum * vel_w[l][i] - params.learning_rate * grad_w[l][i];
                net.w[l][i] += vel_w[l][i];
            }
            for (std::size_t i = 0; i < net.bias[l].size(); ++i) {
                vel_b[l][i] = params.momentum * vel_b[l][i] - params.learning_rate * grad_b[l][i];
                net.bias[l][i] += vel_b[l][i];
            }
        }
    }
    return net;
}

} // namespace stabscope
