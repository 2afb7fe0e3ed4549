// SPDX-License-Identifier: Apache-2.0
//
// copresence: CSI-based copresence detection toolkit
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


// Dense feed-forward classifier with exact backpropagation, including the
// gradient of an input-gradient penalty (a second reverse pass through the
// analytic first backward graph).
//
// Conventions: a layer holds W (in x out) and b (out); a batch is B x D with
// one sample per row; z = h W + b. Hidden layers use Leaky-ReLU followed by
// inverted dropout, the output layer is a softmax over Z classes.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "copresence/error.hpp"

namespace copresence {

enum class Activation { leaky_relu, softmax, identity };

struct LayerSpec {
    Eigen::Index input_dim = 0;
    Eigen::Index output_dim = 0;
    Activation activation = Activation::leaky_relu;
    double leaky_slope = 0.01;
    double dropout_rate = 0.0; // hidden layers only, in [0, 1)
    bool trainable = true;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct DenseLayer {
    LayerSpec spec;
    Eigen::MatrixXd weights; // input_dim x output_dim
    Eigen::VectorXd bias;    // output_dim
};

struct MlpModel {
    std::vector<DenseLayer> layers;
    std::uint64_t seed = 0;
    // Bumped on every parameter update; forward caches remember it.
    std::uint64_t revision = 0;

    Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().spec.input_dim; }
    Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().spec.output_dim; }

    void validate() const {
        if (layers.empty())
            throw DataError("model has no layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& s = layers[l].spec;
            const bool last = l + 1 == layers.size();
            if (layers[l].weights.rows() != s.input_dim || layers[l].weights.cols() != s.output_dim ||
                layers[l].bias.size() != s.output_dim)
                throw DataError("layer " + std::to_string(l) + ": parameter shapes disagree with its spec");
            if (l > 0 && s.input_dim != layers[l - 1].spec.output_dim)
                throw DataError("layer " + std::to_string(l) + ": input dim does not chain with previous layer");
            if ((s.activation == Activation::softmax) != last)
                throw DataError("softmax must be the activation of the output layer only");
            if (s.dropout_rate < 0.0 || s.dropout_rate >= 1.0 || (last && s.dropout_rate != 0.0))
                throw DataError("layer " + std::to_string(l) + ": invalid dropout rate");
        }
    }
};

struct MlpArchitecture {
    std::vector<Eigen::Index> hidden{500, 300, 100, 20};
    Eigen::Index classes = 2;
    double leaky_slope = 0.01;
    double dropout_rate = 0.2;
};

// He-style uniform initialisation, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero bias.
inline MlpModel make_mlp(Eigen::Index input_dim, const MlpArchitecture& arch = {}, std::uint64_t seed = 123) {
    if (input_dim <= 0 || arch.classes < 2)
        throw UsageError("make_mlp: input dimension must be positive and classes >= 2");
    MlpModel m;
    m.seed = seed;
    std::mt19937_64 rng(seed);
    Eigen::Index in = input_dim;
    std::vector<Eigen::Index> dims = arch.hidden;
    dims.push_back(arch.classes);
    for (std::size_t l = 0; l < dims.size(); ++l) {
        const bool last = l + 1 == dims.size();
        DenseLayer layer;
        layer.spec = {in, dims[l], last ? Activation::softmax : Activation::leaky_relu, arch.leaky_slope,
                      last ? 0.0 : arch.dropout_rate, true};
        const double limit = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> u(-limit, limit);
        layer.weights.resize(in, dims[l]);
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
            for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
                layer.weights(r, c) = u(rng);
        layer.bias = Eigen::VectorXd::Zero(dims[l]);
        m.layers.push_back(std::move(layer));
        in = dims[l];
    }
    return m;
}

struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;   // h_l fed into layer l
    std::vector<Eigen::MatrixXd> preacts;  // z_l
    std::vector<Eigen::MatrixXd> masks;    // scaled dropout masks; empty when inactive
    Eigen::MatrixXd probabilities;         // B x Z
    std::uint64_t revision = 0;
};

namespace detail {

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p = z;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double mx = z.row(r).maxCoeff();
        p.row(r) = (z.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

inline Eigen::MatrixXd activate(const Eigen::MatrixXd& z, const LayerSpec& s) {
    switch (s.activation) {
    case Activation::leaky_relu: return z.unaryExpr([a = s.leaky_slope](double v) { return v > 0.0 ? v : a * v; });
    case Activation::softmax: return softmax_rows(z);
    default: return z;
    }
}

// Derivative of an elementwise activation (piecewise constant for Leaky-ReLU).
inline Eigen::MatrixXd activation_slope(const Eigen::MatrixXd& z, const LayerSpec& s) {
    if (s.activation == Activation::leaky_relu)
        return z.unaryExpr([a = s.leaky_slope](double v) { return v > 0.0 ? 1.0 : a; });
    return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

} // namespace detail

struct ForwardResult {
    Eigen::MatrixXd probabilities;
    ForwardCache cache;
};

inline ForwardResult forward(const MlpModel& model, const Eigen::MatrixXd& batch, bool training = false,
                             std::uint64_t dropout_seed = 0) {
    if (batch.cols() != model.input_dim())
        throw DataError("forward: batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                        std::to_string(model.input_dim()));
    ForwardResult r;
    auto& c = r.cache;
    c.revision = model.revision;
    c.inputs.reserve(model.layers.size());
    c.preacts.reserve(model.layers.size());
    c.masks.resize(model.layers.size());
    std::mt19937_64 rng(dropout_seed);
    Eigen::MatrixXd h = batch;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        c.inputs.push_back(h);
        Eigen::MatrixXd z = h * layer.weights;
        z.rowwise() += layer.bias.transpose();
        h = detail::activate(z, layer.spec);
        c.preacts.push_back(std::move(z));
        const double p = layer.spec.dropout_rate;
        if (training && p > 0.0) {
            std::bernoulli_distribution keep(1.0 - p);
            Eigen::MatrixXd mask(h.rows(), h.cols());
            const double scale = 1.0 / (1.0 - p);
            for (Eigen::Index j = 0; j < mask.cols(); ++j)
                for (Eigen::Index i = 0; i < mask.rows(); ++i)
                    mask(i, j) = keep(rng) ? scale : 0.0;
            h.array() *= mask.array();
            c.masks[l] = std::move(mask);
        }
    }
    c.probabilities = h;
    r.probabilities = std::move(h);
    return r;
}

inline Eigen::MatrixXd predict_proba(const MlpModel& model, const Eigen::MatrixXd& x) {
    return forward(model, x, false).probabilities;
}

inline constexpr double kProbabilityFloor = 1e-12;

// Mean cross-entropy; labels are class indices.
inline double loss(const Eigen::MatrixXd& probabilities, std::span<const int> labels) {
    if (static_cast<Eigen::Index>(labels.size()) != probabilities.rows())
        throw DataError("loss: label count does not match batch size");
    double total = 0.0;
    for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= probabilities.cols())
            throw DataError("loss: label " + std::to_string(y) + " is not a class index");
        total -= std::log(std::max(probabilities(i, y), kProbabilityFloor));
    }
    return total / static_cast<double>(probabilities.rows());
}

// Penalty on input gradients of sum_z log(y_hat_z): sum over (n, d) of
// (A_nd * grad_nd)^2, added to the loss as lambda * penalty / B so that it
// is batch-averaged like the cross-entropy. A may be N x D or 1 x D
// (broadcast to every row).
struct InputGradientPenalty {
    double lambda = 1000.0;
    Eigen::MatrixXd annotation;

    Eigen::MatrixXd rows(std::span<const Eigen::Index> idx) const {
        if (annotation.rows() == 1) {
            Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), annotation.cols());
            out.rowwise() = annotation.row(0);
            return out;
        }
        Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), annotation.cols());
        for (std::size_t i = 0; i < idx.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) = annotation.row(idx[i]);
        return out;
    }
};

struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> bias;
    Eigen::MatrixXd input_loss;   // d(objective)/dx, B x D
    Eigen::MatrixXd input_logsum; // d/dx sum_z log y_hat_z per row, B x D
    double loss = 0.0;            // cross-entropy part
    double penalty = 0.0;         // unscaled penalty sum over the batch
};

namespace detail {

inline void check_cache(const MlpModel& model, const ForwardCache& cache) {
    if (cache.revision != model.revision || cache.preacts.size() != model.layers.size())
        throw DataError("backward: stale forward cache (model changed since forward pass)");
}

struct LogsumTrace {
    std::vector<Eigen::MatrixXd> u;      // dS/dz_l
    std::vector<Eigen::MatrixXd> gates;  // mask * activation slope for hidden layers
    Eigen::MatrixXd input_gradient;      // dS/dh_0
};

inline LogsumTrace logsum_backward(const MlpModel& model, const ForwardCache& cache) {
    const std::size_t n_layers = model.layers.size();
    LogsumTrace t;
    t.u.resize(n_layers);
    t.gates.resize(n_layers);
    const auto& p = cache.probabilities;
    const double z_count = static_cast<double>(p.cols());
    t.u[n_layers - 1] = (1.0 - z_count * p.array()).matrix();
    for (std::size_t l = n_layers - 1; l-- > 0;) {
        Eigen::MatrixXd gate = activation_slope(cache.preacts[l], model.layers[l].spec);
        if (cache.masks[l].size() > 0)
            gate.array() *= cache.masks[l].array();
        Eigen::MatrixXd v = t.u[l + 1] * model.layers[l + 1].weights.transpose();
        t.u[l] = (v.array() * gate.array()).matrix();
        t.gates[l] = std::move(gate);
    }
    t.input_gradient = t.u[0] * model.layers[0].weights.transpose();
    return t;
}

} // namespace detail

// Gradient of sum_z log(y_hat_z) with respect to each input row.
inline Eigen::MatrixXd input_gradients(const MlpModel& model, const ForwardCache& cache) {
    detail::check_cache(model, cache);
    return detail::logsum_backward(model, cache).input_gradient;
}

inline Eigen::MatrixXd input_gradients(const MlpModel& model, const Eigen::MatrixXd& x) {
    const auto fr = forward(model, x, false);
    return input_gradients(model, fr.cache);
}

inline double penalty(const Eigen::MatrixXd& annotation, const Eigen::MatrixXd& input_grads) {
    if (annotation.rows() == 1 && annotation.cols() == input_grads.cols())
        return (input_grads.array().rowwise() * annotation.row(0).array()).square().sum();
    if (annotation.rows() != input_grads.rows() || annotation.cols() != input_grads.cols())
        throw DataError("penalty: annotation shape does not match input gradients");
    return (annotation.array() * input_grads.array()).square().sum();
}

// Exact gradients of  CE_mean + lambda * P / B  for the cached batch.
// `annotation` holds the batch rows of A (or 1 x D). Frozen layers return
// zero blocks.
inline Gradients backward(const MlpModel& model, const ForwardCache& cache, std::span<const int> labels,
                          const Eigen::MatrixXd* annotation = nullptr, double lambda = 0.0) {
    detail::check_cache(model, cache);
    const std::size_t n_layers = model.layers.size();
    const auto& p = cache.probabilities;
    const Eigen::Index b = p.rows();
    if (static_cast<Eigen::Index>(labels.size()) != b)
        throw DataError("backward: label count does not match cached batch");

    Gradients g;
    g.weights.resize(n_layers);
    g.bias.resize(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        g.weights[l] = Eigen::MatrixXd::Zero(model.layers[l].weights.rows(), model.layers[l].weights.cols());
        g.bias[l] = Eigen::VectorXd::Zero(model.layers[l].bias.size());
    }
    g.loss = loss(p, labels);

    const double inv_b = 1.0 / static_cast<double>(b);
    Eigen::MatrixXd delta = p;
    for (Eigen::Index i = 0; i < b; ++i)
        delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    delta *= inv_b;

    const auto trace = detail::logsum_backward(model, cache);
    g.input_logsum = trace.input_gradient;

    if (annotation) {
        g.penalty = penalty(*annotation, trace.input_gradient);
        const double scale = lambda * inv_b;
        // dP/dG = 2 A^2 G
        Eigen::MatrixXd vbar;
        if (annotation->rows() == 1)
            vbar = 2.0 * (trace.input_gradient.array().rowwise() * annotation->row(0).array().square()).matrix();
        else
            vbar = 2.0 * (annotation->array().square() * trace.input_gradient.array()).matrix();
        vbar *= scale;
        for (std::size_t l = 0; l < n_layers; ++l) {
            // v_l = u_l W_l^T
            g.weights[l].noalias() += vbar.transpose() * trace.u[l];
            Eigen::MatrixXd ubar = vbar * model.layers[l].weights;
            if (l + 1 < n_layers) {
                vbar = (ubar.array() * trace.gates[l].array()).matrix();
            } else {
                // u = 1 - Z softmax(z): zbar = -Z * p .* (ubar - rowsum(ubar .* p))
                const double z_count = static_cast<double>(p.cols());
                const Eigen::VectorXd dots = (ubar.array() * p.array()).rowwise().sum();
                Eigen::MatrixXd zbar = ubar;
                zbar.colwise() -= dots;
                zbar = (-z_count * (zbar.array() * p.array())).matrix();
                delta += zbar;
            }
        }
    }

    for (std::size_t l = n_layers; l-- > 0;) {
        g.weights[l].noalias() += cache.inputs[l].transpose() * delta;
        g.bias[l] += delta.colwise().sum().transpose();
        Eigen::MatrixXd dh = delta * model.layers[l].weights.transpose();
        if (l == 0) {
            g.input_loss = std::move(dh);
            break;
        }
        Eigen::MatrixXd gate = detail::activation_slope(cache.preacts[l - 1], model.layers[l - 1].spec);
        if (cache.masks[l - 1].size() > 0)
            gate.array() *= cache.masks[l - 1].array();
        delta = (dh.array() * gate.array()).matrix();
    }

    for (std::size_t l = 0; l < n_layers; ++l) {
        if (!model.layers[l].spec.trainable) {
            g.weights[l].setZero();
            g.bias[l].setZero();
        }
    }
    return g;
}

// Scalar training objective for the given batch, matching backward().
inline double objective(const MlpModel& model, const Eigen::MatrixXd& batch, std::span<const int> labels,
                        const Eigen::MatrixXd* annotation = nullptr, double lambda = 0.0, bool training = false,
                        std::uint64_t dropout_seed = 0) {
    const auto fr = forward(model, batch, training, dropout_seed);
    double value = loss(fr.probabilities, labels);
    if (annotation)
        value += lambda * penalty(*annotation, input_gradients(model, fr.cache)) / static_cast<double>(batch.rows());
    return value;
}

struct TrainConfig {
    double learning_rate = 0.001;
    Eigen::Index batch_size = 32;
    int epochs = 35;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t rng_seed = 123;
    double leaky_slope = 0.01;

    void validate() const {
        if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 1 || !(beta1 > 0.0 && beta1 < 1.0) ||
            !(beta2 > 0.0 && beta2 < 1.0) || !(epsilon > 0.0) || !(leaky_slope > 0.0))
            throw UsageError("invalid training configuration");
    }
};

class AdamOptimizer {
public:
    AdamOptimizer(const MlpModel& model, const TrainConfig& cfg) : cfg_(cfg) {
        for (const auto& layer : model.layers) {
            mw_.push_back(Eigen::MatrixXd::Zero(layer.weights.rows(), layer.weights.cols()));
            vw_.push_back(mw_.back());
            mb_.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
            vb_.push_back(mb_.back());
        }
    }

    void step(MlpModel& model, const Gradients& g) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            auto& layer = model.layers[l];
            if (!layer.spec.trainable)
                continue;
            update(layer.weights, mw_[l], vw_[l], g.weights[l], c1, c2);
            update(layer.bias, mb_[l], vb_[l], g.bias[l], c1, c2);
        }
        ++model.revision;
    }

    long steps() const { return t_; }

private:
    template <typename P, typename G>
    void update(P& param, P& m, P& v, const G& grad, double c1, double c2) const {
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        param.array() -= cfg_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    }

    TrainConfig cfg_;
    std::vector<Eigen::MatrixXd> mw_, vw_;
    std::vector<Eigen::VectorXd> mb_, vb_;
    long t_ = 0;
};

struct TrainResult {
    MlpModel model;
    std::vector<double> loss_history; // mean objective per epoch
};

// Mini-batch Adam over a seeded shuffle each epoch. No early stopping.
inline TrainResult train(MlpModel model, const Eigen::MatrixXd& x, std::span<const int> y, const TrainConfig& cfg,
                         const InputGradientPenalty* pen = nullptr) {
    cfg.validate();
    model.validate();
    if (x.rows() == 0)
        throw DataError("train: empty training data");
    if (static_cast<Eigen::Index>(y.size()) != x.rows())
        throw DataError("train: label count does not match data rows");
    if (x.cols() != model.input_dim())
        throw DataError("train: data has " + std::to_string(x.cols()) + " features, model expects " +
                        std::to_string(model.input_dim()));
    for (int v : y)
        if (v < 0 || v >= model.output_dim())
            throw DataError("train: labels must be class indices (0/1)");
    if (pen && (pen->annotation.cols() != x.cols() ||
                (pen->annotation.rows() != 1 && pen->annotation.rows() != x.rows())))
        throw DataError("train: annotation matrix shape does not match data");

    AdamOptimizer opt(model, cfg);
    std::mt19937_64 rng(cfg.rng_seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    TrainResult result;
    result.loss_history.reserve(static_cast<std::size_t>(cfg.epochs));

    Eigen::MatrixXd batch;
    std::vector<int> labels;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const Eigen::Index> idx(order.data() + start, end - start);
            batch.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
            labels.resize(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) {
                batch.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
                labels[i] = y[static_cast<std::size_t>(idx[i])];
            }
            const auto fr = forward(model, batch, true, rng());
            Gradients g;
            if (pen) {
                const Eigen::MatrixXd a = pen->rows(idx);
                g = backward(model, fr.cache, labels, &a, pen->lambda);
            } else {
                g = backward(model, fr.cache, labels);
            }
            const double batch_objective =
                g.loss + (pen ? pen->lambda * g.penalty / static_cast<double>(idx.size()) : 0.0);
            if (!std::isfinite(batch_objective))
                throw NumericError("train: non-finite loss in epoch " + std::to_string(epoch + 1));
            epoch_total += batch_objective * static_cast<double>(idx.size());
            opt.step(model, g);
        }
        result.loss_history.push_back(epoch_total / static_cast<double>(order.size()));
    }
    result.model = std::move(model);
    return result;
}

inline MlpModel freeze_prefix(MlpModel model, std::size_t n_layers) {
    if (n_layers > model.layers.size())
        throw UsageError("freeze_prefix: cannot freeze " + std::to_string(n_layers) + " of " +
                         std::to_string(model.layers.size()) + " layers");
    for (std::size_t l = 0; l < n_layers; ++l)
        model.layers[l].spec.trainable = false;
    return model;
}

// One multiply-add counts as two FLOPs.
inline std::uint64_t flops_forward(const MlpModel& model, bool only_trainable = false) {
    std::uint64_t total = 0;
    for (const auto& layer : model.layers)
        if (!only_trainable || layer.spec.trainable)
            total += 2ULL * static_cast<std::uint64_t>(layer.spec.input_dim) *
                     static_cast<std::uint64_t>(layer.spec.output_dim);
    return total;
}

} // namespace copresence
