#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "asag/autodiff.hpp"
#include "asag/diffusion.hpp"
#include "asag/errors.hpp"
#include "asag/model.hpp"
#include "asag/tensor.hpp"

namespace asag::model {

/// Training examples: point sets of shape [tokens, point_dim] with labels.
struct PointSetDataset {
    std::vector<Tensor> sets;
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const { return sets.size(); }
};

enum class Optimizer { sgd, adam };

inline const char* to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

struct TrainConfig {
    int epochs = 1;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    double p_drop = 0.1;  // classifier-free condition dropout
    Optimizer optimizer = Optimizer::sgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

struct TrainResult {
    DenoiserParams params;
    std::vector<double> loss_curve;  // one entry per optimizer step
};

/// DSM loss of a minibatch on `tape`; x0/eps are [sets·n, point_dim].
inline ad::Var dsm_objective(ad::Tape& tape, const DenoiserParams& params, const ParamVars& pv, const Tensor& x0,
                             const Tensor& eps, const std::vector<int>& timesteps, const std::vector<std::size_t>& classes,
                             const diffusion::NoiseSchedule& sched) {
    const std::size_t n = params.config.tokens, dim = params.config.point_dim;
    Tensor xt = x0;
    for (std::size_t s = 0; s < timesteps.size(); ++s) {
        const double ab = sched.alpha_bar_at_step(timesteps[s]);
        const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (std::size_t i = s * n * dim; i < (s + 1) * n * dim; ++i) xt[i] = a * x0[i] + b * eps[i];
    }
    auto pred = forward(tape, params, pv, xt, timesteps, classes, attn::AttentionMode{}, LayerSelection::none(), nullptr);
    return ad::mean_squared_error(pred, tape.constant(eps));
}

/// Gradient-descent minimization of the DSM objective.
inline TrainResult train(DenoiserParams params, const PointSetDataset& data, const diffusion::NoiseSchedule& sched,
                         Rng& rng, const TrainConfig& cfg) {
    const auto& mc = params.config;
    if (data.size() == 0) throw ContractError("train: dataset is empty");
    if (cfg.batch_size == 0 || cfg.epochs < 0) throw ContractError("train: invalid batch size or epoch count");
    if (sched.alpha_bars() != mc.schedule().alpha_bars()) throw ContractError("train: schedule does not match the model's");
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (mc.num_classes > 0 && data.labels[i] >= mc.num_classes) throw ContractError("train: label out of range at example " + std::to_string(i));
        if (data.sets[i].rows() != mc.tokens || data.sets[i].cols() != mc.point_dim)
            throw DimensionError("train: example " + std::to_string(i) + " has shape " + shape_string(data.sets[i].shape()));
    }

    std::map<std::string, Tensor> m1, m2;
    if (cfg.optimizer == Optimizer::adam)
        for (const auto& name : params.order) {
            m1.emplace(name, Tensor(params.at(name).shape(), 0.0));
            m2.emplace(name, Tensor(params.at(name).shape(), 0.0));
        }

    TrainResult res;
    std::vector<std::size_t> perm(data.size());
    std::size_t step = 0;
    const std::size_t n = mc.tokens, dim = mc.point_dim;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(0, i - 1)]);

        for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, perm.size() - start);
            Tensor x0 = Tensor::matrix(bs * n, dim);
            std::vector<int> ts(bs);
            std::vector<std::size_t> cls(bs);
            for (std::size_t b = 0; b < bs; ++b) {
                const std::size_t idx = perm[start + b];
                std::copy(data.sets[idx].data().begin(), data.sets[idx].data().end(),
                          x0.data().begin() + static_cast<std::ptrdiff_t>(b * n * dim));
                ts[b] = static_cast<int>(rng.uniform_int(1, static_cast<std::uint64_t>(sched.T())));
                // An unconditional model (no class rows) always sees ∅.
                const bool drop = rng.uniform() < cfg.p_drop || mc.num_classes == 0;
                cls[b] = drop ? mc.null_class() : data.labels[idx];
            }
            const Tensor eps = gaussian(rng, {bs * n, dim});

            ad::Tape tape;
            const auto pv = lift(tape, params, true);
            auto loss = dsm_objective(tape, params, pv, x0, eps, ts, cls, sched);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv)) throw NumericalError("training diverged: loss is not finite", step);
            res.loss_curve.push_back(lv);

            std::vector<ad::Var> inputs;
            inputs.reserve(params.order.size());
            for (const auto& name : params.order) inputs.push_back(pv[name]);
            const auto grads = ad::grad_of(loss, inputs);

            ++step;
            for (std::size_t pi = 0; pi < params.order.size(); ++pi) {
                Tensor& w = params.at(params.order[pi]);
                const Tensor& g = grads[pi];
                if (cfg.optimizer == Optimizer::sgd) {
                    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg.lr * g[i];
                } else {
                    Tensor& a = m1.at(params.order[pi]);
                    Tensor& b = m2.at(params.order[pi]);
                    const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
                    const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
                    for (std::size_t i = 0; i < w.size(); ++i) {
                        a[i] = cfg.adam_beta1 * a[i] + (1.0 - cfg.adam_beta1) * g[i];
                        b[i] = cfg.adam_beta2 * b[i] + (1.0 - cfg.adam_beta2) * g[i] * g[i];
                        w[i] -= cfg.lr * (a[i] / c1) / (std::sqrt(b[i] / c2) + cfg.adam_eps);
                    }
                }
            }
            if (!params.all_finite()) throw NumericalError("training diverged: non-finite parameters", step - 1);
        }
    }
    res.params = std::move(params);
    return res;
}

}  // namespace asag::model
