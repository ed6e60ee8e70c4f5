#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "asag/errors.hpp"
#include "asag/tensor.hpp"

namespace asag::diffusion {

/// β_t, α_t = 1 − β_t and ᾱ_t = Π_{i≤t} α_i for t = 1..T. Tables are stored
/// 0-based (entry t−1 holds timestep t); ᾱ_0 := 1.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    explicit NoiseSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
        if (beta_.empty()) throw ContractError("noise schedule needs T >= 1");
        alpha_.resize(beta_.size());
        alpha_bar_.resize(beta_.size());
        double prod = 1.0;
        for (std::size_t i = 0; i < beta_.size(); ++i) {
            if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) throw ContractError("noise schedule: beta must lie in (0, 1)");
            alpha_[i] = 1.0 - beta_[i];
            prod *= alpha_[i];
            alpha_bar_[i] = prod;
        }
    }

    int T() const noexcept { return static_cast<int>(beta_.size()); }
    double beta(int t) const { return beta_.at(index(t)); }
    double alpha(int t) const { return alpha_.at(index(t)); }

    /// ᾱ_t for t ∈ {0..T}, with ᾱ_0 = 1.
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        return alpha_bar_.at(index(t));
    }

    /// ᾱ_t restricted to t ∈ {1..T}.
    double alpha_bar_at_step(int t) const { return alpha_bar_.at(index(t)); }

    const std::vector<double>& betas() const noexcept { return beta_; }
    const std::vector<double>& alphas() const noexcept { return alpha_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

private:
    std::size_t index(int t) const {
        if (t < 1 || t > T()) throw ContractError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T()));
        return static_cast<std::size_t>(t - 1);
    }

    std::vector<double> beta_, alpha_, alpha_bar_;
};

/// Linear β from beta_start to beta_end over T steps.
inline NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw ContractError("make_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ContractError("make_schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> beta(static_cast<std::size_t>(T));
    for (int i = 0; i < T; ++i) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        beta[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
    }
    return NoiseSchedule(std::move(beta));
}

/// √ᾱ_t·x0 + √(1−ᾱ_t)·ε
inline Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    require_same_shape(x0, eps, "q_sample");
    const double ab = sched.alpha_bar_at_step(t);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

/// x̂₀ = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t, taking ᾱ_t directly.
inline Tensor tweedie_denoise_ab(const Tensor& x_t, const Tensor& eps_hat, double alpha_bar) {
    require_same_shape(x_t, eps_hat, "tweedie_denoise");
    if (!(alpha_bar > 0.0)) throw ContractError("tweedie_denoise: alpha_bar must be positive");
    const double a = std::sqrt(alpha_bar), s = std::sqrt(1.0 - alpha_bar);
    Tensor out = x_t;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - s * eps_hat[i]) / a;
    return out;
}

inline Tensor tweedie_denoise(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched) {
    return tweedie_denoise_ab(x_t, eps_hat, sched.alpha_bar_at_step(t));
}

/// Deterministic (η = 0) DDIM update from ᾱ_t to ᾱ_prev.
inline Tensor ddim_step_ab(const Tensor& x_t, const Tensor& eps_hat, double alpha_bar_t, double alpha_bar_prev) {
    const Tensor x0 = tweedie_denoise_ab(x_t, eps_hat, alpha_bar_t);
    const double a = std::sqrt(alpha_bar_prev), s = std::sqrt(1.0 - alpha_bar_prev);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps_hat[i];
    return out;
}

/// x_{t_prev} = √ᾱ_{t_prev}·x̂₀(t) + √(1−ᾱ_{t_prev})·ε̂
inline Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev, const NoiseSchedule& sched) {
    if (!(0 <= t_prev && t_prev < t && t <= sched.T()))
        throw ContractError("ddim_step: need 0 <= t_prev < t <= T, got t=" + std::to_string(t) +
                            " t_prev=" + std::to_string(t_prev));
    return ddim_step_ab(x_t, eps_hat, sched.alpha_bar(t), sched.alpha_bar(t_prev));
}

/// Uniform-stride timestep subsequence over {1..T}, largest first and
/// starting at T. The implicit final target is t = 0.
inline std::vector<int> sampling_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw ContractError("sampling_timesteps: need 1 <= steps <= T");
    std::vector<int> ts(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i)
        ts[static_cast<std::size_t>(i)] = T - static_cast<int>((static_cast<long long>(i) * T) / steps);
    return ts;
}

/// Mean of (model_eps − true_eps)² over every coordinate.
inline double dsm_loss(const Tensor& model_eps, const Tensor& true_eps) {
    require_same_shape(model_eps, true_eps, "dsm_loss");
    if (model_eps.empty()) throw DimensionError("dsm_loss: empty tensors");
    CompensatedSum s;
    for (std::size_t i = 0; i < model_eps.size(); ++i) {
        const double d = model_eps[i] - true_eps[i];
        s.add(d * d);
    }
    return s.value() / static_cast<double>(model_eps.size());
}

/// One record of a sampling trajectory.
struct StepRecord {
    int t = 0;
    Tensor x0_hat;
    double guidance_norm = 0.0;
};

struct SamplerState {
    Tensor x;
    int t = 0;
    std::vector<StepRecord> trajectory_log;
};

}  // namespace asag::diffusion
