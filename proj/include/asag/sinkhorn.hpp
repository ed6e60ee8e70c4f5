#pragma once

// Entropy-regularized optimal transport between two discrete marginals,
// solved by Sinkhorn-Knopp scaling carried out entirely in the log domain.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "asag/errors.hpp"
#include "asag/tensor.hpp"

namespace asag::ot {

enum class CostOrientation {
    similarity_max,  // M = 1 − QKᵀ
    adversarial,     // M = QKᵀ
    external,
};

inline const char* to_string(CostOrientation o) {
    switch (o) {
        case CostOrientation::similarity_max: return "similarity";
        case CostOrientation::adversarial: return "adversarial";
        case CostOrientation::external: return "external";
    }
    return "?";
}

struct CostMatrix {
    Tensor values;
    CostOrientation orientation = CostOrientation::external;

    std::size_t n() const { return values.rows(); }

    static CostMatrix from(Tensor values, CostOrientation o = CostOrientation::external) {
        if (values.rank() != 2 || values.rows() != values.cols())
            throw DimensionError("cost matrix must be square, got " + shape_string(values.shape()));
        return CostMatrix{std::move(values), o};
    }
};

/// M↑ = 1 − Q·Kᵀ
inline CostMatrix similarity_cost(const Tensor& q, const Tensor& k) {
    Tensor m = matmul_nt(q, k);
    for (auto& v : m.storage()) v = 1.0 - v;
    return CostMatrix::from(std::move(m), CostOrientation::similarity_max);
}

/// M↓ = Q·Kᵀ
inline CostMatrix adversarial_cost(const Tensor& q, const Tensor& k) {
    return CostMatrix::from(matmul_nt(q, k), CostOrientation::adversarial);
}

/// Source/target probability vectors.
class Marginals {
public:
    Marginals(std::vector<double> mu, std::vector<double> nu) : mu_(std::move(mu)), nu_(std::move(nu)) {
        check(mu_, "mu");
        check(nu_, "nu");
    }

    static Marginals uniform(std::size_t n) {
        if (n == 0) throw ContractError("marginals need n >= 1");
        return Marginals(std::vector<double>(n, 1.0 / static_cast<double>(n)),
                         std::vector<double>(n, 1.0 / static_cast<double>(n)));
    }

    const std::vector<double>& mu() const noexcept { return mu_; }
    const std::vector<double>& nu() const noexcept { return nu_; }

private:
    static void check(const std::vector<double>& p, const char* name) {
        if (p.empty()) throw ContractError(std::string("marginal ") + name + " is empty");
        CompensatedSum s;
        for (double v : p) {
            if (!(v >= 0.0) || !std::isfinite(v)) throw InputError(std::string("marginal ") + name + " has a negative or non-finite entry");
            s.add(v);
        }
        if (std::abs(s.value() - 1.0) > 1e-12) throw InputError(std::string("marginal ") + name + " does not sum to 1");
    }

    std::vector<double> mu_;
    std::vector<double> nu_;
};

struct SinkhornConfig {
    double lambda = 1.0;
    double eps_max = 1e-3;  // threshold on ‖v^i − v^{i−1}‖₁
    int max_iters = 50;

    void validate() const {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ContractError("sinkhorn: lambda must be positive");
        if (!(eps_max > 0.0)) throw ContractError("sinkhorn: eps_max must be positive");
        if (max_iters < 1) throw ContractError("sinkhorn: max_iters must be >= 1");
    }
};

struct TransportPlan {
    Tensor plan;
    int iterations = 0;
    double residual = 0.0;  // final Δ_v
    std::vector<double> log_u;
    std::vector<double> log_v;
    bool converged = true;
    /// max_iters was hit with residual above 10·eps_max.
    bool nonconvergence_warning = false;

    std::size_t n() const { return plan.rows(); }
};

/// max(‖P1 − μ‖∞, ‖Pᵀ1 − ν‖∞)
inline double marginal_error(const Tensor& plan, const Marginals& marg) {
    const std::size_t n = plan.rows();
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0, c = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            r += plan(i, j);
            c += plan(j, i);
        }
        err = std::max({err, std::abs(r - marg.mu()[i]), std::abs(c - marg.nu()[i])});
    }
    return err;
}

/// One log-domain u-update: u_i = log μ_i − log Σ_j exp(−λM_ij + v_j).
inline std::vector<double> log_row_update(const Tensor& cost, double lambda, std::span<const double> log_v,
                                          std::span<const double> log_mu) {
    const std::size_t n = cost.rows(), m = cost.cols();
    Tensor z = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) z(i, j) = -lambda * cost(i, j) + log_v[j];
    auto lse = logsumexp_rows(z);
    for (std::size_t i = 0; i < n; ++i) lse[i] = log_mu[i] - lse[i];
    return lse;
}

/// One log-domain v-update: v_j = log ν_j − log Σ_i exp(−λM_ij + u_i).
inline std::vector<double> log_col_update(const Tensor& cost, double lambda, std::span<const double> log_u,
                                          std::span<const double> log_nu) {
    const std::size_t n = cost.rows(), m = cost.cols();
    Tensor z = Tensor::matrix(m, n);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < n; ++i) z(j, i) = -lambda * cost(i, j) + log_u[i];
    auto lse = logsumexp_rows(z);
    for (std::size_t j = 0; j < m; ++j) lse[j] = log_nu[j] - lse[j];
    return lse;
}

/// P = diag(e^u)·exp(−λM)·diag(e^v), assembled in log space.
inline Tensor assemble_plan(const Tensor& cost, double lambda, std::span<const double> log_u,
                            std::span<const double> log_v) {
    Tensor p = Tensor::matrix(cost.rows(), cost.cols());
    for (std::size_t i = 0; i < cost.rows(); ++i)
        for (std::size_t j = 0; j < cost.cols(); ++j) p(i, j) = std::exp(log_u[i] - lambda * cost(i, j) + log_v[j]);
    return p;
}

/// Log-domain Sinkhorn-Knopp. Iterates the dual updates from v⁰ = 0 until
/// Δ_v ≤ eps_max or max_iters, then materializes the plan.
inline TransportPlan sinkhorn_log_domain(const CostMatrix& cost, const Marginals& marg, const SinkhornConfig& cfg) {
    cfg.validate();
    const Tensor& m = cost.values;
    if (m.rank() != 2 || m.rows() != m.cols()) throw DimensionError("sinkhorn: cost must be square");
    const std::size_t n = m.rows();
    if (marg.mu().size() != n || marg.nu().size() != n)
        throw DimensionError("sinkhorn: marginals of length " + std::to_string(marg.mu().size()) + "/" +
                             std::to_string(marg.nu().size()) + " for " + std::to_string(n) + "x" + std::to_string(n) + " cost");
    if (!m.all_finite()) throw InputError("sinkhorn: cost matrix has non-finite entries");

    std::vector<double> log_mu(n), log_nu(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_mu[i] = std::log(marg.mu()[i]);
        log_nu[i] = std::log(marg.nu()[i]);
    }

    TransportPlan out;
    std::vector<double> v(n, 0.0);
    std::vector<double> u;
    double delta = std::numeric_limits<double>::infinity();
    int it = 0;
    while (it < cfg.max_iters) {
        ++it;
        u = log_row_update(m, cfg.lambda, v, log_mu);
        auto v_next = log_col_update(m, cfg.lambda, u, log_nu);
        delta = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            // Zero-mass targets pin v_j to −∞; they do not count toward Δ_v.
            if (std::isfinite(v_next[j]) && std::isfinite(v[j])) delta += std::abs(v_next[j] - v[j]);
        }
        v = std::move(v_next);
        if (delta <= cfg.eps_max) break;
    }
    out.iterations = it;
    out.residual = delta;
    out.converged = delta <= cfg.eps_max;
    out.nonconvergence_warning = !out.converged && delta > 10.0 * cfg.eps_max;
    out.plan = assemble_plan(m, cfg.lambda, u, v);
    out.log_u = std::move(u);
    out.log_v = std::move(v);
    return out;
}

/// The coupling (1/n²)·11ᵀ.
inline TransportPlan uniform_plan(std::size_t n) {
    if (n == 0) throw ContractError("uniform_plan: n must be >= 1");
    TransportPlan p;
    const double w = 1.0 / static_cast<double>(n * n);
    p.plan = Tensor::matrix(n, n, w);
    p.iterations = 0;
    p.residual = 0.0;
    p.log_u.assign(n, -std::log(static_cast<double>(n)));
    p.log_v.assign(n, -std::log(static_cast<double>(n)));
    return p;
}

/// H(P) = −Σ P log P with 0·log 0 := 0.
inline double plan_entropy(const Tensor& plan) {
    CompensatedSum h;
    for (double p : plan.data()) {
        if (p < 0.0 || !std::isfinite(p)) throw InputError("plan_entropy: plan has a negative or non-finite entry");
        if (p > 0.0) h.add(-p * std::log(p));
    }
    return h.value();
}

inline double plan_entropy(const TransportPlan& p) { return plan_entropy(p.plan); }

namespace detail {
inline double frobenius(const Tensor& p, const Tensor& m) {
    require_same_shape(p, m, "ot objective");
    CompensatedSum s;
    for (std::size_t i = 0; i < p.size(); ++i) s.add(p[i] * m[i]);
    return s.value();
}
}  // namespace detail

/// ⟨P, M⟩ − (1/λ)⟨P, log P⟩, i.e. transport cost plus entropy/λ, composed
/// with the sign as the regularized objective is commonly printed.
inline double ot_objective(const Tensor& plan, const CostMatrix& cost, double lambda) {
    if (!(lambda > 0.0)) throw ContractError("ot_objective: lambda must be positive");
    return detail::frobenius(plan, cost.values) + plan_entropy(plan) / lambda;
}

/// ⟨P, M⟩ − (1/λ)·H(P): the functional the Sinkhorn fixed point minimizes
/// over the transport polytope.
inline double entropic_cost(const Tensor& plan, const CostMatrix& cost, double lambda) {
    if (!(lambda > 0.0)) throw ContractError("entropic_cost: lambda must be positive");
    return detail::frobenius(plan, cost.values) - plan_entropy(plan) / lambda;
}

}  // namespace asag::ot
