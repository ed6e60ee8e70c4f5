#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "asag/errors.hpp"
#include "asag/sinkhorn.hpp"
#include "asag/tensor.hpp"

namespace asag::attn {

/// Query/key/value triplet, each [heads, n, d_head].
struct AttentionBatch {
    Tensor q, k, v;

    AttentionBatch(Tensor q_, Tensor k_, Tensor v_) : q(std::move(q_)), k(std::move(k_)), v(std::move(v_)) {
        if (q.rank() != 3) throw DimensionError("attention batch tensors must be [heads, n, d_head]");
        require_same_shape(q, k, "attention batch q/k");
        require_same_shape(q, v, "attention batch q/v");
        if (heads() == 0 || n() == 0 || d_head() == 0) throw DimensionError("attention batch has an empty dimension");
    }

    /// Single-head batch from [n, d] matrices.
    static AttentionBatch single(const Tensor& q, const Tensor& k, const Tensor& v) {
        return AttentionBatch(q.reshaped({1, q.rows(), q.cols()}), k.reshaped({1, k.rows(), k.cols()}),
                              v.reshaped({1, v.rows(), v.cols()}));
    }

    std::size_t heads() const { return q.shape()[0]; }
    std::size_t n() const { return q.shape()[1]; }
    std::size_t d_head() const { return q.shape()[2]; }

    Tensor head_q(std::size_t h) const { return slice(q, h); }
    Tensor head_k(std::size_t h) const { return slice(k, h); }
    Tensor head_v(std::size_t h) const { return slice(v, h); }

private:
    static Tensor slice(const Tensor& t, std::size_t h) {
        const std::size_t n = t.shape()[1], d = t.shape()[2];
        std::vector<double> data(t.data().begin() + static_cast<std::ptrdiff_t>(h * n * d),
                                 t.data().begin() + static_cast<std::ptrdiff_t>((h + 1) * n * d));
        return Tensor::matrix(n, d, std::move(data));
    }
};

enum class ModeTag { softmax, sinkhorn_similarity, asa, identity, blurred, uniform };

inline const char* to_string(ModeTag t) {
    switch (t) {
        case ModeTag::softmax: return "softmax";
        case ModeTag::sinkhorn_similarity: return "sinkhorn_similarity";
        case ModeTag::asa: return "asa";
        case ModeTag::identity: return "identity";
        case ModeTag::blurred: return "blurred";
        case ModeTag::uniform: return "uniform";
    }
    return "?";
}

inline bool is_sinkhorn(ModeTag t) { return t == ModeTag::sinkhorn_similarity || t == ModeTag::asa; }

struct AttentionMode {
    ModeTag tag = ModeTag::softmax;
    ot::SinkhornConfig sinkhorn{};      // lambda ignored unless lambda_override is set
    std::optional<double> lambda_override;
    double blur_sigma = 0.0;
    /// Scale the coupling by n so rows sum to 1 before multiplying V.
    bool rescale_plan = true;

    static AttentionMode softmax() { return {}; }
    static AttentionMode of(ModeTag tag) {
        AttentionMode m;
        m.tag = tag;
        return m;
    }
    static AttentionMode blurred(double sigma) {
        AttentionMode m;
        m.tag = ModeTag::blurred;
        m.blur_sigma = sigma;
        return m;
    }

    /// Solver configuration with λ = 1/√d_head unless overridden.
    ot::SinkhornConfig solver_config(std::size_t d_head) const {
        ot::SinkhornConfig cfg = sinkhorn;
        cfg.lambda = lambda_override.value_or(1.0 / std::sqrt(static_cast<double>(d_head)));
        return cfg;
    }
};

/// Output plus the per-head attention maps that produced it.
struct AttentionResult {
    Tensor output;            // [heads, n, d_head]
    Tensor maps;              // [heads, n, n]
    std::vector<int> iterations;  // Sinkhorn iterations per head (0 when not Sinkhorn)
    std::vector<double> residuals;
    bool nonconvergence_warning = false;
};

// ---------------------------------------------------------------------------

/// Normalized 1-D Gaussian taps on offsets −r..r with r = ⌈3σ⌉.
inline std::vector<double> gaussian_kernel(double sigma) {
    if (sigma < 0.0) throw ContractError("gaussian_kernel: sigma must be >= 0");
    if (sigma == 0.0) return {1.0};
    const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
    std::vector<double> w(2 * radius + 1);
    CompensatedSum s;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double x = static_cast<double>(i) - static_cast<double>(radius);
        w[i] = std::exp(-0.5 * (x / sigma) * (x / sigma));
        s.add(w[i]);
    }
    const double total = s.value();
    for (auto& v : w) v /= total;
    return w;
}

/// Blur each row of `logits` along the column index with a truncated,
/// renormalized Gaussian and half-sample symmetric padding.
inline Tensor blur_rows(const Tensor& logits, double sigma) {
    if (sigma < 0.0) throw ContractError("blur_rows: sigma must be >= 0");
    if (sigma == 0.0) return logits;
    const std::size_t n = logits.cols();
    const std::size_t period = 2 * n;
    // Symmetric padding is periodic with period 2n, so the taps fold into
    // 2n residues regardless of how wide the kernel is.
    const auto radius = static_cast<long long>(std::ceil(3.0 * sigma));
    std::vector<CompensatedSum> folded(period);
    CompensatedSum total;
    for (long long k = -radius; k <= radius; ++k) {
        const double x = static_cast<double>(k) / sigma;
        const double w = std::exp(-0.5 * x * x);
        const auto r = static_cast<std::size_t>(((k % static_cast<long long>(period)) + static_cast<long long>(period)) %
                                                static_cast<long long>(period));
        folded[r].add(w);
        total.add(w);
    }
    // effective[j][m]: weight of column m when producing column j.
    Tensor effective = Tensor::matrix(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t r = 0; r < period; ++r) {
            const std::size_t idx = (j + r) % period;
            const std::size_t m = idx < n ? idx : period - 1 - idx;
            effective(j, m) += folded[r].value() / total.value();
        }
    return matmul_nt(logits, effective);
}

namespace detail {

inline Tensor scaled_scores(const Tensor& q, const Tensor& k) {
    Tensor s = matmul_nt(q, k);
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    for (auto& v : s.storage()) v *= inv;
    return s;
}

inline void put_head(Tensor& dst, std::size_t h, const Tensor& src) {
    const std::size_t block = src.size();
    std::copy(src.data().begin(), src.data().end(), dst.data().begin() + static_cast<std::ptrdiff_t>(h * block));
}

}  // namespace detail

/// Attention map for one head under `mode`; also reports solver diagnostics.
inline Tensor head_map(const Tensor& q, const Tensor& k, const AttentionMode& mode, int* iterations = nullptr,
                       double* residual = nullptr, bool* warning = nullptr) {
    const std::size_t n = q.rows();
    if (iterations) *iterations = 0;
    if (residual) *residual = 0.0;
    switch (mode.tag) {
        case ModeTag::softmax: return softmax_rows(detail::scaled_scores(q, k));
        case ModeTag::blurred: return softmax_rows(blur_rows(detail::scaled_scores(q, k), mode.blur_sigma));
        case ModeTag::identity: {
            Tensor eye = Tensor::matrix(n, n);
            for (std::size_t i = 0; i < n; ++i) eye(i, i) = 1.0;
            return eye;
        }
        case ModeTag::uniform: return Tensor::matrix(n, n, 1.0 / static_cast<double>(n));
        case ModeTag::sinkhorn_similarity:
        case ModeTag::asa: {
            const auto cost = mode.tag == ModeTag::asa ? ot::adversarial_cost(q, k) : ot::similarity_cost(q, k);
            auto plan = ot::sinkhorn_log_domain(cost, ot::Marginals::uniform(n), mode.solver_config(q.cols()));
            if (iterations) *iterations = plan.iterations;
            if (residual) *residual = plan.residual;
            if (warning) *warning = plan.nonconvergence_warning;
            if (mode.rescale_plan)
                for (auto& v : plan.plan.storage()) v *= static_cast<double>(n);
            return std::move(plan.plan);
        }
    }
    throw ContractError("unknown attention mode");
}

/// Applies `mode` independently per head.
inline AttentionResult attend(const AttentionBatch& b, const AttentionMode& mode) {
    AttentionResult r;
    const std::size_t heads = b.heads(), n = b.n(), d = b.d_head();
    r.output = Tensor({heads, n, d});
    r.maps = Tensor({heads, n, n});
    r.iterations.assign(heads, 0);
    r.residuals.assign(heads, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor v = b.head_v(h);
        if (mode.tag == ModeTag::identity) {
            // Identity map: V passes through untouched.
            detail::put_head(r.output, h, v);
            detail::put_head(r.maps, h, head_map(v, v, mode));
            continue;
        }
        bool warn = false;
        const Tensor map = head_map(b.head_q(h), b.head_k(h), mode, &r.iterations[h], &r.residuals[h], &warn);
        r.nonconvergence_warning = r.nonconvergence_warning || warn;
        detail::put_head(r.maps, h, map);
        detail::put_head(r.output, h, matmul(map, v));
    }
    return r;
}

/// SoftMax(QKᵀ/√d)·V per head.
inline Tensor self_attention(const AttentionBatch& b) { return attend(b, AttentionMode::softmax()).output; }

/// Similarity-maximizing Sinkhorn attention, cost 1 − QKᵀ.
inline Tensor sinkhorn_attention(const AttentionBatch& b, const ot::SinkhornConfig& cfg, bool rescale = true) {
    AttentionMode m = AttentionMode::of(ModeTag::sinkhorn_similarity);
    m.sinkhorn = cfg;
    m.lambda_override = cfg.lambda;
    m.rescale_plan = rescale;
    return attend(b, m).output;
}

/// Adversarial Sinkhorn attention, cost QKᵀ.
inline Tensor adversarial_sinkhorn_attention(const AttentionBatch& b, const ot::SinkhornConfig& cfg, bool rescale = true) {
    AttentionMode m = AttentionMode::of(ModeTag::asa);
    m.sinkhorn = cfg;
    m.lambda_override = cfg.lambda;
    m.rescale_plan = rescale;
    return attend(b, m).output;
}

inline Tensor identity_attention(const AttentionBatch& b) { return b.v; }

inline Tensor blurred_attention(const AttentionBatch& b, double sigma) {
    if (sigma < 0.0) throw ContractError("blurred_attention: sigma must be >= 0");
    return attend(b, AttentionMode::blurred(sigma)).output;
}

inline Tensor uniform_attention(const AttentionBatch& b) { return attend(b, AttentionMode::of(ModeTag::uniform)).output; }

/// Mean over rows of the Shannon entropy of each attention row.
inline double mean_row_entropy(const Tensor& map) {
    CompensatedSum total;
    for (std::size_t i = 0; i < map.rows(); ++i) {
        double h = 0.0;
        for (double p : map.row(i))
            if (p > 0.0) h -= p * std::log(p);
        total.add(h);
    }
    return total.value() / static_cast<double>(map.rows());
}

}  // namespace asag::attn
