#pragma once

// Tiny class-conditional ε-predictor over sets of 2-D points. Each set is a
// token sequence (one point per token) processed by pre-LN transformer blocks
// whose self-attention operator can be swapped per call.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "asag/attention.hpp"
#include "asag/autodiff.hpp"
#include "asag/diffusion.hpp"
#include "asag/errors.hpp"
#include "asag/tensor.hpp"

namespace asag::model {

struct DenoiserConfig {
    std::size_t point_dim = 2;
    std::size_t tokens = 16;
    std::size_t d_model = 64;
    std::size_t heads = 2;
    std::size_t layers = 4;
    std::size_t ff_hidden = 128;
    std::size_t time_dim = 32;
    std::size_t num_classes = 2;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    std::size_t d_head() const { return d_model / heads; }
    std::size_t null_class() const { return num_classes; }

    void validate() const {
        if (layers < 2) throw ContractError("denoiser needs at least 2 blocks");
        if (heads == 0 || d_model % heads != 0) throw ContractError("d_model must be divisible by heads");
        if (tokens == 0 || point_dim == 0 || time_dim == 0 || time_dim % 2 != 0)
            throw ContractError("invalid denoiser dimensions");
        if (T < 1) throw ContractError("denoiser needs T >= 1");
        if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
            throw ContractError("denoiser: need 0 < beta_start <= beta_end < 1");
    }

    diffusion::NoiseSchedule schedule() const { return diffusion::make_schedule(T, beta_start, beta_end); }
};

/// Class id or the null condition ∅.
struct Condition {
    std::optional<std::size_t> cls;

    static Condition null() { return {}; }
    static Condition of(std::size_t c) { return {c}; }
    bool is_null() const { return !cls.has_value(); }
};

/// Named parameter tensors in a fixed creation order.
struct DenoiserParams {
    DenoiserConfig config;
    std::vector<std::string> order;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ContractError("missing parameter tensor '" + name + "'");
        return it->second;
    }
    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ContractError("missing parameter tensor '" + name + "'");
        return it->second;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : tensors) n += t.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& [_, t] : tensors)
            if (!t.all_finite()) return false;
        return true;
    }

    bool operator==(const DenoiserParams& o) const { return order == o.order && tensors == o.tensors; }
};

inline std::string block_name(std::size_t i, const std::string& leaf) { return "blocks." + std::to_string(i) + "." + leaf; }

/// Parameter names and shapes in creation order.
inline std::vector<std::pair<std::string, Shape>> parameter_layout(const DenoiserConfig& c) {
    const auto d = c.d_model;
    std::vector<std::pair<std::string, Shape>> out{
        {"input.weight", {c.point_dim, d}},
        {"input.bias", {d}},
        {"time.proj1.weight", {c.time_dim, d}},
        {"time.proj1.bias", {d}},
        {"time.proj2.weight", {d, d}},
        {"time.proj2.bias", {d}},
        {"class.embedding", {c.num_classes + 1, d}},
    };
    for (std::size_t i = 0; i < c.layers; ++i) {
        for (auto [leaf, shape] : std::vector<std::pair<std::string, Shape>>{
                 {"cond.weight", {d, d}},
                 {"ln1.gain", {d}},
                 {"ln1.bias", {d}},
                 {"attn.q.weight", {d, d}},
                 {"attn.k.weight", {d, d}},
                 {"attn.v.weight", {d, d}},
                 {"attn.out.weight", {d, d}},
                 {"attn.out.bias", {d}},
                 {"ln2.gain", {d}},
                 {"ln2.bias", {d}},
                 {"ff.in.weight", {d, c.ff_hidden}},
                 {"ff.in.bias", {c.ff_hidden}},
                 {"ff.out.weight", {c.ff_hidden, d}},
                 {"ff.out.bias", {d}},
             })
            out.emplace_back(block_name(i, leaf), shape);
    }
    out.push_back({"final_ln.gain", {d}});
    out.push_back({"final_ln.bias", {d}});
    out.push_back({"head.weight", {d, c.point_dim}});
    out.push_back({"head.bias", {c.point_dim}});
    out.push_back({"skip.weight", {d, c.point_dim}});
    out.push_back({"skip.bias", {c.point_dim}});
    return out;
}

namespace detail {
inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace detail

/// Gaussian init with variance 1/fan_in; biases zero, layer-norm gains one,
/// output head and skip gate zero so the untrained model predicts ε̂ = 0.
inline DenoiserParams init_params(const DenoiserConfig& cfg, Rng& rng) {
    cfg.validate();
    DenoiserParams p;
    p.config = cfg;
    for (auto& [name, shape] : parameter_layout(cfg)) {
        Tensor t(shape, 0.0);
        if (detail::ends_with(name, ".gain")) {
            for (auto& v : t.storage()) v = 1.0;
        } else if (name.rfind("head.", 0) == 0 || name.rfind("skip.", 0) == 0 || detail::ends_with(name, ".bias")) {
            // zeros
        } else if (name == "class.embedding") {
            for (auto& v : t.storage()) v = rng.normal();
        } else {
            const double sd = 1.0 / std::sqrt(static_cast<double>(shape[0]));
            for (auto& v : t.storage()) v = sd * rng.normal();
        }
        p.order.push_back(name);
        p.tensors.emplace(name, std::move(t));
    }
    return p;
}

/// Block indices whose self-attention is replaced in a perturbed pass.
struct LayerSelection {
    std::set<std::size_t> indices;

    static LayerSelection none() { return {}; }
    static LayerSelection of(std::initializer_list<std::size_t> l) { return {std::set<std::size_t>(l)}; }
    static LayerSelection all(std::size_t layers) {
        LayerSelection s;
        for (std::size_t i = 0; i < layers; ++i) s.indices.insert(i);
        return s;
    }
    /// Default perturbation target: the middle blocks.
    static LayerSelection middle(std::size_t layers) {
        LayerSelection s;
        for (std::size_t i = 1; i + 1 < layers; ++i) s.indices.insert(i);
        if (s.indices.empty()) s.indices.insert(0);
        return s;
    }
    bool contains(std::size_t i) const { return indices.count(i) != 0; }
    bool empty() const { return indices.empty(); }
};

/// Diagnostics from one attention call inside a perturbed block.
struct AttentionRecord {
    std::size_t layer = 0;
    std::size_t set = 0;
    double mean_row_entropy = 0.0;
    std::vector<int> iterations;
    bool nonconvergence_warning = false;
};

struct AttentionObserver {
    std::vector<AttentionRecord> records;
};

/// Sinusoidal embedding table, row t for t = 0..T.
inline Tensor timestep_table(int T, std::size_t dim) {
    Tensor tab = Tensor::matrix(static_cast<std::size_t>(T) + 1, dim);
    const std::size_t half = dim / 2;
    for (int t = 0; t <= T; ++t)
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            tab(static_cast<std::size_t>(t), 2 * i) = std::sin(t * freq);
            tab(static_cast<std::size_t>(t), 2 * i + 1) = std::cos(t * freq);
        }
    return tab;
}

/// Multi-head attention over `sets` stacked sequences of `n` tokens.
/// Forward runs any mode through attn::attend; only softmax is differentiable.
inline ad::Var multi_head_attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, std::size_t n, std::size_t heads,
                                    const attn::AttentionMode& mode, std::size_t layer, AttentionObserver* observer) {
    const Tensor& qv = q.value();
    const std::size_t rows = qv.rows(), d = qv.cols(), dh = d / heads;
    if (rows % n != 0) throw DimensionError("multi_head_attention: rows not a multiple of tokens");
    const std::size_t sets = rows / n;
    Tensor out = Tensor::matrix(rows, d);
    Tensor maps({sets, heads, n, n});
    for (std::size_t s = 0; s < sets; ++s) {
        Tensor bq({heads, n, dh}), bk({heads, n, dh}), bv({heads, n, dh});
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dh; ++j) {
                    bq(h, i, j) = qv(s * n + i, h * dh + j);
                    bk(h, i, j) = k.value()(s * n + i, h * dh + j);
                    bv(h, i, j) = v.value()(s * n + i, h * dh + j);
                }
        auto r = attn::attend(attn::AttentionBatch(std::move(bq), std::move(bk), std::move(bv)), mode);
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dh; ++j) out(s * n + i, h * dh + j) = r.output(h, i, j);
        std::copy(r.maps.data().begin(), r.maps.data().end(),
                  maps.data().begin() + static_cast<std::ptrdiff_t>(s * heads * n * n));
        if (observer) {
            AttentionRecord rec;
            rec.layer = layer;
            rec.set = s;
            CompensatedSum ent;
            for (std::size_t h = 0; h < heads; ++h) {
                Tensor m = Tensor::matrix(n, n);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j) m(i, j) = r.maps(h, i, j);
                ent.add(attn::mean_row_entropy(m));
            }
            rec.mean_row_entropy = ent.value() / static_cast<double>(heads);
            rec.iterations = r.iterations;
            rec.nonconvergence_warning = r.nonconvergence_warning;
            observer->records.push_back(std::move(rec));
        }
    }

    ad::Tape& tape = *q.tape;
    const bool differentiable = mode.tag == attn::ModeTag::softmax;
    return tape.push_op(
        std::move(out), {q.id, k.id, v.id},
        [qi = q.id, ki = k.id, vi = v.id, n, heads, sets, dh, differentiable, maps = std::move(maps)](ad::Tape& t,
                                                                                                       std::size_t node) {
            if (!differentiable) throw ContractError("perturbed attention modes are inference-only");
            const Tensor g = t.grad(node);
            const Tensor& Q = t.value(qi);
            const Tensor& K = t.value(ki);
            const Tensor& V = t.value(vi);
            const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
            Tensor dq = Tensor::matrix(Q.rows(), Q.cols());
            Tensor dk = dq, dv = dq;
            std::vector<double> dp(n * n);
            for (std::size_t s = 0; s < sets; ++s)
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* P = maps.data().data() + (s * heads + h) * n * n;
                    const std::size_t r0 = s * n, c0 = h * dh;
                    // dP = dO·Vᵀ, dV = Pᵀ·dO
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < dh; ++c) acc += g(r0 + i, c0 + c) * V(r0 + j, c0 + c);
                            dp[i * n + j] = acc;
                            const double pij = P[i * n + j];
                            for (std::size_t c = 0; c < dh; ++c) dv(r0 + j, c0 + c) += pij * g(r0 + i, c0 + c);
                        }
                    // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                    for (std::size_t i = 0; i < n; ++i) {
                        double dot = 0.0;
                        for (std::size_t j = 0; j < n; ++j) dot += dp[i * n + j] * P[i * n + j];
                        for (std::size_t j = 0; j < n; ++j) {
                            const double ds = P[i * n + j] * (dp[i * n + j] - dot) * inv;
                            if (ds == 0.0) continue;
                            for (std::size_t c = 0; c < dh; ++c) {
                                dq(r0 + i, c0 + c) += ds * K(r0 + j, c0 + c);
                                dk(r0 + j, c0 + c) += ds * Q(r0 + i, c0 + c);
                            }
                        }
                    }
                }
            if (t.requires_grad(qi)) ad::detail::accumulate(t.grad(qi), dq);
            if (t.requires_grad(ki)) ad::detail::accumulate(t.grad(ki), dk);
            if (t.requires_grad(vi)) ad::detail::accumulate(t.grad(vi), dv);
        });
}

/// Parameters lifted onto a tape.
struct ParamVars {
    std::map<std::string, ad::Var> vars;
    const ad::Var& operator[](const std::string& name) const { return vars.at(name); }
};

inline ParamVars lift(ad::Tape& tape, const DenoiserParams& p, bool requires_grad) {
    ParamVars pv;
    for (const auto& name : p.order) pv.vars.emplace(name, tape.leaf(p.at(name), requires_grad));
    return pv;
}

/// Forward pass over `sets` stacked point sets: x is [sets·n, point_dim],
/// `timesteps`/`classes` have one entry per set (class index num_classes is ∅).
///
/// Output is ε̂ = F(x_t, t, c) + x_t ⊙ g(t) with a learned per-timestep gate g.
/// Without the linear path the LayerNorm-bounded head cannot track ε ≈ x_t
/// for rare large x_T, and Tweedie amplifies that error by 1/√ᾱ_T.
inline ad::Var forward(ad::Tape& tape, const DenoiserParams& params, const ParamVars& pv, const Tensor& x,
                       const std::vector<int>& timesteps, const std::vector<std::size_t>& classes,
                       const attn::AttentionMode& mode, const LayerSelection& layers, AttentionObserver* observer) {
    const auto& c = params.config;
    const std::size_t n = c.tokens;
    if (x.rank() != 2 || x.cols() != c.point_dim || x.rows() % n != 0)
        throw DimensionError("denoiser input must be [sets*" + std::to_string(n) + ", " + std::to_string(c.point_dim) +
                             "], got " + shape_string(x.shape()));
    const std::size_t sets = x.rows() / n;
    if (timesteps.size() != sets || classes.size() != sets)
        throw DimensionError("denoiser: need one timestep and class per set");

    std::vector<std::size_t> t_rows, c_rows;
    t_rows.reserve(x.rows());
    c_rows.reserve(x.rows());
    for (std::size_t s = 0; s < sets; ++s) {
        if (timesteps[s] < 0 || timesteps[s] > c.T) throw ContractError("denoiser: timestep out of range");
        if (classes[s] > c.num_classes) throw ContractError("denoiser: invalid class id " + std::to_string(classes[s]));
        for (std::size_t i = 0; i < n; ++i) {
            t_rows.push_back(static_cast<std::size_t>(timesteps[s]));
            c_rows.push_back(classes[s]);
        }
    }

    auto table = tape.constant(timestep_table(c.T, c.time_dim));
    auto temb = ad::gather_rows(table, std::move(t_rows));
    temb = ad::silu(ad::add_row(ad::matmul(temb, pv["time.proj1.weight"]), pv["time.proj1.bias"]));
    temb = ad::add_row(ad::matmul(temb, pv["time.proj2.weight"]), pv["time.proj2.bias"]);
    auto cond = ad::add(temb, ad::gather_rows(pv["class.embedding"], std::move(c_rows)));

    auto xin = tape.constant(x);
    auto h = ad::add(ad::add_row(ad::matmul(xin, pv["input.weight"]), pv["input.bias"]), cond);
    auto cond_act = ad::silu(cond);

    for (std::size_t l = 0; l < c.layers; ++l) {
        auto P = [&](const std::string& leaf) -> const ad::Var& { return pv[block_name(l, leaf)]; };
        h = ad::add(h, ad::matmul(cond_act, P("cond.weight")));
        auto a = ad::layer_norm_rows(h, P("ln1.gain"), P("ln1.bias"));
        auto q = ad::matmul(a, P("attn.q.weight"));
        auto k = ad::matmul(a, P("attn.k.weight"));
        auto v = ad::matmul(a, P("attn.v.weight"));
        const bool perturbed = layers.contains(l);
        const auto& m = perturbed ? mode : attn::AttentionMode{};
        auto att = multi_head_attention(q, k, v, n, c.heads, m, l, perturbed ? observer : nullptr);
        h = ad::add(h, ad::add_row(ad::matmul(att, P("attn.out.weight")), P("attn.out.bias")));
        auto f = ad::layer_norm_rows(h, P("ln2.gain"), P("ln2.bias"));
        f = ad::silu(ad::add_row(ad::matmul(f, P("ff.in.weight")), P("ff.in.bias")));
        h = ad::add(h, ad::add_row(ad::matmul(f, P("ff.out.weight")), P("ff.out.bias")));
    }
    auto o = ad::layer_norm_rows(h, pv["final_ln.gain"], pv["final_ln.bias"]);
    auto net = ad::add_row(ad::matmul(o, pv["head.weight"]), pv["head.bias"]);
    auto gate = ad::add_row(ad::matmul(temb, pv["skip.weight"]), pv["skip.bias"]);
    return ad::add(net, ad::mul(xin, gate));
}

inline std::size_t class_index(const DenoiserConfig& c, const Condition& cond) {
    if (cond.is_null()) return c.null_class();
    if (*cond.cls >= c.num_classes)
        throw ContractError("invalid class id " + std::to_string(*cond.cls) + " (model has " +
                            std::to_string(c.num_classes) + " classes)");
    return *cond.cls;
}

/// ε̂ for a stack of point sets sharing timestep `t` and condition `c`.
/// Blocks in `layers` use `mode`; every other block uses softmax attention.
inline Tensor predict_eps(const DenoiserParams& params, const Tensor& x_t, int t, const Condition& c,
                          const attn::AttentionMode& mode, const LayerSelection& layers,
                          AttentionObserver* observer = nullptr) {
    if (mode.tag != attn::ModeTag::softmax && layers.empty())
        throw ContractError("predict_eps: a perturbing attention mode needs a non-empty layer selection");
    for (auto i : layers.indices)
        if (i >= params.config.layers) throw ContractError("predict_eps: layer index " + std::to_string(i) + " out of range");
    const std::size_t cls = class_index(params.config, c);
    const std::size_t sets = x_t.rows() / params.config.tokens;
    ad::Tape tape(false);
    const auto pv = lift(tape, params, false);
    auto out = forward(tape, params, pv, x_t, std::vector<int>(sets, t), std::vector<std::size_t>(sets, cls), mode, layers,
                       observer);
    return out.value();
}

}  // namespace asag::model
