#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "asag/attention.hpp"
#include "asag/diffusion.hpp"
#include "asag/errors.hpp"
#include "asag/model.hpp"
#include "asag/sinkhorn.hpp"
#include "asag/tensor.hpp"

namespace asag::guidance {

/// How the weakened prediction ε̃ is produced.
enum class Method {
    none,
    cfg,      // condition dropped
    pag,      // identity attention
    seg,      // blurred attention logits
    asag,     // adversarial Sinkhorn attention
    sink,     // similarity-maximizing Sinkhorn attention (cost-direction ablation)
    uniform,  // uniform attention map (max-entropy ablation)
};

inline const char* to_string(Method m) {
    switch (m) {
        case Method::none: return "none";
        case Method::cfg: return "cfg";
        case Method::pag: return "pag";
        case Method::seg: return "seg";
        case Method::asag: return "asag";
        case Method::sink: return "sink";
        case Method::uniform: return "uniform";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    for (auto m : {Method::none, Method::cfg, Method::pag, Method::seg, Method::asag, Method::sink, Method::uniform})
        if (s == to_string(m)) return m;
    throw ContractError("unknown guidance method '" + s + "'");
}

/// Order in which joint CFG and perturbation guidance are combined.
enum class JointComposition {
    cfg_first,  // ε̄ = cfg(ε_c, ε_u); ε̄_w = cfg(ε̃_c, ε̃_u); ε' = ε̄ + s(ε̄ − ε̄_w)
    additive,   // ε' = ε_c + w(ε_c − ε_u) + s(ε_c − ε̃_c)
};

struct GuidanceSpec {
    Method method = Method::none;
    double s = 0.0;
    std::optional<double> cfg_scale;  // joint CFG when set
    JointComposition composition = JointComposition::cfg_first;
    model::LayerSelection layers = model::LayerSelection::of({1, 2});
    ot::SinkhornConfig sinkhorn{};
    std::optional<double> lambda_override;
    double blur_sigma = 16.0;
    bool rescale_plan = true;

    bool perturbs_attention() const {
        return method == Method::pag || method == Method::seg || method == Method::asag || method == Method::sink ||
               method == Method::uniform;
    }

    bool sinkhorn_backed() const { return method == Method::asag || method == Method::sink; }

    attn::AttentionMode attention_mode() const {
        attn::AttentionMode m;
        m.sinkhorn = sinkhorn;
        m.lambda_override = lambda_override;
        m.blur_sigma = blur_sigma;
        m.rescale_plan = rescale_plan;
        switch (method) {
            case Method::pag: m.tag = attn::ModeTag::identity; break;
            case Method::seg: m.tag = attn::ModeTag::blurred; break;
            case Method::asag: m.tag = attn::ModeTag::asa; break;
            case Method::sink: m.tag = attn::ModeTag::sinkhorn_similarity; break;
            case Method::uniform: m.tag = attn::ModeTag::uniform; break;
            default: m.tag = attn::ModeTag::softmax; break;
        }
        return m;
    }

    void validate() const {
        if (!(s >= 0.0) || !std::isfinite(s)) throw ContractError("guidance scale s must be >= 0");
        if (cfg_scale && !(*cfg_scale >= 0.0)) throw ContractError("cfg scale must be >= 0");
        if (blur_sigma < 0.0) throw ContractError("blur sigma must be >= 0");
        if (perturbs_attention() && layers.empty()) throw ContractError("perturbation guidance needs a layer selection");
        sinkhorn.validate();
    }
};

/// ε + s·(ε − ε̃)
inline Tensor guided_epsilon(const Tensor& eps, const Tensor& eps_weak, double s) {
    require_same_shape(eps, eps_weak, "guided_epsilon");
    if (!(s >= 0.0)) throw ContractError("guided_epsilon: s must be >= 0");
    Tensor out = eps;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = eps[i] + s * (eps[i] - eps_weak[i]);
    return out;
}

/// δ = ε − ε̃
inline Tensor guidance_energy(const Tensor& eps, const Tensor& eps_weak) {
    require_same_shape(eps, eps_weak, "guidance_energy");
    return eps - eps_weak;
}

/// One (chain, step) record.
struct TraceRecord {
    std::size_t chain = 0;
    std::size_t step = 0;
    int t = 0;
    double delta_norm = 0.0;
    /// Mean row entropy of the attention maps in the selected layers, taken
    /// from the weakened pass (or the base pass when there is none).
    double plan_entropy = 0.0;
    /// Same statistic for the unperturbed softmax maps.
    double base_entropy = 0.0;
    std::vector<int> sinkhorn_iterations;  // empty unless Sinkhorn-backed
};

struct GuidanceTrace {
    Method method = Method::none;
    std::size_t steps = 0;
    std::vector<TraceRecord> records;  // chain-major
};

struct SampleResult {
    Tensor samples;  // [chains·n, 2], chain-major
    GuidanceTrace trace;
};

namespace detail {

struct SetStats {
    std::vector<double> entropy_sum;
    std::vector<std::size_t> entropy_count;
    std::vector<std::vector<int>> iterations;
};

inline SetStats collect(const model::AttentionObserver& obs, std::size_t sets) {
    SetStats st{std::vector<double>(sets, 0.0), std::vector<std::size_t>(sets, 0), std::vector<std::vector<int>>(sets)};
    for (const auto& r : obs.records) {
        st.entropy_sum[r.set] += r.mean_row_entropy;
        st.entropy_count[r.set] += 1;
        st.iterations[r.set].insert(st.iterations[r.set].end(), r.iterations.begin(), r.iterations.end());
    }
    return st;
}

inline Tensor set_rows(const Tensor& x, std::size_t set, std::size_t n) {
    const std::size_t d = x.cols();
    return Tensor::matrix(n, d,
                          std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(set * n * d),
                                              x.data().begin() + static_cast<std::ptrdiff_t>((set + 1) * n * d)));
}

}  // namespace detail

/// Initial x_T for `chains` chains; chain i draws from substream i so the
/// same seed gives the same start regardless of method or scale.
inline Tensor initial_noise(const model::DenoiserConfig& cfg, std::size_t chains, const Rng& rng) {
    Tensor x = Tensor::matrix(chains * cfg.tokens, cfg.point_dim);
    for (std::size_t c = 0; c < chains; ++c) {
        Rng sub = rng.substream(c);
        for (std::size_t i = 0; i < cfg.tokens * cfg.point_dim; ++i) x[c * cfg.tokens * cfg.point_dim + i] = sub.normal();
    }
    return x;
}

/// Guided deterministic DDIM sampling over `steps` timesteps for `chains`
/// independent point sets.
inline SampleResult asag_sample(const model::DenoiserParams& params, const diffusion::NoiseSchedule& sched,
                                const GuidanceSpec& spec, const model::Condition& c, int steps, std::size_t chains,
                                const Rng& rng) {
    spec.validate();
    const auto& mc = params.config;
    if (sched.alpha_bars() != mc.schedule().alpha_bars()) throw ContractError("asag_sample: schedule does not match the model's");
    if (spec.method == Method::cfg && c.is_null())
        throw ContractError("asag_sample: cfg guidance needs a class condition to guide toward");
    if (spec.method == Method::cfg && mc.num_classes == 0)
        throw ContractError("asag_sample: cfg guidance needs a class-conditional model");
    if (chains == 0) throw ContractError("asag_sample: need at least one chain");
    const bool joint_cfg = spec.cfg_scale.has_value() && !c.is_null() && spec.method != Method::cfg;
    const std::size_t n = mc.tokens;
    const auto ts = diffusion::sampling_timesteps(sched.T(), steps);
    const auto mode = spec.attention_mode();
    const auto softmax = attn::AttentionMode::softmax();
    const auto null = model::Condition::null();

    SampleResult res;
    res.trace.method = spec.method;
    res.trace.steps = ts.size();
    std::vector<TraceRecord> records(chains * ts.size());

    Tensor x = initial_noise(mc, chains, rng);
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;

        model::AttentionObserver base_obs;
        const Tensor eps_c = model::predict_eps(params, x, t, c, softmax, spec.layers, &base_obs);
        Tensor eps = eps_c;
        std::optional<Tensor> eps_u;
        if (joint_cfg || spec.method == Method::cfg) eps_u = model::predict_eps(params, x, t, null, softmax, spec.layers);
        if (joint_cfg) eps = guided_epsilon(eps_c, *eps_u, *spec.cfg_scale);

        std::optional<Tensor> delta;
        model::AttentionObserver weak_obs;
        if (spec.s > 0.0 && spec.method != Method::none) {
            if (spec.method == Method::cfg) {
                delta = guidance_energy(eps_c, *eps_u);
                eps = guided_epsilon(eps_c, *eps_u, spec.s);
            } else {
                const Tensor weak_c = model::predict_eps(params, x, t, c, mode, spec.layers, &weak_obs);
                if (joint_cfg && spec.composition == JointComposition::cfg_first) {
                    const Tensor weak_u = model::predict_eps(params, x, t, null, mode, spec.layers);
                    const Tensor weak = guided_epsilon(weak_c, weak_u, *spec.cfg_scale);
                    delta = guidance_energy(eps, weak);
                    eps = guided_epsilon(eps, weak, spec.s);
                } else {
                    delta = guidance_energy(eps_c, weak_c);
                    Tensor out = eps;
                    for (std::size_t i = 0; i < out.size(); ++i) out[i] += spec.s * (*delta)[i];
                    eps = std::move(out);
                }
            }
        }

        const auto base_stats = detail::collect(base_obs, chains);
        const auto weak_stats = detail::collect(weak_obs, chains);
        for (std::size_t ch = 0; ch < chains; ++ch) {
            auto& rec = records[ch * ts.size() + k];
            rec.chain = ch;
            rec.step = k;
            rec.t = t;
            if (delta) rec.delta_norm = l2_norm(detail::set_rows(*delta, ch, n));
            rec.base_entropy = base_stats.entropy_count[ch]
                                   ? base_stats.entropy_sum[ch] / static_cast<double>(base_stats.entropy_count[ch])
                                   : 0.0;
            rec.plan_entropy = weak_stats.entropy_count[ch]
                                   ? weak_stats.entropy_sum[ch] / static_cast<double>(weak_stats.entropy_count[ch])
                                   : rec.base_entropy;
            if (spec.sinkhorn_backed()) rec.sinkhorn_iterations = weak_stats.iterations[ch];
        }

        x = diffusion::ddim_step(x, eps, t, t_prev, sched);
        if (!x.all_finite()) throw NumericalError("sampling produced non-finite values", k);
    }
    res.samples = std::move(x);
    res.trace.records = std::move(records);
    return res;
}

}  // namespace asag::guidance
