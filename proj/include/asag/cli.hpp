#pragma once

// Command implementations behind tools/asag_cli. Each command is a pure
// function of (settings, input files, seed) to output bytes.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "asag/datasets.hpp"
#include "asag/io.hpp"
#include "asag/sweep.hpp"
#include "asag/training.hpp"

namespace asag::cli {

namespace fs = std::filesystem;

/// Bad option value or inconsistent option combination (exit code 1).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct OptionDoc {
    std::string key;
    std::string default_value;
    std::string help;
    std::vector<std::string> commands;
    bool path = false;  // excluded from the config hash
};

inline const std::vector<OptionDoc>& option_table() {
    static const std::vector<OptionDoc> table{
        {"dataset", "gauss8", "gauss8 | checkerboard | swissroll | gauss1", {"train", "sample", "eval", "sweep"}},
        {"conditional", "true", "train a class-conditional model (false: only the null class)", {"train"}},
        {"tokens", "16", "points per set", {"train", "sample", "sweep"}},
        {"d_model", "64", "transformer width", {"train", "sample", "sweep"}},
        {"heads", "2", "attention heads", {"train", "sample", "sweep"}},
        {"layers", "4", "transformer blocks", {"train", "sample", "sweep"}},
        {"ff_hidden", "128", "feed-forward hidden width", {"train", "sample", "sweep"}},
        {"time_dim", "32", "sinusoidal timestep embedding width", {"train", "sample", "sweep"}},
        {"T", "1000", "diffusion timesteps", {"train", "sample", "sweep"}},
        {"beta_start", "0.0001", "first beta of the linear schedule", {"train", "sample", "sweep"}},
        {"beta_end", "0.02", "last beta of the linear schedule", {"train", "sample", "sweep"}},
        {"train_sets", "4096", "training point sets drawn from the dataset", {"train"}},
        {"epochs", "4", "passes over the training sets", {"train"}},
        {"batch_size", "32", "sets per optimizer step", {"train"}},
        {"lr", "0.001", "learning rate", {"train"}},
        {"optimizer", "sgd", "sgd | adam", {"train"}},
        {"p_drop", "0.1", "probability of replacing the class by the null class", {"train"}},
        {"checkpoint", "", "checkpoint directory written by train", {"sample", "sweep"}, true},
        {"method", "none", "none | cfg | pag | seg | asag | sink | uniform", {"sample", "sweep"}},
        {"scale", "auto", "guidance scale s (auto: 3.0 for pag/seg, 1.5 otherwise)", {"sample"}},
        {"scales", "0,0.5,1,1.5,2,3", "comma-separated guidance scales", {"sweep"}},
        {"cfg_scale", "off", "joint classifier-free guidance scale, or off", {"sample", "sweep"}},
        {"composition", "cfg_first", "joint guidance order: cfg_first | additive", {"sample", "sweep"}},
        {"class", "none", "class to sample, or none for the null condition", {"sample", "sweep", "eval"}},
        {"steps", "25", "DDIM sampling steps", {"sample", "sweep"}},
        {"chains", "16", "independent point sets to sample", {"sample", "sweep"}},
        {"guide_layers", "1,2", "blocks whose attention is perturbed", {"sample", "sweep"}},
        {"lambda", "auto", "Sinkhorn lambda (auto: 1/sqrt(d_head))", {"sample", "sweep", "plan"}},
        {"eps_max", "0.001", "Sinkhorn stopping threshold on the dual change", {"sample", "sweep", "plan"}},
        {"max_iters", "50", "Sinkhorn iteration cap", {"sample", "sweep", "plan"}},
        {"blur_sigma", "16", "Gaussian blur sigma over the logit row (seg)", {"sample", "sweep"}},
        {"rescale_plan", "true", "multiply Sinkhorn plans by n to get row-stochastic maps", {"sample", "sweep"}},
        {"samples", "", "samples CSV to evaluate", {"eval"}, true},
        {"trace", "", "trace JSON lines for the entropy field (default: trace.jsonl beside samples)", {"eval"}, true},
        {"reference_points", "10000", "ground-truth points drawn for comparison", {"eval", "sweep"}},
        {"q", "", "query matrix CSV (empty: seeded Gaussian)", {"plan"}, true},
        {"k", "", "key matrix CSV (empty: seeded Gaussian)", {"plan"}, true},
        {"cost", "adversarial", "adversarial (QK^T) | similarity (1 - QK^T)", {"plan"}},
        {"n", "16", "tokens for generated Q, K", {"plan"}},
        {"d", "8", "head width for generated Q, K", {"plan"}},
    };
    return table;
}

/// Resolved key → value map: defaults, then config file, then flags.
class Settings {
public:
    Settings() {
        for (const auto& o : option_table()) values_[o.key] = o.default_value;
    }

    void merge(const io::ConfigMap& m, const std::string& origin) {
        for (const auto& [k, v] : m) {
            if (!values_.count(k)) throw UsageError(origin + ": unknown key '" + k + "'");
            values_[k] = v;
        }
    }

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw UsageError("unknown option '" + key + "'");
        values_[key] = value;
    }

    const std::string& str(const std::string& key) const { return values_.at(key); }

    long long integer(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t pos = 0;
            const long long r = std::stoll(v, &pos);
            if (pos == v.size()) return r;
        } catch (const std::exception&) {
        }
        throw UsageError(key + ": expected an integer, got '" + v + "'");
    }

    std::size_t count(const std::string& key) const {
        const auto r = integer(key);
        if (r < 0) throw UsageError(key + ": must be non-negative");
        return static_cast<std::size_t>(r);
    }

    double real(const std::string& key) const {
        const auto& v = str(key);
        try {
            std::size_t pos = 0;
            const double r = std::stod(v, &pos);
            if (pos == v.size() && std::isfinite(r)) return r;
        } catch (const std::exception&) {
        }
        throw UsageError(key + ": expected a number, got '" + v + "'");
    }

    bool boolean(const std::string& key) const {
        const auto& v = str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw UsageError(key + ": expected true or false, got '" + v + "'");
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& cell : io::split_csv(str(key))) {
            try {
                std::size_t pos = 0;
                const double r = std::stod(cell, &pos);
                if (pos != cell.size() || !std::isfinite(r)) throw std::invalid_argument(cell);
                out.push_back(r);
            } catch (const std::exception&) {
                throw UsageError(key + ": expected comma-separated numbers, got '" + str(key) + "'");
            }
        }
        if (out.empty()) throw UsageError(key + ": empty list");
        return out;
    }

    /// Hash of every non-path setting.
    std::string hash() const {
        io::ConfigMap m;
        for (const auto& o : option_table())
            if (!o.path) m[o.key] = values_.at(o.key);
        return io::config_hash(m);
    }

private:
    io::ConfigMap values_;
};

// ---- settings → domain objects -------------------------------------------------

inline data::ToyDistribution distribution(const Settings& s) {
    try {
        return data::ToyDistribution(data::parse_dataset(s.str("dataset")));
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
}

inline model::DenoiserConfig model_config(const Settings& s) {
    model::DenoiserConfig c;
    c.tokens = s.count("tokens");
    c.d_model = s.count("d_model");
    c.heads = s.count("heads");
    c.layers = s.count("layers");
    c.ff_hidden = s.count("ff_hidden");
    c.time_dim = s.count("time_dim");
    c.T = static_cast<int>(s.integer("T"));
    c.beta_start = s.real("beta_start");
    c.beta_end = s.real("beta_end");
    c.num_classes = s.boolean("conditional") ? distribution(s).num_classes() : 0;
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    return c;
}

inline model::Condition condition(const Settings& s) {
    if (s.str("class") == "none") return model::Condition::null();
    const auto c = s.integer("class");
    if (c < 0) throw UsageError("class: must be a class index or none");
    return model::Condition::of(static_cast<std::size_t>(c));
}

inline guidance::GuidanceSpec guidance_spec(const Settings& s) {
    guidance::GuidanceSpec g;
    try {
        g.method = guidance::parse_method(s.str("method"));
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    if (s.str("scale") == "auto")
        g.s = (g.method == guidance::Method::pag || g.method == guidance::Method::seg) ? 3.0 : 1.5;
    else
        g.s = s.real("scale");
    if (s.str("cfg_scale") != "off") g.cfg_scale = s.real("cfg_scale");
    const auto& comp = s.str("composition");
    if (comp == "cfg_first")
        g.composition = guidance::JointComposition::cfg_first;
    else if (comp == "additive")
        g.composition = guidance::JointComposition::additive;
    else
        throw UsageError("composition: expected cfg_first or additive");
    g.layers.indices.clear();
    for (double v : s.reals("guide_layers")) {
        if (v < 0 || v != std::floor(v)) throw UsageError("guide_layers: expected block indices");
        g.layers.indices.insert(static_cast<std::size_t>(v));
    }
    if (s.str("lambda") != "auto") g.lambda_override = s.real("lambda");
    g.sinkhorn.eps_max = s.real("eps_max");
    g.sinkhorn.max_iters = static_cast<int>(s.integer("max_iters"));
    g.blur_sigma = s.real("blur_sigma");
    g.rescale_plan = s.boolean("rescale_plan");
    try {
        g.validate();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    return g;
}

// ---- commands ------------------------------------------------------------------

struct Context {
    Settings settings;
    std::uint64_t seed = 0;
    fs::path out = ".";
    std::ostream* log = &std::cout;

    io::Provenance provenance() const { return {settings.hash(), seed}; }
};

inline int cmd_train(const Context& ctx) {
    const auto& s = ctx.settings;
    const auto dist = distribution(s);
    const auto mc = model_config(s);
    model::TrainConfig tc;
    tc.epochs = static_cast<int>(s.integer("epochs"));
    tc.lr = s.real("lr");
    tc.batch_size = s.count("batch_size");
    tc.p_drop = s.real("p_drop");
    if (s.str("optimizer") == "adam")
        tc.optimizer = model::Optimizer::adam;
    else if (s.str("optimizer") != "sgd")
        throw UsageError("optimizer: expected sgd or adam");
    if (tc.epochs < 0 || tc.batch_size == 0 || tc.lr < 0 || tc.p_drop < 0 || tc.p_drop > 1)
        throw UsageError("invalid training budget");

    Rng root(ctx.seed);
    Rng data_rng = root.substream(0), init_rng = root.substream(1), train_rng = root.substream(2);
    const auto sets = data::make_point_sets(dist, s.count("train_sets"), mc.tokens, data_rng);
    if (sets.size() == 0) throw UsageError("train_sets must be positive");
    auto params = model::init_params(mc, init_rng);
    const auto res = model::train(std::move(params), sets, mc.schedule(), train_rng, tc);

    const auto prov = ctx.provenance();
    const double final_loss = res.loss_curve.empty() ? 0.0 : res.loss_curve.back();
    io::save_checkpoint(ctx.out / "checkpoint", res.params,
                        {s.str("dataset"), res.loss_curve.size(), final_loss, ctx.seed, prov.config_hash});
    io::write_loss_curve(ctx.out / "loss.csv", res.loss_curve, prov);
    if (!res.loss_curve.empty())
        *ctx.log << "trained " << res.loss_curve.size() << " steps, loss " << io::fmt(res.loss_curve.front()) << " -> "
                 << io::fmt(final_loss) << "\n";
    return 0;
}

inline io::Checkpoint load_compatible(const Settings& s) {
    if (s.str("checkpoint").empty()) throw UsageError("--checkpoint is required");
    auto ck = io::load_checkpoint(s.str("checkpoint"));
    auto expected = model_config(s);
    // A checkpoint trained without classes stays unconditional.
    expected.num_classes = ck.params.config.num_classes;
    const auto bad = io::incompatible_tensors(ck.params, expected);
    if (!bad.empty()) {
        std::string msg = "checkpoint does not match the configured model; offending tensors:";
        for (const auto& b : bad) msg += " " + b;
        throw InputError(msg);
    }
    const auto& c = ck.params.config;
    if (c.T != expected.T || c.beta_start != expected.beta_start || c.beta_end != expected.beta_end)
        throw InputError("checkpoint was trained with a different noise schedule");
    return ck;
}

inline void check_condition(const model::Condition& c, const model::DenoiserConfig& mc) {
    if (!c.is_null() && *c.cls >= mc.num_classes)
        throw UsageError("class " + std::to_string(*c.cls) + " out of range for a model with " +
                         std::to_string(mc.num_classes) + " classes");
}

inline int cmd_sample(const Context& ctx) {
    const auto& s = ctx.settings;
    const auto ck = load_compatible(s);
    const auto spec = guidance_spec(s);
    const auto c = condition(s);
    check_condition(c, ck.params.config);
    if (spec.method == guidance::Method::cfg && ck.params.config.num_classes == 0)
        throw UsageError("cfg guidance needs a class-conditional checkpoint");
    const auto chains = s.count("chains");
    const auto steps = static_cast<int>(s.integer("steps"));
    if (chains == 0) throw UsageError("chains must be positive");
    if (steps < 1 || steps > ck.params.config.T) throw UsageError("steps must lie in 1..T");

    const auto res = guidance::asag_sample(ck.params, ck.params.config.schedule(), spec, c, steps, chains, Rng(ctx.seed));
    const auto prov = ctx.provenance();
    io::write_samples(ctx.out / "samples.csv", res.samples, ck.params.config.tokens, prov);
    io::write_trace(ctx.out / "trace.jsonl", res.trace, prov);
    *ctx.log << "sampled " << chains << " chains x " << steps << " steps (" << guidance::to_string(spec.method) << ")\n";
    return 0;
}

inline double trace_mean_entropy(const fs::path& path, bool& found) {
    found = false;
    std::ifstream in(path);
    if (!in) return 0.0;
    CompensatedSum sum;
    std::size_t count = 0;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (io::trim(line).empty()) continue;
        try {
            sum.add(io::json::parse(line).at("plan_entropy").get<double>());
        } catch (const io::json::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ++count;
    }
    if (count == 0) return 0.0;
    found = true;
    return sum.value() / static_cast<double>(count);
}

inline int cmd_eval(const Context& ctx) {
    const auto& s = ctx.settings;
    if (s.str("samples").empty()) throw UsageError("--samples is required");
    const fs::path samples_path = s.str("samples");
    const auto table = io::read_samples(samples_path);
    const auto dist = distribution(s);
    const auto c = condition(s);
    if (!c.is_null() && *c.cls >= dist.num_classes()) throw UsageError("class out of range for the dataset");
    const auto cls = c.cls;

    Rng ref_rng = Rng(ctx.seed).substream(7);
    const Tensor ref = data::sample_points(dist, s.count("reference_points"), ref_rng, cls);
    if (ref.rows() == 0) throw UsageError("reference_points must be positive");

    metrics::MetricReport rep;
    rep.energy_distance = metrics::energy_distance(table.points, ref);
    rep.mode_coverage = metrics::mode_coverage(table.points, dist.mode_centers(cls), dist.coverage_radius());
    const fs::path trace_path =
        s.str("trace").empty() ? samples_path.parent_path() / "trace.jsonl" : fs::path(s.str("trace"));
    bool found = false;
    rep.mean_plan_entropy = trace_mean_entropy(trace_path, found);
    if (!std::isfinite(rep.energy_distance) || !std::isfinite(rep.mean_plan_entropy))
        throw NumericalError("metric is not finite", 0);

    auto j = io::report_json(rep, ctx.provenance());
    j["entropy_source"] = found ? "trace" : "none";
    j["samples"] = table.points.rows();
    io::write_json(ctx.out / "metrics.json", j);
    *ctx.log << "energy_distance " << io::fmt(rep.energy_distance) << " mode_coverage " << io::fmt(rep.mode_coverage)
             << "\n";
    return 0;
}

inline int cmd_plan(const Context& ctx) {
    const auto& s = ctx.settings;
    Tensor q, k;
    if (s.str("q").empty() != s.str("k").empty()) throw UsageError("give both --q and --k, or neither");
    if (!s.str("q").empty()) {
        q = io::read_matrix(s.str("q"));
        k = io::read_matrix(s.str("k"));
        if (q.shape() != k.shape())
            throw InputError("Q and K shapes differ: " + shape_string(q.shape()) + " vs " + shape_string(k.shape()));
    } else {
        const auto n = s.count("n"), d = s.count("d");
        if (n == 0 || d == 0) throw UsageError("n and d must be positive");
        Rng rng(ctx.seed);
        q = gaussian(rng, {n, d});
        k = gaussian(rng, {n, d});
    }
    const auto& orient = s.str("cost");
    ot::CostMatrix cost;
    if (orient == "adversarial")
        cost = ot::adversarial_cost(q, k);
    else if (orient == "similarity")
        cost = ot::similarity_cost(q, k);
    else
        throw UsageError("cost: expected adversarial or similarity");

    ot::SinkhornConfig cfg;
    cfg.lambda = s.str("lambda") == "auto" ? 1.0 / std::sqrt(static_cast<double>(q.cols())) : s.real("lambda");
    cfg.eps_max = s.real("eps_max");
    cfg.max_iters = static_cast<int>(s.integer("max_iters"));
    try {
        cfg.validate();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
    const auto plan = ot::sinkhorn_log_domain(cost, ot::Marginals::uniform(cost.n()), cfg);
    if (!plan.plan.all_finite()) throw NumericalError("transport plan is not finite", static_cast<std::size_t>(plan.iterations));

    const auto prov = ctx.provenance();
    io::write_matrix(ctx.out / "plan.csv", plan.plan, prov);
    io::json j{{"iterations", plan.iterations},
               {"residual", plan.residual},
               {"entropy", ot::plan_entropy(plan)},
               {"converged", plan.converged},
               {"nonconvergence_warning", plan.nonconvergence_warning},
               {"lambda", cfg.lambda},
               {"cost", orient},
               {"n", cost.n()},
               {"config_hash", prov.config_hash},
               {"seed", prov.seed}};
    io::write_json(ctx.out / "plan.json", j);
    *ctx.log << "plan: " << plan.iterations << " iterations, residual " << io::fmt(plan.residual) << "\n";
    return 0;
}

inline int cmd_sweep(const Context& ctx) {
    const auto& s = ctx.settings;
    const auto ck = load_compatible(s);
    const auto spec = guidance_spec(s);
    const auto c = condition(s);
    check_condition(c, ck.params.config);
    const auto scales = s.reals("scales");
    for (double v : scales)
        if (v < 0) throw UsageError("scales must be non-negative");
    const auto chains = s.count("chains");
    const auto steps = static_cast<int>(s.integer("steps"));
    if (chains == 0) throw UsageError("chains must be positive");
    if (steps < 1 || steps > ck.params.config.T) throw UsageError("steps must lie in 1..T");

    const auto dist = distribution(s);
    Rng ref_rng = Rng(ctx.seed).substream(7);
    guidance::Reference ref{data::sample_points(dist, s.count("reference_points"), ref_rng, c.cls), dist.mode_centers(c.cls),
                            dist.coverage_radius()};
    const auto rows =
        guidance::scale_sweep(ck.params, ck.params.config.schedule(), spec, scales, c, steps, chains, Rng(ctx.seed), ref);
    io::write_sweep(ctx.out / "sweep.csv", rows, ctx.provenance());
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].energy_distance < rows[best].energy_distance) best = i;
    *ctx.log << "sweep: lowest energy distance at s = " << io::fmt(rows[best].scale) << "\n";
    return 0;
}

}  // namespace asag::cli
