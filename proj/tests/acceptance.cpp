// Acceptance run: one PASS/FAIL line per criterion, plus indented detail lines.
// Exit status is nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "asag/cli.hpp"
#include "oracles.hpp"

using namespace asag;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void detail(const std::string& s) { std::printf("    %s\n", s.c_str()); }

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Outcome {
    bool pass = false;
    std::string summary;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double secs) {
    std::printf("[%s] %d. %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.summary.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
}

template <class F>
void criterion(int id, const std::string& name, F&& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o, seconds_since(t0));
}

ot::SinkhornConfig tight(double lambda) { return {lambda, 1e-12, 100000}; }

double marginal_violation(const Tensor& p) { return ot::marginal_error(p, ot::Marginals::uniform(p.rows())); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a));
    std::size_t count_b = 0;
    for (const auto& e : fs::recursive_directory_iterator(b)) count_b += e.is_regular_file();
    if (files.empty() || files.size() != count_b) return false;
    for (const auto& f : files)
        if (slurp(a / f) != slurp(b / f)) return false;
    return true;
}

// ---- 1. Sinkhorn correctness ------------------------------------------------------

Outcome sinkhorn_correctness() {
    const std::size_t sizes[] = {2, 4, 8, 16};
    const double lambdas[] = {0.1, 1.0, 1.0 / std::sqrt(32.0)};
    double worst_marg = 0.0, worst_oracle = 0.0;
    int instances = 0, unconverged = 0;
    Rng rng(1001);
    for (int k = 0; k < 200; ++k) {
        const std::size_t n = sizes[k % 4];
        const double lambda = lambdas[(k / 4) % 3];
        const auto cost = ot::CostMatrix::from(gaussian(rng, {n, n}));
        const auto p = ot::sinkhorn_log_domain(cost, ot::Marginals::uniform(n), tight(lambda));
        unconverged += !p.converged;
        worst_marg = std::max(worst_marg, marginal_violation(p.plan));
        if (n <= 4) {
            const Tensor ref = oracle::sinkhorn_plain(cost.values, lambda, oracle::uniform(n), oracle::uniform(n));
            worst_oracle = std::max(worst_oracle, max_abs_diff(p.plan, ref));
        }
        ++instances;
    }
    detail("instances " + std::to_string(instances) + ", unconverged " + std::to_string(unconverged));
    detail("max marginal violation " + num(worst_marg) + " (limit 1e-6)");
    detail("max |P - P_oracle| for n <= 4: " + num(worst_oracle) + " (limit 1e-8)");
    return {unconverged == 0 && worst_marg <= 1e-6 && worst_oracle <= 1e-8,
            "marginals " + num(worst_marg) + ", oracle gap " + num(worst_oracle)};
}

// ---- 2. vanishing-λ limit -----------------------------------------------------------

Outcome uniform_limit() {
    const double lambdas[] = {1.0, 1e-2, 1e-4, 1e-8};
    Rng rng(1002);
    double worst_final = 0.0;
    int non_monotone = 0, trials = 0;
    for (std::size_t n : {2u, 4u, 8u, 16u})
        for (int k = 0; k < 25; ++k) {
            const auto cost = ot::CostMatrix::from(gaussian(rng, {n, n}));
            const double u = 1.0 / static_cast<double>(n * n);
            double prev = INFINITY;
            for (double lambda : lambdas) {
                const auto p = ot::sinkhorn_log_domain(cost, ot::Marginals::uniform(n), tight(lambda));
                double dev = 0.0;
                for (double v : p.plan.data()) dev = std::max(dev, std::abs(v - u));
                non_monotone += dev > prev;
                prev = dev;
            }
            worst_final = std::max(worst_final, prev);
            ++trials;
        }
    detail("costs " + std::to_string(trials) + "; max deviation at lambda=1e-8: " + num(worst_final) + " (limit 1e-4)");
    detail("monotonicity violations: " + std::to_string(non_monotone));
    return {worst_final <= 1e-4 && non_monotone == 0,
            "deviation " + num(worst_final) + ", violations " + std::to_string(non_monotone)};
}

// ---- 3. entropy bound ---------------------------------------------------------------

Outcome entropy_bound() {
    Rng rng(1003);
    int above = 0, near_equal = 0, plans = 0;
    double min_gap = INFINITY;
    for (std::size_t n : {2u, 3u, 4u, 8u, 16u})
        for (double lambda : {0.1, 1.0, 1.0 / std::sqrt(32.0), 3.0})
            for (int k = 0; k < 10; ++k) {
                const auto p = ot::sinkhorn_log_domain(ot::CostMatrix::from(gaussian(rng, {n, n})),
                                                       ot::Marginals::uniform(n), tight(lambda));
                const double gap = 2.0 * std::log(static_cast<double>(n)) - ot::plan_entropy(p);
                above += gap < -1e-12;
                near_equal += gap <= 1e-6;
                min_gap = std::min(min_gap, gap);
                ++plans;
            }
    double uniform_gap = 0.0;
    for (std::size_t n = 1; n <= 64; ++n)
        uniform_gap = std::max(uniform_gap,
                               std::abs(ot::plan_entropy(ot::uniform_plan(n)) - 2.0 * std::log(static_cast<double>(n))));
    detail("converged plans " + std::to_string(plans) + ", bound violations " + std::to_string(above) +
           ", within 1e-6 of the bound " + std::to_string(near_equal) + ", smallest gap " + num(min_gap));
    detail("uniform_plan(n), n = 1..64: max |H - 2 ln n| = " + num(uniform_gap));
    return {above == 0 && near_equal == 0 && uniform_gap <= 1e-6,
            "violations " + std::to_string(above) + ", min gap " + num(min_gap)};
}

// ---- 4. softmax as the first row update ---------------------------------------------

Outcome softmax_first_iteration() {
    Rng rng(1004);
    double worst = 0.0;
    for (int b = 0; b < 100; ++b) {
        const std::size_t n = 4 + b % 13, d = 1 + b % 16;
        const Tensor q = gaussian(rng, {n, d}), k = gaussian(rng, {n, d});
        const double lambda = 1.0 / std::sqrt(static_cast<double>(d));
        const auto cost = ot::similarity_cost(q, k);
        const std::vector<double> v0(n, 0.0), log_mu(n, -std::log(static_cast<double>(n)));
        Tensor first = ot::assemble_plan(cost.values, lambda, ot::log_row_update(cost.values, lambda, v0, log_mu), v0);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += first(i, j);
            for (std::size_t j = 0; j < n; ++j) first(i, j) /= s;
        }
        worst = std::max(worst, max_abs_diff(first, attn::head_map(q, k, attn::AttentionMode::softmax())));
    }
    detail("100 batches, max |row-normalized first update - softmax| = " + num(worst) + " (limit 1e-9)");
    return {worst <= 1e-9, "max gap " + num(worst)};
}

// ---- 5. iteration counts by cost direction -----------------------------------------

struct IterationStudy {
    double asa = 0.0, sim = 0.0;
};

IterationStudy iteration_medians(const std::function<void(Rng&, Tensor&, Tensor&)>& draw) {
    std::vector<double> a, s;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(5000 + seed);
        Tensor q, k;
        draw(rng, q, k);
        int ia = 0, is = 0;
        attn::head_map(q, k, attn::AttentionMode::of(attn::ModeTag::asa), &ia);
        attn::head_map(q, k, attn::AttentionMode::of(attn::ModeTag::sinkhorn_similarity), &is);
        a.push_back(ia);
        s.push_back(is);
    }
    return {median(a), median(s)};
}

Outcome iteration_trend() {
    // Independent standard normal Q, K: the criterion as stated.
    const auto iid = iteration_medians([](Rng& rng, Tensor& q, Tensor& k) {
        q = gaussian(rng, {16, 8});
        k = gaussian(rng, {16, 8});
    });
    detail("independent N(0,1) Q, K: median iterations adversarial " + num(iid.asa) + ", similarity " + num(iid.sim));
    // Informational: self-attention reads Q and K from the same tokens, so QKᵀ
    // is no longer sign-symmetric in distribution.
    const auto tied = iteration_medians([](Rng& rng, Tensor& q, Tensor& k) {
        q = gaussian(rng, {16, 8});
        k = q;
    });
    detail("(info) Q = K ~ N(0,1): adversarial " + num(tied.asa) + ", similarity " + num(tied.sim));
    const auto tied_half = iteration_medians([](Rng& rng, Tensor& q, Tensor& k) {
        q = gaussian(rng, {16, 8});
        for (auto& v : q.storage()) v /= std::sqrt(2.0);
        k = q;
    });
    detail("(info) Q = K ~ N(0,1/2): adversarial " + num(tied_half.asa) + ", similarity " + num(tied_half.sim));
    return {iid.asa <= 4.0 && iid.asa < iid.sim,
            "medians adversarial " + num(iid.asa) + " vs similarity " + num(iid.sim) + " (need <= 4 and strictly fewer)"};
}

// ---- 6. gradients ---------------------------------------------------------------------

double primitive_error(const std::function<ad::Var(const std::vector<ad::Var>&)>& build, const std::vector<Tensor>& in,
                       std::uint64_t seed) {
    Tensor w;
    {
        ad::Tape probe;
        std::vector<ad::Var> vs;
        for (const auto& x : in) vs.push_back(probe.leaf(x));
        Rng rng(seed);
        w = gaussian(rng, build(vs).shape());
    }
    auto scalar = [&](ad::Tape& t, const std::vector<ad::Var>& vs) { return ad::sum(ad::mul(build(vs), t.constant(w))); };
    ad::Tape tape;
    std::vector<ad::Var> vs;
    for (const auto& x : in) vs.push_back(tape.leaf(x));
    const auto g = ad::grad_of(scalar(tape, vs), vs);
    double worst = 0.0;
    for (std::size_t k = 0; k < in.size(); ++k) {
        auto f = [&](const Tensor& xk) {
            ad::Tape t(false);
            std::vector<ad::Var> ws;
            for (std::size_t j = 0; j < in.size(); ++j) ws.push_back(t.leaf(j == k ? xk : in[j], false));
            return scalar(t, ws).value()[0];
        };
        worst = std::max(worst, oracle::rel_error(g[k], oracle::fd_gradient(f, in[k])));
    }
    return worst;
}

Outcome gradient_integrity() {
    using V = std::vector<ad::Var>;
    Rng rng(1006);
    auto r = [&](Shape s) { return gaussian(rng, std::move(s)); };
    struct Case {
        std::string name;
        std::function<ad::Var(const V&)> f;
        std::vector<Tensor> in;
    };
    std::vector<Case> cases{
        {"matmul", [](const V& v) { return ad::matmul(v[0], v[1]); }, {r({3, 4}), r({4, 5})}},
        {"matmul_nt", [](const V& v) { return ad::matmul_nt(v[0], v[1]); }, {r({3, 4}), r({5, 4})}},
        {"add", [](const V& v) { return ad::add(v[0], v[1]); }, {r({3, 2}), r({3, 2})}},
        {"sub", [](const V& v) { return ad::sub(v[0], v[1]); }, {r({3, 2}), r({3, 2})}},
        {"mul", [](const V& v) { return ad::mul(v[0], v[1]); }, {r({3, 2}), r({3, 2})}},
        {"scale", [](const V& v) { return ad::scale(v[0], 0.7); }, {r({3, 2})}},
        {"add_row", [](const V& v) { return ad::add_row(v[0], v[1]); }, {r({4, 3}), r({3})}},
        {"silu", [](const V& v) { return ad::silu(v[0]); }, {r({4, 3})}},
        {"softmax_rows", [](const V& v) { return ad::softmax_rows(v[0]); }, {r({4, 5})}},
        {"layer_norm_rows", [](const V& v) { return ad::layer_norm_rows(v[0], v[1], v[2]); }, {r({4, 6}), r({6}), r({6})}},
        {"gather_rows", [](const V& v) { return ad::gather_rows(v[0], {1, 0, 1, 2}); }, {r({3, 4})}},
        {"mean_squared_error", [](const V& v) { return ad::mean_squared_error(v[0], v[1]); }, {r({3, 2}), r({3, 2})}},
        {"sum", [](const V& v) { return ad::sum(v[0]); }, {r({3, 2})}},
        {"multi_head_attention",
         [](const V& v) {
             return model::multi_head_attention(v[0], v[1], v[2], 4, 2, attn::AttentionMode::softmax(), 0, nullptr);
         },
         {r({8, 4}), r({8, 4}), r({8, 4})}},
    };
    double worst_prim = 0.0;
    std::string worst_name;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        const double e = primitive_error(cases[i].f, cases[i].in, 100 + i);
        if (e > worst_prim) {
            worst_prim = e;
            worst_name = cases[i].name;
        }
    }
    detail(std::to_string(cases.size()) + " primitives, worst relative error " + num(worst_prim) + " (" + worst_name +
           ", limit 1e-4)");

    // End-to-end DSM loss of the default architecture at initialization, on
    // a random slice of entries from every parameter tensor.
    model::DenoiserConfig mc;
    Rng init(1007);
    const auto params = model::init_params(mc, init);
    const auto sched = mc.schedule();
    const Tensor x0 = gaussian(rng, {2 * mc.tokens, 2}), eps = gaussian(rng, {2 * mc.tokens, 2});
    const std::vector<int> ts{37, 612};
    const std::vector<std::size_t> cls{1, mc.null_class()};
    ad::Tape tape;
    const auto pv = model::lift(tape, params, true);
    auto loss = model::dsm_objective(tape, params, pv, x0, eps, ts, cls, sched);
    std::vector<ad::Var> inputs;
    for (const auto& name : params.order) inputs.push_back(pv[name]);
    const auto grads = ad::grad_of(loss, inputs);

    auto loss_at = [&](const model::DenoiserParams& p) {
        ad::Tape t(false);
        const auto qv = model::lift(t, p, false);
        return model::dsm_objective(t, p, qv, x0, eps, ts, cls, sched).value()[0];
    };
    double worst_loss = 0.0, scale = 1e-12;
    std::size_t checked = 0;
    std::vector<double> analytic, numeric;
    model::DenoiserParams probe = params;
    const double h = 1e-5;
    for (std::size_t pi = 0; pi < params.order.size(); ++pi) {
        Tensor& w = probe.at(params.order[pi]);
        for (int s = 0; s < 4; ++s) {
            const std::size_t idx = rng.uniform_int(0, w.size() - 1);
            const double orig = w[idx];
            w[idx] = orig + h;
            const double fp = loss_at(probe);
            w[idx] = orig - h;
            const double fm = loss_at(probe);
            w[idx] = orig;
            analytic.push_back(grads[pi][idx]);
            numeric.push_back((fp - fm) / (2 * h));
            scale = std::max(scale, std::abs(numeric.back()));
            ++checked;
        }
    }
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst_loss = std::max(worst_loss, std::abs(analytic[i] - numeric[i]) / std::max(scale, 1.0));
    detail("DSM loss: " + std::to_string(checked) + " entries over " + std::to_string(params.order.size()) +
           " tensors, worst relative error " + num(worst_loss) + " (limit 1e-3)");
    return {worst_prim <= 1e-4 && worst_loss <= 1e-3, "primitives " + num(worst_prim) + ", loss " + num(worst_loss)};
}

// ---- 7. analytic-score sampler -----------------------------------------------------------

Outcome analytic_sampler() {
    const auto sched = diffusion::make_schedule(1000, 1e-4, 0.02);
    const auto ts = diffusion::sampling_timesteps(1000, 25);
    Rng rng(1008);
    Tensor x = gaussian(rng, {10000, 2});
    const std::vector<double> zero{0.0, 0.0};
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
        x = diffusion::ddim_step(x, oracle::gaussian_eps_star(x, sched.alpha_bar(ts[k]), zero), ts[k], t_prev, sched);
    }
    double m[2] = {0, 0}, c[2][2] = {{0, 0}, {0, 0}};
    const double n = static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (int a = 0; a < 2; ++a) m[a] += x(r, static_cast<std::size_t>(a)) / n;
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                c[a][b] += (x(r, static_cast<std::size_t>(a)) - m[a]) * (x(r, static_cast<std::size_t>(b)) - m[b]) / (n - 1);
    // Operator norm of the symmetric 2×2 matrix C − I.
    const double p = c[0][0] - 1.0, q = c[1][1] - 1.0, o = c[0][1];
    const double op = std::abs(0.5 * (p + q)) + std::sqrt(0.25 * (p - q) * (p - q) + o * o);
    const double mean_err = std::max(std::abs(m[0]), std::abs(m[1]));
    // Deterministic DDIM with the exact Gaussian ε* maps x by a product of
    // per-step contractions; the expected terminal variance is its square.
    double contraction = 1.0;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const double ab = sched.alpha_bar(ts[k]);
        const double abp = sched.alpha_bar(k + 1 < ts.size() ? ts[k + 1] : 0);
        contraction *= std::sqrt(abp * ab) + std::sqrt((1 - abp) * (1 - ab));
    }
    detail("mean (" + num(m[0]) + ", " + num(m[1]) + "), limit 0.05");
    detail("covariance [[" + num(c[0][0]) + ", " + num(c[0][1]) + "], [" + num(c[1][0]) + ", " + num(c[1][1]) +
           "]], ||C - I||_op = " + num(op) + " (limit 0.1)");
    detail("predicted terminal variance from the per-step contraction: " + num(contraction * contraction));
    return {mean_err <= 0.05 && op <= 0.1, "mean error " + num(mean_err) + ", ||C - I||_op " + num(op)};
}

// ---- 8. vanilla reduction ----------------------------------------------------------------

Outcome vanilla_reduction() {
    model::DenoiserConfig mc;
    Rng init(1009);
    auto params = model::init_params(mc, init);
    // Perturb every tensor so the zero-initialized output paths are live.
    for (auto& [_, t] : params.tensors)
        for (auto& v : t.storage()) v += 0.05 * init.normal();
    const auto sched = mc.schedule();
    int mismatches = 0, runs = 0;
    const guidance::Method methods[] = {guidance::Method::none, guidance::Method::cfg,  guidance::Method::pag,
                                        guidance::Method::seg,  guidance::Method::asag, guidance::Method::sink,
                                        guidance::Method::uniform};
    for (const auto& c : {model::Condition::of(0), model::Condition::null()}) {
        const Rng rng(42);
        const auto vanilla = guidance::asag_sample(params, sched, {}, c, 25, 10, rng);
        for (auto m : methods) {
            if (m == guidance::Method::cfg && c.is_null()) continue;
            guidance::GuidanceSpec spec;
            spec.method = m;
            spec.s = 0.0;
            const auto r = guidance::asag_sample(params, sched, spec, c, 25, 10, rng);
            mismatches += !(r.samples == vanilla.samples);
            ++runs;
        }
    }
    detail(std::to_string(runs) + " (method, condition) runs of 10 chains x 25 steps; bitwise mismatches " +
           std::to_string(mismatches));
    return {mismatches == 0, std::to_string(mismatches) + " mismatches"};
}

// ---- 9 and 10 share the default training run --------------------------------------------

const fs::path work = fs::temp_directory_path() / "asag_acceptance";

cli::Context context(const fs::path& out) {
    cli::Context ctx;
    ctx.seed = 0;
    ctx.out = out;
    static std::ostringstream sink;
    ctx.log = &sink;
    return ctx;
}

Outcome toy_trend() {
    const auto ctx = context(work / "train_a");
    cli::cmd_train(ctx);
    const auto ck = io::load_checkpoint(ctx.out / "checkpoint");
    const auto& params = ck.params;
    const auto sched = params.config.schedule();
    {
        std::ifstream in(ctx.out / "loss.csv");
        std::string line;
        std::vector<double> loss;
        while (std::getline(in, line))
            if (!line.empty() && line[0] != '#' && line[0] != 's') loss.push_back(std::stod(line.substr(line.find(',') + 1)));
        const std::size_t w = std::min<std::size_t>(32, loss.size());
        double first = 0, last = 0;
        for (std::size_t i = 0; i < w; ++i) {
            first += loss[i] / static_cast<double>(w);
            last += loss[loss.size() - w + i] / static_cast<double>(w);
        }
        detail("(info) default training: " + std::to_string(loss.size()) + " steps, mean loss of first/last 32 steps " +
               num(first) + " -> " + num(last) + " (ratio " + num(last / first) + ")");
        detail("(info) step-0 loss " + num(loss.front()) + ", mean of last 32 steps / step-0 loss = " +
               num(last / loss.front()));
    }

    const data::ToyDistribution dist(data::DatasetKind::gauss8);
    const auto none = model::Condition::null();
    guidance::GuidanceSpec vanilla, asag, uniform;
    asag.method = guidance::Method::asag;
    asag.s = 1.5;
    uniform.method = guidance::Method::uniform;
    uniform.s = 1.5;
    std::vector<double> ed_v, ed_a, ed_u, cov_v, cov_a, cov_u;
    int asag_wins = 0, uniform_not_above = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng ref_rng = Rng(seed).substream(7);
        guidance::Reference ref{data::sample_points(dist, 10000, ref_rng), dist.mode_centers(), dist.coverage_radius()};
        const Rng rng(seed);
        const auto rv = guidance::score(guidance::asag_sample(params, sched, vanilla, none, 25, 16, rng), ref, 0.0);
        const auto ra = guidance::score(guidance::asag_sample(params, sched, asag, none, 25, 16, rng), ref, 1.5);
        const auto ru = guidance::score(guidance::asag_sample(params, sched, uniform, none, 25, 16, rng), ref, 1.5);
        ed_v.push_back(rv.energy_distance);
        ed_a.push_back(ra.energy_distance);
        ed_u.push_back(ru.energy_distance);
        cov_v.push_back(rv.mode_coverage);
        cov_a.push_back(ra.mode_coverage);
        cov_u.push_back(ru.mode_coverage);
        asag_wins += ra.energy_distance < rv.energy_distance;
        uniform_not_above += ru.mode_coverage <= ra.mode_coverage;
        detail("seed " + std::to_string(seed) + ": ED vanilla " + num(rv.energy_distance) + ", asag " +
               num(ra.energy_distance) + ", uniform " + num(ru.energy_distance) + " | coverage " +
               num(rv.mode_coverage) + " / " + num(ra.mode_coverage) + " / " + num(ru.mode_coverage));
    }
    const double mv = median(ed_v), ma = median(ed_a);
    const double ca = median(cov_a), cu = median(cov_u);
    detail("median ED vanilla " + num(mv) + ", asag " + num(ma) + ", uniform " + num(median(ed_u)) +
           "; asag lower on " + std::to_string(asag_wins) + "/10 seeds");
    detail("median coverage vanilla " + num(median(cov_v)) + ", asag " + num(ca) + ", uniform " + num(cu) +
           "; uniform <= asag on " + std::to_string(uniform_not_above) + "/10 seeds");
    return {ma < mv && cu <= ca, "median ED asag " + num(ma) + " vs vanilla " + num(mv) + "; coverage uniform " + num(cu) +
                                     " <= asag " + num(ca)};
}

Outcome determinism() {
    // Second training run with identical settings, compared byte for byte
    // with the one made for criterion 9.
    const auto a = context(work / "train_a");
    const auto b = context(work / "train_b");
    if (!fs::exists(a.out / "checkpoint")) cli::cmd_train(a);
    cli::cmd_train(b);
    const bool train_same = same_tree(a.out, b.out);

    bool sample_same = true;
    for (const std::string method : {"none", "asag", "seg"}) {
        auto s1 = context(work / ("sample_" + method + "_1"));
        auto s2 = context(work / ("sample_" + method + "_2"));
        for (auto* ctx : {&s1, &s2}) {
            ctx->settings.set("checkpoint", (a.out / "checkpoint").string());
            ctx->settings.set("method", method);
            ctx->seed = 5;
            cli::cmd_sample(*ctx);
        }
        const bool same = same_tree(s1.out, s2.out);
        detail("sample method=" + method + ": " + (same ? "identical" : "DIFFERENT"));
        sample_same = sample_same && same;
    }
    detail(std::string("train: checkpoint and loss curve ") + (train_same ? "identical" : "DIFFERENT"));
    return {train_same && sample_same, std::string("train ") + (train_same ? "identical" : "differs") + ", sample " +
                                           (sample_same ? "identical" : "differs")};
}

}  // namespace

int main() {
    fs::remove_all(work);
    fs::create_directories(work);
    criterion(1, "Sinkhorn correctness", sinkhorn_correctness);
    criterion(2, "Vanishing-lambda limit", uniform_limit);
    criterion(3, "Entropy bound", entropy_bound);
    criterion(4, "Softmax equals first Sinkhorn row update", softmax_first_iteration);
    criterion(5, "Iteration trend by cost direction", iteration_trend);
    criterion(6, "Gradient integrity", gradient_integrity);
    criterion(7, "Analytic-score sampler", analytic_sampler);
    criterion(8, "Vanilla reduction at s = 0", vanilla_reduction);
    criterion(9, "gauss8 trend (ASAG vs vanilla, uniform coverage)", toy_trend);
    criterion(10, "Determinism of train and sample", determinism);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
