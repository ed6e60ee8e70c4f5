#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "asag/errors.hpp"
#include "asag/guidance.hpp"
#include "asag/tensor.hpp"

namespace asag::metrics {

/// Sets larger than this are subsampled (with a fixed seed) before all-pairs sums.
inline constexpr std::size_t max_pairs_points = 10000;
inline constexpr std::uint64_t subsample_seed = 0x5eed5eedULL;

namespace detail {

inline Tensor subsample(const Tensor& a, std::uint64_t stream) {
    if (a.rows() <= max_pairs_points) return a;
    std::vector<std::size_t> idx(a.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(subsample_seed, stream);
    for (std::size_t i = 0; i < max_pairs_points; ++i) std::swap(idx[i], idx[i + rng.uniform_int(0, idx.size() - 1 - i)]);
    Tensor out = Tensor::matrix(max_pairs_points, a.cols());
    for (std::size_t i = 0; i < max_pairs_points; ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(idx[i], j);
    return out;
}

/// Mean Euclidean distance over all ordered pairs (a_i, b_j).
inline double mean_pair_distance(const Tensor& a, const Tensor& b) {
    const std::size_t d = a.cols();
    CompensatedSum total;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* ai = a.data().data() + i * d;
        CompensatedSum row;
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* bj = b.data().data() + j * d;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = ai[c] - bj[c];
                s += diff * diff;
            }
            row.add(std::sqrt(s));
        }
        total.add(row.value());
    }
    return total.value() / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace detail

/// 2·E‖A−B‖ − E‖A−A′‖ − E‖B−B′‖ over all pairs (V-statistic form, so the
/// value is exactly zero for identical multisets and never negative).
/// Rows are points.
inline double energy_distance(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("energy_distance: sample sets must be [points, dim]");
    if (a.rows() == 0 || b.rows() == 0) throw DimensionError("energy_distance: empty sample set");
    if (a.cols() != b.cols())
        throw DimensionError("energy_distance: dimensionality mismatch " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.cols()));
    const Tensor as = detail::subsample(a, 0), bs = detail::subsample(b, 1);
    const double ab = detail::mean_pair_distance(as, bs);
    const double ba = detail::mean_pair_distance(bs, as);
    const double aa = detail::mean_pair_distance(as, as);
    const double bb = detail::mean_pair_distance(bs, bs);
    // ab and ba are equal mathematically; summing both keeps d(a,b) = d(b,a) bitwise.
    const double v = (ab + ba) - aa - bb;
    return v > 0.0 ? v : 0.0;
}

/// Fraction of `centers` with at least one sample within `radius`.
inline double mode_coverage(const Tensor& samples, const std::vector<std::array<double, 2>>& centers, double radius) {
    if (centers.empty()) throw ContractError("mode_coverage: no mode centers");
    if (!(radius > 0.0)) throw ContractError("mode_coverage: radius must be positive");
    if (samples.rank() != 2 || samples.cols() != 2) throw DimensionError("mode_coverage: samples must be [points, 2]");
    const double r2 = radius * radius;
    std::size_t hit = 0;
    for (const auto& c : centers) {
        for (std::size_t i = 0; i < samples.rows(); ++i) {
            const double dx = samples(i, 0) - c[0], dy = samples(i, 1) - c[1];
            if (dx * dx + dy * dy <= r2) {
                ++hit;
                break;
            }
        }
    }
    return static_cast<double>(hit) / static_cast<double>(centers.size());
}

/// Mean perturbed-layer plan entropy per sampling step, averaged over chains.
inline std::vector<double> entropy_profile(const guidance::GuidanceTrace& trace) {
    if (trace.records.empty() || trace.steps == 0) throw ContractError("entropy_profile: trace has no entropy records");
    std::vector<CompensatedSum> sums(trace.steps);
    std::vector<std::size_t> counts(trace.steps, 0);
    for (const auto& r : trace.records) {
        if (r.step >= trace.steps) throw ContractError("entropy_profile: record step out of range");
        sums[r.step].add(r.plan_entropy);
        ++counts[r.step];
    }
    std::vector<double> out(trace.steps);
    for (std::size_t k = 0; k < trace.steps; ++k) {
        if (counts[k] == 0) throw ContractError("entropy_profile: step " + std::to_string(k) + " has no records");
        out[k] = sums[k].value() / static_cast<double>(counts[k]);
    }
    return out;
}

inline double mean_plan_entropy(const guidance::GuidanceTrace& trace) {
    const auto prof = entropy_profile(trace);
    CompensatedSum s;
    for (double v : prof) s.add(v);
    return s.value() / static_cast<double>(prof.size());
}

struct ScaleRow {
    double scale = 0.0;
    double energy_distance = 0.0;
    double mode_coverage = 0.0;
    double mean_plan_entropy = 0.0;
};

struct MetricReport {
    double energy_distance = 0.0;
    double mode_coverage = 0.0;
    double mean_plan_entropy = 0.0;
    std::vector<ScaleRow> per_scale;
};

}  // namespace asag::metrics
