#pragma once

#include <vector>

#include "asag/datasets.hpp"
#include "asag/guidance.hpp"
#include "asag/metrics.hpp"

namespace asag::guidance {

/// Ground truth against which sampled point clouds are scored.
struct Reference {
    Tensor points;  // [m, 2]
    std::vector<data::Point> centers;
    double radius = 0.3;
};

inline metrics::ScaleRow score(const SampleResult& r, const Reference& ref, double scale) {
    return {scale, metrics::energy_distance(r.samples, ref.points),
            metrics::mode_coverage(r.samples, ref.centers, ref.radius), metrics::mean_plan_entropy(r.trace)};
}

/// asag_sample at every scale with the same rng, so chain i starts from the
/// same x_T in every row.
inline std::vector<metrics::ScaleRow> scale_sweep(const model::DenoiserParams& params, const diffusion::NoiseSchedule& sched,
                                                  const GuidanceSpec& base_spec, const std::vector<double>& scales,
                                                  const model::Condition& c, int steps, std::size_t chains, const Rng& rng,
                                                  const Reference& ref) {
    if (scales.empty()) throw ContractError("scale_sweep: no scales given");
    std::vector<metrics::ScaleRow> rows;
    rows.reserve(scales.size());
    for (double s : scales) {
        GuidanceSpec spec = base_spec;
        spec.s = s;
        rows.push_back(score(asag_sample(params, sched, spec, c, steps, chains, rng), ref, s));
    }
    return rows;
}

}  // namespace asag::guidance
