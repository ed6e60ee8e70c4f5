#pragma once

// Seeded analytic 2-D toy distributions. Mixture parameters are fixed here so
// ground truth can always be regenerated for evaluation.
//
//   gauss8       8 isotropic Gaussians (σ = 0.1) on a ring of radius 2;
//                class = component index mod 2.
//   checkerboard uniform on the 8 dark cells of a 4×4 board over [−2, 2]²;
//                class = cell index mod 2.
//   swissroll    r = θ/(1.5π)·0.8, θ ∈ [1.5π, 4.5π], N(0, 0.05²) jitter;
//                class 0 for the inner half of the roll, 1 for the outer.
//   gauss1       N(0, I₂); a single class.

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "asag/errors.hpp"
#include "asag/model.hpp"
#include "asag/tensor.hpp"
#include "asag/training.hpp"

namespace asag::data {

using Point = std::array<double, 2>;

enum class DatasetKind { gauss8, checkerboard, swissroll, gauss1 };

inline DatasetKind parse_dataset(const std::string& s) {
    if (s == "gauss8") return DatasetKind::gauss8;
    if (s == "checkerboard") return DatasetKind::checkerboard;
    if (s == "swissroll") return DatasetKind::swissroll;
    if (s == "gauss1") return DatasetKind::gauss1;
    throw ContractError("unknown dataset '" + s + "'");
}

inline const char* to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::gauss8: return "gauss8";
        case DatasetKind::checkerboard: return "checkerboard";
        case DatasetKind::swissroll: return "swissroll";
        case DatasetKind::gauss1: return "gauss1";
    }
    return "?";
}

class ToyDistribution {
public:
    explicit ToyDistribution(DatasetKind kind) : kind_(kind) {}

    static constexpr double ring_radius = 2.0;
    static constexpr double ring_sigma = 0.1;

    DatasetKind kind() const { return kind_; }

    std::size_t num_classes() const { return kind_ == DatasetKind::gauss1 ? 1 : 2; }

    std::size_t num_components() const {
        switch (kind_) {
            case DatasetKind::gauss8: return 8;
            case DatasetKind::checkerboard: return 8;
            case DatasetKind::swissroll: return 2;
            case DatasetKind::gauss1: return 1;
        }
        return 1;
    }

    /// Component index → class label.
    std::size_t component_class(std::size_t comp) const { return comp % num_classes(); }

    /// One point from the class-conditional distribution, or the full
    /// mixture when `cls` is empty.
    Point sample(Rng& rng, std::optional<std::size_t> cls = std::nullopt) const {
        if (cls && *cls >= num_classes()) throw ContractError("dataset: class out of range");
        std::size_t comp;
        if (cls) {
            const std::size_t per_class = num_components() / num_classes();
            comp = *cls + num_classes() * rng.uniform_int(0, per_class - 1);
        } else {
            comp = rng.uniform_int(0, num_components() - 1);
        }
        return sample_component(rng, comp);
    }

    /// Mode centers used for coverage; all classes when `cls` is empty.
    std::vector<Point> mode_centers(std::optional<std::size_t> cls = std::nullopt) const {
        std::vector<Point> out;
        switch (kind_) {
            case DatasetKind::gauss8:
                for (std::size_t k = 0; k < 8; ++k)
                    if (!cls || component_class(k) == *cls) out.push_back(ring_center(k));
                break;
            case DatasetKind::checkerboard:
                for (std::size_t k = 0; k < 8; ++k)
                    if (!cls || component_class(k) == *cls) {
                        auto [x0, y0] = cell_origin(k);
                        out.push_back({x0 + 0.5, y0 + 0.5});
                    }
                break;
            case DatasetKind::swissroll:
                // Eight points along each half of the roll.
                for (std::size_t half = 0; half < 2; ++half) {
                    if (cls && *cls != half) continue;
                    for (int i = 0; i < 8; ++i) {
                        const double theta = roll_start + roll_span * (0.5 * static_cast<double>(half) + (i + 0.5) / 16.0);
                        out.push_back(roll_point(theta));
                    }
                }
                break;
            case DatasetKind::gauss1: out.push_back({0.0, 0.0}); break;
        }
        return out;
    }

    /// Radius within which a sample counts as reaching a mode.
    double coverage_radius() const {
        switch (kind_) {
            case DatasetKind::gauss8: return 3.0 * ring_sigma;
            case DatasetKind::checkerboard: return 0.5;
            case DatasetKind::swissroll: return 0.3;
            case DatasetKind::gauss1: return 3.0;
        }
        return 1.0;
    }

    Point ring_center(std::size_t k) const {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / 8.0;
        return {ring_radius * std::cos(a), ring_radius * std::sin(a)};
    }

private:
    static constexpr double roll_start = 1.5 * std::numbers::pi;
    static constexpr double roll_span = 3.0 * std::numbers::pi;

    static Point roll_point(double theta) {
        const double r = theta / (1.5 * std::numbers::pi) * 0.8;
        return {r * std::cos(theta) * 0.75, r * std::sin(theta) * 0.75};
    }

    /// Lower-left corner of dark cell k (cells of side 1 on [−2, 2]²).
    static Point cell_origin(std::size_t k) {
        const std::size_t row = k / 2;
        const std::size_t col = 2 * (k % 2) + (row % 2);
        return {-2.0 + static_cast<double>(col), -2.0 + static_cast<double>(row)};
    }

    Point sample_component(Rng& rng, std::size_t comp) const {
        switch (kind_) {
            case DatasetKind::gauss8: {
                const auto c = ring_center(comp);
                return {c[0] + ring_sigma * rng.normal(), c[1] + ring_sigma * rng.normal()};
            }
            case DatasetKind::checkerboard: {
                const auto o = cell_origin(comp);
                return {o[0] + rng.uniform(), o[1] + rng.uniform()};
            }
            case DatasetKind::swissroll: {
                const double theta = roll_start + roll_span * 0.5 * (static_cast<double>(comp) + rng.uniform());
                const auto p = roll_point(theta);
                return {p[0] + 0.05 * rng.normal(), p[1] + 0.05 * rng.normal()};
            }
            case DatasetKind::gauss1: return {rng.normal(), rng.normal()};
        }
        return {0.0, 0.0};
    }

    DatasetKind kind_;
};

/// `count` point sets of `tokens` i.i.d. points each; labels uniform over classes.
inline model::PointSetDataset make_point_sets(const ToyDistribution& dist, std::size_t count, std::size_t tokens, Rng& rng) {
    model::PointSetDataset ds;
    ds.num_classes = dist.num_classes();
    ds.sets.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t cls = rng.uniform_int(0, dist.num_classes() - 1);
        Tensor set = Tensor::matrix(tokens, 2);
        for (std::size_t j = 0; j < tokens; ++j) {
            const auto p = dist.sample(rng, cls);
            set(j, 0) = p[0];
            set(j, 1) = p[1];
        }
        ds.sets.push_back(std::move(set));
        ds.labels.push_back(cls);
    }
    return ds;
}

/// `count` reference points as a [count, 2] matrix.
inline Tensor sample_points(const ToyDistribution& dist, std::size_t count, Rng& rng,
                            std::optional<std::size_t> cls = std::nullopt) {
    Tensor out = Tensor::matrix(count, 2);
    for (std::size_t i = 0; i < count; ++i) {
        const auto p = dist.sample(rng, cls);
        out(i, 0) = p[0];
        out(i, 1) = p[1];
    }
    return out;
}

}  // namespace asag::data
