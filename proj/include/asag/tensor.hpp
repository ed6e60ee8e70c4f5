#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "asag/errors.hpp"

namespace asag {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major tensor of 64-bit reals. Value semantics; cheap enough to
/// copy at the sizes this library works with.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
        return Tensor({rows, cols}, fill);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    static Tensor vector(std::vector<double> data) {
        const auto n = data.size();
        return Tensor({n}, std::move(data));
    }

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t rows() const {
        require_rank(2);
        return shape_[0];
    }
    std::size_t cols() const {
        require_rank(2);
        return shape_[1];
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double& operator()(std::size_t a, std::size_t b, std::size_t c) {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }
    double operator()(std::size_t a, std::size_t b, std::size_t c) const {
        return data_[(a * shape_[1] + b) * shape_[2] + c];
    }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

    Tensor reshaped(Shape shape) const {
        if (shape_size(shape) != data_.size())
            throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const Tensor& other) const = default;

private:
    void require_rank(std::size_t r) const {
        if (shape_.size() != r)
            throw DimensionError("expected rank " + std::to_string(r) + " tensor, got " + shape_string(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

// Elementwise helpers on plain tensors (no tape).

inline Tensor operator+(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
    return out;
}

inline Tensor operator*(double s, const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.storage()) v *= s;
    return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l2_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

/// C = A·B for rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::matrix(m, n);
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* cp = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = cp + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ap[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bp + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return c;
}

/// C = A·Bᵀ for rank-2 tensors.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols())
        throw DimensionError("matmul_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c = Tensor::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = a.data().data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* br = b.data().data() + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
            c(i, j) = s;
        }
    }
    return c;
}

/// C = Aᵀ·B for rank-2 tensors.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows())
        throw DimensionError("matmul_tn: " + shape_string(a.shape()) + "^T x " + shape_string(b.shape()));
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor c = Tensor::matrix(m, n);
    double* cp = c.data().data();
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a.data().data() + p * m;
        const double* brow = b.data().data() + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = arow[i];
            if (api == 0.0) continue;
            double* crow = cp + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
        }
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    Tensor t = Tensor::matrix(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// Per-row log Σ_j exp(m_ij) with max-shift.
inline std::vector<double> logsumexp_rows(const Tensor& m) {
    if (m.rank() != 2 || m.rows() == 0 || m.cols() == 0)
        throw DimensionError("logsumexp_rows: need a non-empty matrix, got " + shape_string(m.shape()));
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        if (!std::isfinite(mx)) {
            out[i] = mx;
            continue;
        }
        double s = 0.0;
        for (double v : r) s += std::exp(v - mx);
        out[i] = mx + std::log(s);
    }
    return out;
}

/// Row-wise softmax on a plain matrix.
inline Tensor softmax_rows(const Tensor& m) {
    Tensor out = m;
    const auto lse = logsumexp_rows(m);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = std::exp(m(i, j) - lse[i]);
    return out;
}

/// Neumaier-compensated accumulator; summation result is independent of
/// magnitude ordering effects to within one rounding.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// ---------------------------------------------------------------------------
// Counter-based random numbers.

/// Counter-based generator: output k of stream (seed, stream) is a keyed
/// 64-bit mix of k, so substreams for parallel chains never overlap and the
/// sequence is identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), key_(mix(seed ^ mix(stream + 0x9E3779B97F4A7C15ULL))) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Independent generator for chain/worker `index`.
    Rng substream(std::uint64_t index) const { return Rng(seed_, mix(key_ + index) ^ index); }

    std::uint64_t next_u64() { return mix(key_ + mix(counter_++)); }

    /// Uniform in the open interval (0, 1).
    double uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    /// Uniform integer in [lo, hi].
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        const std::uint64_t span = hi - lo + 1;
        if (span == 0) return next_u64();
        // Lemire-style rejection keeps the draw unbiased.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + x % span;
    }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (spare_) {
            const double v = *spare_;
            spare_.reset();
            return v;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(th);
        return r * std::cos(th);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::optional<double> spare_;
};

/// I.i.d. N(0, 1) entries drawn from `rng`.
inline Tensor gaussian(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = rng.normal();
    return t;
}

}  // namespace asag
