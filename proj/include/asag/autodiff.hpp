#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "asag/errors.hpp"
#include "asag/tensor.hpp"

namespace asag::ad {

class Tape;

/// Handle to a node on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Records primitive operations in creation order (which is a topological
/// order) and replays them backwards to accumulate adjoints.
class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var leaf(Tensor value, bool requires_grad = true) {
        return push(std::move(value), {}, requires_grad && grad_enabled_, nullptr);
    }

    Var constant(Tensor value) { return push(std::move(value), {}, false, nullptr); }

    /// Adds an op node. `backward` is dropped when no input needs a gradient.
    Var push(Tensor value, std::vector<std::size_t> inputs, bool requires_grad, Backward backward) {
        if (!requires_grad) backward = nullptr;
        nodes_.push_back(Node{std::move(value), Tensor{}, std::move(inputs), requires_grad, std::move(backward)});
        return Var{this, nodes_.size() - 1};
    }

    Var push_op(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
        bool rg = false;
        if (grad_enabled_)
            for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
        return push(std::move(value), std::move(inputs), rg, std::move(backward));
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Adjoint of node `id`, allocated lazily.
    Tensor& grad(std::size_t id) {
        auto& n = nodes_[id];
        if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
        return n.grad;
    }

    /// Reverse sweep from a scalar node. Each node is visited exactly once.
    void backward(std::size_t output) {
        for (auto& n : nodes_) n.grad = Tensor{};
        grad(output)[0] = 1.0;
        for (std::size_t k = output + 1; k-- > 0;) {
            auto& n = nodes_[k];
            if (!n.backward || n.grad.empty()) continue;
            n.backward(*this, k);
        }
    }

    bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        bool requires_grad;
        Backward backward;
    };

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

/// ∂output/∂input for each input. `output` must be a single-element tensor.
inline std::vector<Tensor> grad_of(const Var& output, const std::vector<Var>& inputs) {
    if (output.tape == nullptr) throw ContractError("grad_of: output is not on a tape");
    if (output.value().size() != 1)
        throw ContractError("grad_of: output must be scalar, got shape " + shape_string(output.shape()));
    for (const auto& in : inputs) {
        if (in.tape != output.tape || in.id > output.id)
            throw MissingGradientError("grad_of: input was not recorded before the output on this tape");
        if (!in.tape->requires_grad(in.id))
            throw MissingGradientError("grad_of: input does not require a gradient");
    }
    Tape& tape = *output.tape;
    tape.backward(output.id);
    std::vector<Tensor> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs)
        out.push_back(tape.has_grad(in.id) ? tape.grad(in.id) : Tensor(in.shape(), 0.0));
    return out;
}

namespace detail {
inline void same_tape(const Var& a, const Var& b) {
    if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}
inline void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    Tape& t = *a.tape;
    return t.push_op(asag::matmul(a.value(), b.value()), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        if (t.requires_grad(ai)) detail::accumulate(t.grad(ai), asag::matmul_nt(g, t.value(bi)));
        if (t.requires_grad(bi)) detail::accumulate(t.grad(bi), asag::matmul_tn(t.value(ai), g));
    });
}

/// A·Bᵀ
inline Var matmul_nt(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    Tape& t = *a.tape;
    return t.push_op(asag::matmul_nt(a.value(), b.value()), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        if (t.requires_grad(ai)) detail::accumulate(t.grad(ai), asag::matmul(g, t.value(bi)));
        if (t.requires_grad(bi)) detail::accumulate(t.grad(bi), asag::matmul_tn(g, t.value(ai)));
    });
}

inline Var add(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    Tape& t = *a.tape;
    return t.push_op(a.value() + b.value(), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        if (t.requires_grad(ai)) detail::accumulate(t.grad(ai), g);
        if (t.requires_grad(bi)) detail::accumulate(t.grad(bi), g);
    });
}

inline Var sub(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    Tape& t = *a.tape;
    return t.push_op(a.value() - b.value(), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        if (t.requires_grad(ai)) detail::accumulate(t.grad(ai), g);
        if (t.requires_grad(bi)) detail::accumulate(t.grad(bi), -1.0 * g);
    });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tape& t = *a.tape;
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return t.push_op(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        if (t.requires_grad(ai)) {
            auto& ga = t.grad(ai);
            const auto& bv = t.value(bi);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(bi)) {
            auto& gb = t.grad(bi);
            const auto& av = t.value(ai);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

inline Var scale(const Var& a, double s) {
    Tape& t = *a.tape;
    return t.push_op(s * a.value(), {a.id}, [ai = a.id, s](Tape& t, std::size_t k) {
        detail::accumulate(t.grad(ai), s * t.grad(k));
    });
}

/// Broadcast-add a bias row (shape [cols] or [1, cols]) to every row of a.
inline Var add_row(const Var& a, const Var& bias) {
    detail::same_tape(a, bias);
    const Tensor& av = a.value();
    const Tensor& bv = bias.value();
    if (bv.size() != av.cols())
        throw DimensionError("add_row: bias length " + std::to_string(bv.size()) + " vs cols " + std::to_string(av.cols()));
    Tensor out = av;
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out(i, j) += bv[j];
    Tape& t = *a.tape;
    return t.push_op(std::move(out), {a.id, bias.id}, [ai = a.id, bi = bias.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        if (t.requires_grad(ai)) detail::accumulate(t.grad(ai), g);
        if (t.requires_grad(bi)) {
            auto& gb = t.grad(bi);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
        }
    });
}

/// x·sigmoid(x)
inline Var silu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.storage()) v = v / (1.0 + std::exp(-v));
    Tape& t = *a.tape;
    return t.push_op(std::move(out), {a.id}, [ai = a.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        const auto& x = t.value(ai);
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            ga[i] += g[i] * (s + x[i] * s * (1.0 - s));
        }
    });
}

inline Var softmax_rows(const Var& a) {
    Tape& t = *a.tape;
    return t.push_op(asag::softmax_rows(a.value()), {a.id}, [ai = a.id](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        const Tensor& y = t.value(k);
        auto& ga = t.grad(ai);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
}

/// Row-wise layer normalization with affine gain and bias.
inline Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5) {
    detail::same_tape(a, gamma);
    detail::same_tape(a, beta);
    const Tensor& x = a.value();
    const std::size_t rows = x.rows(), cols = x.cols();
    if (gamma.value().size() != cols || beta.value().size() != cols)
        throw DimensionError("layer_norm_rows: affine parameters must have length " + std::to_string(cols));
    Tensor xhat = Tensor::matrix(rows, cols);
    std::vector<double> inv_std(rows);
    Tensor out = Tensor::matrix(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) mean += x(i, j);
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t j = 0; j < cols; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
        var /= static_cast<double>(cols);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < cols; ++j) {
            xhat(i, j) = (x(i, j) - mean) * inv_std[i];
            out(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];
        }
    }
    Tape& t = *a.tape;
    return t.push_op(std::move(out), {a.id, gamma.id, beta.id},
                     [ai = a.id, gi = gamma.id, bi = beta.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         Tape& t, std::size_t k) {
                         const Tensor g = t.grad(k);
                         const std::size_t rows = g.rows(), cols = g.cols();
                         const auto& gam = t.value(gi);
                         if (t.requires_grad(gi)) {
                             auto& gg = t.grad(gi);
                             for (std::size_t i = 0; i < rows; ++i)
                                 for (std::size_t j = 0; j < cols; ++j) gg[j] += g(i, j) * xhat(i, j);
                         }
                         if (t.requires_grad(bi)) {
                             auto& gb = t.grad(bi);
                             for (std::size_t i = 0; i < rows; ++i)
                                 for (std::size_t j = 0; j < cols; ++j) gb[j] += g(i, j);
                         }
                         if (t.requires_grad(ai)) {
                             auto& ga = t.grad(ai);
                             const double inv_n = 1.0 / static_cast<double>(cols);
                             for (std::size_t i = 0; i < rows; ++i) {
                                 double s1 = 0.0, s2 = 0.0;
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     const double dxh = g(i, j) * gam[j];
                                     s1 += dxh;
                                     s2 += dxh * xhat(i, j);
                                 }
                                 for (std::size_t j = 0; j < cols; ++j) {
                                     const double dxh = g(i, j) * gam[j];
                                     ga(i, j) += inv_std[i] * (dxh - inv_n * s1 - xhat(i, j) * inv_n * s2);
                                 }
                             }
                         }
                     });
}

/// out[r] = table[indices[r]]; gradients scatter-add back into the table.
inline Var gather_rows(const Var& table, std::vector<std::size_t> indices) {
    const Tensor& tv = table.value();
    Tensor out = Tensor::matrix(indices.size(), tv.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= tv.rows())
            throw DimensionError("gather_rows: index " + std::to_string(indices[r]) + " out of range " +
                                 std::to_string(tv.rows()));
        auto src = tv.row(indices[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    Tape& t = *table.tape;
    return t.push_op(std::move(out), {table.id}, [ti = table.id, idx = std::move(indices)](Tape& t, std::size_t k) {
        const Tensor g = t.grad(k);
        auto& gt = t.grad(ti);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t j = 0; j < g.cols(); ++j) gt(idx[r], j) += g(r, j);
    });
}

/// Mean over all entries of (a − b)².
inline Var mean_squared_error(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mean_squared_error");
    const auto n = static_cast<double>(a.value().size());
    CompensatedSum s;
    for (std::size_t i = 0; i < a.value().size(); ++i) {
        const double d = a.value()[i] - b.value()[i];
        s.add(d * d);
    }
    Tape& t = *a.tape;
    return t.push_op(Tensor::scalar(s.value() / n), {a.id, b.id}, [ai = a.id, bi = b.id, n](Tape& t, std::size_t k) {
        const double g = t.grad(k)[0];
        const auto& av = t.value(ai);
        const auto& bv = t.value(bi);
        const bool ga_on = t.requires_grad(ai), gb_on = t.requires_grad(bi);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = 2.0 * g * (av[i] - bv[i]) / n;
            if (ga_on) t.grad(ai)[i] += d;
            if (gb_on) t.grad(bi)[i] -= d;
        }
    });
}

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    Tape& t = *a.tape;
    return t.push_op(Tensor::scalar(s), {a.id}, [ai = a.id](Tape& t, std::size_t k) {
        const double g = t.grad(k)[0];
        for (auto& v : t.grad(ai).storage()) v += g;
    });
}

}  // namespace asag::ad
