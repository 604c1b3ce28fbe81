#pragma once

// Dense double-precision tensors and a reverse-mode tape.
//
// A Tape is rebuilt for every forward pass. Ops take and return Var handles
// that index into the tape; when the tape is not recording, ops only compute
// values, which is how inference runs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srne/rng.hpp"

namespace srne {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& s);

enum class TensorErrc { ShapeMismatch, NonFinite, IndexOutOfVocab, NonFiniteGradient, NotScalar };

class TensorError : public std::runtime_error {
public:
    TensorError(TensorErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    TensorErrc code() const noexcept { return code_; }

private:
    TensorErrc code_;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Row-major 2-D access.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double item() const;
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::uint32_t self)>;

    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return recording_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Leaf that receives a gradient.
    Var param(Tensor value);
    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf referring to storage owned elsewhere; `t` must outlive the tape.
    Var view(const Tensor& t, bool trainable);

    const Tensor& value(Var v) const
    {
        const Node& n = nodes_[v.id];
        return n.external ? *n.external : n.value;
    }
    bool has_grad(Var v) const { return nodes_[v.id].has_grad; }
    /// Gradient accumulated by backward; zeros if none reached this node.
    Tensor grad(Var v) const;

    /// Reverse accumulation from a scalar. Each node is visited once.
    /// Throws NonFiniteGradient if any leaf gradient is not finite.
    void backward(Var loss);

    // Used by op implementations.
    Var record(Tensor value, std::span<const Var> inputs, Backward fn);
    Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn)
    {
        return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
    }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    /// Accumulation target for v's gradient (allocated on first use).
    Tensor& grad_slot(Var v);
    const Tensor& grad_of(std::uint32_t id) const { return nodes_[id].grad; }
    Var var(std::uint32_t id) { return Var{this, id}; }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        bool leaf = false;
        Backward backward;
    };
    Var push(Node n);

    bool recording_;
    std::vector<Node> nodes_;
};

// ------------------------------------------------------------------- ops
// Rank-2 tensors are (rows x cols), row-major.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// x (m x n) + bias (n), broadcast over rows.
Var add_bias(Var x, Var bias);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
/// Rank-2 concatenation along axis 0 (rows) or 1 (cols).
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var sum(Var a);

/// x (C_in x N), w (C_out x C_in x K), bias (C_out); K odd, zero "same"
/// padding along the point axis. Returns (C_out x N).
Var conv1d(Var x, Var w, Var bias);
/// (C x N) -> (C): elementwise max over the point axis.
Var max_over_set(Var x);

/// Rows of `table` (V x d) selected by `indices` -> (len x d).
Var gather_rows(Var table, std::span<const int> indices);

/// Tanh approximation.
Var gelu(Var x);
/// Softmax over the last axis.
Var softmax(Var x);
/// Entries above the diagonal of a square score matrix replaced by a large
/// negative constant; no gradient flows through them.
Var causal_mask(Var scores);
Var dropout(Var x, double p, bool training, Rng& rng);

/// Mean over positions whose target != ignore_index of -log softmax(row)[target].
Var cross_entropy_loss(Var logits, std::span<const int> targets, int ignore_index = 0);

/// Value-only computation shared with cross_entropy_loss.
double cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_index = 0);

inline constexpr double kMaskedScore = -1e30;

// ------------------------------------------------------------ optimisation

/// Scales grads in place so their joint L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(std::span<Tensor> grads, double max_norm);
/// p <- p - lr * g
void sgd_step(Tensor& param, const Tensor& grad, double lr);

} // namespace srne
