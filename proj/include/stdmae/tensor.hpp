#pragma once

// Dense row-major tensors with tape-free reverse-mode differentiation.
//
// Every op result keeps shared references to the inputs that require
// gradients together with a closure that pushes the result's gradient back
// into them. Calling backward() on a scalar walks that graph once in reverse
// topological order and then releases it. Leaf gradients accumulate across
// backward calls until zero_grad() is called.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stdmae/errors.hpp"

namespace stdmae {

/// Global numeric precision for values and gradients.
using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // empty until first written
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;
    const char* op = "leaf";

    Real* grad_buffer();  // allocates a zeroed buffer on first use
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = 0.0, bool requires_grad = false);
    Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

    static Tensor scalar(Real value);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    /// Extent of `axis`; negative values count from the back.
    std::size_t dim(std::ptrdiff_t axis) const;
    std::size_t numel() const;

    std::span<const Real> values() const;
    /// Direct write access, used by optimizers and checkpoint loading.
    std::span<Real> values_mut();
    Real item() const;
    Real at(std::size_t flat) const { return values()[flat]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const Real> grad() const;
    std::span<Real> grad_mut();
    void zero_grad();

    /// Reverse pass from a scalar root. Throws ShapeError for non-scalars.
    void backward() const;

    /// Same values, no graph history, no gradient requirement.
    Tensor detach() const;

    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

/// Records the largest tensor (in elements) created on this thread while
/// alive. Probes nest; the outer probe also sees inner allocations.
class AllocationProbe {
public:
    AllocationProbe();
    ~AllocationProbe();
    AllocationProbe(const AllocationProbe&) = delete;
    AllocationProbe& operator=(const AllocationProbe&) = delete;

    std::size_t max_elements() const noexcept { return max_elements_; }
    std::size_t allocations() const noexcept { return allocations_; }

private:
    friend void note_allocation(std::size_t);
    AllocationProbe* outer_;
    std::size_t max_elements_ = 0;
    std::size_t allocations_ = 0;
};

void note_allocation(std::size_t elements);

// ---------------------------------------------------------------------------
// Element-wise arithmetic. `b` may equal `a` in shape or match a trailing
// suffix of it (and vice versa); the smaller operand is broadcast over the
// leading axes of the larger one.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real offset);

Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
/// Tanh-approximated GELU.
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Batched product a[..., m, k] * b[..., k, n] (or b[..., n, k] transposed).
/// Leading batch extents must agree or be 1/missing on one side.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// Max-stabilised softmax over the last axis. Rejects non-finite input.
Tensor softmax_last(const Tensor& a);

/// Softmax over the last axis restricted to kept keys. `keep` holds one flag
/// per (group, key) with groups of `rows_per_group` consecutive rows. Masked
/// entries get probability exactly 0; fully masked rows become all zeros.
Tensor masked_softmax_last(const Tensor& a, std::span<const unsigned char> keep,
                           std::size_t rows_per_group);

/// Normalises each last-axis row to zero mean / unit variance, then applies
/// gain and bias (both shaped like the last axis).
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias, Real eps = 1e-5);

// ---------------------------------------------------------------------------
// Structural ops.
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor index_select(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices);
/// Repeats `a` over new leading axes so that the result has `shape`;
/// `a.shape()` must be a suffix of `shape`.
Tensor broadcast_to(const Tensor& a, const Shape& shape);

} // namespace stdmae
