#include "stdmae/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace stdmae {

namespace {
#if defined(__GLIBC__)
// Keep large freed buffers in the heap instead of returning them to the OS;
// training allocates and frees the same sizes every step and would otherwise
// pay a page fault per touched page.
const int heap_tuning = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return 0;
}();
#endif
} // namespace


namespace {
thread_local bool t_grad_enabled = true;
thread_local AllocationProbe* t_probe = nullptr;
} // namespace

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Real* detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
}

// ---------------------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

AllocationProbe::AllocationProbe() : outer_(t_probe) { t_probe = this; }
AllocationProbe::~AllocationProbe() { t_probe = outer_; }

void note_allocation(std::size_t elements) {
    for (auto* p = t_probe; p != nullptr; p = p->outer_) {
        p->max_elements_ = std::max(p->max_elements_, elements);
        ++p->allocations_;
    }
}

// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, Real fill, bool requires_grad) {
    for (auto e : shape)
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    node_ = std::make_shared<detail::Node>();
    node_->value.assign(numel_of(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
    note_allocation(node_->value.size());
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad) {
    for (auto e : shape)
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    if (numel_of(shape) != values.size())
        throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(numel_of(shape)) +
                         " values, got " + std::to_string(values.size()));
    node_ = std::make_shared<detail::Node>();
    node_->value = std::move(values);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
    note_allocation(node_->value.size());
}

Tensor Tensor::scalar(Real value) { return Tensor(Shape{1}, std::vector<Real>{value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::ptrdiff_t axis) const {
    const auto r = static_cast<std::ptrdiff_t>(rank());
    const auto a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const Real> Tensor::values() const { return node_->value; }
std::span<Real> Tensor::values_mut() { return node_->value; }

Real Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() needs a single element, shape is " + shape_str(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return node_->grad; }
std::span<Real> Tensor::grad_mut() { return {node_->grad_buffer(), node_->value.size()}; }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

void Tensor::backward() const {
    if (numel() != 1)
        throw ShapeError("backward() needs a scalar root, got shape " + shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            auto* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    // Release the graph; leaves keep their accumulated gradients.
    for (auto* n : order) {
        if (n->backward) {
            n->backward = nullptr;
            n->parents.clear();
            if (n != node_.get()) std::vector<Real>().swap(n->grad);
        }
    }
}

} // namespace stdmae
