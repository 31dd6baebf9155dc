#pragma once

#include <vector>

#include "stdmae/tensor.hpp"

namespace stdmae {

struct AdamOptions {
    Real learning_rate = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real epsilon = 1e-8;
};

struct AdamState {
    std::size_t step_count = 0;
    std::vector<std::vector<Real>> first_moment;
    std::vector<std::vector<Real>> second_moment;
    AdamOptions options;
};

/// Bias-corrected Adam. Gradients are read, never cleared; call zero_grad()
/// before accumulating the next step.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamOptions options = {});

    /// Throws std::logic_error if any parameter has no gradient buffer.
    void step();
    void zero_grad();

    const AdamState& state() const noexcept { return state_; }
    const std::vector<Tensor>& params() const noexcept { return params_; }

private:
    std::vector<Tensor> params_;
    AdamState state_;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
Real clip_grad_norm(std::vector<Tensor>& params, Real max_norm);

} // namespace stdmae
