#include "stdmae/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace stdmae {

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)) {
    if (!(options.learning_rate > 0)) throw std::invalid_argument("Adam: learning rate must be positive");
    state_.options = options;
    for (const auto& p : params_) {
        state_.first_moment.emplace_back(p.numel(), 0.0);
        state_.second_moment.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (!params_[i].has_grad())
            throw std::logic_error("Adam::step: parameter " + std::to_string(i) + " of shape " +
                                   shape_str(params_[i].shape()) + " has no gradient");
    const auto& o = state_.options;
    ++state_.step_count;
    const Real t = static_cast<Real>(state_.step_count);
    const Real c1 = 1.0 - std::pow(o.beta1, t);
    const Real c2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto value = params_[i].values_mut();
        auto grad = params_[i].grad();
        auto& m = state_.first_moment[i];
        auto& v = state_.second_moment[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const Real g = grad[j];
            m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g;
            v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
            const Real mhat = m[j] / c1;
            const Real vhat = v[j] / c2;
            value[j] -= o.learning_rate * mhat / (std::sqrt(vhat) + o.epsilon);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

Real clip_grad_norm(std::vector<Tensor>& params, Real max_norm) {
    Real sq = 0;
    for (const auto& p : params)
        for (Real g : p.grad()) sq += g * g;
    const Real norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        const Real f = max_norm / norm;
        for (auto& p : params)
            if (p.has_grad())
                for (Real& g : p.grad_mut()) g *= f;
    }
    return norm;
}

} // namespace stdmae
