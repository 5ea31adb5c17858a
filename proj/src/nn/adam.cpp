#include "veil/nn/adam.hpp"

#include <cmath>
#include <cstdio>

#include "veil/errors.hpp"

namespace veil::nn {

Adam::Adam(std::vector<Param*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const real bc1 = 1.0 - std::pow(opt_.beta1, static_cast<real>(t_));
    const real bc2 = 1.0 - std::pow(opt_.beta2, static_cast<real>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const real g = p.grad[j] + opt_.weight_decay * p.value[j];
            m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g;
            v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g * g;
            const real mhat = m[j] / bc1;
            const real vhat = v[j] / bc2;
            p.value[j] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
        }
    }
}

std::vector<NamedTensor> Adam::state() const {
    std::vector<NamedTensor> out;
    char buf[24];
    for (std::size_t i = 0; i < params_.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "adam.m%03zu", i);
        out.push_back({buf, m_[i]});
        std::snprintf(buf, sizeof(buf), "adam.v%03zu", i);
        out.push_back({buf, v_[i]});
    }
    Tensor t({1});
    t[0] = static_cast<real>(t_);
    out.push_back({"adam.t", std::move(t)});
    return out;
}

void Adam::load_state(const std::vector<NamedTensor>& state) {
    if (state.size() != 2 * params_.size() + 1)
        throw IoError("optimizer state entry count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!state[2 * i].tensor.same_shape(m_[i]) ||
            !state[2 * i + 1].tensor.same_shape(v_[i]))
            throw IoError("optimizer state shape mismatch at slot " + std::to_string(i));
    }
    // Validation passed for every slot; only now mutate, so a failed load
    // leaves the optimizer untouched.
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i] = state[2 * i].tensor;
        v_[i] = state[2 * i + 1].tensor;
    }
    t_ = static_cast<std::size_t>(state.back().tensor[0]);
}

}  // namespace veil::nn
