#pragma once

#include <vector>

#include "veil/nn/layer.hpp"
#include "veil/serialize.hpp"

namespace veil::nn {

/// Adam with bias correction and decoupled-from-nothing classic L2 weight
/// decay folded into the gradient (grad += wd * param before the moment
/// updates). One slot of first/second moment per parameter tensor.
class Adam {
public:
    struct Options {
        real lr = 1e-4;
        real beta1 = 0.9;
        real beta2 = 0.999;
        real eps = 1e-8;
        real weight_decay = 0.0;
    };

    Adam(std::vector<Param*> params, Options opt);

    /// Applies one update from the accumulated gradients, then leaves the
    /// gradients untouched (callers zero them per step).
    void step();

    std::size_t step_count() const { return t_; }
    const Options& options() const { return opt_; }

    /// Moment state as named tensors ("adam.m000", "adam.v000", ...) plus a
    /// one-element "adam.t" step counter, for checkpoint round-trips.
    std::vector<NamedTensor> state() const;
    void load_state(const std::vector<NamedTensor>& state);

private:
    std::vector<Param*> params_;
    Options opt_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace veil::nn
