#pragma once

#include "veil/nn/layer.hpp"
#include "veil/rng.hpp"

namespace veil::nn {

/// He-normal initialization: weights ~ N(0, sqrt(2 / fan_in)), biases and
/// batch-norm shifts zero (batch-norm scales stay at their constructed 1).
/// fan_in for a weight tensor is numel / dim(0) — input features for linear,
/// IC*K*K for conv. Draws consume `stream` in parameter traversal order, so
/// the same seed always yields the same network.
void init_he_normal(Layer& layer, RngStream& stream);

}  // namespace veil::nn
