#pragma once

#include <vector>

#include "veil/tensor.hpp"

namespace veil::nn {

/// Mean softmax cross-entropy over a batch of logits [B, C] against integer
/// labels. `grad` (same shape as logits) receives d(mean loss)/d(logits);
/// computed with the log-sum-exp shift so large logits stay finite.
real softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad);

/// Row-wise softmax probabilities of logits [B, C].
Tensor softmax(const Tensor& logits);

/// Index of the largest logit per row.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace veil::nn
