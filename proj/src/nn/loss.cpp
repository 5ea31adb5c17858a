#include "veil/nn/loss.hpp"

#include <cmath>

#include "veil/errors.hpp"

namespace veil::nn {

Tensor softmax(const Tensor& logits) {
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    Tensor p({b, c});
    for (std::size_t i = 0; i < b; ++i) {
        real mx = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        real denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            p.at(i, j) = std::exp(logits.at(i, j) - mx);
            denom += p.at(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) p.at(i, j) /= denom;
    }
    return p;
}

real softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* grad) {
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (labels.size() != b) throw ContractError("label count does not match batch size");
    real loss = 0.0;
    Tensor p = softmax(logits);
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw ContractError("label out of range");
        // log p_y via the shifted form to avoid log(0) from underflow.
        real mx = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        real lse = 0.0;
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(logits.at(i, j) - mx);
        loss += (mx + std::log(lse)) - logits.at(i, static_cast<std::size_t>(y));
    }
    loss /= static_cast<real>(b);
    if (grad) {
        *grad = p;
        for (std::size_t i = 0; i < b; ++i)
            grad->at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
        for (std::size_t i = 0; i < grad->numel(); ++i) (*grad)[i] /= static_cast<real>(b);
    }
    return loss;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(b, 0);
    for (std::size_t i = 0; i < b; ++i) {
        real best = logits.at(i, 0);
        for (std::size_t j = 1; j < c; ++j)
            if (logits.at(i, j) > best) {
                best = logits.at(i, j);
                out[i] = static_cast<int>(j);
            }
    }
    return out;
}

}  // namespace veil::nn
