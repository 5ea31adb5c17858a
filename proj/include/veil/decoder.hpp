#pragma once

#include <memory>

#include "veil/data.hpp"
#include "veil/nn/layers.hpp"
#include "veil/rng.hpp"

namespace veil {

/// Maps a (masked) latent vector back to image space: a linear projection to
/// a 3 x s0 x s0 feature map, then stride-2 transposed-convolution blocks
/// (kernel 4, each followed by batch-normalization and ReLU), with the final
/// block ending in tanh instead, so outputs lie in [-1,1]. The geometry
/// contract s0 * 2^blocks == output_resolution is checked at construction.
class TaskDecoder {
public:
    TaskDecoder(std::size_t latent_dim, std::size_t base_size, std::size_t blocks,
                std::size_t channels, std::size_t output_resolution);

    /// [B, d] -> [B, 3, R, R], every value in [-1, 1].
    Tensor decode(const Tensor& z);

    /// Accumulates parameter gradients from d(loss)/d(output); returns
    /// d(loss)/dz.
    Tensor backward(const Tensor& dout);

    std::vector<nn::Param*> params();
    std::vector<nn::NamedTensorRef> state();
    void set_training(bool training);
    void init_weights(RngStream& stream);

    std::size_t latent_dim() const { return latent_dim_; }
    std::size_t output_resolution() const { return resolution_; }
    nn::json spec() const;

private:
    std::size_t latent_dim_, base_size_, blocks_, channels_, resolution_;
    nn::Linear proj_;
    nn::Sequential net_;
    std::size_t batch_ = 0;
};

/// Algorithm step "Normalize(X')": maps tanh output [-1,1] to pixels
/// (X'+1)/2 in [0,1], then standardizes with the target model's expected
/// per-channel stats.
Tensor renormalize_for_target(const Tensor& decoded, const ChannelStats& stats);

/// Chain-rule factor of renormalize_for_target: d(normalized)/d(decoded)
/// = 1 / (2 * std_c) per channel.
Tensor renormalize_backward(const Tensor& dnormalized, const ChannelStats& stats);

}  // namespace veil
