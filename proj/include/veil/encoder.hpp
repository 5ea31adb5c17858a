#pragma once

#include <memory>
#include <utility>

#include "veil/nn/arch.hpp"
#include "veil/nn/layers.hpp"
#include "veil/rng.hpp"

namespace veil {

/// Convolutional backbone (ending in global average pooling) feeding two
/// parallel linear heads that produce the Gaussian posterior parameters
/// mu and log-variance. log-variance is clamped to [-10,10] before use;
/// gradients do not flow where the clamp is active.
class VariationalEncoder {
public:
    static constexpr real kLogVarClamp = 10.0;

    /// Backbone from a feature-extractor preset ("small3", "resnet18").
    VariationalEncoder(const std::string& backbone_preset, std::size_t resolution,
                       std::size_t latent_dim);

    /// (mu, log_var), both [B, d]. Differentiable w.r.t. params and input.
    std::pair<Tensor, Tensor> encode(const Tensor& X);

    /// Accumulates parameter gradients from d(loss)/d(mu) and
    /// d(loss)/d(log_var); returns d(loss)/d(input).
    Tensor backward(const Tensor& dmu, const Tensor& dlogvar);

    std::vector<nn::Param*> params();
    std::vector<nn::NamedTensorRef> state();
    void set_training(bool training);
    void init_weights(RngStream& stream);

    std::size_t latent_dim() const { return latent_dim_; }
    std::size_t input_resolution() const { return resolution_; }
    nn::json spec() const;

private:
    std::string backbone_preset_;
    std::unique_ptr<nn::Sequential> backbone_;
    nn::Linear head_mu_;
    nn::Linear head_logvar_;
    std::size_t latent_dim_;
    std::size_t resolution_;
    Tensor logvar_raw_cache_;  ///< pre-clamp values, for gradient gating
};

/// One reparameterized draw plus the noise that produced it (kept for the
/// backward pass). In deterministic mode z == mu bitwise and eps is zero.
struct Reparam {
    Tensor z;
    Tensor eps;
};

/// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from `noise`;
/// deterministic mode returns z = mu without consuming the stream.
Reparam reparameterize(const Tensor& mu, const Tensor& log_var, RngStream& noise,
                       bool deterministic);

/// Routes d(loss)/dz into dmu (identity) and dlogvar (0.5 * sigma * eps).
void reparameterize_backward(const Tensor& dz, const Tensor& log_var, const Tensor& eps,
                             Tensor& dmu, Tensor& dlogvar);

}  // namespace veil
