#pragma once

#include <array>
#include <optional>

#include "veil/nn/layer.hpp"

namespace veil::nn {

/// 2D convolution, square kernel, zero padding. Weight [OC, IC, K, K].
class Conv2d : public Layer {
public:
    Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
           std::size_t pad, bool bias = true);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override;
    std::string kind() const override { return "conv"; }
    json spec() const override;

    Param& weight() { return weight_; }
    Param& bias() { return *bias_; }

    std::size_t in_ch() const { return in_ch_; }
    std::size_t out_ch() const { return out_ch_; }

private:
    std::size_t in_ch_, out_ch_, kernel_, stride_, pad_;
    Param weight_;
    std::optional<Param> bias_;
    Tensor col_cache_;                 // [IC*K*K, B*OH*OW]
    std::size_t in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0, batch_ = 0;
};

/// 2D transposed convolution (stride-s upsampling). Weight [IC, OC, K, K];
/// output spatial size (in-1)*stride - 2*pad + kernel.
class ConvTranspose2d : public Layer {
public:
    ConvTranspose2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                    std::size_t pad, bool bias = true);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override;
    std::string kind() const override { return "tconv"; }
    json spec() const override;

    Param& weight() { return weight_; }

private:
    std::size_t in_ch_, out_ch_, kernel_, stride_, pad_;
    Param weight_;
    std::optional<Param> bias_;
    Tensor input_cache_;               // [B, IC, IH, IW]
    std::size_t in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0, batch_ = 0;
};

/// Fully connected layer on [B, in] matrices. Weight [out, in].
class Linear : public Layer {
public:
    Linear(std::size_t in_features, std::size_t out_features, bool bias = true);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override;
    std::string kind() const override { return "linear"; }
    json spec() const override;

    Param& weight() { return weight_; }
    Param& bias() { return *bias_; }
    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }

private:
    std::size_t in_, out_;
    Param weight_;
    std::optional<Param> bias_;
    Tensor input_cache_;
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string kind() const override { return "relu"; }

private:
    Tensor input_cache_;
};

class Tanh : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string kind() const override { return "tanh"; }

private:
    Tensor output_cache_;
};

/// Per-channel batch normalization over [B,C,H,W]. Training mode uses batch
/// statistics and updates running estimates; eval mode applies the running
/// estimates (an affine map, still differentiable w.r.t. the input).
class BatchNorm2d : public Layer {
public:
    explicit BatchNorm2d(std::size_t channels, real momentum = 0.1, real eps = 1e-5);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override;
    std::vector<Param*> buffers() override;
    void set_training(bool training) override { training_ = training; }
    std::string kind() const override { return "batchnorm"; }
    json spec() const override;

private:
    std::size_t channels_;
    real momentum_, eps_;
    bool training_ = true;
    Param gamma_, beta_;
    Param running_mean_, running_var_;
    Tensor xhat_cache_;
    std::vector<real> inv_std_cache_;
    bool last_forward_training_ = true;
};

/// Non-overlapping max pooling (kernel == stride).
class MaxPool2d : public Layer {
public:
    explicit MaxPool2d(std::size_t kernel);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string kind() const override { return "maxpool"; }
    json spec() const override;

private:
    std::size_t kernel_;
    std::vector<std::size_t> argmax_;
    std::vector<std::size_t> in_shape_;
};

/// [B,C,H,W] -> [B,C] spatial mean.
class GlobalAvgPool : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string kind() const override { return "gap"; }

private:
    std::vector<std::size_t> in_shape_;
};

class Flatten : public Layer {
public:
    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::string kind() const override { return "flatten"; }

private:
    std::vector<std::size_t> in_shape_;
};

/// y = inner(x) + shortcut(x), shortcut being identity or a projection
/// (1x1 strided conv + optional batchnorm). Output nonlinearity is left to the
/// enclosing Sequential.
class Residual : public Layer {
public:
    Residual(std::unique_ptr<Sequential> inner, std::unique_ptr<Sequential> projection);

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;
    std::vector<Param*> params() override;
    std::vector<Param*> buffers() override;
    void set_training(bool training) override;
    void set_param_grads(bool enabled) override;
    std::string kind() const override { return "residual"; }
    json spec() const override;

private:
    std::unique_ptr<Sequential> inner_;
    std::unique_ptr<Sequential> projection_;  // null = identity shortcut
};

}  // namespace veil::nn
