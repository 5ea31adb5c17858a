#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "veil/tensor.hpp"

namespace veil::nn {

using json = nlohmann::json;

/// Trainable tensor plus its accumulated gradient.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    explicit Param(std::string n, std::vector<std::size_t> shape)
        : name(std::move(n)), value(shape), grad(std::move(shape)) {}
};

/// A differentiable operation on batched tensors. `forward` caches whatever
/// `backward` needs; `backward` returns the input gradient and accumulates
/// parameter gradients (unless parameter gradients are disabled, which frozen
/// networks use to guarantee their weights stay untouched).
class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual std::vector<Param*> params() { return {}; }
    /// Non-trainable state (batch-norm running statistics).
    virtual std::vector<Param*> buffers() { return {}; }

    virtual void set_training(bool) {}
    virtual void set_param_grads(bool enabled) { param_grads_ = enabled; }
    bool param_grads_enabled() const { return param_grads_; }

    virtual std::string kind() const = 0;
    virtual json spec() const;

protected:
    bool param_grads_ = true;
};

/// Ordered layer container; the unit all architectures are built from.
class Sequential : public Layer {
public:
    Sequential() = default;

    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
    std::size_t size() const { return layers_.size(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }

    Tensor forward(const Tensor& x) override;
    Tensor backward(const Tensor& grad_out) override;

    std::vector<Param*> params() override;
    std::vector<Param*> buffers() override;
    void set_training(bool training) override;
    void set_param_grads(bool enabled) override;

    /// When enabled, forward throws NumericError naming the offending layer
    /// if any activation goes non-finite.
    void set_finite_checks(bool enabled) { finite_checks_ = enabled; }

    std::string kind() const override { return "sequential"; }
    json spec() const override;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    bool finite_checks_ = false;
};

struct NamedTensorRef {
    std::string name;
    Tensor* tensor;
};

/// Named tensors for checkpointing: trainable params plus buffers, in
/// traversal order with positional prefixes so shape mismatches are reported
/// per entry.
std::vector<NamedTensorRef> collect_state(Layer& layer);

void zero_grads(const std::vector<Param*>& params);

}  // namespace veil::nn
