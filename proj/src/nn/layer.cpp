#include "veil/nn/layer.hpp"

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"

namespace veil::nn {

json Layer::spec() const { return json{{"type", kind()}}; }

Tensor Sequential::forward(const Tensor& x) {
    Tensor t = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        t = layers_[i]->forward(t);
        if (finite_checks_ && !t.all_finite())
            throw NumericError("non-finite activation after layer " + std::to_string(i) + " (" +
                               layers_[i]->kind() + ")");
    }
    return t;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i > 0; --i) g = layers_[i - 1]->backward(g);
    return g;
}

std::vector<Param*> Sequential::params() {
    std::vector<Param*> out;
    for (auto& l : layers_)
        for (Param* p : l->params()) out.push_back(p);
    return out;
}

std::vector<Param*> Sequential::buffers() {
    std::vector<Param*> out;
    for (auto& l : layers_)
        for (Param* p : l->buffers()) out.push_back(p);
    return out;
}

void Sequential::set_training(bool training) {
    for (auto& l : layers_) l->set_training(training);
}

void Sequential::set_param_grads(bool enabled) {
    param_grads_ = enabled;
    for (auto& l : layers_) l->set_param_grads(enabled);
}

json Sequential::spec() const {
    json layers = json::array();
    for (const auto& l : layers_) layers.push_back(l->spec());
    return json{{"type", "sequential"}, {"layers", layers}};
}

std::vector<NamedTensorRef> collect_state(Layer& layer) {
    std::vector<NamedTensorRef> out;
    std::size_t i = 0;
    for (Param* p : layer.params()) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "p%03zu.", i++);
        out.push_back({buf + p->name, &p->value});
    }
    i = 0;
    for (Param* p : layer.buffers()) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "b%03zu.", i++);
        out.push_back({buf + p->name, &p->value});
    }
    return out;
}

void zero_grads(const std::vector<Param*>& params) {
    for (Param* p : params) p->grad.fill(0.0);
}

}  // namespace veil::nn
