#include "veil/nn/init.hpp"

#include <cmath>

namespace veil::nn {

void init_he_normal(Layer& layer, RngStream& stream) {
    for (Param* p : layer.params()) {
        // Only weight matrices/kernels get random draws; biases and
        // batch-norm affine parameters keep their constructed values.
        if (p->name.find("weight") == std::string::npos) continue;
        const std::size_t fan_in = p->value.numel() / p->value.dim(0);
        const real std_dev = std::sqrt(2.0 / static_cast<real>(fan_in));
        stream.fill_normal(p->value.data(), p->value.numel(), 0.0, std_dev);
    }
}

}  // namespace veil::nn
