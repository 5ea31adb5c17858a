#include "veil/decoder.hpp"

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"
#include "veil/nn/init.hpp"

namespace veil {

namespace {

std::size_t shifted_resolution(std::size_t base, std::size_t blocks) {
    std::size_t r = base;
    for (std::size_t i = 0; i < blocks; ++i) r *= 2;
    return r;
}

}  // namespace

TaskDecoder::TaskDecoder(std::size_t latent_dim, std::size_t base_size, std::size_t blocks,
                         std::size_t channels, std::size_t output_resolution)
    : latent_dim_(latent_dim),
      base_size_(base_size),
      blocks_(blocks),
      channels_(channels),
      resolution_(output_resolution),
      proj_(latent_dim, 3 * base_size * base_size) {
    if (blocks == 0) throw ConfigError("decoder needs at least one upsampling block");
    if (shifted_resolution(base_size, blocks) != output_resolution)
        throw ConfigError("decoder resolution contract violated: " + std::to_string(base_size) +
                          " * 2^" + std::to_string(blocks) + " != " +
                          std::to_string(output_resolution));

    // Channel plan: 3 -> channels -> channels/2 -> ... -> 3, halving per
    // block with a floor of 8; the paper leaves intermediate widths open.
    std::size_t in_ch = 3;
    std::size_t width = channels;
    for (std::size_t b = 0; b < blocks; ++b) {
        const bool last = b + 1 == blocks;
        const std::size_t out_ch = last ? 3 : std::max<std::size_t>(8, width);
        net_.add(std::make_unique<nn::ConvTranspose2d>(in_ch, out_ch, 4, 2, 1));
        if (last) {
            net_.add(std::make_unique<nn::Tanh>());
        } else {
            net_.add(std::make_unique<nn::BatchNorm2d>(out_ch));
            net_.add(std::make_unique<nn::ReLU>());
        }
        in_ch = out_ch;
        width = width / 2;
    }
    net_.set_finite_checks(true);
}

Tensor TaskDecoder::decode(const Tensor& z) {
    if (z.ndim() != 2 || z.dim(1) != latent_dim_)
        throw ContractError("decoder expects [B," + std::to_string(latent_dim_) + "] latents");
    batch_ = z.dim(0);
    Tensor h = proj_.forward(z);
    Tensor h4 = h.reshaped({batch_, 3, base_size_, base_size_});
    return net_.forward(h4);
}

Tensor TaskDecoder::backward(const Tensor& dout) {
    Tensor dh4 = net_.backward(dout);
    Tensor dh = dh4.reshaped({batch_, 3 * base_size_ * base_size_});
    return proj_.backward(dh);
}

std::vector<nn::Param*> TaskDecoder::params() {
    std::vector<nn::Param*> p = proj_.params();
    for (nn::Param* q : net_.params()) p.push_back(q);
    return p;
}

std::vector<nn::NamedTensorRef> TaskDecoder::state() {
    std::vector<nn::NamedTensorRef> out;
    for (const nn::NamedTensorRef& r : nn::collect_state(proj_))
        out.push_back({"proj." + r.name, r.tensor});
    for (const nn::NamedTensorRef& r : nn::collect_state(net_))
        out.push_back({"blocks." + r.name, r.tensor});
    return out;
}

void TaskDecoder::set_training(bool training) {
    proj_.set_training(training);
    net_.set_training(training);
}

void TaskDecoder::init_weights(RngStream& stream) {
    nn::init_he_normal(proj_, stream);
    nn::init_he_normal(net_, stream);
}

nn::json TaskDecoder::spec() const {
    return nn::json{{"latent_dim", latent_dim_},
                    {"base_size", base_size_},
                    {"blocks", blocks_},
                    {"channels", channels_},
                    {"output_resolution", resolution_},
                    {"net", net_.spec()}};
}

Tensor renormalize_for_target(const Tensor& decoded, const ChannelStats& stats) {
    if (decoded.ndim() != 4 || decoded.dim(1) != 3)
        throw ContractError("renormalize expects [B,3,H,W]");
    Tensor out = decoded;
    const std::size_t hw = decoded.dim(2) * decoded.dim(3);
    for (std::size_t b = 0; b < decoded.dim(0); ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            real* p = out.data() + (b * 3 + c) * hw;
            for (std::size_t i = 0; i < hw; ++i)
                p[i] = ((p[i] + 1.0) * 0.5 - stats.mean[c]) / stats.std[c];
        }
    return out;
}

Tensor renormalize_backward(const Tensor& dnormalized, const ChannelStats& stats) {
    Tensor out = dnormalized;
    const std::size_t hw = dnormalized.dim(2) * dnormalized.dim(3);
    for (std::size_t b = 0; b < dnormalized.dim(0); ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            real* p = out.data() + (b * 3 + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] /= 2.0 * stats.std[c];
        }
    return out;
}

}  // namespace veil
