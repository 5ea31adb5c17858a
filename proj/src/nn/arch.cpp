#include "veil/nn/arch.hpp"

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"
#include "veil/nn/layers.hpp"

namespace veil::nn {

namespace {

json conv(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p,
          bool bias = true) {
    return json{{"type", "conv"},  {"in", in},     {"out", out},
                {"kernel", k},     {"stride", s},  {"pad", p},
                {"bias", bias}};
}

json tconv(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t p,
           bool bias = true) {
    return json{{"type", "tconv"}, {"in", in},     {"out", out},
                {"kernel", k},     {"stride", s},  {"pad", p},
                {"bias", bias}};
}

json linear(std::size_t in, std::size_t out, bool bias = true) {
    return json{{"type", "linear"}, {"in", in}, {"out", out}, {"bias", bias}};
}

json bn(std::size_t ch) { return json{{"type", "batchnorm"}, {"channels", ch}}; }
json relu() { return json{{"type", "relu"}}; }
json maxpool(std::size_t k) { return json{{"type", "maxpool"}, {"kernel", k}}; }
json gap() { return json{{"type", "gap"}}; }
json flatten() { return json{{"type", "flatten"}}; }

json seq(json layers) { return json{{"type", "sequential"}, {"layers", std::move(layers)}}; }

/// Basic (two 3x3) residual block; projection shortcut when geometry changes.
json basic_block(std::size_t in, std::size_t out, std::size_t stride) {
    json inner = json::array(
        {conv(in, out, 3, stride, 1, false), bn(out), relu(), conv(out, out, 3, 1, 1, false), bn(out)});
    json block{{"type", "residual"}, {"inner", inner}};
    if (stride != 1 || in != out)
        block["projection"] = json::array({conv(in, out, 1, stride, 0, false), bn(out)});
    return block;
}

/// Bottleneck (1x1 reduce, 3x3, 1x1 expand x4) residual block.
json bottleneck_block(std::size_t in, std::size_t mid, std::size_t stride) {
    const std::size_t out = mid * 4;
    json inner = json::array({conv(in, mid, 1, 1, 0, false), bn(mid), relu(),
                              conv(mid, mid, 3, stride, 1, false), bn(mid), relu(),
                              conv(mid, out, 1, 1, 0, false), bn(out)});
    json block{{"type", "residual"}, {"inner", inner}};
    if (stride != 1 || in != out)
        block["projection"] = json::array({conv(in, out, 1, stride, 0, false), bn(out)});
    return block;
}

json toy_cnn_a(const ArchParams& p) {
    const std::size_t side = p.resolution / 8;
    json layers = json::array();
    layers.push_back(conv(p.in_channels, 16, 3, 1, 1));
    layers.push_back(bn(16));
    layers.push_back(relu());
    layers.push_back(maxpool(2));
    layers.push_back(conv(16, 32, 3, 1, 1));
    layers.push_back(bn(32));
    layers.push_back(relu());
    layers.push_back(maxpool(2));
    layers.push_back(conv(32, 64, 3, 1, 1));
    layers.push_back(bn(64));
    layers.push_back(relu());
    layers.push_back(maxpool(2));
    layers.push_back(flatten());
    layers.push_back(linear(64 * side * side, p.num_classes));
    return seq(std::move(layers));
}

json toy_cnn_b(const ArchParams& p) {
    json layers = json::array();
    layers.push_back(conv(p.in_channels, 24, 5, 2, 2));
    layers.push_back(relu());
    layers.push_back(conv(24, 48, 5, 2, 2));
    layers.push_back(relu());
    layers.push_back(conv(48, 64, 3, 2, 1));
    layers.push_back(relu());
    layers.push_back(gap());
    layers.push_back(linear(64, p.num_classes));
    return seq(std::move(layers));
}

json toy_mlp(const ArchParams& p) {
    const std::size_t in = p.in_channels * p.resolution * p.resolution;
    json layers = json::array();
    layers.push_back(flatten());
    layers.push_back(linear(in, 128));
    layers.push_back(relu());
    layers.push_back(linear(128, 64));
    layers.push_back(relu());
    layers.push_back(linear(64, p.num_classes));
    return seq(std::move(layers));
}

json linear_softmax(const ArchParams& p) {
    const std::size_t in = p.in_channels * p.resolution * p.resolution;
    return seq(json::array({flatten(), linear(in, p.num_classes)}));
}

json small3(const ArchParams& p) {
    json layers = json::array();
    layers.push_back(conv(p.in_channels, 16, 3, 2, 1));
    layers.push_back(bn(16));
    layers.push_back(relu());
    layers.push_back(conv(16, 32, 3, 2, 1));
    layers.push_back(bn(32));
    layers.push_back(relu());
    layers.push_back(conv(32, 64, 3, 2, 1));
    layers.push_back(bn(64));
    layers.push_back(relu());
    layers.push_back(gap());
    return seq(std::move(layers));
}

json resnet18(const ArchParams& p) {
    json layers = json::array();
    layers.push_back(conv(p.in_channels, 64, 7, 2, 3, false));
    layers.push_back(bn(64));
    layers.push_back(relu());
    layers.push_back(maxpool(2));
    const std::size_t chans[4] = {64, 128, 256, 512};
    std::size_t in = 64;
    for (std::size_t stage = 0; stage < 4; ++stage) {
        const std::size_t out = chans[stage];
        for (std::size_t b = 0; b < 2; ++b) {
            const std::size_t stride = (b == 0 && stage > 0) ? 2 : 1;
            layers.push_back(basic_block(in, out, stride));
            layers.push_back(relu());
            in = out;
        }
    }
    layers.push_back(gap());
    return seq(std::move(layers));
}

json resnet152(const ArchParams& p) {
    json layers = json::array();
    layers.push_back(conv(p.in_channels, 64, 7, 2, 3, false));
    layers.push_back(bn(64));
    layers.push_back(relu());
    layers.push_back(maxpool(2));
    const std::size_t mids[4] = {64, 128, 256, 512};
    const std::size_t counts[4] = {3, 8, 36, 3};
    std::size_t in = 64;
    for (std::size_t stage = 0; stage < 4; ++stage) {
        for (std::size_t b = 0; b < counts[stage]; ++b) {
            const std::size_t stride = (b == 0 && stage > 0) ? 2 : 1;
            layers.push_back(bottleneck_block(in, mids[stage], stride));
            layers.push_back(relu());
            in = mids[stage] * 4;
        }
    }
    layers.push_back(gap());
    layers.push_back(linear(2048, p.num_classes));
    return seq(std::move(layers));
}

json vgg16(const ArchParams& p) {
    if (p.resolution % 32 != 0)
        throw ModelError("vgg16 requires input resolution divisible by 32");
    const std::size_t side = p.resolution / 32;
    json layers = json::array();
    const std::size_t plan[5][2] = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
    std::size_t in = p.in_channels;
    for (const auto& [reps, out] : plan) {
        for (std::size_t r = 0; r < reps; ++r) {
            layers.push_back(conv(in, out, 3, 1, 1));
            layers.push_back(bn(out));
            layers.push_back(relu());
            in = out;
        }
        layers.push_back(maxpool(2));
    }
    layers.push_back(flatten());
    layers.push_back(linear(512 * side * side, 4096));
    layers.push_back(relu());
    layers.push_back(linear(4096, 4096));
    layers.push_back(relu());
    layers.push_back(linear(4096, p.num_classes));
    return seq(std::move(layers));
}

std::unique_ptr<Layer> build_layer(const json& j);

std::unique_ptr<Sequential> build_sequential(const json& layers) {
    auto net = std::make_unique<Sequential>();
    for (const json& l : layers) net->add(build_layer(l));
    return net;
}

std::unique_ptr<Layer> build_layer(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv")
        return std::make_unique<Conv2d>(j.at("in").get<std::size_t>(),
                                        j.at("out").get<std::size_t>(),
                                        j.at("kernel").get<std::size_t>(),
                                        j.at("stride").get<std::size_t>(),
                                        j.at("pad").get<std::size_t>(), j.at("bias").get<bool>());
    if (type == "tconv")
        return std::make_unique<ConvTranspose2d>(
            j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>(),
            j.at("kernel").get<std::size_t>(), j.at("stride").get<std::size_t>(),
            j.at("pad").get<std::size_t>(), j.at("bias").get<bool>());
    if (type == "linear")
        return std::make_unique<Linear>(j.at("in").get<std::size_t>(),
                                        j.at("out").get<std::size_t>(), j.at("bias").get<bool>());
    if (type == "batchnorm") return std::make_unique<BatchNorm2d>(j.at("channels").get<std::size_t>());
    if (type == "relu") return std::make_unique<ReLU>();
    if (type == "tanh") return std::make_unique<Tanh>();
    if (type == "maxpool") return std::make_unique<MaxPool2d>(j.at("kernel").get<std::size_t>());
    if (type == "gap") return std::make_unique<GlobalAvgPool>();
    if (type == "flatten") return std::make_unique<Flatten>();
    if (type == "residual") {
        auto inner = build_sequential(j.at("inner"));
        std::unique_ptr<Sequential> proj;
        if (j.contains("projection")) proj = build_sequential(j.at("projection"));
        return std::make_unique<Residual>(std::move(inner), std::move(proj));
    }
    if (type == "sequential") return build_sequential(j.at("layers"));
    if (type == "external")
        throw ModelError("architecture '" + j.value("name", std::string("?")) +
                         "' is declared for registry completeness but has no in-tree builder");
    throw ModelError("unknown layer type '" + type + "' in architecture spec");
}

}  // namespace

json preset_arch(const std::string& name, const ArchParams& params) {
    if (name == "toy-cnn-a") return toy_cnn_a(params);
    if (name == "toy-cnn-b") return toy_cnn_b(params);
    if (name == "toy-mlp") return toy_mlp(params);
    if (name == "linear-softmax") return linear_softmax(params);
    if (name == "small3") return small3(params);
    if (name == "resnet18") return resnet18(params);
    if (name == "resnet152") return resnet152(params);
    if (name == "vgg16") return vgg16(params);
    if (name == "densenet121" || name == "convnext-v2")
        return json{{"type", "external"}, {"name", name}};
    throw ModelError("unknown architecture preset '" + name + "'");
}

std::unique_ptr<Sequential> build_arch(const json& spec) {
    auto layer = build_layer(spec);
    if (auto* s = dynamic_cast<Sequential*>(layer.get())) {
        layer.release();
        return std::unique_ptr<Sequential>(s);
    }
    // Wrap a single non-sequential layer so callers always get a Sequential.
    auto net = std::make_unique<Sequential>();
    net->add(std::move(layer));
    return net;
}

std::size_t preset_feature_dim(const std::string& name) {
    if (name == "small3") return 64;
    if (name == "resnet18") return 512;
    throw ModelError("'" + name + "' is not a feature-extractor preset");
}

std::vector<std::string> classifier_preset_names() {
    return {"toy-cnn-a", "toy-cnn-b", "toy-mlp",     "linear-softmax",
            "vgg16",     "resnet152", "densenet121", "convnext-v2"};
}

}  // namespace veil::nn
