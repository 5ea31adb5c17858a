#pragma once

#include <memory>
#include <string>
#include <vector>

#include "veil/nn/layer.hpp"

namespace veil::nn {

/// Geometry knobs shared by the named presets.
struct ArchParams {
    std::size_t in_channels = 3;
    std::size_t resolution = 32;   ///< square input side
    std::size_t num_classes = 10;
};

/// JSON architecture spec for a named preset. Classifier presets:
/// toy-cnn-a, toy-cnn-b, toy-mlp, linear-softmax, vgg16, resnet152,
/// densenet121, convnext-v2 (the last two are declared-only and build
/// as errors). Feature-extractor presets (no classifier head):
/// small3 (64-dim features) and resnet18 (512-dim features).
json preset_arch(const std::string& name, const ArchParams& params);

/// Instantiates a network from a JSON spec (the same shape Sequential::spec
/// emits). Unknown or declared-only layer types raise ModelError.
std::unique_ptr<Sequential> build_arch(const json& spec);

/// Feature dimension produced by a feature-extractor preset.
std::size_t preset_feature_dim(const std::string& name);

std::vector<std::string> classifier_preset_names();

}  // namespace veil::nn
