#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "veil/data.hpp"
#include "veil/nn/arch.hpp"
#include "veil/nn/layer.hpp"

namespace veil {

/// Fixed pretrained classifier: forward inference, task loss, and gradients
/// of that loss with respect to the input — never with respect to weights.
/// Parameter gradients are disabled at construction and the network runs in
/// inference mode permanently, so the weight hash is constant for life.
class FrozenClassifier {
public:
    FrozenClassifier(std::string model_id, std::unique_ptr<nn::Sequential> net,
                     std::size_t num_classes, std::size_t input_resolution, ChannelStats stats);

    const std::string& model_id() const { return model_id_; }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t input_resolution() const { return input_resolution_; }
    const ChannelStats& expected_input_stats() const { return stats_; }

    /// Logits [B, num_classes] for a normalized batch [B,3,R,R].
    Tensor predict(const Tensor& X);

    /// Mean cross-entropy over the batch plus d(loss)/dX. Weights untouched.
    std::pair<real, Tensor> task_loss_and_input_grad(const Tensor& X,
                                                     const std::vector<int>& Y);

    /// SHA-256 over all parameters and buffers; constant for life.
    std::string params_hash();

private:
    void check_input(const Tensor& X) const;

    std::string model_id_;
    std::unique_ptr<nn::Sequential> net_;
    std::size_t num_classes_;
    std::size_t input_resolution_;
    ChannelStats stats_;
};

/// Registry entry: everything needed to reconstruct (or merely describe) a
/// classifier. Declared-only entries carry no checkpoint and cannot load.
struct ZooEntry {
    nn::json arch;
    std::optional<std::string> checkpoint;  ///< path relative to the zoo dir
    std::size_t num_classes = 0;
    std::size_t input_resolution = 0;
    ChannelStats stats{};
    real baseline_accuracy = -1.0;  ///< percent on its test split; -1 unknown
};

/// Directory-backed collection of frozen classifiers (registry.json plus
/// checkpoint files). Ships the heterogeneous desk-scale models once fitted,
/// and declares the four full-scale architectures without bundling weights.
class ModelZoo {
public:
    explicit ModelZoo(std::filesystem::path dir);

    /// Registers a loadable model; verifies the checkpoint matches the
    /// architecture by performing a full load before accepting it.
    void register_model(const std::string& id, const nn::json& arch_spec,
                        const std::filesystem::path& checkpoint, std::size_t num_classes,
                        std::size_t input_resolution, ChannelStats stats,
                        real baseline_accuracy = -1.0);

    /// Declares an architecture (id + spec + stats) without weights.
    void declare_model(const std::string& id, const std::string& preset_name,
                       std::size_t num_classes, std::size_t input_resolution,
                       ChannelStats stats);

    std::unique_ptr<FrozenClassifier> load(const std::string& id) const;

    bool has(const std::string& id) const { return entries_.count(id) != 0; }
    bool loadable(const std::string& id) const;
    const ZooEntry& entry(const std::string& id) const;
    std::vector<std::string> ids() const;          ///< all entries
    std::vector<std::string> loadable_ids() const; ///< entries with checkpoints
    const std::filesystem::path& dir() const { return dir_; }

    void save() const;

private:
    std::filesystem::path dir_;
    std::map<std::string, ZooEntry> entries_;
};

}  // namespace veil
