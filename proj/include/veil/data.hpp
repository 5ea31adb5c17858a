#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "veil/rng.hpp"
#include "veil/tensor.hpp"

namespace veil {

/// Per-channel normalization statistics in pixel space ([0,1]).
struct ChannelStats {
    std::array<real, 3> mean;
    std::array<real, 3> std;

    bool operator==(const ChannelStats&) const = default;
};

/// The standard ImageNet statistics used by the full-scale recipes.
ChannelStats imagenet_stats();

/// mean 0.5 / std 0.5 per channel: maps [0,1] pixels onto [-1,1]. The toy
/// models and toy-shapes dataset use these.
ChannelStats unit_stats();

/// Normalization statistics a dataset id uses, without loading any data
/// (the transform command needs them to preprocess standalone images).
ChannelStats dataset_stats(const std::string& dataset_id);

/// Loaded dataset split. Images are kept as 8-bit pixels at their native
/// resolution; `sample`/batch assembly decodes to [0,1], resizes to
/// `resolution` and standardizes with `stats` in one pass.
struct DatasetHandle {
    std::string id;
    std::string split;  ///< "train" or "test"
    std::size_t num_classes = 0;
    std::size_t native_h = 0, native_w = 0;
    std::size_t resolution = 0;  ///< side length after preprocessing
    ChannelStats stats{};
    std::vector<std::uint8_t> raw;  ///< size() * 3 * native_h * native_w
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }

    /// Pixel-space [3,native_h,native_w] tensor in [0,1].
    Tensor raw_image(std::size_t i) const;

    /// Fully preprocessed [3,resolution,resolution] tensor.
    Tensor sample(std::size_t i) const;
};

/// Loads a dataset split. Supported ids: "toy-shapes" (procedural, no files),
/// "cifar10", "cifar100" (binary files under data_root, see fetch-data).
/// strict=false skips corrupt records instead of failing.
DatasetHandle load_dataset(const std::string& dataset_id, const std::string& split,
                           std::size_t resolution, const std::filesystem::path& data_root,
                           bool strict = true);

/// Procedural 10-class shape dataset: 10000 train / 2000 test samples,
/// balanced classes (label = index mod 10), configurable resolution. Every
/// sample is a pure function of (split, index) under a fixed internal seed,
/// so the dataset is identical across machines and runs. Foreground and
/// background colors are drawn independently of the class; only geometry
/// carries the label.
DatasetHandle generate_toy_shapes(const std::string& split, std::size_t resolution);

/// Wraps in-memory images ([N,3,h,w] values in [0,1], quantized to 8 bits)
/// as a DatasetHandle; the toy stacks in tests are built this way.
DatasetHandle make_memory_dataset(std::string id, const Tensor& images,
                                  std::vector<int> labels, std::size_t num_classes,
                                  std::size_t resolution, ChannelStats stats);

/// Standardizes pixel tensors: (u - mean) / std per channel. Accepts [3,H,W]
/// or [B,3,H,W]; rejects inputs outside [0,1] so the pipeline stays
/// single-pass (an already-standardized tensor cannot sneak through twice).
Tensor normalize_pixels(const Tensor& raw01, const ChannelStats& stats);

/// Inverse of normalize_pixels; result clamped to [0,1].
Tensor denormalize_pixels(const Tensor& normalized, const ChannelStats& stats);

/// Gathers, resizes and normalizes the given sample indices into a
/// [n,3,R,R] batch.
Tensor assemble_batch(const DatasetHandle& h, const std::vector<std::size_t>& indices);
std::vector<int> gather_labels(const DatasetHandle& h, const std::vector<std::size_t>& indices);

/// One epoch of mini-batches. The shuffled form visits a seeded permutation
/// (derived from run seed and epoch number); the sequential form visits
/// 0..N-1 in order. The final partial batch is yielded, never dropped.
class BatchStream {
public:
    /// Shuffled epoch: permutation seeded by derive_seed(seed,"shuffle",epoch).
    BatchStream(const DatasetHandle& h, std::size_t batch_size, std::uint64_t seed,
                std::size_t epoch);
    /// Sequential pass (evaluation, score accumulation).
    BatchStream(const DatasetHandle& h, std::size_t batch_size);

    /// Fills X [b,3,R,R] and Y; returns false when the epoch is exhausted.
    bool next(Tensor& X, std::vector<int>& Y);

    std::size_t num_batches() const;
    const std::vector<std::size_t>& order() const { return order_; }

private:
    const DatasetHandle& handle_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace veil
