#pragma once

#include <memory>
#include <string>

#include "veil/data.hpp"
#include "veil/nn/layer.hpp"
#include "veil/rng.hpp"

namespace veil {

struct FitOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    real learning_rate = 1e-3;
    real weight_decay = 0.0;
    std::uint64_t seed = 1;
    real stop_at_accuracy = 0.0;  ///< percent; 0 = always run every epoch
    bool verbose = false;
};

struct FitResult {
    std::unique_ptr<nn::Sequential> net;
    real test_accuracy = 0.0;  ///< percent (top-1)
    std::size_t epochs_run = 0;
};

/// Trains a classifier preset from scratch (Adam, cross-entropy) on the
/// given splits and stops early once stop_at_accuracy is reached. Used to
/// produce the bundled desk-scale model zoo.
FitResult fit_classifier(const std::string& preset, const DatasetHandle& train,
                         const DatasetHandle& test, const FitOptions& opt);

/// Top-1 accuracy (percent) of a bare network on preprocessed batches.
real classifier_accuracy(nn::Sequential& net, const DatasetHandle& data,
                         std::size_t batch_size);

}  // namespace veil
