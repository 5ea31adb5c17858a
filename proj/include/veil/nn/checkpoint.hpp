#pragma once

#include <filesystem>

#include "veil/nn/layer.hpp"
#include "veil/serialize.hpp"

namespace veil::nn {

/// Writes the referenced tensors (in order) as a checkpoint file.
void save_state(const std::filesystem::path& path, const std::vector<NamedTensorRef>& state);

/// Loads a checkpoint into the referenced tensors, matching entry-by-entry on
/// name and shape. Any mismatch raises ModelError listing every offending
/// entry (expected vs found), so a wrong-architecture checkpoint is
/// diagnosable in one message.
void load_state(const std::filesystem::path& path, const std::vector<NamedTensorRef>& state);

/// Hash of the referenced tensors in order (frozen-parameter invariant).
std::string state_hash(const std::vector<NamedTensorRef>& state);

}  // namespace veil::nn
