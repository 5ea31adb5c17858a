#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Binary checkpoint blob: magic "VEILCKP1", tensor count, then per tensor
/// name, dims and raw little-endian doubles. Byte-stable for identical inputs.
void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& s);

/// Hash of a tensor collection in serialization order; used for the
/// frozen-parameter invariant and config hashes.
std::string tensors_hash(const std::vector<NamedTensor>& tensors);

}  // namespace veil
