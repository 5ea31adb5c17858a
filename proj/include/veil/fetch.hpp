#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace veil {

/// Downloads and unpacks the named dataset's binary files under data_root.
/// "toy-shapes" is procedural and needs no files. A dataset whose files are
/// already present is left untouched. base_url exists so tests can point at a
/// local server; the default is the dataset's canonical host.
void fetch_dataset(const std::string& dataset_id, const std::filesystem::path& data_root,
                   const std::string& base_url = "https://www.cs.toronto.edu/~kriz");

/// True when every file load_dataset needs for this id exists under
/// data_root (always true for "toy-shapes").
bool dataset_files_present(const std::string& dataset_id,
                           const std::filesystem::path& data_root);

/// Inflates a gzip (or zlib) byte stream.
std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& compressed);

/// Extracts regular files and directories from an uncompressed (ustar/v7)
/// tar archive into dest. Entries with absolute paths or ".." components are
/// rejected.
void extract_tar(const std::vector<std::uint8_t>& archive,
                 const std::filesystem::path& dest);

}  // namespace veil
