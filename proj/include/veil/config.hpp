#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "veil/rng.hpp"

namespace veil {

enum class MaskMode { kDynamic, kStatic, kNone };

std::string to_string(MaskMode m);
MaskMode mask_mode_from_string(const std::string& s);

/// Every hyperparameter of a training run. Loaded from a key=value config
/// file; required keys have no defaults (the recipes state them explicitly),
/// optional keys fall back to the full-scale defaults documented per field.
struct RunConfig {
    int schema_version = 1;

    // Required (no defaults):
    real lambda_kl = 0.0;            ///< KL weight in the total loss
    real gamma = 0.5;                ///< KL-vs-saliency fusion weight, [0,1]
    real threshold = 0.3;            ///< mask threshold T, [0,1]
    std::size_t warm_epochs = 0;     ///< E_warm
    std::size_t mask_epochs = 0;     ///< E_mask
    std::size_t mask_update_freq = 1;
    MaskMode mask_mode = MaskMode::kDynamic;
    std::uint64_t seed = 0;
    std::string target_model_id;
    std::string dataset_id;

    // Optional (defaults = full-scale setup):
    std::size_t latent_dim = 512;
    std::size_t batch_size = 64;
    real learning_rate = 1e-4;
    real weight_decay = 1e-5;
    std::size_t input_resolution = 224;

    // Optional behavior knobs (defaults documented in the README):
    bool mask_at_phase_start = true;   ///< extra recomputation at E_warm+1
    std::string encoder_backbone = "resnet18";
    std::size_t decoder_base_size = 14;   ///< s0 of the d -> 3*s0*s0 projection
    std::size_t decoder_blocks = 4;       ///< stride-2 upsampling blocks
    std::size_t decoder_channels = 64;    ///< widest upsampling block
    std::size_t score_subsample = 0;      ///< samples used for mask scores; 0 = all
    real grad_clip = 0.0;                 ///< global-norm clip; 0 = off

    std::size_t total_epochs() const { return warm_epochs + mask_epochs; }
};

/// Parses and validates a config file. Unknown or duplicate keys, malformed
/// values, and range violations all raise ConfigError naming the key.
RunConfig load_config(const std::filesystem::path& path);

/// Parses config text (same contract as load_config).
RunConfig parse_config(const std::string& text, const std::string& origin = "<string>");

/// Canonical fixed-order key=value rendering; parse(render(c)) == c.
std::string render_config(const RunConfig& c);

/// Raises ConfigError describing the first violated invariant, if any.
void validate_config(const RunConfig& c);

/// SHA-256 of the canonical rendering; equal configs hash equal.
std::string config_hash(const RunConfig& c);

/// Run provenance record stored as manifest.json next to every artifact.
struct Manifest {
    int schema_version = 1;
    std::string code_version;
    std::string config_hash;
    RunConfig config;
    std::string created_at;  ///< UTC ISO-8601; excluded from the hash
    bool completed = false;
    real final_target_accuracy = -1.0;  ///< percent; -1 until completion
    std::string final_mask_hash;        ///< SHA-256 of final mask bits

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
};

Manifest make_manifest(const RunConfig& config, const std::string& code_version);
void save_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);

/// Current UTC time as an ISO-8601 string.
std::string utc_timestamp();

}  // namespace veil
