#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "veil/config.hpp"
#include "veil/data.hpp"
#include "veil/decoder.hpp"
#include "veil/encoder.hpp"
#include "veil/masking.hpp"
#include "veil/models.hpp"
#include "veil/nn/adam.hpp"

namespace veil {

/// One weighted term of the training objective.
struct LossTerm {
    std::string name;
    real weight;
};

/// The complete training objective: a task cross-entropy term under the
/// frozen target (weight 1) and the latent KL term (weight lambda_kl).
/// Nothing else — in particular no pixel reconstruction term, so the decoder
/// output is shaped purely by what the target model needs.
std::vector<LossTerm> loss_registry(const RunConfig& config);

/// Losses of one optimization step (batch means).
struct StepStats {
    real task_loss = 0.0;  ///< cross-entropy of the target on transformed input
    real kl_loss = 0.0;    ///< unweighted KL term
    real total_loss = 0.0; ///< task_loss + lambda_kl * kl_loss
};

struct EpochStats {
    std::size_t epoch = 0;  ///< 1-indexed
    real mean_task = 0.0;
    real mean_kl = 0.0;
    real mean_total = 0.0;
    real test_accuracy = 0.0;  ///< percent, deterministic transform, current mask
    bool mask_recomputed = false;
};

struct TrainingSummary {
    std::size_t epochs_run = 0;       ///< executed by this call (0 if complete)
    real final_test_accuracy = -1.0;  ///< percent at the last epoch
    real best_test_accuracy = -1.0;
    std::size_t best_epoch = 0;
    MaskState final_mask;
    std::vector<EpochStats> history;  ///< this call's epochs only
    bool resumed = false;
    bool already_complete = false;
};

/// Owns the encoder, decoder and optimizer of one run; the frozen target and
/// the datasets are borrowed. Weight initialization, shuffling and
/// reparameterization noise all derive from config.seed, so two runs of the
/// same config produce bit-identical masks and losses.
class Trainer {
public:
    /// Checks the geometry contracts (dataset resolution and class count
    /// versus config and target model), builds encoder/decoder, initializes
    /// weights from the seed, and starts with an all-ones mask.
    Trainer(RunConfig config, FrozenClassifier& target, DatasetHandle train,
            DatasetHandle test);

    /// One optimization step on a batch: encode, sample, mask, decode,
    /// renormalize, target loss; backward through the whole chain plus the
    /// weighted KL gradients; optional global-norm clip; Adam update.
    StepStats step(const Tensor& X, const std::vector<int>& Y, RngStream& noise);

    /// Full training loop over the run directory (creates it if needed):
    /// masks/, checkpoints/ (last 3 epochs plus best-by-test-accuracy),
    /// losses.csv, accuracy.csv, manifest.json. Re-running on a finished
    /// directory is a no-op; an interrupted run resumes from the newest
    /// loadable checkpoint; a config-hash mismatch raises ConfigError.
    TrainingSummary run(const std::filesystem::path& run_dir);

    VariationalEncoder& encoder() { return encoder_; }
    TaskDecoder& decoder() { return decoder_; }
    FrozenClassifier& target() { return target_; }
    const RunConfig& config() const { return cfg_; }
    const MaskState& mask() const { return mask_; }
    void set_mask(MaskState m) { mask_ = std::move(m); }

    /// Epochs at which a mask recomputation actually ran (schedule evidence).
    const std::vector<std::size_t>& recompute_epochs() const { return recompute_epochs_; }

    /// Stream for one-line-per-epoch progress output (nullptr = silent).
    void set_log(std::ostream* log) { log_ = log; }

private:
    std::vector<nn::NamedTensorRef> model_state();
    void write_checkpoint(const std::filesystem::path& dir, std::size_t epoch);
    std::size_t restore_latest_checkpoint(const std::filesystem::path& run_dir);

    RunConfig cfg_;
    FrozenClassifier& target_;
    DatasetHandle train_, test_;
    VariationalEncoder encoder_;
    TaskDecoder decoder_;
    std::vector<nn::Param*> params_;
    nn::Adam adam_;
    MaskState mask_;
    std::vector<std::size_t> recompute_epochs_;
    real best_accuracy_ = -1.0;
    std::size_t best_epoch_ = 0;
    std::ostream* log_ = nullptr;
};

/// A trained transform reconstructed from a run directory (best checkpoint if
/// available, otherwise the newest), ready for evaluation or image export.
struct LoadedTransform {
    RunConfig config;
    std::unique_ptr<VariationalEncoder> encoder;
    std::unique_ptr<TaskDecoder> decoder;
    MaskState mask;
    std::string target_model_id;
};

LoadedTransform load_transform(const std::filesystem::path& run_dir);

}  // namespace veil
