#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "veil/config.hpp"
#include "veil/data.hpp"
#include "veil/decoder.hpp"
#include "veil/encoder.hpp"
#include "veil/masking.hpp"
#include "veil/models.hpp"
#include "veil/trainer.hpp"

namespace veil {

/// Top-1 / top-5 accuracy in percent. top5 equals top1 when the label space
/// has fewer than five classes.
struct Accuracy {
    real top1 = 0.0;
    real top5 = 0.0;
};

/// Classifier accuracy on untransformed images: raw pixels resized to the
/// classifier's input resolution and standardized with its expected stats.
Accuracy evaluate_identity(FrozenClassifier& clf, const DatasetHandle& data,
                           std::size_t batch_size);

/// Evaluation behavior knobs. stochastic_samples = 0 is the standard
/// deterministic mode (z = mu); k > 0 averages softmax probabilities over k
/// reparameterized draws per image (sensitivity studies).
struct EvalOptions {
    std::size_t stochastic_samples = 0;
    std::uint64_t seed = 0;  ///< noise seed for the stochastic mode
};

/// Classifier accuracy on transformed images: dataset-normalized input ->
/// encode -> mask -> decode -> pixels -> resize to the classifier's
/// resolution -> standardize with its stats. Mutates no weights and no
/// running statistics (everything runs in inference mode), and consumes
/// exactly the full split (asserted).
Accuracy evaluate_transform(VariationalEncoder& encoder, TaskDecoder& decoder,
                            const std::vector<std::uint8_t>& mask_bits,
                            FrozenClassifier& clf, const DatasetHandle& data,
                            std::size_t batch_size, const EvalOptions& options = {});

/// Top-1 convenience wrapper around evaluate_transform.
real evaluate_transform_accuracy(VariationalEncoder& encoder, TaskDecoder& decoder,
                                 const std::vector<std::uint8_t>& mask_bits,
                                 FrozenClassifier& clf, const DatasetHandle& data,
                                 std::size_t batch_size);

/// One transform under evaluation (borrowed pointers).
struct TrainedTransform {
    std::string target_id;
    VariationalEncoder* encoder = nullptr;
    TaskDecoder* decoder = nullptr;
    std::vector<std::uint8_t> mask_bits;
};

/// Cross-model accuracy grid: row r = transform trained for target r,
/// column c = evaluating classifier c. The diagonal should stay high and
/// everything off it should collapse toward chance. A row whose artifact
/// could not be evaluated is "skipped": its cells are NaN and reports render
/// them as "n/a".
struct TransferMatrix {
    std::vector<std::string> classifier_ids;  ///< column order
    std::vector<std::string> target_ids;      ///< row order
    std::vector<std::vector<real>> top1;      ///< [row][col], percent
    std::vector<std::vector<real>> top5;      ///< [row][col], percent
    std::vector<real> identity_top1;          ///< per-classifier baseline
    real chance = 0.0;                        ///< 100 / num_classes
    bool has_top5 = true;  ///< false when reloaded from a CSV (top-1 only)

    /// Column index of the row's own target; ContractError if absent.
    std::size_t diagonal_column(std::size_t row) const;
    real diagonal(std::size_t row) const;
    real max_off_diagonal(std::size_t row) const;
    real mean_off_diagonal(std::size_t row) const;
    /// diagonal / max(max_off_diagonal, chance / 10) — the floor keeps the
    /// ratio finite when off-diagonal accuracy collapses to zero.
    real suppression_ratio(std::size_t row) const;

    bool row_skipped(std::size_t row) const;
    /// Appends a skipped (all-NaN) row for a target whose artifact is missing.
    void add_skipped_row(const std::string& target_id);
};

TransferMatrix compute_transfer_matrix(const std::vector<TrainedTransform>& transforms,
                                       const std::vector<FrozenClassifier*>& classifiers,
                                       const DatasetHandle& test, std::size_t batch_size,
                                       const EvalOptions& options = {});

/// One stage of the masking ablation.
struct AblationStage {
    std::string name;  ///< "none", "kl_only" or "integrated"
    RunConfig config;
    real target_top1 = -1.0;            ///< percent on the intended target
    std::vector<real> other_top1;       ///< percent per non-target classifier
    std::string mask_hash;
    std::size_t kept_dimensions = 0;
    std::size_t latent_dim = 0;
    bool completed = false;
    std::string error;  ///< populated when the stage failed
};

struct AblationReport {
    std::vector<std::string> other_ids;  ///< column order of other_top1
    std::vector<AblationStage> stages;
    real chance = 0.0;
};

/// Mean of a stage's non-target accuracies (the "mean unintended" column).
real mean_unintended(const AblationStage& stage);

/// Trains three variants of the base config under a shared seed — no masking
/// at all, KL-only masking (gamma = 1) and the integrated mask — then scores
/// each stage on the target and on every other classifier. A failing stage is
/// recorded with its error and the remaining stages still run, so the report
/// is always produced.
AblationReport run_ablation(const RunConfig& base, FrozenClassifier& target,
                            const std::vector<FrozenClassifier*>& others,
                            const DatasetHandle& train, const DatasetHandle& test,
                            const std::filesystem::path& work_dir);

/// Writes transfer_matrix.csv, report.md and heatmap.png (plus ablation.csv
/// when an ablation report is given) into out_dir. All numbers are rendered
/// with a fixed %.2f format and a fixed colormap, so the bytes depend only on
/// the inputs. Top-5 tables appear when the label space has at least 10
/// classes; skipped rows render as "n/a".
void emit_report(const std::filesystem::path& out_dir, const TransferMatrix& matrix,
                 const AblationReport* ablation = nullptr);

/// Standalone ablation outputs (ablation.csv plus an ablation section in
/// ablation.md) for runs without a transfer matrix.
void emit_ablation(const std::filesystem::path& out_dir, const AblationReport& report);

/// Parses a transfer_matrix.csv previously written by emit_report (used by
/// the report command to regenerate markdown and heatmap without
/// recomputation). Chance is reconstructed from num_classes.
TransferMatrix parse_transfer_csv(const std::filesystem::path& csv_path,
                                  std::size_t num_classes);

/// Upper edge of the k-sigma normal-approximation band around chance
/// accuracy for n independent guesses: 100 * (p + k * sqrt(p(1-p)/n)) with
/// p = 1/num_classes. Accuracies under this band are statistically
/// indistinguishable from guessing.
real chance_upper_band(std::size_t n, std::size_t num_classes, real k_sigma);

}  // namespace veil
