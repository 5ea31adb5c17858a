#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "veil/config.hpp"
#include "veil/data.hpp"
#include "veil/decoder.hpp"
#include "veil/encoder.hpp"
#include "veil/models.hpp"

namespace veil {

/// Per-dimension global mask with the scores that produced it.
struct MaskState {
    std::vector<real> kl_score;      ///< mean per-dimension KL over the dataset
    std::vector<real> sal_score;     ///< mean |dL/dz_i| over the dataset
    std::vector<real> importance;    ///< fused, in [0,1]
    std::vector<std::uint8_t> bits;  ///< 1 = dimension kept
    std::size_t computed_at_epoch = 0;
    real gamma = 0.0;
    real threshold = 0.0;

    std::size_t kept() const;
    std::string bits_hash() const;  ///< SHA-256 over the bit string

    nlohmann::json to_json() const;
    static MaskState from_json(const nlohmann::json& j);
};

void save_mask(const std::filesystem::path& path, const MaskState& m);
MaskState load_mask(const std::filesystem::path& path);

/// All-ones mask of the given width (warmup / mask_mode=none).
std::vector<std::uint8_t> all_ones_mask(std::size_t d);

/// KL_i = 0.5 * (mu_i^2 + exp(log_var_i) - log_var_i - 1), elementwise >= 0.
std::vector<real> kl_per_dimension(const std::vector<real>& mu,
                                   const std::vector<real>& log_var);

/// Batch form: rows of [B,d] mu/log_var -> [B,d] per-dimension KL.
Tensor kl_matrix(const Tensor& mu, const Tensor& log_var);

/// Mean over the batch of the per-sample KL sum over dimensions (the KL term
/// of the total loss); optionally accumulates its gradients w.r.t. mu and
/// log_var (for loss weight 1; callers scale by lambda).
real kl_loss(const Tensor& mu, const Tensor& log_var, Tensor* dmu = nullptr,
             Tensor* dlogvar = nullptr);

/// z * M row-wise; masked dimensions become exactly zero.
Tensor apply_mask(const Tensor& z, const std::vector<std::uint8_t>& bits);

/// Instrumentation for tests and the ablation contract ("KL-only never
/// computes saliency"). Process-wide; reset between assertions.
struct ScoreCounters {
    std::size_t kl_passes = 0;
    std::size_t saliency_passes = 0;
    std::size_t recomputes = 0;
    void reset() { *this = {}; }
};
ScoreCounters& score_counters();

/// Mean per-dimension KL over the dataset (deterministic encoding, batched
/// fixed-order accumulation). subsample = 0 means the full dataset;
/// otherwise an evenly strided subset of that many samples.
std::vector<real> global_kl(VariationalEncoder& encoder, const DatasetHandle& data,
                            std::size_t batch_size, std::size_t subsample = 0);

/// S_i = mean over samples of |d L_task / d z_i| along encode (deterministic,
/// z = mu) -> decode -> renormalize -> target loss. The mask is NOT applied
/// (identity mask), so pruned dimensions can re-enter later; batch-norm
/// layers run in inference mode so per-sample gradients are independent.
std::vector<real> global_saliency(VariationalEncoder& encoder, TaskDecoder& decoder,
                                  FrozenClassifier& target, const DatasetHandle& data,
                                  std::size_t batch_size, std::size_t subsample = 0);

/// I = gamma * minmax(kl) + (1-gamma) * minmax(sal); a constant vector
/// min-max-normalizes to the zero vector.
std::vector<real> fuse_scores(const std::vector<real>& kl_vec,
                              const std::vector<real>& sal_vec, real gamma);

/// M_i = 1 iff I_i >= T * max(I); all-ones when max(I) == 0 (fail-open).
std::vector<std::uint8_t> threshold_mask(const std::vector<real>& importance, real threshold);

/// True iff the schedule calls for a mask recomputation at (1-indexed) epoch.
bool mask_due(const RunConfig& config, std::size_t epoch);

/// Full recomputation pipeline. Raises ScheduleError when called at an epoch
/// the schedule does not permit (a trainer bug, not a user error). With
/// gamma == 1 the saliency pass is skipped entirely; with gamma == 0 the KL
/// pass is skipped.
MaskState recompute_mask(VariationalEncoder& encoder, TaskDecoder& decoder,
                         FrozenClassifier& target, const DatasetHandle& data,
                         const RunConfig& config, std::size_t epoch);

}  // namespace veil
