#include "veil/masking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"
#include "veil/serialize.hpp"

namespace veil {

namespace {

/// Evenly strided deterministic subset (RNG-free so recomputations at
/// different epochs score the same samples).
std::vector<std::size_t> score_indices(std::size_t size, std::size_t subsample) {
    const std::size_t n = (subsample == 0 || subsample >= size) ? size : subsample;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i * size / n;
    return idx;
}

}  // namespace

std::size_t MaskState::kept() const {
    std::size_t n = 0;
    for (std::uint8_t b : bits) n += b;
    return n;
}

std::string MaskState::bits_hash() const {
    std::string s(bits.begin(), bits.end());
    return sha256_hex(s);
}

nlohmann::json MaskState::to_json() const {
    return nlohmann::json{{"schema_version", 1},
                          {"kl_score", kl_score},
                          {"sal_score", sal_score},
                          {"importance", importance},
                          {"bits", bits},
                          {"computed_at_epoch", computed_at_epoch},
                          {"gamma", gamma},
                          {"threshold", threshold}};
}

MaskState MaskState::from_json(const nlohmann::json& j) {
    MaskState m;
    m.kl_score = j.at("kl_score").get<std::vector<real>>();
    m.sal_score = j.at("sal_score").get<std::vector<real>>();
    m.importance = j.at("importance").get<std::vector<real>>();
    m.bits = j.at("bits").get<std::vector<std::uint8_t>>();
    m.computed_at_epoch = j.at("computed_at_epoch").get<std::size_t>();
    m.gamma = j.at("gamma").get<real>();
    m.threshold = j.at("threshold").get<real>();
    return m;
}

void save_mask(const std::filesystem::path& path, const MaskState& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write mask file " + path.string());
    out << m.to_json().dump(2) << "\n";
}

MaskState load_mask(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open mask file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("mask file " + path.string() + " is not valid JSON: " + e.what());
    }
    return MaskState::from_json(j);
}

std::vector<std::uint8_t> all_ones_mask(std::size_t d) {
    return std::vector<std::uint8_t>(d, 1);
}

std::vector<real> kl_per_dimension(const std::vector<real>& mu,
                                   const std::vector<real>& log_var) {
    if (mu.size() != log_var.size()) throw ContractError("mu/log_var length mismatch");
    std::vector<real> kl(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
        kl[i] = 0.5 * (mu[i] * mu[i] + std::exp(log_var[i]) - log_var[i] - 1.0);
    return kl;
}

Tensor kl_matrix(const Tensor& mu, const Tensor& log_var) {
    if (!mu.same_shape(log_var)) throw ContractError("mu/log_var shape mismatch");
    Tensor kl(mu.shape());
    for (std::size_t i = 0; i < kl.numel(); ++i)
        kl[i] = 0.5 * (mu[i] * mu[i] + std::exp(log_var[i]) - log_var[i] - 1.0);
    return kl;
}

real kl_loss(const Tensor& mu, const Tensor& log_var, Tensor* dmu, Tensor* dlogvar) {
    const std::size_t b = mu.dim(0);
    Tensor kl = kl_matrix(mu, log_var);
    real total = 0.0;
    for (std::size_t i = 0; i < kl.numel(); ++i) total += kl[i];
    const real loss = total / static_cast<real>(b);
    if (dmu) {
        for (std::size_t i = 0; i < mu.numel(); ++i)
            (*dmu)[i] += mu[i] / static_cast<real>(b);
    }
    if (dlogvar) {
        for (std::size_t i = 0; i < mu.numel(); ++i)
            (*dlogvar)[i] += 0.5 * (std::exp(log_var[i]) - 1.0) / static_cast<real>(b);
    }
    return loss;
}

Tensor apply_mask(const Tensor& z, const std::vector<std::uint8_t>& bits) {
    if (z.ndim() != 2 || z.dim(1) != bits.size())
        throw ContractError("mask width does not match latent width");
    Tensor out = z;
    for (std::size_t b = 0; b < z.dim(0); ++b)
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (!bits[i]) out.at(b, i) = 0.0;
    return out;
}

ScoreCounters& score_counters() {
    static ScoreCounters counters;
    return counters;
}

std::vector<real> global_kl(VariationalEncoder& encoder, const DatasetHandle& data,
                            std::size_t batch_size, std::size_t subsample) {
    if (data.size() == 0) throw ContractError("global KL over an empty dataset");
    ++score_counters().kl_passes;
    encoder.set_training(false);
    const std::vector<std::size_t> idx = score_indices(data.size(), subsample);
    const std::size_t d = encoder.latent_dim();
    std::vector<real> sum(d, 0.0);
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, idx.size() - start);
        std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                       idx.begin() + static_cast<std::ptrdiff_t>(start + n));
        Tensor X = assemble_batch(data, chunk);
        auto [mu, logvar] = encoder.encode(X);
        Tensor kl = kl_matrix(mu, logvar);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < d; ++i) sum[i] += kl.at(b, i);
    }
    for (real& v : sum) v /= static_cast<real>(idx.size());
    return sum;
}

std::vector<real> global_saliency(VariationalEncoder& encoder, TaskDecoder& decoder,
                                  FrozenClassifier& target, const DatasetHandle& data,
                                  std::size_t batch_size, std::size_t subsample) {
    if (data.size() == 0) throw ContractError("global saliency over an empty dataset");
    ++score_counters().saliency_passes;
    encoder.set_training(false);
    decoder.set_training(false);

    // Only input gradients are needed here; snapshot the decoder's gradient
    // accumulators so a mid-epoch recomputation leaves the trainer's state
    // untouched.
    std::vector<nn::Param*> dec_params = decoder.params();
    std::vector<Tensor> saved_grads;
    saved_grads.reserve(dec_params.size());
    for (nn::Param* p : dec_params) saved_grads.push_back(p->grad);

    const std::vector<std::size_t> idx = score_indices(data.size(), subsample);
    const std::size_t d = encoder.latent_dim();
    std::vector<real> sum(d, 0.0);
    for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, idx.size() - start);
        std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                       idx.begin() + static_cast<std::ptrdiff_t>(start + n));
        Tensor X = assemble_batch(data, chunk);
        std::vector<int> Y = gather_labels(data, chunk);
        auto [mu, logvar] = encoder.encode(X);
        // Deterministic encoding, identity mask: decode mu as-is.
        Tensor decoded = decoder.decode(mu);
        Tensor model_in = renormalize_for_target(decoded, target.expected_input_stats());
        auto [loss, dmodel_in] = target.task_loss_and_input_grad(model_in, Y);
        (void)loss;
        // The classifier loss is the batch mean; scale by n to recover
        // per-sample gradients before taking absolute values.
        for (std::size_t i = 0; i < dmodel_in.numel(); ++i)
            dmodel_in[i] *= static_cast<real>(n);
        Tensor ddecoded = renormalize_backward(dmodel_in, target.expected_input_stats());
        Tensor dz = decoder.backward(ddecoded);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < d; ++i) sum[i] += std::abs(dz.at(b, i));
    }
    // Restore decoder gradient accumulators exactly as they were.
    for (std::size_t i = 0; i < dec_params.size(); ++i) dec_params[i]->grad = saved_grads[i];

    for (real& v : sum) v /= static_cast<real>(idx.size());
    return sum;
}

namespace {

std::vector<real> minmax_norm(const std::vector<real>& v) {
    const auto [mn_it, mx_it] = std::minmax_element(v.begin(), v.end());
    const real mn = *mn_it, mx = *mx_it;
    std::vector<real> out(v.size(), 0.0);
    if (mx == mn) return out;  // degenerate: defined as the zero vector
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mn) / (mx - mn);
    return out;
}

}  // namespace

std::vector<real> fuse_scores(const std::vector<real>& kl_vec,
                              const std::vector<real>& sal_vec, real gamma) {
    if (kl_vec.size() != sal_vec.size()) throw ContractError("score length mismatch");
    if (gamma < 0.0 || gamma > 1.0) throw ContractError("gamma outside [0,1]");
    const std::vector<real> nk = minmax_norm(kl_vec);
    const std::vector<real> ns = minmax_norm(sal_vec);
    std::vector<real> fused(kl_vec.size());
    for (std::size_t i = 0; i < fused.size(); ++i)
        fused[i] = gamma * nk[i] + (1.0 - gamma) * ns[i];
    return fused;
}

std::vector<std::uint8_t> threshold_mask(const std::vector<real>& importance, real threshold) {
    if (threshold < 0.0 || threshold > 1.0) throw ContractError("threshold outside [0,1]");
    const real mx = *std::max_element(importance.begin(), importance.end());
    if (mx == 0.0) return all_ones_mask(importance.size());  // fail-open
    std::vector<std::uint8_t> bits(importance.size(), 0);
    const real cut = threshold * mx;
    for (std::size_t i = 0; i < importance.size(); ++i)
        bits[i] = importance[i] >= cut ? 1 : 0;
    return bits;
}

bool mask_due(const RunConfig& config, std::size_t epoch) {
    if (config.mask_mode == MaskMode::kNone) return false;
    if (epoch <= config.warm_epochs || epoch > config.total_epochs()) return false;
    if (config.mask_mode == MaskMode::kStatic) return epoch == config.warm_epochs + 1;
    if ((epoch - config.warm_epochs) % config.mask_update_freq == 0) return true;
    return config.mask_at_phase_start && epoch == config.warm_epochs + 1;
}

MaskState recompute_mask(VariationalEncoder& encoder, TaskDecoder& decoder,
                         FrozenClassifier& target, const DatasetHandle& data,
                         const RunConfig& config, std::size_t epoch) {
    if (!mask_due(config, epoch))
        throw ScheduleError("mask recomputation requested at epoch " + std::to_string(epoch) +
                            ", which the schedule does not permit");
    ++score_counters().recomputes;
    const std::size_t d = encoder.latent_dim();
    MaskState state;
    state.computed_at_epoch = epoch;
    state.gamma = config.gamma;
    state.threshold = config.threshold;
    // gamma endpoints skip the unused score pass entirely (the ablation
    // contract requires KL-only runs to never touch saliency).
    state.kl_score = config.gamma == 0.0
                         ? std::vector<real>(d, 0.0)
                         : global_kl(encoder, data, config.batch_size, config.score_subsample);
    state.sal_score = config.gamma == 1.0
                         ? std::vector<real>(d, 0.0)
                         : global_saliency(encoder, decoder, target, data, config.batch_size,
                                           config.score_subsample);
    state.importance = fuse_scores(state.kl_score, state.sal_score, config.gamma);
    state.bits = threshold_mask(state.importance, config.threshold);
    return state;
}

}  // namespace veil
