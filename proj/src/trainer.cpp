#include "veil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <utility>

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"
#include "veil/eval.hpp"
#include "veil/nn/checkpoint.hpp"
#include "veil/version.hpp"

namespace veil {

namespace fs = std::filesystem;

std::vector<LossTerm> loss_registry(const RunConfig& config) {
    return {{"task_cross_entropy", 1.0}, {"kl_divergence", config.lambda_kl}};
}

namespace {

constexpr std::size_t kKeepCheckpoints = 3;

std::string epoch_dir_name(std::size_t e) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%03zu", e);
    return buf;
}

std::string mask_file_name(std::size_t e) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "epoch_%03zu.json", e);
    return buf;
}

std::string fmt(real v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void append_csv(const fs::path& path, const char* header, const std::string& row) {
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot write " + path.string());
    if (fresh) out << header << "\n";
    out << row << "\n";
}

/// Keeps the header plus rows whose leading epoch number is <= keep_upto
/// (resume discards rows the rerun will regenerate).
void truncate_csv(const fs::path& path, std::size_t keep_upto) {
    if (!fs::exists(path)) return;
    std::vector<std::string> kept;
    {
        std::ifstream in(path);
        std::string line;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {
                kept.push_back(line);
                first = false;
                continue;
            }
            const std::size_t e = std::strtoull(line.c_str(), nullptr, 10);
            if (e >= 1 && e <= keep_upto) kept.push_back(line);
        }
    }
    std::ofstream out(path, std::ios::trunc);
    for (const std::string& l : kept) out << l << "\n";
}

const RunConfig& validated(const RunConfig& c) {
    validate_config(c);
    return c;
}

std::vector<nn::Param*> gather_params(VariationalEncoder& e, TaskDecoder& d) {
    std::vector<nn::Param*> ps = e.params();
    const std::vector<nn::Param*> dp = d.params();
    ps.insert(ps.end(), dp.begin(), dp.end());
    return ps;
}

nn::Adam::Options adam_options(const RunConfig& c) {
    nn::Adam::Options o;
    o.lr = c.learning_rate;
    o.weight_decay = c.weight_decay;
    return o;
}

std::vector<nn::NamedTensorRef> combined_state(VariationalEncoder& e, TaskDecoder& d) {
    std::vector<nn::NamedTensorRef> all;
    for (const nn::NamedTensorRef& r : e.state()) all.push_back({"encoder." + r.name, r.tensor});
    for (const nn::NamedTensorRef& r : d.state()) all.push_back({"decoder." + r.name, r.tensor});
    return all;
}

MaskState initial_mask(const RunConfig& c) {
    MaskState m;
    m.kl_score.assign(c.latent_dim, 0.0);
    m.sal_score.assign(c.latent_dim, 0.0);
    m.importance.assign(c.latent_dim, 0.0);
    m.bits = all_ones_mask(c.latent_dim);
    m.computed_at_epoch = 0;
    m.gamma = c.gamma;
    m.threshold = c.threshold;
    return m;
}

}  // namespace

Trainer::Trainer(RunConfig config, FrozenClassifier& target, DatasetHandle train,
                 DatasetHandle test)
    : cfg_(validated(config)),
      target_(target),
      train_(std::move(train)),
      test_(std::move(test)),
      encoder_(cfg_.encoder_backbone, cfg_.input_resolution, cfg_.latent_dim),
      decoder_(cfg_.latent_dim, cfg_.decoder_base_size, cfg_.decoder_blocks,
               cfg_.decoder_channels, cfg_.input_resolution),
      params_(gather_params(encoder_, decoder_)),
      adam_(params_, adam_options(cfg_)),
      mask_(initial_mask(cfg_)) {
    if (train_.resolution != cfg_.input_resolution || test_.resolution != cfg_.input_resolution)
        throw ContractError("dataset resolution " + std::to_string(train_.resolution) +
                            " does not match config input_resolution " +
                            std::to_string(cfg_.input_resolution));
    if (target_.input_resolution() != cfg_.input_resolution)
        throw ContractError("target model expects resolution " +
                            std::to_string(target_.input_resolution()) +
                            " but the config trains at " +
                            std::to_string(cfg_.input_resolution));
    if (train_.num_classes != target_.num_classes())
        throw ContractError("dataset has " + std::to_string(train_.num_classes) +
                            " classes but the target model has " +
                            std::to_string(target_.num_classes()));
    if (cfg_.target_model_id != target_.model_id())
        throw ContractError("config names target '" + cfg_.target_model_id +
                            "' but the supplied model is '" + target_.model_id() + "'");
    if (cfg_.dataset_id != train_.id)
        throw ContractError("config names dataset '" + cfg_.dataset_id +
                            "' but the supplied data is '" + train_.id + "'");

    RngStream weights(derive_seed(cfg_.seed, "weights", 0));
    encoder_.init_weights(weights);
    decoder_.init_weights(weights);
}

StepStats Trainer::step(const Tensor& X, const std::vector<int>& Y, RngStream& noise) {
    encoder_.set_training(true);
    decoder_.set_training(true);
    nn::zero_grads(params_);

    auto [mu, logvar] = encoder_.encode(X);
    const Reparam rp = reparameterize(mu, logvar, noise, /*deterministic=*/false);
    const Tensor zm = apply_mask(rp.z, mask_.bits);
    const Tensor decoded = decoder_.decode(zm);
    const Tensor model_in = renormalize_for_target(decoded, target_.expected_input_stats());
    auto [task, dmodel_in] = target_.task_loss_and_input_grad(model_in, Y);

    Tensor dmu(mu.shape());
    Tensor dlogvar(logvar.shape());
    const real kl = kl_loss(mu, logvar, &dmu, &dlogvar);

    StepStats stats;
    stats.task_loss = task;
    stats.kl_loss = kl;
    stats.total_loss = task + cfg_.lambda_kl * kl;
    if (!std::isfinite(stats.total_loss))
        throw NumericError("non-finite training loss (task=" + fmt(task) +
                           ", kl=" + fmt(kl) + ")");

    // kl_loss wrote gradients for weight 1; scale to lambda before the task
    // path adds its share through the reparameterization.
    if (cfg_.lambda_kl != 1.0) {
        for (std::size_t i = 0; i < dmu.numel(); ++i) dmu[i] *= cfg_.lambda_kl;
        for (std::size_t i = 0; i < dlogvar.numel(); ++i) dlogvar[i] *= cfg_.lambda_kl;
    }

    Tensor ddecoded = renormalize_backward(dmodel_in, target_.expected_input_stats());
    Tensor dz = decoder_.backward(ddecoded);
    for (std::size_t b = 0; b < dz.dim(0); ++b)
        for (std::size_t i = 0; i < mask_.bits.size(); ++i)
            if (!mask_.bits[i]) dz.at(b, i) = 0.0;
    reparameterize_backward(dz, logvar, rp.eps, dmu, dlogvar);
    encoder_.backward(dmu, dlogvar);

    if (cfg_.grad_clip > 0.0) {
        real sq = 0.0;
        for (nn::Param* p : params_)
            for (std::size_t i = 0; i < p->grad.numel(); ++i) sq += p->grad[i] * p->grad[i];
        const real norm = std::sqrt(sq);
        if (norm > cfg_.grad_clip) {
            const real scale = cfg_.grad_clip / norm;
            for (nn::Param* p : params_)
                for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= scale;
        }
    }

    adam_.step();
    return stats;
}

std::vector<nn::NamedTensorRef> Trainer::model_state() {
    return combined_state(encoder_, decoder_);
}

void Trainer::write_checkpoint(const fs::path& dir, std::size_t epoch) {
    const fs::path tmp = dir.parent_path() / ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    nn::save_state(tmp / "model.bin", model_state());
    save_tensors(tmp / "adam.bin", adam_.state());
    const nlohmann::json j{{"schema_version", 1},
                           {"epoch", epoch},
                           {"best_accuracy", best_accuracy_},
                           {"best_epoch", best_epoch_},
                           {"recompute_epochs", recompute_epochs_},
                           {"mask", mask_.to_json()}};
    {
        std::ofstream out(tmp / "state.json");
        if (!out) throw IoError("cannot write " + (tmp / "state.json").string());
        out << j.dump(2) << "\n";
    }
    // Assembled off to the side and renamed into place, so a crash can never
    // leave a half-written directory that looks like a checkpoint.
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

std::size_t Trainer::restore_latest_checkpoint(const fs::path& run_dir) {
    const fs::path root = run_dir / "checkpoints";
    std::vector<std::pair<std::size_t, fs::path>> candidates;
    if (fs::exists(root)) {
        for (const auto& entry : fs::directory_iterator(root)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("epoch_", 0) == 0)
                candidates.emplace_back(std::strtoull(name.c_str() + 6, nullptr, 10),
                                        entry.path());
        }
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    // Snapshot the pristine state so that a corrupt candidate (which may be
    // detected only after some tensors were overwritten) cannot leak into a
    // fresh start.
    std::vector<NamedTensor> pristine;
    for (const nn::NamedTensorRef& r : model_state()) pristine.push_back({r.name, *r.tensor});
    const std::vector<NamedTensor> pristine_adam = adam_.state();

    for (const auto& [epoch, dir] : candidates) {
        try {
            nn::load_state(dir / "model.bin", model_state());
            adam_.load_state(load_tensors(dir / "adam.bin"));
            std::ifstream in(dir / "state.json");
            if (!in) throw IoError("missing " + (dir / "state.json").string());
            nlohmann::json j;
            in >> j;
            best_accuracy_ = j.at("best_accuracy").get<real>();
            best_epoch_ = j.at("best_epoch").get<std::size_t>();
            recompute_epochs_ = j.at("recompute_epochs").get<std::vector<std::size_t>>();
            mask_ = MaskState::from_json(j.at("mask"));
            return j.at("epoch").get<std::size_t>();
        } catch (const std::exception&) {
            continue;  // fall through to the next-newest checkpoint
        }
    }

    std::vector<nn::NamedTensorRef> live = model_state();
    for (std::size_t i = 0; i < live.size(); ++i) *live[i].tensor = pristine[i].tensor;
    adam_.load_state(pristine_adam);
    return 0;
}

TrainingSummary Trainer::run(const fs::path& run_dir) {
    fs::create_directories(run_dir / "masks");
    fs::create_directories(run_dir / "checkpoints");

    const std::string my_hash = config_hash(cfg_);
    const fs::path manifest_path = run_dir / "manifest.json";
    TrainingSummary summary;
    Manifest manifest;
    std::size_t start_epoch = 1;

    if (fs::exists(manifest_path)) {
        manifest = load_manifest(manifest_path);
        if (manifest.config_hash != my_hash)
            throw ConfigError("run directory " + run_dir.string() +
                              " was created from a different configuration (its config hash is " +
                              manifest.config_hash + ", this run's is " + my_hash +
                              "); use a fresh directory or pass --force to overwrite");
        if (manifest.completed) {
            summary.already_complete = true;
            summary.final_test_accuracy = manifest.final_target_accuracy;
            const fs::path final_mask = run_dir / "masks" / "final.json";
            if (fs::exists(final_mask)) summary.final_mask = load_mask(final_mask);
            return summary;
        }
        const std::size_t restored = restore_latest_checkpoint(run_dir);
        start_epoch = restored + 1;
        summary.resumed = restored > 0;
        truncate_csv(run_dir / "losses.csv", restored);
        truncate_csv(run_dir / "accuracy.csv", restored);
    } else {
        manifest = make_manifest(cfg_, kCodeVersion);
        save_manifest(manifest_path, manifest);
        std::ofstream cfg_out(run_dir / "config.cfg");
        if (!cfg_out) throw IoError("cannot write " + (run_dir / "config.cfg").string());
        cfg_out << render_config(cfg_);
    }

    const std::size_t total = cfg_.total_epochs();
    for (std::size_t e = start_epoch; e <= total; ++e) {
        EpochStats es;
        es.epoch = e;
        try {
            if (mask_due(cfg_, e)) {
                mask_ = recompute_mask(encoder_, decoder_, target_, train_, cfg_, e);
                recompute_epochs_.push_back(e);
                save_mask(run_dir / "masks" / mask_file_name(e), mask_);
                es.mask_recomputed = true;
            }

            RngStream noise(derive_seed(cfg_.seed, "noise", e));
            BatchStream batches(train_, cfg_.batch_size, cfg_.seed, e);
            Tensor X;
            std::vector<int> Y;
            std::size_t nb = 0;
            while (batches.next(X, Y)) {
                const StepStats s = step(X, Y, noise);
                es.mean_task += s.task_loss;
                es.mean_kl += s.kl_loss;
                es.mean_total += s.total_loss;
                ++nb;
            }
            es.mean_task /= static_cast<real>(nb);
            es.mean_kl /= static_cast<real>(nb);
            es.mean_total /= static_cast<real>(nb);

            es.test_accuracy = evaluate_transform_accuracy(encoder_, decoder_, mask_.bits,
                                                           target_, test_, cfg_.batch_size);
        } catch (const NumericError& err) {
            std::ofstream diag(run_dir / "diagnostics.txt");
            diag << "training aborted at epoch " << e << " of " << total << "\n"
                 << "error: " << err.what() << "\n"
                 << "last mask recomputation epoch: "
                 << (recompute_epochs_.empty() ? 0 : recompute_epochs_.back()) << "\n"
                 << "kept dimensions: " << mask_.kept() << " of " << mask_.bits.size() << "\n";
            throw;
        }

        if (log_ != nullptr) {
            char line[192];
            std::snprintf(line, sizeof line,
                          "epoch %zu/%zu: task %.4f kl %.4f total %.4f test %.2f%%", e, total,
                          es.mean_task, es.mean_kl, es.mean_total, es.test_accuracy);
            *log_ << line;
            if (es.mask_recomputed)
                *log_ << " (mask recomputed: " << mask_.kept() << "/" << mask_.bits.size()
                      << " dimensions kept)";
            *log_ << "\n" << std::flush;
        }

        append_csv(run_dir / "losses.csv", "epoch,mean_task,mean_kl,mean_total",
                   std::to_string(e) + "," + fmt(es.mean_task) + "," + fmt(es.mean_kl) + "," +
                       fmt(es.mean_total));
        append_csv(run_dir / "accuracy.csv", "epoch,test_accuracy",
                   std::to_string(e) + "," + fmt(es.test_accuracy));

        if (es.test_accuracy > best_accuracy_) {
            best_accuracy_ = es.test_accuracy;
            best_epoch_ = e;
            write_checkpoint(run_dir / "checkpoints" / "best", e);
        }
        write_checkpoint(run_dir / "checkpoints" / epoch_dir_name(e), e);
        if (e > kKeepCheckpoints) {
            const fs::path stale = run_dir / "checkpoints" / epoch_dir_name(e - kKeepCheckpoints);
            fs::remove_all(stale);
        }

        manifest.final_target_accuracy = es.test_accuracy;
        manifest.final_mask_hash = mask_.bits_hash();
        save_manifest(manifest_path, manifest);

        summary.history.push_back(es);
        ++summary.epochs_run;
    }

    save_mask(run_dir / "masks" / "final.json", mask_);
    manifest.completed = true;
    if (!summary.history.empty())
        manifest.final_target_accuracy = summary.history.back().test_accuracy;
    manifest.final_mask_hash = mask_.bits_hash();
    save_manifest(manifest_path, manifest);

    summary.final_test_accuracy = manifest.final_target_accuracy;
    summary.best_test_accuracy = best_accuracy_;
    summary.best_epoch = best_epoch_;
    summary.final_mask = mask_;
    return summary;
}

LoadedTransform load_transform(const fs::path& run_dir) {
    const fs::path manifest_path = run_dir / "manifest.json";
    if (!fs::exists(manifest_path))
        throw IoError(run_dir.string() + " is not a run directory (no manifest.json)");
    const Manifest manifest = load_manifest(manifest_path);

    LoadedTransform t;
    t.config = manifest.config;
    t.target_model_id = manifest.config.target_model_id;
    t.encoder = std::make_unique<VariationalEncoder>(
        t.config.encoder_backbone, t.config.input_resolution, t.config.latent_dim);
    t.decoder = std::make_unique<TaskDecoder>(t.config.latent_dim, t.config.decoder_base_size,
                                              t.config.decoder_blocks, t.config.decoder_channels,
                                              t.config.input_resolution);

    // The artifact is the run's final weights (newest checkpoint), so
    // re-evaluating it reproduces the manifest-recorded accuracy; the
    // best-by-accuracy checkpoint is only a fallback.
    std::vector<fs::path> candidates;
    const fs::path root = run_dir / "checkpoints";
    std::vector<std::pair<std::size_t, fs::path>> epochs;
    if (fs::exists(root)) {
        for (const auto& entry : fs::directory_iterator(root)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("epoch_", 0) == 0)
                epochs.emplace_back(std::strtoull(name.c_str() + 6, nullptr, 10), entry.path());
        }
    }
    std::sort(epochs.begin(), epochs.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [epoch, dir] : epochs) candidates.push_back(dir);
    if (fs::exists(root / "best")) candidates.push_back(root / "best");

    for (const fs::path& dir : candidates) {
        try {
            nn::load_state(dir / "model.bin", combined_state(*t.encoder, *t.decoder));
            std::ifstream in(dir / "state.json");
            if (!in) throw IoError("missing " + (dir / "state.json").string());
            nlohmann::json j;
            in >> j;
            t.mask = MaskState::from_json(j.at("mask"));
            t.encoder->set_training(false);
            t.decoder->set_training(false);
            return t;
        } catch (const std::exception&) {
            continue;
        }
    }
    throw IoError("run directory " + run_dir.string() + " contains no loadable checkpoint");
}

}  // namespace veil
