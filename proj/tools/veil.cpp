// veil — train, evaluate and apply task-selective image transforms.
//
// Exit codes: 0 success, 1 runtime failure (one "error: <class>: <message>"
// line on stderr), 2 usage error.
#include <CLI11.hpp>

#include "veil/config.hpp"
#include "veil/data.hpp"
#include "veil/errors.hpp"
#include "veil/eval.hpp"
#include "veil/fetch.hpp"
#include "veil/image.hpp"
#include "veil/masking.hpp"
#include "veil/models.hpp"
#include "veil/trainer.hpp"
#include "veil/version.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string single_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ';');
    return s;
}

/// Resolves a run/work directory against VEIL_RUN_ROOT (relative paths only).
fs::path resolve_run_path(const fs::path& p) {
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("VEIL_RUN_ROOT"); root && *root) return fs::path(root) / p;
    return p;
}

/// Exclusive advisory lock: exactly one veil process may own a run or work
/// directory. Created O_CREAT|O_EXCL so a second process fails fast; removed
/// on destruction. A crash leaves the file behind — the error message tells
/// the operator how to clear it.
class RunLock {
public:
    explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
        fs::create_directories(dir);
        const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd < 0) {
            if (errno == EEXIST)
                throw veil::IoError("run directory '" + dir.string() +
                                    "' is locked by another process; if no veil process is "
                                    "running, remove the stale file " +
                                    path_.string());
            throw veil::IoError("cannot create lock file " + path_.string());
        }
        const std::string pid = std::to_string(::getpid()) + "\n";
        ssize_t written = ::write(fd, pid.data(), pid.size());
        (void)written;
        ::close(fd);
        owned_ = true;
    }
    ~RunLock() {
        if (owned_) {
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    fs::path path_;
    bool owned_ = false;
};

// ---------------------------------------------------------------------------
// fetch-data

int cmd_fetch(const std::string& dataset, const fs::path& data_root, const std::string& base_url) {
    if (base_url.empty())
        veil::fetch_dataset(dataset, data_root);
    else
        veil::fetch_dataset(dataset, data_root, base_url);
    std::cout << "dataset '" << dataset << "' ready under " << data_root.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const std::string& config_path, const std::string& run_dir_arg,
              const std::string& resume_arg, const fs::path& zoo_dir, const fs::path& data_root,
              bool force) {
    fs::path run_dir;
    veil::RunConfig cfg;
    if (!resume_arg.empty()) {
        run_dir = resolve_run_path(resume_arg);
        cfg = veil::load_manifest(run_dir / "manifest.json").config;
    } else {
        run_dir = resolve_run_path(run_dir_arg);
        cfg = veil::load_config(config_path);
        if (force) fs::remove_all(run_dir);
    }

    RunLock lock(run_dir);

    veil::ModelZoo zoo(zoo_dir);
    auto target = zoo.load(cfg.target_model_id);
    auto train = veil::load_dataset(cfg.dataset_id, "train", cfg.input_resolution, data_root);
    auto test = veil::load_dataset(cfg.dataset_id, "test", cfg.input_resolution, data_root);

    veil::Trainer trainer(cfg, *target, std::move(train), std::move(test));
    trainer.set_log(&std::cout);
    const veil::TrainingSummary s = trainer.run(run_dir);

    if (s.already_complete) {
        std::cout << "run " << run_dir.string() << " is already complete; nothing to do\n";
        return 0;
    }
    const auto& mask = s.final_mask;
    std::cout << "done: " << s.epochs_run << " epoch(s) this session"
              << (s.resumed ? " (resumed)" : "") << "\n"
              << "final test accuracy " << s.final_test_accuracy << "%  (best "
              << s.best_test_accuracy << "% at epoch " << s.best_epoch << ")\n"
              << "final mask keeps " << mask.kept() << "/" << mask.bits.size() << " dimensions\n"
              << "artifact: " << run_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// transform

int cmd_transform(const std::string& run_dir_arg, const fs::path& input_dir,
                  const fs::path& output_dir) {
    const fs::path run_dir = resolve_run_path(run_dir_arg);
    veil::LoadedTransform lt = veil::load_transform(run_dir);
    const veil::ChannelStats stats = veil::dataset_stats(lt.config.dataset_id);
    const std::size_t res = lt.config.input_resolution;

    if (!fs::is_directory(input_dir))
        throw veil::IoError("input directory '" + input_dir.string() + "' does not exist");
    fs::create_directories(output_dir);

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(input_dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::size_t written = 0;
    std::vector<std::string> skipped;
    for (const fs::path& p : files) {
        std::string ext = p.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        if (ext != ".png") {
            skipped.push_back(p.filename().string() + ": not a PNG file");
            continue;
        }
        try {
            veil::Tensor img = veil::read_png(p);
            if (img.dim(1) != res || img.dim(2) != res)
                img = veil::resize_bilinear(img, res, res);
            veil::Tensor X = veil::normalize_pixels(img, stats).reshaped({1, 3, res, res});
            auto [mu, log_var] = lt.encoder->encode(X);
            const veil::Tensor z = veil::apply_mask(mu, lt.mask.bits);
            veil::Tensor out = lt.decoder->decode(z);
            for (std::size_t i = 0; i < out.numel(); ++i)
                out[i] = std::clamp((out[i] + 1.0) * 0.5, 0.0, 1.0);
            veil::write_png(output_dir / p.filename(), out.reshaped({3, res, res}));
            ++written;
        } catch (const veil::Error& e) {
            skipped.push_back(p.filename().string() + ": " + single_line(e.what()));
        }
    }

    if (!skipped.empty()) {
        std::ofstream log(output_dir / "skipped.txt", std::ios::trunc);
        for (const auto& line : skipped) log << line << "\n";
    }
    std::cout << "transformed " << written << " image(s) into " << output_dir.string();
    if (!skipped.empty()) std::cout << " (" << skipped.size() << " skipped; see skipped.txt)";
    std::cout << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::vector<std::string>& artifact_args, std::vector<std::string> evaluator_ids,
             const fs::path& zoo_dir, const fs::path& data_root, const std::string& out_dir_arg,
             std::size_t batch_size, std::size_t stochastic_samples, std::uint64_t eval_seed) {
    struct Row {
        fs::path dir;
        std::optional<veil::LoadedTransform> transform;
        std::string label;  ///< target id, or a stand-in when nothing loads
    };
    std::vector<Row> rows;
    for (const auto& arg : artifact_args) {
        Row row;
        row.dir = resolve_run_path(arg);
        try {
            row.transform = veil::load_transform(row.dir);
            row.label = row.transform->target_model_id;
        } catch (const veil::Error& e) {
            std::cerr << "warning: skipping artifact '" << row.dir.string()
                      << "': " << e.error_class() << ": " << single_line(e.what()) << "\n";
            try {
                row.label = veil::load_manifest(row.dir / "manifest.json").config.target_model_id;
            } catch (const std::exception&) {
                row.label = row.dir.filename().string();
            }
        }
        rows.push_back(std::move(row));
    }

    const Row* first_loaded = nullptr;
    for (const auto& r : rows)
        if (r.transform) {
            first_loaded = &r;
            break;
        }
    if (!first_loaded)
        throw veil::ModelError("none of the given artifacts could be loaded; nothing to evaluate");

    const veil::RunConfig& ref = first_loaded->transform->config;
    for (const auto& r : rows) {
        if (!r.transform) continue;
        const veil::RunConfig& c = r.transform->config;
        if (c.dataset_id != ref.dataset_id || c.input_resolution != ref.input_resolution)
            throw veil::ConfigError("artifacts disagree on the evaluation dataset: '" +
                                    ref.dataset_id + "' at " + std::to_string(ref.input_resolution) +
                                    " vs '" + c.dataset_id + "' at " +
                                    std::to_string(c.input_resolution));
    }

    veil::ModelZoo zoo(zoo_dir);
    if (evaluator_ids.empty()) evaluator_ids = zoo.loadable_ids();
    // Every loaded artifact's target must appear as a column, or its diagonal
    // is undefined.
    for (const auto& r : rows) {
        if (!r.transform) continue;
        const std::string& t = r.transform->target_model_id;
        if (std::find(evaluator_ids.begin(), evaluator_ids.end(), t) == evaluator_ids.end())
            evaluator_ids.push_back(t);
    }
    if (evaluator_ids.empty())
        throw veil::ModelError("no evaluators: the zoo has no loadable models and no --evaluators "
                               "were given");

    const auto test =
        veil::load_dataset(ref.dataset_id, "test", ref.input_resolution, data_root);

    std::vector<std::unique_ptr<veil::FrozenClassifier>> classifiers;
    std::vector<veil::FrozenClassifier*> classifier_ptrs;
    std::vector<std::string> hashes_before;
    for (const auto& id : evaluator_ids) {
        auto clf = zoo.load(id);
        if (clf->num_classes() != test.num_classes)
            throw veil::ConfigError("evaluator '" + id + "' has " +
                                    std::to_string(clf->num_classes()) + " classes but dataset '" +
                                    ref.dataset_id + "' has " + std::to_string(test.num_classes));
        hashes_before.push_back(clf->params_hash());
        classifier_ptrs.push_back(clf.get());
        classifiers.push_back(std::move(clf));
    }

    std::vector<veil::TrainedTransform> transforms;
    for (auto& r : rows) {
        if (!r.transform) continue;
        transforms.push_back({r.transform->target_model_id, r.transform->encoder.get(),
                              r.transform->decoder.get(), r.transform->mask.bits});
    }

    veil::EvalOptions options;
    options.stochastic_samples = stochastic_samples;
    options.seed = eval_seed;
    const std::size_t bs = batch_size > 0 ? batch_size : ref.batch_size;
    veil::TransferMatrix matrix =
        veil::compute_transfer_matrix(transforms, classifier_ptrs, test, bs, options);
    for (const auto& r : rows)
        if (!r.transform) matrix.add_skipped_row(r.label);

    // Evaluation must not touch classifier weights; verify against the
    // pre-evaluation hashes.
    for (std::size_t i = 0; i < classifiers.size(); ++i)
        if (classifiers[i]->params_hash() != hashes_before[i])
            throw veil::ContractError("evaluation mutated the parameters of '" +
                                      evaluator_ids[i] + "'");

    const fs::path out_dir =
        out_dir_arg.empty() ? rows.front().dir : fs::path(out_dir_arg);
    veil::emit_report(out_dir, matrix);

    std::cout << "evaluated " << transforms.size() << " transform(s) x " << classifiers.size()
              << " classifier(s) on " << ref.dataset_id << " (" << test.size() << " samples)\n";
    for (std::size_t r = 0; r < matrix.target_ids.size(); ++r) {
        std::cout << "  for " << matrix.target_ids[r] << ": ";
        if (matrix.row_skipped(r)) {
            std::cout << "n/a (artifact not loadable)\n";
            continue;
        }
        std::cout << "target " << matrix.diagonal(r) << "%, max other "
                  << matrix.max_off_diagonal(r) << "%, suppression "
                  << matrix.suppression_ratio(r) << "x\n";
    }
    std::cout << "report written to " << out_dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const std::string& config_path, const std::string& work_dir_arg,
               std::vector<std::string> other_ids, const fs::path& zoo_dir,
               const fs::path& data_root, const std::string& out_dir_arg, bool force) {
    const fs::path work_dir = resolve_run_path(work_dir_arg);
    const veil::RunConfig cfg = veil::load_config(config_path);

    if (force) fs::remove_all(work_dir);
    RunLock lock(work_dir);

    veil::ModelZoo zoo(zoo_dir);
    auto target = zoo.load(cfg.target_model_id);
    if (other_ids.empty()) {
        for (const auto& id : zoo.loadable_ids())
            if (id != cfg.target_model_id) other_ids.push_back(id);
    }
    std::vector<std::unique_ptr<veil::FrozenClassifier>> others;
    std::vector<veil::FrozenClassifier*> other_ptrs;
    for (const auto& id : other_ids) {
        auto clf = zoo.load(id);
        other_ptrs.push_back(clf.get());
        others.push_back(std::move(clf));
    }

    auto train = veil::load_dataset(cfg.dataset_id, "train", cfg.input_resolution, data_root);
    auto test = veil::load_dataset(cfg.dataset_id, "test", cfg.input_resolution, data_root);

    const veil::AblationReport report =
        veil::run_ablation(cfg, *target, other_ptrs, train, test, work_dir);

    const fs::path out_dir = out_dir_arg.empty() ? work_dir : fs::path(out_dir_arg);
    veil::emit_ablation(out_dir, report);

    bool all_ok = true;
    for (const auto& st : report.stages) {
        if (!st.completed) {
            all_ok = false;
            std::cerr << "warning: stage '" << st.name << "' failed: " << single_line(st.error)
                      << "\n";
            continue;
        }
        std::cout << "  " << st.name << ": target " << st.target_top1 << "%, mean unintended "
                  << veil::mean_unintended(st) << "%, mask keeps " << st.kept_dimensions << "/"
                  << st.latent_dim << "\n";
    }
    std::cout << "ablation report written to " << out_dir.string() << "\n";
    return all_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const fs::path& input, const std::string& out_dir_arg, std::size_t num_classes) {
    fs::path csv = input;
    if (fs::is_directory(csv)) csv /= "transfer_matrix.csv";
    const veil::TransferMatrix matrix = veil::parse_transfer_csv(csv, num_classes);
    const fs::path out_dir = out_dir_arg.empty() ? csv.parent_path() : fs::path(out_dir_arg);
    veil::emit_report(out_dir, matrix);
    std::cout << "report regenerated in " << out_dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"veil — train and evaluate task-selective image transforms"};
    app.set_version_flag("--version", veil::kCodeVersion);
    app.require_subcommand(1);

    // fetch-data -------------------------------------------------------------
    auto* fetch = app.add_subcommand("fetch-data", "download and unpack a dataset");
    std::string fetch_dataset_id;
    std::string fetch_data_root = "data";
    std::string fetch_base_url;
    fetch->add_option("--dataset", fetch_dataset_id, "dataset id (toy-shapes, cifar10, cifar100)")
        ->required();
    fetch->add_option("--data-root", fetch_data_root, "dataset root directory")
        ->envname("VEIL_DATA_ROOT");
    fetch->add_option("--base-url", fetch_base_url, "override the download mirror");

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train a transform from a config file");
    std::string train_config, train_run_dir, train_resume;
    std::string train_zoo = "models";
    std::string train_data_root = "data";
    bool train_force = false;
    auto* opt_config = train->add_option("--config", train_config, "run config file");
    auto* opt_run_dir = train->add_option("--run-dir", train_run_dir, "output run directory");
    auto* opt_resume =
        train->add_option("--resume", train_resume, "resume an interrupted run directory");
    train->add_option("--zoo", train_zoo, "model zoo directory");
    train->add_option("--data-root", train_data_root, "dataset root directory")
        ->envname("VEIL_DATA_ROOT");
    train->add_flag("--force", train_force, "wipe the run directory before starting");
    opt_resume->excludes(opt_config)->excludes(opt_run_dir);
    opt_config->needs(opt_run_dir);
    opt_run_dir->needs(opt_config);

    // transform --------------------------------------------------------------
    auto* transform = app.add_subcommand("transform", "apply a trained transform to PNG images");
    std::string tf_run_dir, tf_input, tf_output;
    transform->add_option("--run-dir", tf_run_dir, "trained run directory")->required();
    transform->add_option("--input-dir", tf_input, "directory of input PNGs")->required();
    transform->add_option("--output-dir", tf_output, "directory for transformed PNGs")->required();

    // eval -------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "cross-model transfer evaluation");
    std::vector<std::string> ev_artifacts, ev_evaluators;
    std::string ev_zoo = "models";
    std::string ev_data_root = "data";
    std::string ev_out;
    std::size_t ev_batch = 0, ev_sto = 0;
    std::uint64_t ev_seed = 0;
    bool ev_matrix = false;
    eval->add_option("--artifact", ev_artifacts, "trained run directory (repeatable)")
        ->required();
    eval->add_flag("--matrix", ev_matrix, "produce the full transfer matrix (default behavior)");
    eval->add_option("--evaluators", ev_evaluators,
                     "comma-separated classifier ids (default: all loadable zoo models)")
        ->delimiter(',');
    eval->add_option("--zoo", ev_zoo, "model zoo directory");
    eval->add_option("--data-root", ev_data_root, "dataset root directory")
        ->envname("VEIL_DATA_ROOT");
    eval->add_option("--output-dir", ev_out, "report directory (default: first artifact)");
    eval->add_option("--batch-size", ev_batch, "evaluation batch size (default: from config)");
    eval->add_option("--stochastic-samples", ev_sto,
                     "average softmax over k reparameterized draws (0 = deterministic)");
    eval->add_option("--eval-seed", ev_seed, "noise seed for --stochastic-samples");

    // ablate -----------------------------------------------------------------
    auto* ablate = app.add_subcommand("ablate", "train and score the three masking stages");
    std::string ab_config, ab_work, ab_out;
    std::vector<std::string> ab_others;
    std::string ab_zoo = "models";
    std::string ab_data_root = "data";
    bool ab_force = false;
    ablate->add_option("--config", ab_config, "integrated-stage config file")->required();
    ablate->add_option("--work-dir", ab_work, "directory for the three stage runs")->required();
    ablate->add_option("--others", ab_others,
                       "comma-separated non-target classifier ids (default: rest of the zoo)")
        ->delimiter(',');
    ablate->add_option("--zoo", ab_zoo, "model zoo directory");
    ablate->add_option("--data-root", ab_data_root, "dataset root directory")
        ->envname("VEIL_DATA_ROOT");
    ablate->add_option("--output-dir", ab_out, "report directory (default: work dir)");
    ablate->add_flag("--force", ab_force, "wipe the work directory before starting");

    // report -----------------------------------------------------------------
    auto* report = app.add_subcommand("report", "regenerate markdown and heatmap from a CSV");
    std::string rp_input, rp_out;
    std::size_t rp_classes = 0;
    report->add_option("--input", rp_input, "transfer_matrix.csv or a directory containing it")
        ->required();
    report->add_option("--classes", rp_classes, "number of classes (rebuilds the chance level)")
        ->required();
    report->add_option("--output-dir", rp_out, "report directory (default: alongside the CSV)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*fetch) return cmd_fetch(fetch_dataset_id, fetch_data_root, fetch_base_url);
        if (*train) {
            if (train_resume.empty() && (train_config.empty() || train_run_dir.empty())) {
                std::cerr << "error: usage: train needs either --config with --run-dir, or "
                             "--resume\n";
                return 2;
            }
            return cmd_train(train_config, train_run_dir, train_resume, train_zoo,
                             train_data_root, train_force);
        }
        if (*transform) return cmd_transform(tf_run_dir, tf_input, tf_output);
        if (*eval)
            return cmd_eval(ev_artifacts, ev_evaluators, ev_zoo, ev_data_root, ev_out, ev_batch,
                            ev_sto, ev_seed);
        if (*ablate)
            return cmd_ablate(ab_config, ab_work, ab_others, ab_zoo, ab_data_root, ab_out,
                              ab_force);
        if (*report) return cmd_report(rp_input, rp_out, rp_classes);
        std::cerr << "error: usage: no subcommand given\n";
        return 2;
    } catch (const veil::Error& e) {
        std::cerr << "error: " << e.error_class() << ": " << single_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << single_line(e.what()) << "\n";
        return 1;
    }
}
