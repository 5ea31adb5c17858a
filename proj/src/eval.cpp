#include "veil/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "veil/errors.hpp"
#include "veil/image.hpp"
#include "veil/nn/loss.hpp"

namespace veil {

namespace fs = std::filesystem;

namespace {

/// Counts top-1/top-5 hits with a deterministic tie rule: a class ranks ahead
/// of the label when its score is strictly larger, or equal at a smaller
/// index (matching first-maximum argmax).
void count_hits(const Tensor& scores, const std::vector<int>& labels, std::size_t& top1,
                std::size_t& top5) {
    const std::size_t batch = scores.dim(0);
    const std::size_t classes = scores.dim(1);
    // Top-5 over fewer than five classes would always hit; fall back to
    // top-1 so the number stays meaningful.
    const bool degenerate = classes < 5;
    for (std::size_t b = 0; b < batch; ++b) {
        const auto label = static_cast<std::size_t>(labels[b]);
        const real own = scores.at(b, label);
        std::size_t ahead = 0;
        for (std::size_t c = 0; c < classes; ++c) {
            if (c == label) continue;
            const real v = scores.at(b, c);
            if (v > own || (v == own && c < label)) ++ahead;
        }
        if (ahead == 0) ++top1;
        if (degenerate ? ahead == 0 : ahead < 5) ++top5;
    }
}

/// [B,3,H,W] pixels in [0,1] -> the classifier's input: resized to its
/// resolution and standardized with its expected statistics.
Tensor pixels_for_classifier(const Tensor& pixels01, FrozenClassifier& clf) {
    const std::size_t batch = pixels01.dim(0);
    const std::size_t h = pixels01.dim(2), w = pixels01.dim(3);
    const std::size_t r = clf.input_resolution();
    if (h == r && w == r) return normalize_pixels(pixels01, clf.expected_input_stats());
    Tensor out({batch, 3, r, r});
    Tensor one({3, h, w});
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < one.numel(); ++i) one[i] = pixels01[b * one.numel() + i];
        const Tensor resized = resize_bilinear(one, r, r);
        for (std::size_t i = 0; i < resized.numel(); ++i)
            out[b * resized.numel() + i] = resized[i];
    }
    return normalize_pixels(out, clf.expected_input_stats());
}

Tensor decoded_to_pixels(Tensor decoded) {
    for (std::size_t i = 0; i < decoded.numel(); ++i)
        decoded[i] = std::clamp((decoded[i] + 1.0) * 0.5, 0.0, 1.0);
    return decoded;
}

std::string f2(real v) {
    if (std::isnan(v)) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

/// Fixed three-stop colormap from dark violet through teal to yellow,
/// t in [0,1]. NaN renders mid-gray.
void colormap(real t, real rgb[3]) {
    if (std::isnan(t)) {
        rgb[0] = rgb[1] = rgb[2] = 0.5;
        return;
    }
    static constexpr real kStops[3][3] = {{0.267, 0.005, 0.329},
                                          {0.128, 0.567, 0.551},
                                          {0.993, 0.906, 0.144}};
    t = std::clamp(t, 0.0, 1.0);
    const std::size_t lo = t < 0.5 ? 0 : 1;
    const real f = (t - 0.5 * static_cast<real>(lo)) * 2.0;
    for (int c = 0; c < 3; ++c) rgb[c] = kStops[lo][c] + f * (kStops[lo + 1][c] - kStops[lo][c]);
}

constexpr real kNaN = std::numeric_limits<real>::quiet_NaN();

}  // namespace

Accuracy evaluate_identity(FrozenClassifier& clf, const DatasetHandle& data,
                           std::size_t batch_size) {
    if (data.size() == 0) throw ContractError("evaluation over an empty dataset");
    std::size_t top1 = 0, top5 = 0, seen = 0;
    const std::size_t r = clf.input_resolution();
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, data.size() - start);
        Tensor batch({n, 3, r, r});
        std::vector<int> labels(n);
        for (std::size_t b = 0; b < n; ++b) {
            Tensor raw = data.raw_image(start + b);
            if (raw.dim(1) != r || raw.dim(2) != r) raw = resize_bilinear(raw, r, r);
            for (std::size_t i = 0; i < raw.numel(); ++i) batch[b * raw.numel() + i] = raw[i];
            labels[b] = data.labels[start + b];
        }
        const Tensor logits = clf.predict(normalize_pixels(batch, clf.expected_input_stats()));
        count_hits(logits, labels, top1, top5);
        seen += n;
    }
    if (seen != data.size())
        throw ContractError("evaluation covered " + std::to_string(seen) + " of " +
                            std::to_string(data.size()) + " samples");
    Accuracy acc;
    acc.top1 = 100.0 * static_cast<real>(top1) / static_cast<real>(data.size());
    acc.top5 = 100.0 * static_cast<real>(top5) / static_cast<real>(data.size());
    return acc;
}

Accuracy evaluate_transform(VariationalEncoder& encoder, TaskDecoder& decoder,
                            const std::vector<std::uint8_t>& mask_bits, FrozenClassifier& clf,
                            const DatasetHandle& data, std::size_t batch_size,
                            const EvalOptions& options) {
    if (data.size() == 0) throw ContractError("evaluation over an empty dataset");
    encoder.set_training(false);
    decoder.set_training(false);
    RngStream noise(derive_seed(options.seed, "eval-noise", 0));
    std::size_t top1 = 0, top5 = 0, seen = 0;
    BatchStream batches(data, batch_size);
    Tensor X;
    std::vector<int> Y;
    while (batches.next(X, Y)) {
        auto [mu, logvar] = encoder.encode(X);
        Tensor scores;
        if (options.stochastic_samples == 0) {
            const Reparam rp = reparameterize(mu, logvar, noise, /*deterministic=*/true);
            const Tensor pixels = decoded_to_pixels(decoder.decode(apply_mask(rp.z, mask_bits)));
            scores = clf.predict(pixels_for_classifier(pixels, clf));
        } else {
            // Average class probabilities over k reparameterized draws.
            for (std::size_t s = 0; s < options.stochastic_samples; ++s) {
                const Reparam rp = reparameterize(mu, logvar, noise, /*deterministic=*/false);
                const Tensor pixels =
                    decoded_to_pixels(decoder.decode(apply_mask(rp.z, mask_bits)));
                const Tensor probs = nn::softmax(clf.predict(pixels_for_classifier(pixels, clf)));
                if (s == 0)
                    scores = probs;
                else
                    for (std::size_t i = 0; i < scores.numel(); ++i) scores[i] += probs[i];
            }
        }
        count_hits(scores, Y, top1, top5);
        seen += Y.size();
    }
    if (seen != data.size())
        throw ContractError("evaluation covered " + std::to_string(seen) + " of " +
                            std::to_string(data.size()) + " samples");
    Accuracy acc;
    acc.top1 = 100.0 * static_cast<real>(top1) / static_cast<real>(data.size());
    acc.top5 = 100.0 * static_cast<real>(top5) / static_cast<real>(data.size());
    return acc;
}

real evaluate_transform_accuracy(VariationalEncoder& encoder, TaskDecoder& decoder,
                                 const std::vector<std::uint8_t>& mask_bits,
                                 FrozenClassifier& clf, const DatasetHandle& data,
                                 std::size_t batch_size) {
    return evaluate_transform(encoder, decoder, mask_bits, clf, data, batch_size).top1;
}

std::size_t TransferMatrix::diagonal_column(std::size_t row) const {
    const auto it =
        std::find(classifier_ids.begin(), classifier_ids.end(), target_ids.at(row));
    if (it == classifier_ids.end())
        throw ContractError("target '" + target_ids.at(row) +
                            "' is not among the evaluating classifiers");
    return static_cast<std::size_t>(it - classifier_ids.begin());
}

bool TransferMatrix::row_skipped(std::size_t row) const {
    for (real v : top1.at(row))
        if (std::isnan(v)) return true;
    return false;
}

void TransferMatrix::add_skipped_row(const std::string& target_id) {
    target_ids.push_back(target_id);
    top1.emplace_back(classifier_ids.size(), kNaN);
    top5.emplace_back(classifier_ids.size(), kNaN);
}

real TransferMatrix::diagonal(std::size_t row) const {
    return top1.at(row).at(diagonal_column(row));
}

real TransferMatrix::max_off_diagonal(std::size_t row) const {
    if (row_skipped(row)) return kNaN;
    const std::size_t diag = diagonal_column(row);
    real best = 0.0;
    for (std::size_t c = 0; c < classifier_ids.size(); ++c)
        if (c != diag) best = std::max(best, top1.at(row).at(c));
    return best;
}

real TransferMatrix::mean_off_diagonal(std::size_t row) const {
    if (row_skipped(row)) return kNaN;
    const std::size_t diag = diagonal_column(row);
    real sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < classifier_ids.size(); ++c)
        if (c != diag) {
            sum += top1.at(row).at(c);
            ++n;
        }
    return n == 0 ? 0.0 : sum / static_cast<real>(n);
}

real TransferMatrix::suppression_ratio(std::size_t row) const {
    if (row_skipped(row)) return kNaN;
    const real floor = chance / 10.0;
    return diagonal(row) / std::max(max_off_diagonal(row), floor);
}

TransferMatrix compute_transfer_matrix(const std::vector<TrainedTransform>& transforms,
                                       const std::vector<FrozenClassifier*>& classifiers,
                                       const DatasetHandle& test, std::size_t batch_size,
                                       const EvalOptions& options) {
    if (classifiers.empty()) throw ContractError("transfer matrix needs at least one classifier");
    TransferMatrix m;
    m.chance = 100.0 / static_cast<real>(test.num_classes);
    for (FrozenClassifier* c : classifiers) m.classifier_ids.push_back(c->model_id());
    for (FrozenClassifier* c : classifiers)
        m.identity_top1.push_back(evaluate_identity(*c, test, batch_size).top1);
    for (const TrainedTransform& t : transforms) {
        m.target_ids.push_back(t.target_id);
        std::vector<real> row1, row5;
        for (FrozenClassifier* c : classifiers) {
            const Accuracy a = evaluate_transform(*t.encoder, *t.decoder, t.mask_bits, *c, test,
                                                  batch_size, options);
            row1.push_back(a.top1);
            row5.push_back(a.top5);
        }
        m.top1.push_back(std::move(row1));
        m.top5.push_back(std::move(row5));
    }
    return m;
}

real mean_unintended(const AblationStage& stage) {
    if (stage.other_top1.empty()) return kNaN;
    real sum = 0.0;
    for (real v : stage.other_top1) sum += v;
    return sum / static_cast<real>(stage.other_top1.size());
}

AblationReport run_ablation(const RunConfig& base, FrozenClassifier& target,
                            const std::vector<FrozenClassifier*>& others,
                            const DatasetHandle& train, const DatasetHandle& test,
                            const fs::path& work_dir) {
    if (base.mask_mode == MaskMode::kNone)
        throw ConfigError("the ablation compares masking variants; the base config must not "
                          "have mask_mode=none");
    AblationReport report;
    report.chance = 100.0 / static_cast<real>(test.num_classes);
    for (FrozenClassifier* o : others) report.other_ids.push_back(o->model_id());

    RunConfig none_cfg = base;
    none_cfg.mask_mode = MaskMode::kNone;
    RunConfig kl_cfg = base;
    kl_cfg.gamma = 1.0;

    const std::vector<std::pair<std::string, RunConfig>> stages = {
        {"none", none_cfg}, {"kl_only", kl_cfg}, {"integrated", base}};

    for (const auto& [name, cfg] : stages) {
        AblationStage st;
        st.name = name;
        st.config = cfg;
        st.latent_dim = cfg.latent_dim;
        try {
            Trainer trainer(cfg, target, train, test);
            trainer.run(work_dir / name);
            const LoadedTransform t = load_transform(work_dir / name);
            st.mask_hash = t.mask.bits_hash();
            st.kept_dimensions = t.mask.kept();
            st.target_top1 =
                evaluate_transform(*t.encoder, *t.decoder, t.mask.bits, target, test,
                                   cfg.batch_size)
                    .top1;
            for (FrozenClassifier* o : others)
                st.other_top1.push_back(
                    evaluate_transform(*t.encoder, *t.decoder, t.mask.bits, *o, test,
                                       cfg.batch_size)
                        .top1);
            st.completed = true;
        } catch (const std::exception& e) {
            st.error = e.what();  // record and keep going: partial reports beat none
        }
        report.stages.push_back(std::move(st));
    }
    return report;
}

namespace {

void write_heatmap(const fs::path& path, const TransferMatrix& m) {
    constexpr std::size_t kCell = 32;
    constexpr std::size_t kBorder = 3;
    const std::size_t rows = m.target_ids.size();
    const std::size_t cols = m.classifier_ids.size();
    if (rows == 0 || cols == 0) return;
    Tensor img({1, 3, rows * kCell, cols * kCell});
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t diag = m.diagonal_column(r);
        for (std::size_t c = 0; c < cols; ++c) {
            real rgb[3];
            colormap(m.top1[r][c] / 100.0, rgb);
            for (std::size_t y = 0; y < kCell; ++y) {
                for (std::size_t x = 0; x < kCell; ++x) {
                    const bool border = c == diag && (y < kBorder || y >= kCell - kBorder ||
                                                      x < kBorder || x >= kCell - kBorder);
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        img.at(0, ch, r * kCell + y, c * kCell + x) = border ? 1.0 : rgb[ch];
                }
            }
        }
    }
    write_png(path, img.reshaped({3, rows * kCell, cols * kCell}));
}

std::string markdown_table(const TransferMatrix& m, bool top5) {
    std::ostringstream md;
    md << "| transform |";
    for (const std::string& id : m.classifier_ids) md << " " << id << " |";
    md << "\n|---|";
    for (std::size_t c = 0; c < m.classifier_ids.size(); ++c) md << "---|";
    md << "\n";
    if (!top5 && m.identity_top1.size() == m.classifier_ids.size()) {
        md << "| identity |";
        for (real v : m.identity_top1) md << " " << f2(v) << " |";
        md << "\n";
    }
    const auto& grid = top5 ? m.top5 : m.top1;
    for (std::size_t r = 0; r < m.target_ids.size(); ++r) {
        md << "| for " << m.target_ids[r] << " |";
        const std::size_t diag = m.diagonal_column(r);
        for (std::size_t c = 0; c < m.classifier_ids.size(); ++c) {
            if (c == diag && !m.row_skipped(r))
                md << " **" << f2(grid[r][c]) << "** |";
            else
                md << " " << f2(grid[r][c]) << " |";
        }
        md << "\n";
    }
    return md.str();
}

std::string ablation_csv_text(const AblationReport& report) {
    std::ostringstream csv;
    csv << "stage,completed,target_top1,mean_unintended,kept_dimensions,latent_dim,mask_hash";
    for (const std::string& id : report.other_ids) csv << "," << id;
    csv << ",error\n";
    for (const AblationStage& st : report.stages) {
        csv << st.name << "," << (st.completed ? 1 : 0) << ",";
        csv << (st.completed ? f2(st.target_top1) : std::string("n/a")) << ",";
        csv << (st.completed ? f2(mean_unintended(st)) : std::string("n/a")) << ",";
        csv << st.kept_dimensions << "," << st.latent_dim << "," << st.mask_hash;
        for (std::size_t i = 0; i < report.other_ids.size(); ++i)
            csv << ","
                << (st.completed && i < st.other_top1.size() ? f2(st.other_top1[i])
                                                             : std::string("n/a"));
        std::string err = st.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        csv << "," << err << "\n";
    }
    return csv.str();
}

std::string ablation_md_text(const AblationReport& report) {
    std::ostringstream md;
    md << "## Masking ablation\n\n";
    md << "Chance is " << f2(report.chance)
       << "%. \"Mean unintended\" averages top-1 accuracy over every non-target "
          "classifier.\n\n";
    md << "| stage | target top-1 | mean unintended | kept dims";
    for (const std::string& id : report.other_ids) md << " | " << id;
    md << " | status |\n|---|---|---|---|";
    for (std::size_t i = 0; i < report.other_ids.size(); ++i) md << "---|";
    md << "---|\n";
    for (const AblationStage& st : report.stages) {
        md << "| " << st.name << " | ";
        if (st.completed) {
            md << f2(st.target_top1) << " | " << f2(mean_unintended(st)) << " | "
               << st.kept_dimensions << "/" << st.latent_dim;
            for (real v : st.other_top1) md << " | " << f2(v);
            md << " | ok |\n";
        } else {
            md << "n/a | n/a | n/a";
            for (std::size_t i = 0; i < report.other_ids.size(); ++i) md << " | n/a";
            md << " | failed: " << st.error << " |\n";
        }
    }
    return md.str();
}

}  // namespace

void emit_report(const fs::path& out_dir, const TransferMatrix& matrix,
                 const AblationReport* ablation) {
    fs::create_directories(out_dir);

    // transfer_matrix.csv
    {
        std::ostringstream csv;
        csv << "transform";
        for (const std::string& id : matrix.classifier_ids) csv << "," << id;
        csv << "\n";
        if (matrix.identity_top1.size() == matrix.classifier_ids.size()) {
            csv << "identity";
            for (real v : matrix.identity_top1) csv << "," << f2(v);
            csv << "\n";
        }
        for (std::size_t r = 0; r < matrix.target_ids.size(); ++r) {
            csv << "for " << matrix.target_ids[r];
            for (std::size_t c = 0; c < matrix.classifier_ids.size(); ++c)
                csv << "," << f2(matrix.top1[r][c]);
            csv << "\n";
        }
        write_text(out_dir / "transfer_matrix.csv", csv.str());
    }

    const auto classes = static_cast<std::size_t>(std::llround(100.0 / matrix.chance));

    // report.md
    {
        std::ostringstream md;
        md << "# Cross-model transfer report\n\n";
        md << "Top-1 accuracy (%) of each evaluating classifier (columns) on images produced "
              "by the transform trained for each target (rows). The bold diagonal should stay "
              "high; everything else should collapse toward chance ("
           << f2(matrix.chance) << "%).\n\n";
        md << markdown_table(matrix, /*top5=*/false) << "\n";

        md << "## Selectivity per transform\n\n";
        md << "| transform | retained (diagonal) | max other | mean other | suppression ratio "
              "|\n|---|---|---|---|---|\n";
        for (std::size_t r = 0; r < matrix.target_ids.size(); ++r) {
            md << "| for " << matrix.target_ids[r] << " | " << f2(matrix.diagonal(r)) << " | "
               << f2(matrix.max_off_diagonal(r)) << " | " << f2(matrix.mean_off_diagonal(r))
               << " | " << f2(matrix.suppression_ratio(r))
               << (matrix.row_skipped(r) ? " |\n" : "x |\n");
        }
        md << "\nThe suppression ratio divides the diagonal by the largest off-diagonal "
              "accuracy (floored at a tenth of chance so a total collapse stays finite).\n";

        if (classes >= 10 && matrix.has_top5) {
            md << "\n## Top-5 accuracy\n\n" << markdown_table(matrix, /*top5=*/true);
        }

        if (ablation != nullptr) md << "\n" << ablation_md_text(*ablation);
        write_text(out_dir / "report.md", md.str());
    }

    write_heatmap(out_dir / "heatmap.png", matrix);

    if (ablation != nullptr) write_text(out_dir / "ablation.csv", ablation_csv_text(*ablation));
}

void emit_ablation(const fs::path& out_dir, const AblationReport& report) {
    fs::create_directories(out_dir);
    write_text(out_dir / "ablation.csv", ablation_csv_text(report));
    write_text(out_dir / "ablation.md", "# Masking ablation report\n\n" + ablation_md_text(report));
}

TransferMatrix parse_transfer_csv(const fs::path& csv_path, std::size_t num_classes) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open " + csv_path.string());
    TransferMatrix m;
    m.chance = 100.0 / static_cast<real>(num_classes);
    m.has_top5 = false;
    std::string line;
    if (!std::getline(in, line)) throw IoError(csv_path.string() + " is empty");
    {
        std::stringstream header(line);
        std::string cell;
        bool first = true;
        while (std::getline(header, cell, ',')) {
            if (first)
                first = false;
            else
                m.classifier_ids.push_back(cell);
        }
    }
    if (m.classifier_ids.empty())
        throw IoError(csv_path.string() + " has no classifier columns");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string label;
        std::getline(row, label, ',');
        std::vector<real> values;
        std::string cell;
        while (std::getline(row, cell, ','))
            values.push_back(cell == "n/a" ? kNaN : std::strtod(cell.c_str(), nullptr));
        if (values.size() != m.classifier_ids.size())
            throw IoError(csv_path.string() + ": row '" + label + "' has " +
                          std::to_string(values.size()) + " cells, expected " +
                          std::to_string(m.classifier_ids.size()));
        if (label == "identity") {
            m.identity_top1 = values;
        } else {
            const std::string prefix = "for ";
            if (label.rfind(prefix, 0) != 0)
                throw IoError(csv_path.string() + ": unrecognized row label '" + label + "'");
            m.target_ids.push_back(label.substr(prefix.size()));
            m.top5.push_back(values);  // top-5 data is not stored in the CSV
            m.top1.push_back(std::move(values));
        }
    }
    return m;
}

real chance_upper_band(std::size_t n, std::size_t num_classes, real k_sigma) {
    if (n == 0 || num_classes == 0)
        throw ContractError("chance band needs a nonempty sample and label space");
    const real p = 1.0 / static_cast<real>(num_classes);
    return 100.0 * (p + k_sigma * std::sqrt(p * (1.0 - p) / static_cast<real>(n)));
}

}  // namespace veil
