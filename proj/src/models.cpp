#include "veil/models.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"
#include "veil/nn/checkpoint.hpp"
#include "veil/nn/loss.hpp"

namespace veil {

FrozenClassifier::FrozenClassifier(std::string model_id, std::unique_ptr<nn::Sequential> net,
                                   std::size_t num_classes, std::size_t input_resolution,
                                   ChannelStats stats)
    : model_id_(std::move(model_id)),
      net_(std::move(net)),
      num_classes_(num_classes),
      input_resolution_(input_resolution),
      stats_(stats) {
    net_->set_param_grads(false);
    net_->set_training(false);
    net_->set_finite_checks(true);
}

void FrozenClassifier::check_input(const Tensor& X) const {
    if (X.ndim() != 4 || X.dim(1) != 3 || X.dim(2) != input_resolution_ ||
        X.dim(3) != input_resolution_)
        throw ContractError("classifier '" + model_id_ + "' expects [B,3," +
                            std::to_string(input_resolution_) + "," +
                            std::to_string(input_resolution_) + "] input");
}

Tensor FrozenClassifier::predict(const Tensor& X) {
    check_input(X);
    return net_->forward(X);
}

std::pair<real, Tensor> FrozenClassifier::task_loss_and_input_grad(const Tensor& X,
                                                                   const std::vector<int>& Y) {
    check_input(X);
    Tensor logits = net_->forward(X);
    Tensor dlogits;
    const real loss = nn::softmax_cross_entropy(logits, Y, &dlogits);
    Tensor dX = net_->backward(dlogits);
    return {loss, std::move(dX)};
}

std::string FrozenClassifier::params_hash() { return nn::state_hash(nn::collect_state(*net_)); }

// ---------------------------------------------------------------------------

namespace {

nlohmann::json stats_to_json(const ChannelStats& s) {
    return nlohmann::json{{"mean", s.mean}, {"std", s.std}};
}

ChannelStats stats_from_json(const nlohmann::json& j) {
    ChannelStats s{};
    for (std::size_t c = 0; c < 3; ++c) {
        s.mean[c] = j.at("mean").at(c).get<real>();
        s.std[c] = j.at("std").at(c).get<real>();
    }
    return s;
}

}  // namespace

ModelZoo::ModelZoo(std::filesystem::path dir) : dir_(std::move(dir)) {
    const auto reg = dir_ / "registry.json";
    if (!std::filesystem::exists(reg)) return;
    std::ifstream in(reg);
    if (!in) throw IoError("cannot open zoo registry " + reg.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("zoo registry " + reg.string() + " is not valid JSON: " + e.what());
    }
    if (j.at("schema_version").get<int>() != 1)
        throw IoError("zoo registry has unsupported schema version");
    for (const auto& [id, e] : j.at("models").items()) {
        ZooEntry entry;
        entry.arch = e.at("arch");
        if (!e.at("checkpoint").is_null())
            entry.checkpoint = e.at("checkpoint").get<std::string>();
        entry.num_classes = e.at("num_classes").get<std::size_t>();
        entry.input_resolution = e.at("input_resolution").get<std::size_t>();
        entry.stats = stats_from_json(e.at("stats"));
        entry.baseline_accuracy = e.value("baseline_accuracy", -1.0);
        entries_[id] = std::move(entry);
    }
}

void ModelZoo::register_model(const std::string& id, const nn::json& arch_spec,
                              const std::filesystem::path& checkpoint, std::size_t num_classes,
                              std::size_t input_resolution, ChannelStats stats,
                              real baseline_accuracy) {
    ZooEntry entry;
    entry.arch = arch_spec;
    entry.checkpoint = std::filesystem::relative(checkpoint, dir_).string();
    entry.num_classes = num_classes;
    entry.input_resolution = input_resolution;
    entry.stats = stats;
    entry.baseline_accuracy = baseline_accuracy;
    entries_[id] = std::move(entry);
    load(id);  // verification load: throws if checkpoint and architecture disagree
    save();
}

void ModelZoo::declare_model(const std::string& id, const std::string& preset_name,
                             std::size_t num_classes, std::size_t input_resolution,
                             ChannelStats stats) {
    ZooEntry entry;
    entry.arch = nn::preset_arch(preset_name, {.in_channels = 3,
                                               .resolution = input_resolution,
                                               .num_classes = num_classes});
    entry.num_classes = num_classes;
    entry.input_resolution = input_resolution;
    entry.stats = stats;
    entries_[id] = std::move(entry);
    save();
}

std::unique_ptr<FrozenClassifier> ModelZoo::load(const std::string& id) const {
    const ZooEntry& e = entry(id);
    if (!e.checkpoint)
        throw ModelError("model '" + id +
                         "' is declared but has no bundled checkpoint; obtain weights and "
                         "register them first");
    auto net = nn::build_arch(e.arch);
    nn::load_state(dir_ / *e.checkpoint, nn::collect_state(*net));
    return std::make_unique<FrozenClassifier>(id, std::move(net), e.num_classes,
                                              e.input_resolution, e.stats);
}

bool ModelZoo::loadable(const std::string& id) const {
    auto it = entries_.find(id);
    return it != entries_.end() && it->second.checkpoint.has_value();
}

const ZooEntry& ModelZoo::entry(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw ModelError("model '" + id + "' is not in the zoo registry");
    return it->second;
}

std::vector<std::string> ModelZoo::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : entries_) out.push_back(id);
    return out;
}

std::vector<std::string> ModelZoo::loadable_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, e] : entries_)
        if (e.checkpoint) out.push_back(id);
    return out;
}

void ModelZoo::save() const {
    std::filesystem::create_directories(dir_);
    nlohmann::json models = nlohmann::json::object();
    for (const auto& [id, e] : entries_) {
        models[id] = nlohmann::json{
            {"arch", e.arch},
            {"checkpoint", e.checkpoint ? nlohmann::json(*e.checkpoint) : nlohmann::json()},
            {"num_classes", e.num_classes},
            {"input_resolution", e.input_resolution},
            {"stats", stats_to_json(e.stats)},
            {"baseline_accuracy", e.baseline_accuracy}};
    }
    nlohmann::json j{{"schema_version", 1}, {"models", models}};
    const auto reg = dir_ / "registry.json";
    std::ofstream out(reg);
    if (!out) throw IoError("cannot write zoo registry " + reg.string());
    out << j.dump(2) << "\n";
}

}  // namespace veil
