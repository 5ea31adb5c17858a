#include "veil/config.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "veil/errors.hpp"
#include "veil/serialize.hpp"

namespace veil {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

real parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const real r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        const std::uint64_t r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

/// Fixed-precision rendering so render->parse->render is a fixed point.
std::string fmt_real(real v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

std::string to_string(MaskMode m) {
    switch (m) {
        case MaskMode::kDynamic: return "dynamic";
        case MaskMode::kStatic: return "static";
        case MaskMode::kNone: return "none";
    }
    throw ContractError("unhandled mask mode");
}

MaskMode mask_mode_from_string(const std::string& s) {
    if (s == "dynamic") return MaskMode::kDynamic;
    if (s == "static") return MaskMode::kStatic;
    if (s == "none") return MaskMode::kNone;
    throw ConfigError("key 'mask_mode': expected dynamic|static|none, got '" + s + "'");
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        const std::size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + stripped + "'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key or value");
        if (!kv.emplace(key, value).second)
            throw ConfigError(origin + ": duplicate key '" + key + "'");
    }

    static const std::set<std::string> known = {
        "schema_version", "lambda_kl",       "gamma",
        "threshold",      "warm_epochs",     "mask_epochs",
        "mask_update_freq", "mask_mode",     "seed",
        "target_model_id", "dataset_id",     "latent_dim",
        "batch_size",     "learning_rate",   "weight_decay",
        "input_resolution", "mask_at_phase_start", "encoder_backbone",
        "decoder_base_size", "decoder_blocks", "decoder_channels",
        "score_subsample", "grad_clip"};
    for (const auto& [key, value] : kv)
        if (!known.count(key)) throw ConfigError(origin + ": unknown key '" + key + "'");

    static const char* required[] = {"schema_version", "lambda_kl", "gamma", "threshold",
                                     "warm_epochs",    "mask_epochs", "mask_update_freq",
                                     "mask_mode",      "seed",      "target_model_id",
                                     "dataset_id"};
    for (const char* key : required)
        if (!kv.count(key)) throw ConfigError(origin + ": missing required key '" + key + "'");

    RunConfig c;
    c.schema_version = static_cast<int>(parse_uint("schema_version", kv.at("schema_version")));
    if (c.schema_version != 1)
        throw ConfigError("key 'schema_version': unsupported version " +
                          std::to_string(c.schema_version));
    c.lambda_kl = parse_real("lambda_kl", kv.at("lambda_kl"));
    c.gamma = parse_real("gamma", kv.at("gamma"));
    c.threshold = parse_real("threshold", kv.at("threshold"));
    c.warm_epochs = parse_uint("warm_epochs", kv.at("warm_epochs"));
    c.mask_epochs = parse_uint("mask_epochs", kv.at("mask_epochs"));
    c.mask_update_freq = parse_uint("mask_update_freq", kv.at("mask_update_freq"));
    c.mask_mode = mask_mode_from_string(kv.at("mask_mode"));
    c.seed = parse_uint("seed", kv.at("seed"));
    c.target_model_id = kv.at("target_model_id");
    c.dataset_id = kv.at("dataset_id");

    auto opt_uint = [&](const char* key, std::size_t dflt) {
        return kv.count(key) ? static_cast<std::size_t>(parse_uint(key, kv.at(key))) : dflt;
    };
    auto opt_real = [&](const char* key, real dflt) {
        return kv.count(key) ? parse_real(key, kv.at(key)) : dflt;
    };
    c.latent_dim = opt_uint("latent_dim", 512);
    c.batch_size = opt_uint("batch_size", 64);
    c.learning_rate = opt_real("learning_rate", 1e-4);
    c.weight_decay = opt_real("weight_decay", 1e-5);
    c.input_resolution = opt_uint("input_resolution", 224);
    c.mask_at_phase_start =
        kv.count("mask_at_phase_start") ? parse_bool("mask_at_phase_start",
                                                     kv.at("mask_at_phase_start"))
                                        : true;
    if (kv.count("encoder_backbone")) c.encoder_backbone = kv.at("encoder_backbone");
    c.decoder_base_size = opt_uint("decoder_base_size", 14);
    c.decoder_blocks = opt_uint("decoder_blocks", 4);
    c.decoder_channels = opt_uint("decoder_channels", 64);
    c.score_subsample = opt_uint("score_subsample", 0);
    c.grad_clip = opt_real("grad_clip", 0.0);

    validate_config(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

void validate_config(const RunConfig& c) {
    auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
    if (!(c.gamma >= 0.0 && c.gamma <= 1.0)) fail("gamma must lie in [0,1]");
    if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) fail("threshold must lie in [0,1]");
    if (!(c.lambda_kl >= 0.0)) fail("lambda_kl must be non-negative");
    if (c.mask_update_freq < 1) fail("mask_update_freq must be >= 1");
    if (c.latent_dim < 1) fail("latent_dim must be >= 1");
    if (c.batch_size < 1) fail("batch_size must be >= 1");
    if (!(c.learning_rate > 0.0)) fail("learning_rate must be positive");
    if (!(c.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (c.input_resolution < 1) fail("input_resolution must be >= 1");
    if (c.decoder_base_size < 1) fail("decoder_base_size must be >= 1");
    if (c.decoder_blocks < 1) fail("decoder_blocks must be >= 1");
    if (c.decoder_channels < 1) fail("decoder_channels must be >= 1");
    if (!(c.grad_clip >= 0.0)) fail("grad_clip must be non-negative");
    if (c.target_model_id.empty()) fail("target_model_id must be non-empty");
    if (c.dataset_id.empty()) fail("dataset_id must be non-empty");
}

std::string render_config(const RunConfig& c) {
    std::ostringstream out;
    out << "schema_version = " << c.schema_version << "\n";
    out << "dataset_id = " << c.dataset_id << "\n";
    out << "target_model_id = " << c.target_model_id << "\n";
    out << "seed = " << c.seed << "\n";
    out << "latent_dim = " << c.latent_dim << "\n";
    out << "lambda_kl = " << fmt_real(c.lambda_kl) << "\n";
    out << "gamma = " << fmt_real(c.gamma) << "\n";
    out << "threshold = " << fmt_real(c.threshold) << "\n";
    out << "warm_epochs = " << c.warm_epochs << "\n";
    out << "mask_epochs = " << c.mask_epochs << "\n";
    out << "mask_update_freq = " << c.mask_update_freq << "\n";
    out << "mask_mode = " << to_string(c.mask_mode) << "\n";
    out << "mask_at_phase_start = " << (c.mask_at_phase_start ? "true" : "false") << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "learning_rate = " << fmt_real(c.learning_rate) << "\n";
    out << "weight_decay = " << fmt_real(c.weight_decay) << "\n";
    out << "input_resolution = " << c.input_resolution << "\n";
    out << "encoder_backbone = " << c.encoder_backbone << "\n";
    out << "decoder_base_size = " << c.decoder_base_size << "\n";
    out << "decoder_blocks = " << c.decoder_blocks << "\n";
    out << "decoder_channels = " << c.decoder_channels << "\n";
    out << "score_subsample = " << c.score_subsample << "\n";
    out << "grad_clip = " << fmt_real(c.grad_clip) << "\n";
    return out.str();
}

std::string config_hash(const RunConfig& c) { return sha256_hex(render_config(c)); }

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

nlohmann::json Manifest::to_json() const {
    return nlohmann::json{{"schema_version", schema_version},
                          {"code_version", code_version},
                          {"config_hash", config_hash},
                          {"config", render_config(config)},
                          {"created_at", created_at},
                          {"completed", completed},
                          {"final_target_accuracy", final_target_accuracy},
                          {"final_mask_hash", final_mask_hash}};
}

Manifest Manifest::from_json(const nlohmann::json& j) {
    Manifest m;
    m.schema_version = j.at("schema_version").get<int>();
    m.code_version = j.at("code_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = parse_config(j.at("config").get<std::string>(), "<manifest>");
    m.created_at = j.at("created_at").get<std::string>();
    m.completed = j.at("completed").get<bool>();
    m.final_target_accuracy = j.at("final_target_accuracy").get<real>();
    m.final_mask_hash = j.at("final_mask_hash").get<std::string>();
    if (m.config_hash != veil::config_hash(m.config))
        throw IoError("manifest config hash does not match its embedded config");
    return m;
}

Manifest make_manifest(const RunConfig& config, const std::string& code_version) {
    Manifest m;
    m.code_version = code_version;
    m.config = config;
    m.config_hash = config_hash(config);
    m.created_at = utc_timestamp();
    return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << m.to_json().dump(2) << "\n";
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return Manifest::from_json(j);
}

}  // namespace veil
