#include "mmfuse/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace mmfuse {

std::string to_string(Rung rung) {
    switch (rung) {
        case Rung::Transfer: return "transfer";
        case Rung::TransferMoe: return "transfer_moe";
        case Rung::ContrastiveMoe: return "contrastive_moe";
        case Rung::DualContrastiveMoe: return "dual_contrastive_moe";
    }
    return "?";
}

Rung rung_from_string(const std::string& name) {
    if (name == "transfer") return Rung::Transfer;
    if (name == "transfer_moe") return Rung::TransferMoe;
    if (name == "contrastive_moe") return Rung::ContrastiveMoe;
    if (name == "dual_contrastive_moe") return Rung::DualContrastiveMoe;
    throw ConfigError("unknown rung '" + name +
                      "' (expected transfer|transfer_moe|contrastive_moe|dual_contrastive_moe)");
}

bool rung_uses_joint(Rung rung) { return rung == Rung::DualContrastiveMoe; }

bool rung_uses_moe(Rung rung) { return rung != Rung::Transfer; }

void LossConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("loss.tau must be strictly positive");
    if (!(gamma > 0.0)) throw ConfigError("loss.gamma must be strictly positive");
    if (lambda_con < 0.0 || lambda_cka < 0.0 || lambda_mi < 0.0) {
        throw ConfigError("loss weights must be nonnegative");
    }
    const bool has_con = rung == Rung::ContrastiveMoe || rung == Rung::DualContrastiveMoe;
    const bool has_aux = rung == Rung::DualContrastiveMoe;
    if (lambda_con > 0.0 && !has_con) {
        throw ConfigError("lambda_con > 0 on rung '" + to_string(rung) +
                          "', which has no contrastive term");
    }
    if (lambda_cka > 0.0 && !has_aux) {
        throw ConfigError("lambda_cka > 0 on rung '" + to_string(rung) +
                          "', which has no CKA term");
    }
    if (lambda_mi > 0.0 && !has_aux) {
        throw ConfigError("lambda_mi > 0 on rung '" + to_string(rung) +
                          "', which has no MI term");
    }
}

void ModelDims::validate() const {
    if (common_dim == 0 || latent_dim == 0 || heads == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (common_dim % heads != 0) {
        throw ConfigError("model.heads (" + std::to_string(heads) +
                          ") must divide model.common_dim (" + std::to_string(common_dim) + ")");
    }
    if (experts == 0) throw ConfigError("model.experts must be >= 1");
    if (expert_hidden == 0 || expert_output == 0 || head_hidden == 0 || head_bottleneck == 0) {
        throw ConfigError("MLP layer sizes must be positive");
    }
    if (classes < 2) throw ConfigError("classes must be >= 2");
}

void TrainConfig::validate() const {
    loss.validate();
    dims.validate();
    if (batch_size < 2) {
        throw ConfigError("train.batch_size must be >= 2 (contrastive loss precondition)");
    }
    if (folds < 2) throw ConfigError("train.folds must be >= 2");
    if (learning_rate < 0.0) throw ConfigError("train.learning_rate must be nonnegative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "loss.tau", "loss.gamma", "loss.lambda_con", "loss.lambda_cka", "loss.lambda_mi",
        "loss.include_positives", "loss.class_weighting",
        "model.common_dim", "model.heads", "model.latent_dim", "model.experts",
        "model.expert_hidden", "model.expert_output", "model.head_hidden",
        "model.head_bottleneck",
        "train.rung", "train.learning_rate", "train.beta1", "train.beta2", "train.adam_eps",
        "train.epochs", "train.batch_size", "train.folds", "train.seed", "train.final_model",
        "synth.documents", "synth.classes", "synth.ratios", "synth.segments",
        "synth.dim_audio", "synth.dim_text", "synth.latent_dim", "synth.noise",
        "synth.separation", "synth.gain_audio", "synth.gain_text", "synth.seed",
    };
    return keys;
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_string(buf.str());
}

Config Config::from_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        cfg.entries_[key] = value;
    }
    return cfg;
}

void Config::set(const std::string& key, const std::string& value) { entries_[key] = value; }

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t pos = 0;
        double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + it->second +
                          "' as a number");
    }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    try {
        std::size_t pos = 0;
        std::int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + it->second +
                          "' as an integer");
    }
}

std::uint64_t Config::get_uint(const std::string& key, std::uint64_t fallback) const {
    std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError("config key '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(v);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::string v = it->second;
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as a bool");
}

std::vector<double> Config::get_doubles(const std::string& key,
                                        const std::vector<double>& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    std::istringstream in(it->second);
    std::string token;
    while (std::getline(in, token, ',')) {
        token = trim(token);
        if (token.empty()) continue;
        try {
            out.push_back(std::stod(token));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': cannot parse '" + token +
                              "' as a number");
        }
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

void Config::validate_keys() const {
    for (const auto& [key, value] : entries_) {
        if (!known_keys().count(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

LossConfig loss_config_from(const Config& cfg) {
    LossConfig lc;
    lc.rung = rung_from_string(cfg.get_string("train.rung", to_string(lc.rung)));
    lc.tau = cfg.get_double("loss.tau", lc.tau);
    lc.gamma = cfg.get_double("loss.gamma", lc.gamma);
    // Defaults apply only to the loss terms the rung actually has; an explicit
    // nonzero weight on a rung without that term is a configuration error.
    const bool has_con = lc.rung == Rung::ContrastiveMoe || lc.rung == Rung::DualContrastiveMoe;
    const bool has_aux = lc.rung == Rung::DualContrastiveMoe;
    lc.lambda_con = cfg.get_double("loss.lambda_con", has_con ? lc.lambda_con : 0.0);
    lc.lambda_cka = cfg.get_double("loss.lambda_cka", has_aux ? lc.lambda_cka : 0.0);
    lc.lambda_mi = cfg.get_double("loss.lambda_mi", has_aux ? lc.lambda_mi : 0.0);
    lc.include_positives = cfg.get_bool("loss.include_positives", lc.include_positives);
    lc.class_weighting = cfg.get_bool("loss.class_weighting", lc.class_weighting);
    lc.validate();
    return lc;
}

ModelDims model_dims_from(const Config& cfg) {
    ModelDims d;
    d.common_dim = cfg.get_uint("model.common_dim", d.common_dim);
    d.heads = cfg.get_uint("model.heads", d.heads);
    d.latent_dim = cfg.get_uint("model.latent_dim", d.latent_dim);
    d.experts = cfg.get_uint("model.experts", d.experts);
    d.expert_hidden = cfg.get_uint("model.expert_hidden", d.expert_hidden);
    d.expert_output = cfg.get_uint("model.expert_output", d.expert_output);
    d.head_hidden = cfg.get_uint("model.head_hidden", d.head_hidden);
    d.head_bottleneck = cfg.get_uint("model.head_bottleneck", d.head_bottleneck);
    return d;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.loss = loss_config_from(cfg);
    tc.dims = model_dims_from(cfg);
    tc.learning_rate = cfg.get_double("train.learning_rate", tc.learning_rate);
    tc.beta1 = cfg.get_double("train.beta1", tc.beta1);
    tc.beta2 = cfg.get_double("train.beta2", tc.beta2);
    tc.adam_eps = cfg.get_double("train.adam_eps", tc.adam_eps);
    tc.epochs = cfg.get_uint("train.epochs", tc.epochs);
    tc.batch_size = cfg.get_uint("train.batch_size", tc.batch_size);
    tc.folds = cfg.get_uint("train.folds", tc.folds);
    tc.seed = cfg.get_uint("train.seed", tc.seed);
    tc.final_model = cfg.get_bool("train.final_model", tc.final_model);
    return tc;
}

namespace {

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

} // namespace

std::string resolved_config_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "train.rung = " << to_string(cfg.loss.rung) << "\n"
        << "train.learning_rate = " << fmt(cfg.learning_rate) << "\n"
        << "train.beta1 = " << fmt(cfg.beta1) << "\n"
        << "train.beta2 = " << fmt(cfg.beta2) << "\n"
        << "train.adam_eps = " << fmt(cfg.adam_eps) << "\n"
        << "train.epochs = " << cfg.epochs << "\n"
        << "train.batch_size = " << cfg.batch_size << "\n"
        << "train.folds = " << cfg.folds << "\n"
        << "train.seed = " << cfg.seed << "\n"
        << "train.final_model = " << (cfg.final_model ? "true" : "false") << "\n"
        << "loss.tau = " << fmt(cfg.loss.tau) << "\n"
        << "loss.gamma = " << fmt(cfg.loss.gamma) << "\n"
        << "loss.lambda_con = " << fmt(cfg.loss.lambda_con) << "\n"
        << "loss.lambda_cka = " << fmt(cfg.loss.lambda_cka) << "\n"
        << "loss.lambda_mi = " << fmt(cfg.loss.lambda_mi) << "\n"
        << "loss.include_positives = " << (cfg.loss.include_positives ? "true" : "false") << "\n"
        << "loss.class_weighting = " << (cfg.loss.class_weighting ? "true" : "false") << "\n"
        << "model.common_dim = " << cfg.dims.common_dim << "\n"
        << "model.heads = " << cfg.dims.heads << "\n"
        << "model.latent_dim = " << cfg.dims.latent_dim << "\n"
        << "model.experts = " << cfg.dims.experts << "\n"
        << "model.expert_hidden = " << cfg.dims.expert_hidden << "\n"
        << "model.expert_output = " << cfg.dims.expert_output << "\n"
        << "model.head_hidden = " << cfg.dims.head_hidden << "\n"
        << "model.head_bottleneck = " << cfg.dims.head_bottleneck << "\n"
        << "model.dim_audio = " << cfg.dims.dim_audio << "\n"
        << "model.dim_text = " << cfg.dims.dim_text << "\n"
        << "model.classes = " << cfg.dims.classes << "\n";
    return out.str();
}

} // namespace mmfuse
