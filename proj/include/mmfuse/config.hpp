#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

// The four architecture configurations compared by the evaluation ladder.
enum class Rung {
    Transfer,
    TransferMoe,
    ContrastiveMoe,
    DualContrastiveMoe,
};

std::string to_string(Rung rung);
Rung rung_from_string(const std::string& name);
// Whether the joint cross-modal path feeds the classifier on this rung.
bool rung_uses_joint(Rung rung);
bool rung_uses_moe(Rung rung);

struct LossConfig {
    double tau = 0.1;   // contrastive temperature
    double gamma = 1.0; // MI temperature
    double lambda_con = 1.0;
    double lambda_cka = 0.5;
    double lambda_mi = 0.5;
    Rung rung = Rung::DualContrastiveMoe;
    // Off by default: the printed objective excludes the positive pair from
    // the normalizer. The flag exists for comparison experiments.
    bool include_positives = false;
    bool class_weighting = true;

    void validate() const;
};

struct ModelDims {
    std::size_t dim_audio = 32;
    std::size_t dim_text = 16;
    std::size_t common_dim = 64;
    std::size_t heads = 4;
    std::size_t latent_dim = 128;
    std::size_t experts = 8;
    std::size_t expert_hidden = 32;
    std::size_t expert_output = 32;
    std::size_t head_hidden = 32;
    std::size_t head_bottleneck = 16;
    int classes = 2;

    void validate() const;
};

struct TrainConfig {
    LossConfig loss;
    ModelDims dims;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::size_t folds = 5;
    std::uint64_t seed = 1;
    bool final_model = false;

    void validate() const;
};

// Line-based key=value configuration with dotted sections. '#' starts a
// comment; unknown keys are rejected so typos surface immediately.
class Config {
public:
    Config() = default;
    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key,
                                    const std::vector<double>& fallback) const;

    // Rejects keys outside the known set; called once all overrides are in.
    void validate_keys() const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

LossConfig loss_config_from(const Config& cfg);
ModelDims model_dims_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);

// The fully resolved configuration (defaults included) as key=value lines,
// sufficient to reproduce the run exactly.
std::string resolved_config_text(const TrainConfig& cfg);

} // namespace mmfuse
