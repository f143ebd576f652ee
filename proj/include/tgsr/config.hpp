#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tgsr/corpus.hpp"
#include "tgsr/generator.hpp"
#include "tgsr/matching.hpp"
#include "tgsr/objective.hpp"

namespace tgsr {

struct AblationFlags {
    bool use_tam = true;
    bool use_tic = true;
    bool use_refine = true;
    bool use_tar = true;
    bool use_cgan = true;
};

/// Experiment configuration. Every field is addressable as "section.key"
/// both in config files and in command-line overrides.
struct TrainConfig {
    // [data]
    std::string data_root = "data";
    std::uint64_t data_seed = 1;
    int image_size = 64;
    int train_count = 2000;
    int val_count = 200;
    int test_count = 200;
    int scale = 8;

    // [model]
    int dim = 64;
    int t_max = 16;
    int grid = 8;
    int channels = 64;
    int residual_blocks = 2;
    int encoder_channels = 32;
    int disc_channels = 64;

    // [loss]
    LossWeights weights;
    MatchingConfig matching;

    // [optim]
    double lr = 1e-4;
    double pretrain_lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 16;
    int pretrain_batch_size = 16;
    int pretrain_steps = 3000;
    int train_steps = 5000;

    // [ablation]
    AblationFlags ablation;

    // [run]
    std::uint64_t seed = 0;
    std::string out_dir = "runs/default";
    std::string encoder_checkpoint;
    int log_every = 10;
    int sample_every = 500;
    int checkpoint_every = 1000;
    bool deterministic = true;
    int distractors = 9;
    int vocab_min_count = 1;

    // [serve]
    std::string host = "127.0.0.1";
    int port = 8080;
    int max_pixels = 4096;

    void validate() const;

    GeneratorConfig generator_config() const;
    DatasetConfig dataset_config() const;

    /// Applies "section.key=value"; unknown keys and ill-typed values throw ConfigError.
    void set(const std::string& dotted_key, const std::string& value);
    std::string get(const std::string& dotted_key) const;
    static const std::vector<std::string>& keys();

    std::string to_text() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
/// Applies overrides of the form "section.key=value".
void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides);

}  // namespace tgsr
