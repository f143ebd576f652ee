#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <vector>

#include "tgsr/adversarial.hpp"
#include "tgsr/checkpoint.hpp"
#include "tgsr/config.hpp"
#include "tgsr/corpus.hpp"
#include "tgsr/generator.hpp"
#include "tgsr/matching.hpp"
#include "tgsr/objective.hpp"
#include "tgsr/text_encoder.hpp"

namespace tgsr {

struct EncoderBundle {
    Vocabulary vocab;
    TextEncoder text{nullptr};
    ImageEncoder image{nullptr};

    /// Disables gradients on both encoders and puts them in eval mode.
    void freeze();
};

/// Everything the evaluator and the service need from a trained checkpoint.
struct TgsrModels {
    TrainConfig config;
    EncoderBundle encoders;
    Generator generator{nullptr};
    Discriminator discriminator{nullptr};  // null when the cGAN term was off
};

TextEncoder make_text_encoder(const TrainConfig& config, const Vocabulary& vocab);
ImageEncoder make_image_encoder(const TrainConfig& config);

EncoderBundle load_encoders(const Checkpoint& checkpoint);
TgsrModels load_tgsr(const Checkpoint& checkpoint);

/// Where training writes logs, samples and periodic checkpoints. An empty
/// out_dir keeps everything in memory.
struct TrainOptions {
    std::filesystem::path out_dir;
    std::ostream* progress = nullptr;
};

/// Yields batches in shuffled-epoch order from a fixed seed.
class BatchSampler {
public:
    BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
    std::vector<std::int64_t> next();

private:
    std::size_t size_, batch_;
    std::mt19937_64 rng_;
    std::vector<std::int64_t> order_;
    std::size_t cursor_ = 0;
};

struct PretrainResult {
    Checkpoint checkpoint;
    std::vector<double> losses;  // L_TIC per step
    double r_precision = 0.0;    // held-out (test split)
};

/// Minimizes L_TIC over (image, caption) pairs of the train split.
PretrainResult pretrain_encoders(const TrainConfig& config, const DatasetManifest& manifest,
                                 const TrainOptions& options = {});

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossReport> reports;
    std::uint32_t encoder_checksum_before = 0;
    std::uint32_t encoder_checksum_after = 0;
};

/// End-to-end TGSR training with frozen encoders: per batch one discriminator
/// step (when the cGAN term is on) followed by one generator step on L.
TrainResult train_tgsr(const TrainConfig& config, const DatasetManifest& manifest, const Checkpoint& encoders,
                       const TrainOptions& options = {});

/// Same as train_tgsr on an already-loaded split (used by tests and ablations).
TrainResult train_tgsr_on(const TrainConfig& config, const SplitTensors& train, const Checkpoint& encoders,
                          const TrainOptions& options = {});

/// LR | coarse | fine | GT | strongest word map, one row per sample (up to 4).
Image sample_grid(const torch::Tensor& lr, const GeneratorOutput& output, const torch::Tensor& gt);

}  // namespace tgsr
