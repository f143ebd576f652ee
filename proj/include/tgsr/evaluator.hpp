#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tgsr/checkpoint.hpp"
#include "tgsr/corpus.hpp"
#include "tgsr/trainer.hpp"

namespace tgsr {

struct EvalRow {
    std::string id;
    double psnr = 0.0;
    double ssim = 0.0;
    double tim = 0.0;
};

struct RankReportRow {
    std::string id;
    double tim = 0.0;
    int rank = 0;
    bool hit = false;
};

struct ProbeResult {
    std::string id;
    std::string caption_a, caption_b;
    std::string target_color;  // object color word of caption_b
    std::string color_a, color_b;  // nearest grammar color of each output's object region
    double hue_shift = 0.0;     // degrees between the two region hues
    bool changed = false;       // color_b == target_color
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<RankReportRow> ranks;
    std::vector<ProbeResult> probes;
    double mean_psnr = 0.0, mean_ssim = 0.0, mean_tim = 0.0;
    double r_precision = -1.0;        // -1 when not computed
    double probe_change_rate = -1.0;  // -1 without probes
    nlohmann::json config = nlohmann::json::object();

    /// Recomputes every aggregate from the rows.
    void aggregate();
    nlohmann::json to_json() const;
    /// report.json (aggregates, config, probes) and rows.jsonl (psnr/ssim/tim rows, then rank rows).
    void write(const std::filesystem::path& dir) const;
};

/// Maps an LR batch [B,3,h,w] and its caption tokens to SR outputs [B,3,H,W].
using SrFunction = std::function<torch::Tensor(const torch::Tensor& lr, const TokenBatch& tokens)>;

SrFunction model_sr(TgsrModels& models);

struct EvalOptions {
    int batch_size = 25;
    int distractors = 9;  // 0 disables R-precision
    std::uint64_t seed = 0;
};

/// PSNR/SSIM against GT and TIM (with the given frozen encoders) of every
/// split item, plus R-precision over the generated images.
EvalReport evaluate_outputs(const SrFunction& sr, const EncoderBundle& encoders, const SplitTensors& split,
                            const TrainConfig& config, const EvalOptions& options = {});

/// Loads a tgsr checkpoint and evaluates it on one manifest split. TIM uses
/// `encoder_checkpoint` when given (it must share the vocabulary and geometry),
/// otherwise the encoders stored in the tgsr checkpoint.
EvalReport evaluate(const Checkpoint& tgsr, const DatasetManifest& manifest, Split split,
                    const std::optional<Checkpoint>& encoder_checkpoint = std::nullopt,
                    const EvalOptions& options = {});

/// Runs the generator on the scene's LR image under both captions and
/// classifies the object region of the second output. The captions must be
/// identical or differ in exactly one word, the object color.
ProbeResult controllability_probe(TgsrModels& models, const Scene& scene, const std::string& caption_a,
                                  const std::string& caption_b);

struct ProbeCase {
    std::string id;
    std::uint64_t scene_seed = 0;
    std::string caption_a, caption_b;
};

/// `count` split items, each with its object color swapped for a random
/// different grammar color that also differs from the background.
std::vector<ProbeCase> make_probe_set(const DatasetManifest& manifest, Split split, const GrammarConfig& grammar,
                                      int count, std::uint64_t seed);

std::vector<ProbeResult> run_probes(TgsrModels& models, const std::vector<ProbeCase>& probes,
                                    const GrammarConfig& grammar);

/// One rung of the ablation ladder: a name and the flag overrides applied to the base config.
struct AblationRung {
    std::string name;
    AblationFlags flags;
};

/// baseline -> +TAM -> +L_TIC -> +coarse-to-fine -> +L_TAR.
std::vector<AblationRung> ablation_ladder();

struct AblationResult {
    std::string name;
    double mean_psnr = 0.0, mean_ssim = 0.0, mean_tim = 0.0;
};

/// Trains and evaluates every rung from the same encoders and seed.
std::vector<AblationResult> run_ablation(const TrainConfig& base, const SplitTensors& train,
                                         const SplitTensors& test, const Checkpoint& encoders,
                                         const std::vector<AblationRung>& rungs, const TrainOptions& options = {});

}  // namespace tgsr
