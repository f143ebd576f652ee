#pragma once

#include <cstdint>
#include <optional>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tgsr/adversarial.hpp"
#include "tgsr/matching.hpp"
#include "tgsr/text_encoder.hpp"

namespace tgsr {

struct LossWeights {
    double l2 = 1.0;
    double cgan = 0.1;
    double tic = 0.5;
    double tar = 1.0;

    void validate() const;
};

/// Everything besides the images that the loss terms need. Missing modules
/// (or zero weights) switch the corresponding term off.
struct LossContext {
    TextFeatures text;  // from the frozen text encoder
    std::optional<Discriminator> discriminator;
    std::optional<ImageEncoder> image_encoder;  // frozen
    MatchingConfig matching;
    bool use_tar = true;  // false: the fine reconstruction term is plain MSE
};

struct GlobalTerms {
    torch::Tensor l2, cgan, tic, total;
};

struct FineTerms {
    torch::Tensor reconstruction, cgan, tic, total;
};

struct LossReport {
    std::int64_t step = 0;
    double l2 = 0, cgan_g = 0, tic_g = 0, tar = 0, cgan_f = 0, tic_f = 0;
    double global = 0, fine = 0, total = 0;

    nlohmann::json to_json() const;
};

/// Mean over the (up to) five word maps with the largest spatial sum (ties ->
/// lower word index) of the map-weighted per-pixel squared error; each map is
/// rescaled to spatial mean 1 and bilinearly resized to the image size. Maps
/// act as fixed weights (no gradient flows into them).
torch::Tensor tar_loss(const torch::Tensor& output, const torch::Tensor& target, const torch::Tensor& word_maps,
                       const torch::Tensor& lengths, int top_k = 5);

/// Indices of the maps tar_loss uses for one sample; exposed for tests.
std::vector<std::int64_t> select_top_word_maps(const torch::Tensor& sums, std::int64_t length, int top_k = 5);

/// Batch-mean text-image consistency term used inside the objective (L_TIC / M).
torch::Tensor tic_term(const torch::Tensor& images, const LossContext& context);
torch::Tensor cgan_term(const torch::Tensor& images, const LossContext& context);

GlobalTerms global_loss(const torch::Tensor& coarse, const torch::Tensor& lowpass_target, const LossContext& context,
                        const LossWeights& weights);
/// `word_maps` may be undefined when L_TAR is off.
FineTerms fine_loss(const torch::Tensor& fine, const torch::Tensor& target, const torch::Tensor& word_maps,
                    const LossContext& context, const LossWeights& weights);
torch::Tensor total_loss(const torch::Tensor& global, const torch::Tensor& fine);

LossReport make_report(std::int64_t step, const GlobalTerms& global, const std::optional<FineTerms>& fine,
                       const torch::Tensor& total);

}  // namespace tgsr
