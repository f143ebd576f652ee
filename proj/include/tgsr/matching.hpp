#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "tgsr/text_encoder.hpp"

namespace tgsr {

/// Smoothing factors of the word/region matching chain.
struct MatchingConfig {
    double gamma1 = 4.0;   // region softmax sharpening
    double gamma2 = 5.0;   // log-sum-exp over words
    double gamma3 = 10.0;  // batch posterior temperature
};

/// x [B,D,N] (one column per sub-region, N = G*G) and a global vector [B,D].
struct RegionFeatures {
    torch::Tensor regions;
    torch::Tensor global;

    RegionFeatures detached() const { return {regions.detach(), global.detach()}; }
};

/// Small strided conv tower: one stride-1 block, then stride-2 blocks until
/// the map is grid x grid, then a 1x1 projection to the shared width D.
class ImageEncoderImpl : public torch::nn::Module {
public:
    ImageEncoderImpl(std::int64_t image_size, std::int64_t grid, std::int64_t dim, std::int64_t channels = 32);

    RegionFeatures forward(const torch::Tensor& images);

    std::int64_t image_size() const { return image_size_; }
    std::int64_t grid() const { return grid_; }

private:
    std::int64_t image_size_, grid_, dim_;
    torch::nn::Sequential tower_{nullptr};
    torch::nn::Conv2d project_{nullptr};
    torch::nn::Linear global_{nullptr};
};
TORCH_MODULE(ImageEncoder);

/// All intermediate quantities of one aligned batch of (caption, image) pairs.
/// PAD word rows/columns are exactly zero.
struct MatchResult {
    torch::Tensor similarity;             // s  [B,T,N]
    torch::Tensor normalized_similarity;  // s' [B,T,N], softmax over real words
    torch::Tensor attention;              // a  [B,T,N], softmax over regions
    torch::Tensor context;                // c  [B,D,T]
    torch::Tensor relevance;              // R  [B,T]
    torch::Tensor tim;                    // [B]
};

/// s = t^T x and its word-normalized form s'. mask: [B,T] bool (real words).
std::pair<torch::Tensor, torch::Tensor> similarity_matrix(const torch::Tensor& words, const torch::Tensor& mask,
                                                          const torch::Tensor& regions);
/// a_i = softmax_j(gamma1 * s'_ij), c_i = sum_j a_ij x_j. Returns (a, c).
std::pair<torch::Tensor, torch::Tensor> region_context(const torch::Tensor& normalized_similarity,
                                                       const torch::Tensor& regions, const torch::Tensor& mask,
                                                       double gamma1);
/// Per-word cosine between c_i and t_i; 0 (without gradient) when either norm < 1e-8.
torch::Tensor relevance(const torch::Tensor& context, const torch::Tensor& words, const torch::Tensor& mask);
/// log sum_i exp(gamma2 * R_i) over real words.
torch::Tensor tim_from_relevance(const torch::Tensor& relevance, const torch::Tensor& mask, double gamma2);

MatchResult match(const TextFeatures& text, const RegionFeatures& image, const MatchingConfig& config);

/// Pairwise relevance of every image n with every caption m: TIM(I_n, text_m) / gamma2.
torch::Tensor pairwise_relevance(const TextFeatures& text, const RegionFeatures& image, const MatchingConfig& config);

struct BatchPosterior {
    torch::Tensor relevance;           // [M,M], rows = images, cols = captions
    torch::Tensor text_given_image;    // [M,M], each row sums to 1
    torch::Tensor image_given_text;    // [M,M], row m = distribution over images for caption m
    torch::Tensor loss;                // scalar, -sum log P(text_n|I_n) - sum log P(I_n|text_n)
};

BatchPosterior tic_from_relevance(const torch::Tensor& relevance, double gamma3);
BatchPosterior tic_loss(const TextFeatures& text, const RegionFeatures& image, const MatchingConfig& config);

// ---------------------------------------------------------------------------
// R-precision

struct RankRow {
    std::int64_t index = 0;  // image index == true caption index
    double score = 0.0;      // score of the true caption
    int rank = 0;            // 1 = true caption scored strictly above every distractor
    bool hit = false;
};

struct RPrecision {
    double value = 0.0;
    std::vector<RankRow> rows;
};

/// Scores (image, caption) index pairs in one call.
using PairScorer = std::function<std::vector<double>(std::span<const std::pair<std::int64_t, std::int64_t>>)>;

/// Image k is paired with captions[k]. For each image, `distractors` captions
/// whose text differs from the true one are drawn without replacement; a
/// tie with a distractor counts against the true caption.
RPrecision r_precision(const PairScorer& scorer, std::span<const std::string> captions, int distractors,
                       std::uint64_t seed);

/// TIM scorer over fixed images [N,3,H,W] and captions; encodes everything once.
PairScorer make_tim_scorer(TextEncoder text_encoder, ImageEncoder image_encoder, const torch::Tensor& images,
                           const TokenBatch& captions, const MatchingConfig& config);

}  // namespace tgsr
