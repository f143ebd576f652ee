#pragma once

#include <cstdint>

#include <torch/torch.h>

#include "tgsr/text_encoder.hpp"

namespace tgsr {

/// M_attn [B,T_max,H,W] (PAD slots exactly zero; real slots sum to 1 at each
/// location) and the text-embedded image feature F_attn [B,C,H,W].
struct TamOutput {
    torch::Tensor word_maps;
    torch::Tensor features;
};

/// Text attention module: words are projected into the image channel space
/// (linear, no bias), every (word, location) pair is scored by inner product,
/// scores are softmax-normalized over the real words at each location, and
/// F_attn(h,w) = sum_i M[i,h,w] * projected_word_i.
class TamImpl : public torch::nn::Module {
public:
    TamImpl(std::int64_t text_dim, std::int64_t channels);

    TamOutput forward(const TextFeatures& text, const torch::Tensor& image_features);

    const torch::Tensor& projection() const { return projection_; }

private:
    std::int64_t text_dim_, channels_;
    torch::Tensor projection_;  // [C,D]
};
TORCH_MODULE(Tam);

}  // namespace tgsr
