#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace tgsr {

/// Text-conditioned discriminator: four stride-2 conv blocks with leaky
/// rectification; the sentence vector is tiled over the feature map and
/// concatenated before the last block. Returns one logit per image.
class DiscriminatorImpl : public torch::nn::Module {
public:
    DiscriminatorImpl(std::int64_t channels, std::int64_t text_dim);

    torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& sentence);

private:
    std::int64_t channels_, text_dim_;
    torch::nn::Sequential tower_{nullptr};
    torch::nn::Conv2d joint_{nullptr};
    torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Non-saturating generator objective: mean of -log sigmoid(logit).
torch::Tensor g_adv_loss(const torch::Tensor& fake_logits);

/// Matching-aware discriminator objective: BCE with targets real+matched -> 1,
/// fake+matched -> 0, real+mismatched -> 0; the mismatched mean is weighted by
/// `mismatch_weight` and the total divided by (2 + mismatch_weight).
torch::Tensor d_loss(const torch::Tensor& real_matched, const torch::Tensor& fake_matched,
                     const torch::Tensor& real_mismatched, double mismatch_weight = 0.5);

}  // namespace tgsr
