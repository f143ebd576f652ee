#include "tgsr/adversarial.hpp"

#include "tgsr/errors.hpp"

namespace tgsr {

namespace nn = torch::nn;

namespace {

void push_down_block(nn::Sequential& seq, std::int64_t in, std::int64_t out) {
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
}

}  // namespace

DiscriminatorImpl::DiscriminatorImpl(std::int64_t channels, std::int64_t text_dim)
    : channels_(channels), text_dim_(text_dim) {
    tower_ = nn::Sequential();
    push_down_block(tower_, 3, channels);
    push_down_block(tower_, channels, channels);
    push_down_block(tower_, channels, channels);
    register_module("tower", tower_);
    joint_ = register_module("joint", nn::Conv2d(nn::Conv2dOptions(channels + text_dim, channels, 3).stride(2).padding(1)));
    head_ = register_module("head", nn::Linear(channels, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images, const torch::Tensor& sentence) {
    if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("discriminator expects images [B,3,H,W]");
    if (sentence.dim() != 2 || sentence.size(0) != images.size(0) || sentence.size(1) != text_dim_)
        throw ShapeError("discriminator expects sentence [B," + std::to_string(text_dim_) + "]");
    auto x = tower_->forward(images);
    auto tiled = sentence.unsqueeze(2).unsqueeze(3).expand({-1, -1, x.size(2), x.size(3)});
    x = torch::leaky_relu(joint_->forward(torch::cat({x, tiled}, 1)), 0.2);
    return head_->forward(x.mean({2, 3})).squeeze(1);
}

torch::Tensor g_adv_loss(const torch::Tensor& fake_logits) {
    if (fake_logits.numel() == 0) throw EmptyBatchError("g_adv_loss: empty batch");
    return torch::softplus(-fake_logits).mean();
}

torch::Tensor d_loss(const torch::Tensor& real_matched, const torch::Tensor& fake_matched,
                     const torch::Tensor& real_mismatched, double mismatch_weight) {
    if (real_matched.numel() == 0 || fake_matched.numel() == 0 ||
        (mismatch_weight > 0.0 && real_mismatched.numel() == 0))
        throw EmptyBatchError("d_loss: empty logit batch");
    auto total = torch::softplus(-real_matched).mean() + torch::softplus(fake_matched).mean();
    if (mismatch_weight > 0.0) total = total + mismatch_weight * torch::softplus(real_mismatched).mean();
    return total / (2.0 + mismatch_weight);
}

}  // namespace tgsr
