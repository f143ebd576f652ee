#include "tgsr/generator.hpp"

#include "tgsr/errors.hpp"

namespace tgsr {

namespace nn = torch::nn;

int GeneratorConfig::stages() const {
    int n = 0;
    for (int s = scale; s > 1; s /= 2) ++n;
    return n;
}

void GeneratorConfig::validate() const {
    if (scale != 4 && scale != 8 && scale != 16) throw ConfigError("generator scale must be 4, 8 or 16");
    if (channels <= 0 || residual_blocks < 0 || text_dim <= 0 || t_max <= 0)
        throw ConfigError("generator dimensions must be positive");
}

ResidualBlockImpl::ResidualBlockImpl(std::int64_t channels) {
    conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
    return x + conv2_->forward(torch::relu(conv1_->forward(x)));
}

ConvUnitImpl::ConvUnitImpl(std::int64_t in_channels, std::int64_t channels, int residual_blocks, bool upsample) {
    conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, channels, 3).padding(1)));
    blocks_ = nn::Sequential();
    for (int i = 0; i < residual_blocks; ++i) blocks_->push_back(ResidualBlock(channels));
    register_module("blocks", blocks_);
    if (upsample)
        deconv_ = register_module(
            "deconv", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(channels, channels, 6).stride(2).padding(2)));
}

torch::Tensor ConvUnitImpl::forward(const torch::Tensor& x) {
    auto y = torch::relu(conv_->forward(x));
    if (!blocks_->is_empty()) y = blocks_->forward(y);
    if (deconv_) y = torch::relu(deconv_->forward(y));
    return y;
}

GlobalBranchImpl::GlobalBranchImpl(const GeneratorConfig& config) : config_(config) {
    config_.validate();
    const auto C = config_.channels;
    const int K = config_.stages();
    head_ = register_module("head", ConvUnit(3, C, config_.residual_blocks, true));
    for (int k = 0; k < K; ++k) {
        if (config_.use_tam) tams_.push_back(register_module("tam" + std::to_string(k), Tam(config_.text_dim, C)));
        const auto in = config_.use_tam ? 2 * C : C;
        stages_.push_back(
            register_module("stage" + std::to_string(k), ConvUnit(in, C, config_.residual_blocks, k + 1 < K)));
    }
    output_ = register_module("output", nn::Conv2d(nn::Conv2dOptions(C, 3, 3).padding(1)));
}

GlobalBranchOutput GlobalBranchImpl::forward(const torch::Tensor& lr, const std::optional<TextFeatures>& text) {
    if (lr.dim() != 4 || lr.size(1) != 3) throw ShapeError("generator expects LR images [B,3,h,w]");
    if (config_.use_tam && !text) throw ConfigError("TAM is enabled but no text features were given");

    GlobalBranchOutput out;
    auto features = head_->forward(lr);
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        out.image_features.push_back(features);
        torch::Tensor fused = features;
        if (config_.use_tam) {
            auto tam = tams_[k]->forward(*text, features);
            fused = torch::cat({features, tam.features}, 1);
            out.attention.push_back(std::move(tam));
        }
        features = stages_[k]->forward(fused);
    }
    out.coarse = output_->forward(features);
    return out;
}

RefineBranchImpl::RefineBranchImpl(const GeneratorConfig& config) : config_(config) {
    config_.validate();
    const auto C = config_.channels;
    const int K = config_.stages();
    head_ = register_module("head", ConvUnit(3, C, config_.residual_blocks, true));
    for (int k = 0; k < K; ++k)
        stages_.push_back(
            register_module("stage" + std::to_string(k), ConvUnit(2 * C, C, config_.residual_blocks, k + 1 < K)));
    output_ = register_module("output", nn::Conv2d(nn::Conv2dOptions(C, 3, 3).padding(1)));
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> RefineBranchImpl::forward(
    const torch::Tensor& lr, const std::vector<torch::Tensor>& image_features) {
    if (image_features.size() != stages_.size())
        throw ShapeError("refine branch expects " + std::to_string(stages_.size()) + " stage features, got " +
                         std::to_string(image_features.size()));
    std::vector<torch::Tensor> refine_features;
    auto features = head_->forward(lr);
    for (std::size_t k = 0; k < stages_.size(); ++k) {
        if (image_features[k].sizes() != features.sizes())
            throw ShapeError("refine branch: stage " + std::to_string(k) + " feature shape mismatch");
        refine_features.push_back(features);
        features = stages_[k]->forward(torch::cat({features, image_features[k]}, 1));
    }
    return {output_->forward(features), std::move(refine_features)};
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config) : config_(config) {
    config_.validate();
    global_ = register_module("global", GlobalBranch(config_));
    if (config_.use_refine) refine_ = register_module("refine", RefineBranch(config_));
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& lr, const std::optional<TextFeatures>& text) {
    auto g = global_->forward(lr, config_.use_tam ? text : std::nullopt);
    GeneratorOutput out;
    out.coarse = g.coarse;
    out.image_features = std::move(g.image_features);
    out.attention = std::move(g.attention);
    if (refine_) {
        auto [fine, refine_features] = refine_->forward(lr, out.image_features);
        out.fine = fine;
        out.refine_features = std::move(refine_features);
    } else {
        out.fine = out.coarse;
    }
    return out;
}

GeneratorOutput tgsr_forward(const torch::Tensor& lr, const TokenBatch& tokens, TextEncoder& text_encoder,
                             Generator& generator) {
    std::optional<TextFeatures> text;
    if (generator->config().use_tam) text = text_encoder->forward(tokens);
    return generator->forward(lr, text);
}

}  // namespace tgsr
