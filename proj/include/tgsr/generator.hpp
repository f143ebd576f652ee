#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "tgsr/tam.hpp"
#include "tgsr/text_encoder.hpp"

namespace tgsr {

struct GeneratorConfig {
    int scale = 8;          // 4, 8 or 16; one x2 stage per octave
    int channels = 64;
    int residual_blocks = 2;
    int text_dim = 64;
    int t_max = 16;
    bool use_tam = true;     // false: text-free baseline
    bool use_refine = true;  // false: the coarse image is the final output

    int stages() const;
    void validate() const;
};

struct GeneratorOutput {
    torch::Tensor coarse;                        // I_HR_G [B,3,S*h,S*w]
    torch::Tensor fine;                          // I_HR, equals coarse when the refine branch is off
    std::vector<torch::Tensor> image_features;   // F_im per stage
    std::vector<torch::Tensor> refine_features;  // F_H_im per stage
    std::vector<TamOutput> attention;            // one per stage when TAM is on
};

/// conv -> ReLU -> conv, plus identity.
class ResidualBlockImpl : public torch::nn::Module {
public:
    explicit ResidualBlockImpl(std::int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Convolution + ReLU followed by residual blocks; optionally a 6x6 stride-2
/// deconvolution + ReLU that doubles the resolution.
class ConvUnitImpl : public torch::nn::Module {
public:
    ConvUnitImpl(std::int64_t in_channels, std::int64_t channels, int residual_blocks, bool upsample);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv_{nullptr};
    torch::nn::Sequential blocks_{nullptr};
    torch::nn::ConvTranspose2d deconv_{nullptr};
};
TORCH_MODULE(ConvUnit);

struct GlobalBranchOutput {
    torch::Tensor coarse;
    std::vector<torch::Tensor> image_features;
    std::vector<TamOutput> attention;
};

class GlobalBranchImpl : public torch::nn::Module {
public:
    explicit GlobalBranchImpl(const GeneratorConfig& config);
    /// `text` may be empty when TAM is disabled.
    GlobalBranchOutput forward(const torch::Tensor& lr, const std::optional<TextFeatures>& text);

private:
    GeneratorConfig config_;
    ConvUnit head_{nullptr};
    std::vector<Tam> tams_;
    std::vector<ConvUnit> stages_;
    torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(GlobalBranch);

class RefineBranchImpl : public torch::nn::Module {
public:
    explicit RefineBranchImpl(const GeneratorConfig& config);
    /// Returns (I_HR, F_H_im per stage).
    std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(const torch::Tensor& lr,
                                                                 const std::vector<torch::Tensor>& image_features);

private:
    GeneratorConfig config_;
    ConvUnit head_{nullptr};
    std::vector<ConvUnit> stages_;
    torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(RefineBranch);

class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const GeneratorConfig& config);

    GeneratorOutput forward(const torch::Tensor& lr, const std::optional<TextFeatures>& text);

    const GeneratorConfig& config() const { return config_; }
    GlobalBranch& global_branch() { return global_; }

private:
    GeneratorConfig config_;
    GlobalBranch global_{nullptr};
    RefineBranch refine_{nullptr};
};
TORCH_MODULE(Generator);

/// encode_text -> global branch -> refine branch.
GeneratorOutput tgsr_forward(const torch::Tensor& lr, const TokenBatch& tokens, TextEncoder& text_encoder,
                             Generator& generator);

}  // namespace tgsr
