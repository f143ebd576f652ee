#include "tgsr/tam.hpp"

#include <cmath>
#include <limits>

#include "tgsr/errors.hpp"

namespace tgsr {

TamImpl::TamImpl(std::int64_t text_dim, std::int64_t channels) : text_dim_(text_dim), channels_(channels) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(text_dim));
    projection_ = register_parameter("projection", torch::empty({channels, text_dim}).uniform_(-bound, bound));
}

TamOutput TamImpl::forward(const TextFeatures& text, const torch::Tensor& image_features) {
    if (image_features.dim() != 4) throw ShapeError("TAM expects image features [B,C,H,W]");
    if (image_features.size(1) != channels_)
        throw ShapeError("TAM channel mismatch: expected " + std::to_string(channels_) + ", got " +
                         std::to_string(image_features.size(1)));
    if (text.dim() != text_dim_) throw ShapeError("TAM text width mismatch");
    if (text.words.size(0) != image_features.size(0)) throw ShapeError("TAM batch mismatch");
    if ((text.lengths < 1).any().item<bool>()) throw EmptyCaptionError("TAM: caption without real words");

    const auto B = image_features.size(0);
    const auto H = image_features.size(2), W = image_features.size(3);
    const auto t_max = text.slots();
    const auto steps = text.lengths.max().item<std::int64_t>();

    const auto words = text.words.narrow(2, 0, steps);                 // [B,D,S]
    const auto projected = torch::matmul(projection_, words);          // [B,C,S]
    const auto flat = image_features.reshape({B, channels_, H * W});   // [B,C,HW]
    auto scores = torch::bmm(projected.transpose(1, 2), flat);         // [B,S,HW]

    const auto real = text.word_mask().narrow(1, 0, steps).unsqueeze(2);  // [B,S,1]
    scores = scores.masked_fill(real.logical_not(), -std::numeric_limits<double>::infinity());
    const auto maps = torch::softmax(scores, 1);                       // [B,S,HW]
    const auto features = torch::bmm(projected, maps).reshape({B, channels_, H, W});

    auto word_maps = maps.reshape({B, steps, H, W});
    if (steps < t_max)
        word_maps = torch::cat({word_maps, torch::zeros({B, t_max - steps, H, W}, word_maps.options())}, 1);
    return {word_maps, features};
}

}  // namespace tgsr
