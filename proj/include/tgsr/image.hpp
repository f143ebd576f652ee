#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace tgsr {

/// Planar channels x height x width image with real values, nominally in [0,1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int c, int h, int w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
    bool same_shape(const Image& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }
    bool empty() const { return data.empty(); }

    bool operator==(const Image&) const = default;
};

Image clipped(Image image);

/// 8-bit RGB PNG encode/decode. Values are clipped to [0,1] and rounded.
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes);
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

/// Single-channel map rendered as an 8-bit grayscale PNG.
std::vector<std::uint8_t> encode_gray_png(const Image& map);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Tensor bridges. Tensors are float32, shape [C,H,W].
torch::Tensor to_tensor(const Image& image);
Image from_tensor(const torch::Tensor& chw);
/// Stacks images into [B,C,H,W]; all images must share a shape.
torch::Tensor stack_images(std::span<const Image> images);

}  // namespace tgsr
