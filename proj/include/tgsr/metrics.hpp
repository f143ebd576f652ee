#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tgsr/image.hpp"

namespace tgsr {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(peak^2 / MSE) with MSE over all channels and pixels; capped at 99 dB.
double psnr(const Image& a, const Image& b, double peak = 1.0);

/// Mean local SSIM over every window x window position (stride 1) of every
/// channel, uniform window weights, population variances, dynamic range 1.
double ssim(const Image& a, const Image& b, int window = 8, double k1 = 0.01, double k2 = 0.03);

/// Hue in degrees [0,360), saturation and value in [0,1].
std::array<double, 3> rgb_to_hsv(const std::array<double, 3>& rgb);

/// Smallest angle between two hues, in [0,180].
double hue_distance(double h1, double h2);

/// Removes every mask pixel with a 3x3 neighbour outside the mask (or outside the image).
std::vector<std::uint8_t> erode_mask(std::span<const std::uint8_t> mask, int height, int width);

/// Mean RGB over the 1-pixel-eroded mask; falls back to the raw mask when erosion empties it.
std::array<double, 3> masked_mean_rgb(const Image& image, std::span<const std::uint8_t> mask);

}  // namespace tgsr
