#include "tgsr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "tgsr/errors.hpp"

namespace tgsr {

double psnr(const Image& a, const Image& b, double peak) {
    if (!a.same_shape(b)) throw ShapeError("psnr: images differ in shape");
    if (a.data.empty()) throw ShapeError("psnr: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.data.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace {

// (H+1) x (W+1) summed-area table of f(a, b) for one channel.
template <typename F>
std::vector<double> integral(const Image& a, const Image& b, int c, F f) {
    const int H = a.height, W = a.width;
    std::vector<double> s(static_cast<std::size_t>(H + 1) * (W + 1), 0.0);
    for (int y = 0; y < H; ++y) {
        double row = 0.0;
        for (int x = 0; x < W; ++x) {
            row += f(static_cast<double>(a.at(c, y, x)), static_cast<double>(b.at(c, y, x)));
            s[static_cast<std::size_t>(y + 1) * (W + 1) + x + 1] = s[static_cast<std::size_t>(y) * (W + 1) + x + 1] + row;
        }
    }
    return s;
}

}  // namespace

double ssim(const Image& a, const Image& b, int window, double k1, double k2) {
    if (!a.same_shape(b)) throw ShapeError("ssim: images differ in shape");
    if (window < 1 || window > std::min(a.height, a.width))
        throw ShapeError("ssim: window " + std::to_string(window) + " does not fit the image");
    const double c1 = (k1 * 1.0) * (k1 * 1.0), c2 = (k2 * 1.0) * (k2 * 1.0);
    const int H = a.height, W = a.width, stride = W + 1;
    const double n = static_cast<double>(window) * window;

    double total = 0.0;
    std::size_t count = 0;
    for (int c = 0; c < a.channels; ++c) {
        const auto sa = integral(a, b, c, [](double x, double) { return x; });
        const auto sb = integral(a, b, c, [](double, double y) { return y; });
        const auto saa = integral(a, b, c, [](double x, double) { return x * x; });
        const auto sbb = integral(a, b, c, [](double, double y) { return y * y; });
        const auto sab = integral(a, b, c, [](double x, double y) { return x * y; });
        auto box = [&](const std::vector<double>& s, int y, int x) {
            const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
            const auto y1 = y0 + window, x1 = x0 + window;
            return s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0];
        };
        for (int y = 0; y + window <= H; ++y) {
            for (int x = 0; x + window <= W; ++x) {
                const double mx = box(sa, y, x) / n, my = box(sb, y, x) / n;
                const double vx = box(saa, y, x) / n - mx * mx;
                const double vy = box(sbb, y, x) / n - my * my;
                const double cov = box(sab, y, x) / n - mx * my;
                const double num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
                total += num / den;
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

std::array<double, 3> rgb_to_hsv(const std::array<double, 3>& rgb) {
    const auto [r, g, b] = rgb;
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const double delta = mx - mn;
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == r)
            h = 60.0 * std::fmod((g - b) / delta, 6.0);
        else if (mx == g)
            h = 60.0 * ((b - r) / delta + 2.0);
        else
            h = 60.0 * ((r - g) / delta + 4.0);
    }
    if (h < 0.0) h += 360.0;
    const double s = mx > 0.0 ? delta / mx : 0.0;
    return {h, s, mx};
}

double hue_distance(double h1, double h2) {
    const double d = std::fmod(std::fabs(h1 - h2), 360.0);
    return d > 180.0 ? 360.0 - d : d;
}

std::vector<std::uint8_t> erode_mask(std::span<const std::uint8_t> mask, int height, int width) {
    if (mask.size() != static_cast<std::size_t>(height) * width) throw ShapeError("erode_mask: size mismatch");
    std::vector<std::uint8_t> out(mask.size(), 0);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            bool keep = mask[static_cast<std::size_t>(y) * width + x] != 0;
            for (int dy = -1; dy <= 1 && keep; ++dy)
                for (int dx = -1; dx <= 1 && keep; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width ||
                        mask[static_cast<std::size_t>(yy) * width + xx] == 0)
                        keep = false;
                }
            out[static_cast<std::size_t>(y) * width + x] = keep ? 1 : 0;
        }
    return out;
}

std::array<double, 3> masked_mean_rgb(const Image& image, std::span<const std::uint8_t> mask) {
    if (image.channels != 3 || mask.size() != image.pixels())
        throw ShapeError("masked_mean_rgb: needs an RGB image and a mask of the same size");
    auto mean_over = [&](std::span<const std::uint8_t> m) {
        std::array<double, 3> sum{0, 0, 0};
        std::size_t n = 0;
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x)
                if (m[static_cast<std::size_t>(y) * image.width + x]) {
                    for (int c = 0; c < 3; ++c) sum[c] += image.at(c, y, x);
                    ++n;
                }
        if (n > 0)
            for (auto& v : sum) v /= static_cast<double>(n);
        return std::pair{sum, n};
    };
    const auto eroded = erode_mask(mask, image.height, image.width);
    auto [rgb, n] = mean_over(eroded);
    if (n > 0) return rgb;
    auto [raw, m] = mean_over(mask);
    if (m == 0) throw ShapeError("masked_mean_rgb: empty mask");
    return raw;
}

}  // namespace tgsr
