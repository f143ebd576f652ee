#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tgsr/errors.hpp"
#include "tgsr/metrics.hpp"

using namespace tgsr;

namespace {

Image noise(int c, int h, int w, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image img(c, h, w);
    for (auto& v : img.data) v = u(rng);
    return img;
}

// Every window summed from scratch.
double ssim_oracle(const Image& a, const Image& b, int win) {
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03, n = win * win;
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int y0 = 0; y0 + win <= a.height; ++y0)
            for (int x0 = 0; x0 + win <= a.width; ++x0) {
                double ma = 0, mb = 0;
                for (int y = y0; y < y0 + win; ++y)
                    for (int x = x0; x < x0 + win; ++x) {
                        ma += a.at(c, y, x);
                        mb += b.at(c, y, x);
                    }
                ma /= n;
                mb /= n;
                double va = 0, vb = 0, cov = 0;
                for (int y = y0; y < y0 + win; ++y)
                    for (int x = x0; x < x0 + win; ++x) {
                        const double da = a.at(c, y, x) - ma, db = b.at(c, y, x) - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

}  // namespace

TEST(Psnr, ClosedFormCases) {
    const Image zero(3, 4, 4, 0.0f), half(3, 4, 4, 0.5f);
    EXPECT_NEAR(psnr(zero, half), 6.0206, 1e-4);
    EXPECT_NEAR(psnr(zero, half), 10.0 * std::log10(4.0), 1e-12);
    EXPECT_EQ(psnr(half, half), 99.0);
    EXPECT_NEAR(psnr(zero, half, 255.0), 10.0 * std::log10(255.0 * 255.0 / 0.25), 1e-9);
}

TEST(Psnr, DoublingTheErrorCostsSixDecibels) {
    const auto base = noise(3, 8, 8, 1);
    Image a = base, b = base;
    std::mt19937 rng(2);
    std::uniform_real_distribution<float> u(-0.1f, 0.1f);
    for (std::size_t i = 0; i < base.data.size(); ++i) {
        const float e = u(rng);
        a.data[i] = base.data[i] + e;
        b.data[i] = base.data[i] + 2.0f * e;
    }
    EXPECT_NEAR(psnr(base, a) - psnr(base, b), 20.0 * std::log10(2.0), 1e-4);
}

TEST(Psnr, SymmetricAndShapeChecked) {
    const auto a = noise(3, 5, 5, 3), b = noise(3, 5, 5, 4);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_THROW(psnr(a, noise(3, 5, 6, 5)), ShapeError);
}

TEST(Ssim, MatchesDirectSummationOracle) {
    const auto a = noise(3, 16, 16, 5), b = noise(3, 16, 16, 6);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b, 8), 1e-4);
    Image c = a;
    for (auto& v : c.data) v = 0.8f * v + 0.1f;
    EXPECT_NEAR(ssim(a, c), ssim_oracle(a, c, 8), 1e-4);
}

TEST(Ssim, IdentitySymmetryAndInversion) {
    const auto a = noise(3, 16, 16, 7), b = noise(3, 16, 16, 8);
    EXPECT_EQ(ssim(a, a), 1.0);
    EXPECT_EQ(ssim(a, b), ssim(b, a));
    Image inv = a;
    for (auto& v : inv.data) v = 1.0f - v;
    EXPECT_LT(ssim(a, inv), 1.0);
    EXPECT_GE(ssim(a, inv), -1.0);
    EXPECT_THROW(ssim(a, noise(3, 16, 15, 9)), ShapeError);
    EXPECT_THROW(ssim(noise(3, 4, 4, 1), noise(3, 4, 4, 2)), ShapeError);
}

TEST(Hue, HsvConversionKnownColors) {
    auto h = [](double r, double g, double b) { return rgb_to_hsv({r, g, b}); };
    EXPECT_DOUBLE_EQ(h(1, 0, 0)[0], 0.0);
    EXPECT_DOUBLE_EQ(h(0, 1, 0)[0], 120.0);
    EXPECT_DOUBLE_EQ(h(0, 0, 1)[0], 240.0);
    EXPECT_DOUBLE_EQ(h(1, 1, 0)[0], 60.0);
    EXPECT_DOUBLE_EQ(h(1, 0, 1)[0], 300.0);
    EXPECT_DOUBLE_EQ(h(0.5, 0.5, 0.5)[1], 0.0);
    EXPECT_DOUBLE_EQ(h(0.5, 0.25, 0.25)[2], 0.5);
    EXPECT_DOUBLE_EQ(hue_distance(350.0, 10.0), 20.0);
    EXPECT_DOUBLE_EQ(hue_distance(0.0, 180.0), 180.0);
    EXPECT_DOUBLE_EQ(hue_distance(90.0, 90.0), 0.0);
}

TEST(Hue, ErosionDropsTheBoundaryRing) {
    std::vector<std::uint8_t> mask(25, 0);
    for (int y = 1; y < 4; ++y)
        for (int x = 1; x < 4; ++x) mask[static_cast<std::size_t>(y) * 5 + x] = 1;
    const auto eroded = erode_mask(mask, 5, 5);
    for (int i = 0; i < 25; ++i) EXPECT_EQ(eroded[static_cast<std::size_t>(i)], i == 12 ? 1 : 0);

    Image img(3, 5, 5, 0.0f);
    img.at(0, 2, 2) = 1.0f;  // red centre, black ring
    const auto rgb = masked_mean_rgb(img, mask);
    EXPECT_DOUBLE_EQ(rgb[0], 1.0);
    std::vector<std::uint8_t> thin(25, 0);
    thin[7] = 1;
    img.at(1, 1, 2) = 1.0f;
    EXPECT_DOUBLE_EQ(masked_mean_rgb(img, thin)[1], 1.0);  // falls back to the raw mask
    EXPECT_THROW(masked_mean_rgb(img, std::vector<std::uint8_t>(25, 0)), ShapeError);
}
