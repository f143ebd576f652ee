#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "tgsr/errors.hpp"
#include "tgsr/matching.hpp"

using namespace tgsr;

namespace {

struct LoopChain {
    // Indexed [i][j] for word i, region j of one pair.
    std::vector<std::vector<double>> s, s_norm, a;
    std::vector<double> relevance;
    double tim = 0.0;
};

// Scalar re-derivation of the matching chain for one (caption, image) pair.
LoopChain loop_chain(const torch::Tensor& words, std::int64_t length, const torch::Tensor& regions,
                     const MatchingConfig& cfg) {
    const auto t = words.accessor<double, 2>();    // [D,T]
    const auto x = regions.accessor<double, 2>();  // [D,N]
    const auto D = words.size(0), N = regions.size(1);
    LoopChain r;
    r.s.assign(length, std::vector<double>(N));
    for (std::int64_t i = 0; i < length; ++i)
        for (std::int64_t j = 0; j < N; ++j) {
            double acc = 0.0;
            for (std::int64_t d = 0; d < D; ++d) acc += t[d][i] * x[d][j];
            r.s[i][j] = acc;
        }
    r.s_norm = r.s;
    for (std::int64_t j = 0; j < N; ++j) {
        double z = 0.0;
        for (std::int64_t i = 0; i < length; ++i) z += std::exp(r.s[i][j]);
        for (std::int64_t i = 0; i < length; ++i) r.s_norm[i][j] = std::exp(r.s[i][j]) / z;
    }
    r.a = r.s_norm;
    double lse = 0.0;
    for (std::int64_t i = 0; i < length; ++i) {
        double z = 0.0;
        for (std::int64_t j = 0; j < N; ++j) z += std::exp(cfg.gamma1 * r.s_norm[i][j]);
        for (std::int64_t j = 0; j < N; ++j) r.a[i][j] = std::exp(cfg.gamma1 * r.s_norm[i][j]) / z;
        double dot = 0.0, nc = 0.0, nt = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double c = 0.0;
            for (std::int64_t j = 0; j < N; ++j) c += r.a[i][j] * x[d][j];
            dot += c * t[d][i];
            nc += c * c;
            nt += t[d][i] * t[d][i];
        }
        const double rel = dot / (std::sqrt(nc) * std::sqrt(nt));
        r.relevance.push_back(rel);
        lse += std::exp(cfg.gamma2 * rel);
    }
    r.tim = std::log(lse);
    return r;
}

struct Fixture {
    TextFeatures text;
    RegionFeatures image;
};

Fixture random_fixture(std::mt19937& rng, std::int64_t B = -1) {
    std::uniform_int_distribution<int> small(1, 5);
    if (B < 0) B = small(rng);
    const std::int64_t D = small(rng) + 1, T = small(rng) + 1, N = small(rng) + 1;
    std::uniform_int_distribution<std::int64_t> len(1, T);
    std::vector<std::int64_t> lengths;
    for (std::int64_t b = 0; b < B; ++b) lengths.push_back(len(rng));
    auto text = fixtures::random_text(B, D, T, lengths);
    return {text, {torch::randn({B, D, N}, torch::kFloat64), torch::randn({B, D}, torch::kFloat64)}};
}

}  // namespace

TEST(MatchingNormalization, ColumnsAttentionAndPosteriorsSumToOne) {
    std::mt19937 rng(11);
    torch::manual_seed(11);
    const MatchingConfig cfg;
    for (int trial = 0; trial < 100; ++trial) {
        const auto fx = random_fixture(rng);
        const auto r = match(fx.text, fx.image, cfg);
        const auto mask = fx.text.word_mask().narrow(1, 0, r.similarity.size(1));
        const auto col_sums = r.normalized_similarity.sum(1);  // [B,N]
        ASSERT_LT((col_sums - 1.0).abs().max().item<double>(), 1e-5);
        const auto row_sums = r.attention.sum(2);  // [B,T]
        const auto expected = mask.to(torch::kFloat64);
        ASSERT_LT((row_sums - expected).abs().max().item<double>(), 1e-5);
        const auto post = tic_loss(fx.text, fx.image, cfg);
        ASSERT_LT((post.text_given_image.sum(1) - 1.0).abs().max().item<double>(), 1e-5);
        ASSERT_LT((post.image_given_text.sum(1) - 1.0).abs().max().item<double>(), 1e-5);
    }
}

TEST(MatchingOracle, ChainAgreesWithScalarLoops) {
    std::mt19937 rng(12);
    torch::manual_seed(12);
    const MatchingConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        const auto fx = random_fixture(rng);
        const auto r = match(fx.text, fx.image, cfg);
        for (std::int64_t b = 0; b < fx.text.words.size(0); ++b) {
            const auto len = fx.text.lengths[b].item<std::int64_t>();
            const auto oracle = loop_chain(fx.text.words[b], len, fx.image.regions[b], cfg);
            for (std::int64_t i = 0; i < len; ++i) {
                for (std::int64_t j = 0; j < fx.image.regions.size(2); ++j) {
                    ASSERT_NEAR(r.similarity[b][i][j].item<double>(), oracle.s[i][j], 1e-6);
                    ASSERT_NEAR(r.normalized_similarity[b][i][j].item<double>(), oracle.s_norm[i][j], 1e-6);
                    ASSERT_NEAR(r.attention[b][i][j].item<double>(), oracle.a[i][j], 1e-6);
                }
                ASSERT_NEAR(r.relevance[b][i].item<double>(), oracle.relevance[i], 1e-6);
            }
            ASSERT_NEAR(r.tim[b].item<double>(), oracle.tim, 1e-6);
        }
    }
}

TEST(MatchingOracle, TicLossAgreesWithScalarPosterior) {
    std::mt19937 rng(13);
    torch::manual_seed(13);
    const MatchingConfig cfg;
    const auto fx = random_fixture(rng, 4);
    const auto M = 4;
    std::vector<std::vector<double>> rel(M, std::vector<double>(M));
    for (int n = 0; n < M; ++n)
        for (int m = 0; m < M; ++m)
            rel[n][m] = loop_chain(fx.text.words[m], fx.text.lengths[m].item<std::int64_t>(), fx.image.regions[n], cfg).tim /
                        cfg.gamma2;
    double loss = 0.0;
    for (int n = 0; n < M; ++n) {
        double z_row = 0.0, z_col = 0.0;
        for (int k = 0; k < M; ++k) {
            z_row += std::exp(cfg.gamma3 * rel[n][k]);
            z_col += std::exp(cfg.gamma3 * rel[k][n]);
        }
        loss -= std::log(std::exp(cfg.gamma3 * rel[n][n]) / z_row);
        loss -= std::log(std::exp(cfg.gamma3 * rel[n][n]) / z_col);
    }
    const auto post = tic_loss(fx.text, fx.image, cfg);
    EXPECT_NEAR(post.loss.item<double>(), loss, 1e-6);
    for (int n = 0; n < M; ++n)
        for (int m = 0; m < M; ++m) EXPECT_NEAR(post.relevance[n][m].item<double>(), rel[n][m], 1e-6);
}

TEST(Matching, TimIsBitwiseInvariantToPadding) {
    torch::manual_seed(14);
    auto text = fixtures::random_text(3, 5, 4, {2, 4, 3});
    const RegionFeatures image{torch::randn({3, 5, 6}, torch::kFloat64), torch::Tensor()};
    const auto base = match(text, image, {}).tim;
    TextFeatures padded{torch::cat({text.words, torch::zeros({3, 5, 7}, torch::kFloat64)}, 2), text.sentence,
                        text.lengths};
    EXPECT_TRUE(torch::equal(base, match(padded, image, {}).tim));
    // Garbage in PAD slots is ignored too.
    auto noisy = text.words.clone();
    noisy[0].narrow(1, 2, 2).normal_();
    EXPECT_TRUE(torch::equal(base[0], match(TextFeatures{noisy, text.sentence, text.lengths}, image, {}).tim[0]));
}

TEST(Matching, DegenerateRelevanceIsZeroWithFiniteGradient) {
    auto text = fixtures::random_text(1, 3, 2, {2});
    auto regions = torch::zeros({1, 3, 4}, torch::kFloat64).requires_grad_();
    const auto r = match(text, RegionFeatures{regions, torch::Tensor()}, {});
    EXPECT_EQ(r.relevance.abs().max().item<double>(), 0.0);
    r.tim.sum().backward();
    EXPECT_TRUE(torch::isfinite(regions.grad()).all().item<bool>());
}

TEST(Matching, ErrorsOnBadShapes) {
    auto text = fixtures::random_text(2, 3, 2, {1, 2});
    EXPECT_THROW(match(text, RegionFeatures{torch::randn({2, 4, 5}, torch::kFloat64), {}}, {}), ShapeError);
    EXPECT_THROW(match(text, RegionFeatures{torch::randn({3, 3, 5}, torch::kFloat64), {}}, {}), ShapeError);
    auto empty = text;
    empty.lengths = torch::tensor({0, 2}, torch::kInt64);
    EXPECT_THROW(match(empty, RegionFeatures{torch::randn({2, 3, 5}, torch::kFloat64), {}}, {}), EmptyCaptionError);
}

TEST(MatchingGradient, TicLossMatchesFiniteDifferences) {
    torch::manual_seed(15);
    // D=4, T=3, G=2 (four regions), three pairs.
    auto text = fixtures::random_text(3, 4, 3, {3, 2, 1});
    auto words = text.words.clone().requires_grad_();
    auto regions = torch::randn({3, 4, 4}, torch::kFloat64).requires_grad_();
    auto f = [&] {
        TextFeatures t{words, text.sentence, text.lengths};
        return tic_loss(t, RegionFeatures{regions, torch::Tensor()}, {}).loss;
    };
    EXPECT_LT(fixtures::max_gradient_error(f, {words, regions}), 1e-3);
}

TEST(MatchingGradient, ImageEncoderMatchesFiniteDifferences) {
    torch::manual_seed(16);
    ImageEncoder enc(4, 2, 4, 3);
    enc->to(torch::kFloat64);
    auto images = torch::rand({2, 3, 4, 4}, torch::kFloat64).requires_grad_();
    auto text = fixtures::random_text(2, 4, 3, {3, 2});
    auto f = [&] { return tic_loss(text, enc->forward(images), {}).loss; };
    std::vector<torch::Tensor> inputs{images};
    for (auto& p : enc->parameters()) inputs.push_back(p);
    EXPECT_LT(fixtures::max_gradient_error(f, inputs), 1e-3);
}

TEST(ImageEncoder, RegionGridAndShapeErrors) {
    ImageEncoder enc(64, 8, 16);
    const auto r = enc->forward(torch::rand({2, 3, 64, 64}));
    EXPECT_EQ(r.regions.sizes(), (std::vector<std::int64_t>{2, 16, 64}));
    EXPECT_EQ(r.global.sizes(), (std::vector<std::int64_t>{2, 16}));
    EXPECT_THROW(enc->forward(torch::rand({2, 3, 32, 32})), ShapeError);
    EXPECT_THROW(ImageEncoder(64, 6, 16), ConfigError);
}

TEST(RPrecision, StubScorersGiveExactRates) {
    std::vector<std::string> caps;
    for (int i = 0; i < 12; ++i) caps.push_back("caption " + std::to_string(i));
    using Pairs = std::span<const std::pair<std::int64_t, std::int64_t>>;
    const PairScorer perfect = [](Pairs p) {
        std::vector<double> s;
        for (auto [i, c] : p) s.push_back(i == c ? 1.0 : 0.0);
        return s;
    };
    const PairScorer constant = [](Pairs p) { return std::vector<double>(p.size(), 0.5); };
    const PairScorer inverted = [](Pairs p) {
        std::vector<double> s;
        for (auto [i, c] : p) s.push_back(i == c ? 0.0 : 1.0);
        return s;
    };
    const auto r = r_precision(perfect, caps, 9, 1);
    EXPECT_DOUBLE_EQ(r.value, 1.0);
    ASSERT_EQ(r.rows.size(), 12u);
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.rank, 1);
        EXPECT_TRUE(row.hit);
    }
    EXPECT_DOUBLE_EQ(r_precision(constant, caps, 9, 1).value, 0.0);  // ties count against the true caption
    const auto inv = r_precision(inverted, caps, 9, 1);
    EXPECT_DOUBLE_EQ(inv.value, 0.0);
    EXPECT_EQ(inv.rows[0].rank, 10);
}

TEST(RPrecision, DistractorsNeverShareTheTrueCaptionText) {
    std::vector<std::string> caps{"x", "x", "y", "z", "w"};
    using Pairs = std::span<const std::pair<std::int64_t, std::int64_t>>;
    const PairScorer check = [&](Pairs p) {
        for (std::size_t k = 0; k < p.size(); ++k)
            if (k % 3 != 0) EXPECT_NE(caps[static_cast<std::size_t>(p[k].second)], caps[static_cast<std::size_t>(p[k].first)]);
        return std::vector<double>(p.size(), 0.0);
    };
    r_precision(check, caps, 2, 3);
    EXPECT_THROW(r_precision(check, caps, 0, 3), ConfigError);
    EXPECT_THROW(r_precision(check, caps, 5, 3), ConfigError);
    EXPECT_THROW(r_precision(check, std::vector<std::string>{"a", "a", "a", "b"}, 2, 3), ConfigError);
}
