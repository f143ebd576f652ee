#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"
#include "tgsr/errors.hpp"
#include "tgsr/evaluator.hpp"
#include "tgsr/metrics.hpp"

using namespace tgsr;

namespace {

const SplitTensors& test_split() {
    static const SplitTensors split = load_split(fixtures::small_corpus(12, 3, 4), Split::Test, 8);
    return split;
}

EncoderBundle encoders() {
    auto e = load_encoders(fixtures::tiny_encoders());
    e.freeze();
    return e;
}

SrFunction bicubic_sr() {
    return [](const torch::Tensor& lr, const TokenBatch&) {
        std::vector<Image> up;
        for (std::int64_t i = 0; i < lr.size(0); ++i) up.push_back(bicubic_resize(from_tensor(lr[i]), 64, 64));
        return stack_images(up);
    };
}

}  // namespace

TEST(Evaluate, GroundTruthStubScoresPerfectly) {
    const auto& split = test_split();
    const SrFunction identity = [&](const torch::Tensor&, const TokenBatch&) { return split.gt; };
    const auto report = evaluate_outputs(identity, encoders(), split, fixtures::tiny_config(),
                                         {static_cast<int>(split.size()), 2, 0});
    ASSERT_EQ(report.rows.size(), split.size());
    for (const auto& r : report.rows) {
        EXPECT_EQ(r.psnr, kPsnrCap);
        EXPECT_EQ(r.ssim, 1.0);
    }
    EXPECT_EQ(report.ranks.size(), split.size());
    EXPECT_GE(report.r_precision, 0.0);
}

TEST(Evaluate, BicubicStubIsWorseAndAggregatesAreRowMeans) {
    const auto& split = test_split();
    const auto report = evaluate_outputs(bicubic_sr(), encoders(), split, fixtures::tiny_config(), {3, 0, 0});
    double psnr_sum = 0, ssim_sum = 0, tim_sum = 0;
    for (const auto& r : report.rows) {
        EXPECT_LT(r.psnr, kPsnrCap);
        EXPECT_LT(r.ssim, 1.0);
        psnr_sum += r.psnr;
        ssim_sum += r.ssim;
        tim_sum += r.tim;
    }
    const double n = static_cast<double>(report.rows.size());
    EXPECT_NEAR(report.mean_psnr, psnr_sum / n, 1e-12);
    EXPECT_NEAR(report.mean_ssim, ssim_sum / n, 1e-12);
    EXPECT_NEAR(report.mean_tim, tim_sum / n, 1e-12);
    EXPECT_EQ(report.r_precision, -1.0);
    EXPECT_TRUE(report.ranks.empty());
}

TEST(Evaluate, BatchSizeDoesNotChangeScores) {
    const auto& split = test_split();
    const auto a = evaluate_outputs(bicubic_sr(), encoders(), split, fixtures::tiny_config(), {1, 0, 0});
    const auto b = evaluate_outputs(bicubic_sr(), encoders(), split, fixtures::tiny_config(), {4, 0, 0});
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].psnr, b.rows[i].psnr);
        EXPECT_NEAR(a.rows[i].tim, b.rows[i].tim, 1e-5);
    }
}

TEST(Evaluate, WrongOutputShapeThrows) {
    const SrFunction bad = [](const torch::Tensor& lr, const TokenBatch&) { return lr; };
    EXPECT_THROW(evaluate_outputs(bad, encoders(), test_split(), fixtures::tiny_config()), ShapeError);
}

TEST(Evaluate, ReportFilesCarryRowsAndAggregates) {
    const auto& m = fixtures::small_corpus(12, 3, 4);
    const auto report = evaluate(fixtures::tiny_tgsr(), m, Split::Test, fixtures::tiny_encoders(), {25, 2, 0});
    const auto dir = fixtures::temp_dir("eval_report");
    report.write(dir);
    std::ifstream in(dir / "report.json");
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("count"), 4);
    EXPECT_DOUBLE_EQ(j.at("mean_psnr").get<double>(), report.mean_psnr);
    EXPECT_EQ(j.at("config").at("split"), "test");
    std::ifstream rows(dir / "rows.jsonl");
    int n = 0;
    for (std::string line; std::getline(rows, line); ++n) {
        const auto row = nlohmann::json::parse(line);
        EXPECT_TRUE(row.contains("psnr") && row.contains("ssim") && row.contains("tim") && row.contains("rank"));
    }
    EXPECT_EQ(n, 4);
}

TEST(Evaluate, RejectsForeignEncoders) {
    const auto& m = fixtures::small_corpus(12, 3, 4);
    auto cfg = fixtures::tiny_config();
    cfg.dim = 6;
    cfg.pretrain_steps = 1;
    const auto other = pretrain_encoders(cfg, m).checkpoint;
    EXPECT_THROW(evaluate(fixtures::tiny_tgsr(), m, Split::Test, other), IncompatibleError);
}

TEST(Probe, IdenticalCaptionsGiveZeroShift) {
    auto models = load_tgsr(fixtures::tiny_tgsr());
    const auto grammar = models.config.dataset_config().grammar;
    const auto scene = generate_scene(3, grammar);
    const auto r = controllability_probe(models, scene, scene.caption, scene.caption);
    EXPECT_EQ(r.hue_shift, 0.0);
    EXPECT_EQ(r.color_a, r.color_b);
    EXPECT_EQ(r.target_color, scene.attributes.object_color);
}

TEST(Probe, MalformedEditsAreRejected) {
    auto models = load_tgsr(fixtures::tiny_tgsr());
    const auto grammar = models.config.dataset_config().grammar;
    const auto scene = generate_scene(3, grammar);
    auto two = scene.attributes;
    two.object_color = two.object_color == "red" ? "blue" : "red";
    two.shape = two.shape == "circle" ? "square" : "circle";
    EXPECT_THROW(controllability_probe(models, scene, scene.caption, render_caption(two)), ProbeDefinitionError);
    auto size = scene.attributes;
    size.size = size.size == "small" ? "large" : "small";
    EXPECT_THROW(controllability_probe(models, scene, scene.caption, render_caption(size)), ProbeDefinitionError);
    EXPECT_THROW(controllability_probe(models, scene, scene.caption, scene.caption + " today"), ProbeDefinitionError);
}

TEST(Probe, ProbeSetSwapsOnlyTheObjectColor) {
    const auto& m = fixtures::small_corpus(12, 3, 4);
    const GrammarConfig grammar;
    const auto set = make_probe_set(m, Split::Train, grammar, 10, 4);
    ASSERT_EQ(set.size(), 10u);
    for (const auto& p : set) {
        const auto a = parse_caption(p.caption_a, grammar), b = parse_caption(p.caption_b, grammar);
        const auto& rec = m.find(p.id);
        EXPECT_EQ(p.scene_seed, rec.seed);
        EXPECT_NE(b.object_color, a.object_color);
        EXPECT_NE(b.object_color, rec.attributes.background_color);
        EXPECT_EQ(a.shape, b.shape);
        EXPECT_EQ(a.size, b.size);
    }
    const auto again = make_probe_set(m, Split::Train, grammar, 10, 4);
    for (std::size_t i = 0; i < set.size(); ++i) EXPECT_EQ(set[i].caption_b, again[i].caption_b);
    EXPECT_THROW(make_probe_set(m, Split::Test, grammar, 5, 0), ConfigError);
}

TEST(Probe, RunProbesReportsEveryProbe) {
    auto models = load_tgsr(fixtures::tiny_tgsr());
    const auto& m = fixtures::small_corpus(12, 3, 4);
    const auto grammar = models.config.dataset_config().grammar;
    const auto results = run_probes(models, make_probe_set(m, Split::Test, grammar, 4, 1), grammar);
    ASSERT_EQ(results.size(), 4u);
    for (const auto& r : results) {
        EXPECT_EQ(r.changed, r.color_b == r.target_color);
        EXPECT_GE(r.hue_shift, 0.0);
        EXPECT_LE(r.hue_shift, 180.0);
    }
}

TEST(Ablation, LadderAddsOneComponentPerRung) {
    const auto rungs = ablation_ladder();
    ASSERT_EQ(rungs.size(), 5u);
    EXPECT_EQ(rungs[0].name, "baseline");
    EXPECT_FALSE(rungs[0].flags.use_cgan);
    for (std::size_t i = 1; i < rungs.size(); ++i) EXPECT_TRUE(rungs[i].flags.use_cgan);
    auto count = [](const AblationFlags& f) { return f.use_tam + f.use_tic + f.use_refine + f.use_tar; };
    for (std::size_t i = 0; i < rungs.size(); ++i) EXPECT_EQ(count(rungs[i].flags), static_cast<int>(i));
}

TEST(Ablation, EveryRungTrainsAndEvaluates) {
    const auto& m = fixtures::small_corpus(12, 3, 4);
    auto cfg = fixtures::tiny_config();
    cfg.train_steps = 1;
    const auto results = run_ablation(cfg, load_split(m, Split::Train, 8), test_split(), fixtures::tiny_encoders(),
                                      ablation_ladder());
    ASSERT_EQ(results.size(), 5u);
    for (const auto& r : results) {
        EXPECT_TRUE(std::isfinite(r.mean_psnr));
        EXPECT_TRUE(std::isfinite(r.mean_tim));
    }
}
