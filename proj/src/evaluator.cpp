#include "tgsr/evaluator.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "tgsr/errors.hpp"
#include "tgsr/generator.hpp"
#include "tgsr/matching.hpp"
#include "tgsr/metrics.hpp"

namespace tgsr {

namespace fs = std::filesystem;

void EvalReport::aggregate() {
    auto mean = [&](auto field) {
        if (rows.empty()) return 0.0;
        double s = 0.0;
        for (const auto& r : rows) s += r.*field;
        return s / static_cast<double>(rows.size());
    };
    mean_psnr = mean(&EvalRow::psnr);
    mean_ssim = mean(&EvalRow::ssim);
    mean_tim = mean(&EvalRow::tim);
    if (!ranks.empty()) {
        const auto hits = std::count_if(ranks.begin(), ranks.end(), [](const auto& r) { return r.hit; });
        r_precision = static_cast<double>(hits) / static_cast<double>(ranks.size());
    }
    if (!probes.empty()) {
        const auto changed = std::count_if(probes.begin(), probes.end(), [](const auto& p) { return p.changed; });
        probe_change_rate = static_cast<double>(changed) / static_cast<double>(probes.size());
    }
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json probe_rows = nlohmann::json::array();
    for (const auto& p : probes)
        probe_rows.push_back({{"id", p.id},
                              {"caption_a", p.caption_a},
                              {"caption_b", p.caption_b},
                              {"target_color", p.target_color},
                              {"color_a", p.color_a},
                              {"color_b", p.color_b},
                              {"hue_shift", p.hue_shift},
                              {"changed", p.changed}});
    return {{"count", rows.size()},
            {"mean_psnr", mean_psnr},
            {"mean_ssim", mean_ssim},
            {"mean_tim", mean_tim},
            {"r_precision", r_precision},
            {"probe_change_rate", probe_change_rate},
            {"probes", probe_rows},
            {"config", config}};
}

void EvalReport::write(const fs::path& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    std::ofstream(dir / "report.json") << to_json().dump(2) << '\n';
    std::ofstream out(dir / "rows.jsonl");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        nlohmann::json row{{"id", rows[i].id}, {"psnr", rows[i].psnr}, {"ssim", rows[i].ssim}, {"tim", rows[i].tim}};
        if (i < ranks.size()) {
            row["rank"] = ranks[i].rank;
            row["hit"] = ranks[i].hit;
        }
        out << row.dump() << '\n';
    }
    if (!out) throw IoError("failed writing " + (dir / "rows.jsonl").string());
}

SrFunction model_sr(TgsrModels& models) {
    return [&models](const torch::Tensor& lr, const TokenBatch& tokens) {
        return tgsr_forward(lr, tokens, models.encoders.text, models.generator).fine;
    };
}

EvalReport evaluate_outputs(const SrFunction& sr, const EncoderBundle& encoders, const SplitTensors& split,
                            const TrainConfig& config, const EvalOptions& options) {
    if (split.size() == 0) throw EmptyBatchError("evaluate: empty split");
    torch::NoGradGuard no_grad;
    EvalReport report;
    report.config = config.to_json();

    const auto tokens = tokenize_batch(split.captions, encoders.vocab, config.t_max);
    auto text_encoder = encoders.text;
    auto image_encoder = encoders.image;
    const auto n = static_cast<std::int64_t>(split.size());
    const std::int64_t bs = std::max(1, options.batch_size);
    std::vector<torch::Tensor> outputs;
    for (std::int64_t start = 0; start < n; start += bs) {
        const auto len = std::min(bs, n - start);
        const TokenBatch batch{tokens.ids.narrow(0, start, len), tokens.lengths.narrow(0, start, len)};
        auto out = sr(split.lr.narrow(0, start, len), batch).clamp(0.0, 1.0);
        if (out.sizes() != split.gt.narrow(0, start, len).sizes())
            throw ShapeError("evaluate: SR output shape does not match the ground truth");
        const auto text = text_encoder->forward(batch);
        const auto tim = match(text, image_encoder->forward(out), config.matching).tim;
        for (std::int64_t i = 0; i < len; ++i) {
            const auto k = static_cast<std::size_t>(start + i);
            const Image fake = from_tensor(out[i]);
            const Image real = from_tensor(split.gt[start + i]);
            report.rows.push_back({split.ids[k], psnr(fake, real), ssim(fake, real), tim[i].item<double>()});
        }
        outputs.push_back(out);
    }

    if (options.distractors > 0 && static_cast<std::int64_t>(options.distractors) < n) {
        const auto images = torch::cat(outputs);
        const auto scorer = make_tim_scorer(encoders.text, encoders.image, images, tokens, config.matching);
        const auto rp = r_precision(scorer, split.captions, options.distractors, options.seed);
        for (const auto& row : rp.rows)
            report.ranks.push_back({split.ids[static_cast<std::size_t>(row.index)], row.score, row.rank, row.hit});
    }
    report.aggregate();
    return report;
}

EvalReport evaluate(const Checkpoint& tgsr, const DatasetManifest& manifest, Split split,
                    const std::optional<Checkpoint>& encoder_checkpoint, const EvalOptions& options) {
    TgsrModels models = load_tgsr(tgsr);
    const auto& config = models.config;
    if (manifest.image_size != config.image_size)
        throw IncompatibleError("dataset image size " + std::to_string(manifest.image_size) +
                                " does not match the checkpoint's " + std::to_string(config.image_size));
    EncoderBundle scoring = models.encoders;
    if (encoder_checkpoint) {
        if (encoder_checkpoint->vocab.tokens() != models.encoders.vocab.tokens())
            throw IncompatibleError("encoder checkpoint vocabulary differs from the tgsr checkpoint's");
        const auto& ec = encoder_checkpoint->config;
        if (ec.dim != config.dim || ec.image_size != config.image_size || ec.grid != config.grid)
            throw IncompatibleError("encoder checkpoint geometry differs from the tgsr checkpoint's");
        scoring = load_encoders(*encoder_checkpoint);
        scoring.freeze();
    }
    const auto data = load_split(manifest, split, config.scale);
    auto report = evaluate_outputs(model_sr(models), scoring, data, config, options);
    report.config["checkpoint_step"] = tgsr.step;
    report.config["split"] = to_string(split);
    return report;
}

ProbeResult controllability_probe(TgsrModels& models, const Scene& scene, const std::string& caption_a,
                                  const std::string& caption_b) {
    const auto wa = clean_words(caption_a), wb = clean_words(caption_b);
    if (wa.size() != wb.size())
        throw ProbeDefinitionError("probe captions must have the same words except the object color");
    std::vector<std::size_t> diff;
    for (std::size_t i = 0; i < wa.size(); ++i)
        if (wa[i] != wb[i]) diff.push_back(i);
    constexpr std::size_t kColorSlot = 2;  // "a {size} {color} ..."
    if (diff.size() > 1) throw ProbeDefinitionError("probe captions differ in " + std::to_string(diff.size()) + " words");
    if (wb.size() <= kColorSlot || (!diff.empty() && diff[0] != kColorSlot))
        throw ProbeDefinitionError("probe captions may only differ in the object color word");
    const auto grammar_colors = models.config.dataset_config().grammar.colors;
    const std::string target = wb[kColorSlot];
    if (std::find(grammar_colors.begin(), grammar_colors.end(), target) == grammar_colors.end())
        throw ProbeDefinitionError("\"" + target + "\" is not a grammar color");

    torch::NoGradGuard no_grad;
    const auto lr = to_tensor(bicubic_downscale(scene.image, models.config.scale)).unsqueeze(0);
    const std::vector<std::string> captions{caption_a, caption_b};
    const auto tokens = tokenize_batch(captions, models.encoders.vocab, models.config.t_max);
    const auto fine =
        tgsr_forward(torch::cat({lr, lr}), tokens, models.encoders.text, models.generator).fine.clamp(0.0, 1.0);
    const Image out_a = from_tensor(fine[0]), out_b = from_tensor(fine[1]);
    if (out_a.height != scene.height || out_a.width != scene.width)
        throw ShapeError("probe output does not match the scene mask");

    const auto rgb_a = masked_mean_rgb(out_a, scene.mask);
    const auto rgb_b = masked_mean_rgb(out_b, scene.mask);
    auto nearest = [&](const std::array<double, 3>& rgb) {
        return nearest_color({static_cast<float>(rgb[0]), static_cast<float>(rgb[1]), static_cast<float>(rgb[2])},
                             grammar_colors)
            .name;
    };
    ProbeResult r;
    r.caption_a = caption_a;
    r.caption_b = caption_b;
    r.target_color = target;
    r.color_a = nearest(rgb_a);
    r.color_b = nearest(rgb_b);
    r.hue_shift = caption_a == caption_b ? 0.0 : hue_distance(rgb_to_hsv(rgb_a)[0], rgb_to_hsv(rgb_b)[0]);
    r.changed = r.color_b == target;
    return r;
}

std::vector<ProbeCase> make_probe_set(const DatasetManifest& manifest, Split split, const GrammarConfig& grammar,
                                      int count, std::uint64_t seed) {
    auto ids = manifest.ids(split);
    if (count < 1 || static_cast<std::size_t>(count) > ids.size())
        throw ConfigError("probe set of " + std::to_string(count) + " needs at least that many " + to_string(split) +
                          " items");
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::vector<ProbeCase> out;
    for (int i = 0; i < count; ++i) {
        const auto& rec = manifest.find(ids[static_cast<std::size_t>(i)]);
        std::vector<std::string> options;
        for (const auto& c : grammar.colors)
            if (c != rec.attributes.object_color && c != rec.attributes.background_color) options.push_back(c);
        if (options.empty()) throw ConfigError("grammar has no color to swap in for " + rec.id);
        std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
        auto edited = rec.attributes;
        edited.object_color = options[pick(rng)];
        out.push_back({rec.id, rec.seed, render_caption(rec.attributes), render_caption(edited)});
    }
    return out;
}

std::vector<ProbeResult> run_probes(TgsrModels& models, const std::vector<ProbeCase>& probes,
                                    const GrammarConfig& grammar) {
    std::vector<ProbeResult> out;
    for (const auto& p : probes) {
        const Scene scene = generate_scene(p.scene_seed, grammar);
        auto r = controllability_probe(models, scene, p.caption_a, p.caption_b);
        r.id = p.id;
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<AblationRung> ablation_ladder() {
    AblationFlags f{false, false, false, false, false};
    std::vector<AblationRung> rungs;
    rungs.push_back({"baseline", f});
    f.use_cgan = true;
    f.use_tam = true;
    rungs.push_back({"+tam", f});
    f.use_tic = true;
    rungs.push_back({"+tic", f});
    f.use_refine = true;
    rungs.push_back({"+refine", f});
    f.use_tar = true;
    rungs.push_back({"+tar", f});
    return rungs;
}

std::vector<AblationResult> run_ablation(const TrainConfig& base, const SplitTensors& train,
                                         const SplitTensors& test, const Checkpoint& encoders,
                                         const std::vector<AblationRung>& rungs, const TrainOptions& options) {
    std::vector<AblationResult> results;
    for (const auto& rung : rungs) {
        TrainConfig config = base;
        config.ablation = rung.flags;
        config.ablation.use_cgan = rung.flags.use_cgan && base.ablation.use_cgan;
        TrainOptions rung_options = options;
        if (!options.out_dir.empty()) rung_options.out_dir = options.out_dir / rung.name;
        if (options.progress) *options.progress << "ablation rung " << rung.name << '\n';
        auto trained = train_tgsr_on(config, train, encoders, rung_options);
        TgsrModels models = load_tgsr(trained.checkpoint);
        const auto report = evaluate_outputs(model_sr(models), models.encoders, test, config, {25, 0, config.seed});
        results.push_back({rung.name, report.mean_psnr, report.mean_ssim, report.mean_tim});
    }
    return results;
}

}  // namespace tgsr
