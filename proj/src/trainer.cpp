#include "tgsr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "tgsr/errors.hpp"

namespace tgsr {

namespace fs = std::filesystem;

namespace {

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, double lr, const TrainConfig& c) {
    return torch::optim::Adam(std::move(params),
                              torch::optim::AdamOptions(lr).betas({c.beta1, c.beta2}).eps(c.eps));
}

void seed_everything(const TrainConfig& config) {
    torch::manual_seed(config.seed);
    if (config.deterministic) at::globalContext().setDeterministicAlgorithms(true, true);
}

nlohmann::json common_metadata() {
    return {{"bidirectional_merge", "sum"},
            {"tam_parameters", "per_stage"},
            {"input_range", "[0,1], no mean-centering"},
            {"tar_stage", "final"}};
}

torch::Tensor gather(const torch::Tensor& t, const std::vector<std::int64_t>& idx) {
    return t.index_select(0, torch::tensor(idx, torch::kInt64));
}

TokenBatch gather(const TokenBatch& t, const std::vector<std::int64_t>& idx) {
    return {gather(t.ids, idx), gather(t.lengths, idx)};
}

void dump_diagnostic(const fs::path& out_dir, const nlohmann::json& info) {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "diagnostic.json") << info.dump(2) << '\n';
}

}  // namespace

void EncoderBundle::freeze() {
    for (auto& p : text->parameters()) p.set_requires_grad(false);
    for (auto& p : image->parameters()) p.set_requires_grad(false);
    text->eval();
    image->eval();
}

TextEncoder make_text_encoder(const TrainConfig& config, const Vocabulary& vocab) {
    return TextEncoder(static_cast<std::int64_t>(vocab.size()), config.dim);
}

ImageEncoder make_image_encoder(const TrainConfig& config) {
    return ImageEncoder(config.image_size, config.grid, config.dim, config.encoder_channels);
}

EncoderBundle load_encoders(const Checkpoint& checkpoint) {
    EncoderBundle e{checkpoint.vocab, make_text_encoder(checkpoint.config, checkpoint.vocab),
                    make_image_encoder(checkpoint.config)};
    restore_module(checkpoint, "text", *e.text);
    restore_module(checkpoint, "image", *e.image);
    return e;
}

TgsrModels load_tgsr(const Checkpoint& checkpoint) {
    if (checkpoint.kind != "tgsr")
        throw IncompatibleError("expected a tgsr checkpoint, got kind \"" + checkpoint.kind + "\"");
    TgsrModels m;
    m.config = checkpoint.config;
    m.encoders = load_encoders(checkpoint);
    m.encoders.freeze();
    m.generator = Generator(checkpoint.config.generator_config());
    restore_module(checkpoint, "gen", *m.generator);
    m.generator->eval();
    if (checkpoint.tensors.count("disc.head.weight")) {
        m.discriminator = Discriminator(checkpoint.config.disc_channels, checkpoint.config.dim);
        restore_module(checkpoint, "disc", *m.discriminator);
        m.discriminator->eval();
    }
    return m;
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(std::min(batch_size, dataset_size)), rng_(seed), order_(dataset_size) {
    if (dataset_size == 0) throw EmptyBatchError("cannot sample batches from an empty dataset");
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::int64_t> BatchSampler::next() {
    if (cursor_ + batch_ > size_) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
    }
    std::vector<std::int64_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                  order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
}

// ---------------------------------------------------------------------------
// Encoder pretraining

PretrainResult pretrain_encoders(const TrainConfig& config, const DatasetManifest& manifest,
                                 const TrainOptions& options) {
    config.validate();
    const auto train = load_split(manifest, Split::Train, config.scale);
    const auto test = load_split(manifest, Split::Test, config.scale);
    seed_everything(config);

    PretrainResult result;
    const auto vocab = build_vocab(train.captions, config.vocab_min_count);
    auto text = make_text_encoder(config, vocab);
    auto image = make_image_encoder(config);
    const auto tokens = tokenize_batch(train.captions, vocab, config.t_max);

    std::vector<torch::Tensor> params = text->parameters();
    for (auto& p : image->parameters()) params.push_back(p);
    auto optimizer = make_adam(params, config.pretrain_lr, config);
    BatchSampler sampler(train.size(), static_cast<std::size_t>(config.pretrain_batch_size), config.seed);

    std::ofstream log;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        log.open(options.out_dir / "pretrain_log.jsonl");
    }

    for (int step = 0; step < config.pretrain_steps; ++step) {
        const auto idx = sampler.next();
        const auto features = text->forward(gather(tokens, idx));
        const auto regions = image->forward(gather(train.gt, idx));
        const auto loss = tic_loss(features, regions, config.matching).loss;
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
            dump_diagnostic(options.out_dir, {{"stage", "pretrain"},
                                              {"step", step},
                                              {"loss", std::to_string(value)},
                                              {"batch", idx},
                                              {"recent_losses", nlohmann::json(result.losses)}});
            throw TrainingError("encoder pretraining diverged at step " + std::to_string(step));
        }
        optimizer.zero_grad();
        loss.backward();
        optimizer.step();
        result.losses.push_back(value);
        if (log.is_open()) log << nlohmann::json{{"step", step}, {"tic", value}}.dump() << '\n';
        if (options.progress && (step % config.log_every == 0 || step + 1 == config.pretrain_steps))
            *options.progress << "pretrain step " << step << " tic " << value << '\n';
    }

    text->eval();
    image->eval();
    const auto test_tokens = tokenize_batch(test.captions, vocab, config.t_max);
    const auto scorer = make_tim_scorer(text, image, test.gt, test_tokens, config.matching);
    result.r_precision = r_precision(scorer, test.captions, config.distractors, config.seed).value;
    if (options.progress) *options.progress << "held-out R-precision " << result.r_precision << '\n';

    Checkpoint& c = result.checkpoint;
    c.kind = "encoders";
    c.vocab = vocab;
    c.config = config;
    c.step = config.pretrain_steps;
    store_module(c, "text", *text);
    store_module(c, "image", *image);
    c.metadata = common_metadata();
    c.metadata["r_precision"] = result.r_precision;
    c.metadata["frozen"] = true;
    if (!options.out_dir.empty()) save_checkpoint(c, options.out_dir / "encoders");
    return result;
}

// ---------------------------------------------------------------------------
// TGSR training

namespace {

Checkpoint tgsr_checkpoint(const TrainConfig& config, const EncoderBundle& enc, Generator& gen,
                           const Discriminator& disc, std::int64_t step) {
    Checkpoint c;
    c.kind = "tgsr";
    c.vocab = enc.vocab;
    c.config = config;
    c.step = step;
    store_module(c, "text", *enc.text);
    store_module(c, "image", *enc.image);
    store_module(c, "gen", *gen);
    if (disc) store_module(c, "disc", *disc);
    c.metadata = common_metadata();
    return c;
}

}  // namespace

TrainResult train_tgsr(const TrainConfig& config, const DatasetManifest& manifest, const Checkpoint& encoders,
                       const TrainOptions& options) {
    config.validate();
    return train_tgsr_on(config, load_split(manifest, Split::Train, config.scale), encoders, options);
}

TrainResult train_tgsr_on(const TrainConfig& config, const SplitTensors& train, const Checkpoint& encoders,
                          const TrainOptions& options) {
    config.validate();
    if (encoders.kind != "encoders" && encoders.kind != "tgsr")
        throw ConfigError("train_tgsr needs an encoder checkpoint");
    if (encoders.config.dim != config.dim || encoders.config.image_size != config.image_size ||
        encoders.config.grid != config.grid || encoders.config.encoder_channels != config.encoder_channels)
        throw IncompatibleError("encoder checkpoint geometry does not match the training config");
    seed_everything(config);

    TrainResult result;
    EncoderBundle enc = load_encoders(encoders);
    enc.freeze();
    result.encoder_checksum_before = module_checksum(*enc.text) ^ (module_checksum(*enc.image) * 31u);

    LossWeights weights = config.weights;
    if (!config.ablation.use_tic) weights.tic = 0.0;
    if (!config.ablation.use_cgan) weights.cgan = 0.0;

    // Frozen text features for the whole split, computed once.
    TextFeatures all_text;
    {
        torch::NoGradGuard no_grad;
        all_text = enc.text->forward(tokenize_batch(train.captions, enc.vocab, config.t_max));
    }

    Generator gen(config.generator_config());
    Discriminator disc{nullptr};
    if (weights.cgan > 0) disc = Discriminator(config.disc_channels, config.dim);
    auto opt_g = make_adam(gen->parameters(), config.lr, config);
    std::optional<torch::optim::Adam> opt_d;
    if (disc) opt_d.emplace(make_adam(disc->parameters(), config.lr, config));

    std::ofstream log;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir / "samples");
        log.open(options.out_dir / "train_log.jsonl");
    }

    BatchSampler sampler(train.size(), static_cast<std::size_t>(config.batch_size), config.seed + 1);
    const bool refine = config.ablation.use_refine;
    Checkpoint last_good = tgsr_checkpoint(config, enc, gen, disc, 0);

    for (int step = 0; step < config.train_steps; ++step) {
        const auto idx = sampler.next();
        const auto lr = gather(train.lr, idx);
        const auto gt = gather(train.gt, idx);
        const auto low = gather(train.gt_lowpass, idx);
        TextFeatures text{gather(all_text.words, idx), gather(all_text.sentence, idx), gather(all_text.lengths, idx)};

        auto out = gen->forward(lr, text);

        double d_value = 0.0;
        if (disc) {
            const auto M = lr.size(0);
            const auto fakes = torch::cat({out.coarse.detach(), out.fine.detach()}).clamp(0.0, 1.0);
            const auto real_logits = disc->forward(gt, text.sentence);
            const auto fake_logits = disc->forward(fakes, torch::cat({text.sentence, text.sentence}));
            torch::Tensor mismatched_logits;
            double mismatch_weight = 0.0;
            if (M > 1) {
                mismatched_logits = disc->forward(gt, text.sentence.roll(1, 0));
                mismatch_weight = 0.5;
            }
            const auto loss_d = d_loss(real_logits, fake_logits, mismatched_logits, mismatch_weight);
            opt_d->zero_grad();
            loss_d.backward();
            opt_d->step();
            d_value = loss_d.item<double>();
        }

        LossContext ctx;
        ctx.text = text;
        if (disc) ctx.discriminator = disc;
        if (weights.tic > 0) ctx.image_encoder = enc.image;
        ctx.matching = config.matching;
        ctx.use_tar = config.ablation.use_tar;

        const auto global = global_loss(out.coarse, refine ? low : gt, ctx, weights);
        std::optional<FineTerms> fine;
        torch::Tensor total = global.total;
        if (refine) {
            const auto maps = config.ablation.use_tar && !out.attention.empty() ? out.attention.back().word_maps
                                                                                 : torch::Tensor();
            fine = fine_loss(out.fine, gt, maps, ctx, weights);
            total = total_loss(global.total, fine->total);
        }

        auto report = make_report(step, global, fine, total);
        if (!std::isfinite(report.total) || !std::isfinite(d_value)) {
            if (!options.out_dir.empty()) save_checkpoint(last_good, options.out_dir / "last_good");
            dump_diagnostic(options.out_dir, {{"stage", "train"}, {"step", step}, {"report", report.to_json()},
                                              {"d_loss", std::to_string(d_value)}, {"batch", idx}});
            throw TrainingError("TGSR training produced a non-finite loss at step " + std::to_string(step));
        }

        opt_g.zero_grad();
        total.backward();
        opt_g.step();

        auto row = report.to_json();
        row["d_loss"] = d_value;
        if (log.is_open()) log << row.dump() << '\n';
        if (options.progress && (step % config.log_every == 0 || step + 1 == config.train_steps))
            *options.progress << "train step " << step << " total " << report.total << " l2 " << report.l2
                              << " tar " << report.tar << " tic_g " << report.tic_g << " d " << d_value << '\n';
        result.reports.push_back(report);

        const bool last = step + 1 == config.train_steps;
        if (!options.out_dir.empty() && ((step + 1) % config.sample_every == 0 || last)) {
            torch::NoGradGuard no_grad;
            write_png(sample_grid(lr, out, gt), options.out_dir / "samples" / ("step_" + std::to_string(step + 1) + ".png"));
        }
        if ((step + 1) % config.checkpoint_every == 0 || last) {
            last_good = tgsr_checkpoint(config, enc, gen, disc, step + 1);
            if (!options.out_dir.empty() && !last)
                save_checkpoint(last_good, options.out_dir / "checkpoints" / ("step_" + std::to_string(step + 1)));
        }
    }

    result.encoder_checksum_after = module_checksum(*enc.text) ^ (module_checksum(*enc.image) * 31u);
    if (result.encoder_checksum_after != result.encoder_checksum_before)
        throw TrainingError("frozen encoder weights changed during TGSR training");

    result.checkpoint = tgsr_checkpoint(config, enc, gen, disc, config.train_steps);
    result.checkpoint.metadata["encoder_checksum"] = result.encoder_checksum_after;
    result.checkpoint.metadata["encoder_r_precision"] = encoders.metadata.value("r_precision", -1.0);
    if (!options.out_dir.empty()) save_checkpoint(result.checkpoint, options.out_dir / "final");
    return result;
}

Image sample_grid(const torch::Tensor& lr, const GeneratorOutput& output, const torch::Tensor& gt) {
    namespace F = torch::nn::functional;
    const auto rows = std::min<std::int64_t>(4, gt.size(0));
    const auto H = gt.size(2), W = gt.size(3);
    const auto up = F::interpolate(lr.narrow(0, 0, rows), F::InterpolateFuncOptions()
                                                              .size(std::vector<std::int64_t>{H, W})
                                                              .mode(torch::kNearest));
    torch::Tensor attn = torch::zeros({rows, 3, H, W});
    if (!output.attention.empty()) {
        auto maps = output.attention.back().word_maps.narrow(0, 0, rows).detach();
        maps = F::interpolate(maps, F::InterpolateFuncOptions().size(std::vector<std::int64_t>{H, W}).mode(torch::kBilinear).align_corners(false));
        const auto best = maps.sum({2, 3}).argmax(1);
        std::vector<torch::Tensor> picked;
        for (std::int64_t r = 0; r < rows; ++r) {
            auto m = maps[r][best[r].item<std::int64_t>()];
            m = (m - m.min()) / (m.max() - m.min() + 1e-12);
            picked.push_back(m.unsqueeze(0).expand({3, H, W}));
        }
        attn = torch::stack(picked);
    }
    const auto row = torch::cat({up, output.coarse.narrow(0, 0, rows).detach(), output.fine.narrow(0, 0, rows).detach(),
                                 gt.narrow(0, 0, rows), attn},
                                3);  // [rows,3,H,5W]
    const auto grid = row.permute({1, 0, 2, 3}).reshape({3, rows * H, 5 * W}).clamp(0, 1);
    return from_tensor(grid);
}

}  // namespace tgsr
