#include "tgsr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tgsr/errors.hpp"

namespace tgsr {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
    for (double w : {l2, cgan, tic, tar})
        if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and non-negative");
}

nlohmann::json LossReport::to_json() const {
    return {{"step", step},     {"l2", l2},         {"cgan_g", cgan_g}, {"tic_g", tic_g},
            {"tar", tar},       {"cgan_f", cgan_f}, {"tic_f", tic_f},   {"global", global},
            {"fine", fine},     {"total", total}};
}

std::vector<std::int64_t> select_top_word_maps(const torch::Tensor& sums, std::int64_t length, int top_k) {
    auto s = sums.to(torch::kFloat64).contiguous();
    std::vector<std::int64_t> order(static_cast<std::size_t>(length));
    std::iota(order.begin(), order.end(), 0);
    const double* v = s.data_ptr<double>();
    std::stable_sort(order.begin(), order.end(), [v](std::int64_t a, std::int64_t b) { return v[a] > v[b]; });
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(top_k)));
    return order;
}

torch::Tensor tar_loss(const torch::Tensor& output, const torch::Tensor& target, const torch::Tensor& word_maps,
                       const torch::Tensor& lengths, int top_k) {
    if (output.sizes() != target.sizes() || output.dim() != 4) throw ShapeError("tar_loss: image shapes differ");
    if (word_maps.dim() != 4 || word_maps.size(0) != output.size(0)) throw ShapeError("tar_loss: maps must be [B,T,h,w]");
    if ((lengths < 1).any().item<bool>()) throw EmptyCaptionError("tar_loss: caption without real words");

    const auto B = output.size(0);
    const auto H = output.size(2), W = output.size(3);
    auto maps = word_maps.detach();
    if (maps.size(2) != H || maps.size(3) != W)
        maps = F::interpolate(maps, F::InterpolateFuncOptions()
                                        .size(std::vector<std::int64_t>{H, W})
                                        .mode(torch::kBilinear)
                                        .align_corners(false));

    const auto error = (output - target).pow(2).mean(1);  // [B,H,W]
    const auto sums = maps.sum({2, 3});                    // [B,T]
    std::vector<torch::Tensor> per_sample;
    per_sample.reserve(static_cast<std::size_t>(B));
    for (std::int64_t b = 0; b < B; ++b) {
        const auto length = std::min(lengths[b].item<std::int64_t>(), maps.size(1));
        const auto chosen = select_top_word_maps(sums[b], length, top_k);
        auto index = torch::tensor(chosen, torch::kInt64);
        auto selected = maps[b].index_select(0, index);  // [k,H,W]
        const auto mean = selected.mean({1, 2}, true).clamp_min(1e-12);
        const auto weights = selected / mean;
        per_sample.push_back((weights * error[b].unsqueeze(0)).mean({1, 2}).mean());
    }
    return torch::stack(per_sample).mean();
}

// The encoder and the discriminator judge the image as it is emitted, clipped to [0,1].
torch::Tensor tic_term(const torch::Tensor& images, const LossContext& context) {
    if (!context.image_encoder) return torch::zeros({}, images.options());
    auto encoder = *context.image_encoder;
    auto regions = encoder->forward(images.clamp(0.0, 1.0));
    const auto posterior = tic_loss(context.text, regions, context.matching);
    return posterior.loss / static_cast<double>(images.size(0));
}

torch::Tensor cgan_term(const torch::Tensor& images, const LossContext& context) {
    if (!context.discriminator) return torch::zeros({}, images.options());
    auto disc = *context.discriminator;
    return g_adv_loss(disc->forward(images.clamp(0.0, 1.0), context.text.sentence));
}

GlobalTerms global_loss(const torch::Tensor& coarse, const torch::Tensor& lowpass_target, const LossContext& context,
                        const LossWeights& weights) {
    weights.validate();
    if (coarse.sizes() != lowpass_target.sizes()) throw ShapeError("global_loss: image shapes differ");
    GlobalTerms t;
    const auto zero = torch::zeros({}, coarse.options());
    t.l2 = weights.l2 > 0 ? (coarse - lowpass_target).pow(2).mean() : zero;
    t.cgan = weights.cgan > 0 ? cgan_term(coarse, context) : zero;
    t.tic = weights.tic > 0 ? tic_term(coarse, context) : zero;
    t.total = weights.l2 * t.l2 + weights.cgan * t.cgan + weights.tic * t.tic;
    return t;
}

FineTerms fine_loss(const torch::Tensor& fine, const torch::Tensor& target, const torch::Tensor& word_maps,
                    const LossContext& context, const LossWeights& weights) {
    weights.validate();
    if (fine.sizes() != target.sizes()) throw ShapeError("fine_loss: image shapes differ");
    FineTerms t;
    const auto zero = torch::zeros({}, fine.options());
    if (weights.tar > 0) {
        t.reconstruction = context.use_tar && word_maps.defined()
                               ? tar_loss(fine, target, word_maps, context.text.lengths)
                               : (fine - target).pow(2).mean();
    } else {
        t.reconstruction = zero;
    }
    t.cgan = weights.cgan > 0 ? cgan_term(fine, context) : zero;
    t.tic = weights.tic > 0 ? tic_term(fine, context) : zero;
    t.total = weights.tar * t.reconstruction + weights.cgan * t.cgan + weights.tic * t.tic;
    return t;
}

torch::Tensor total_loss(const torch::Tensor& global, const torch::Tensor& fine) { return global + fine; }

LossReport make_report(std::int64_t step, const GlobalTerms& global, const std::optional<FineTerms>& fine,
                       const torch::Tensor& total) {
    auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
    LossReport r;
    r.step = step;
    r.l2 = v(global.l2);
    r.cgan_g = v(global.cgan);
    r.tic_g = v(global.tic);
    r.global = v(global.total);
    if (fine) {
        r.tar = v(fine->reconstruction);
        r.cgan_f = v(fine->cgan);
        r.tic_f = v(fine->tic);
        r.fine = v(fine->total);
    }
    r.total = v(total);
    return r;
}

}  // namespace tgsr
