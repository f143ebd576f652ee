#include "tgsr/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tgsr/errors.hpp"

namespace tgsr {

namespace nn = torch::nn;

ImageEncoderImpl::ImageEncoderImpl(std::int64_t image_size, std::int64_t grid, std::int64_t dim, std::int64_t channels)
    : image_size_(image_size), grid_(grid), dim_(dim) {
    if (grid < 1 || image_size % grid != 0) throw ConfigError("image size must be a multiple of the region grid");
    const auto ratio = image_size / grid;
    if ((ratio & (ratio - 1)) != 0) throw ConfigError("image size / grid must be a power of two");

    tower_ = nn::Sequential();
    tower_->push_back(nn::Conv2d(nn::Conv2dOptions(3, channels, 3).padding(1)));
    tower_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    for (auto r = ratio; r > 1; r /= 2) {
        tower_->push_back(nn::Conv2d(nn::Conv2dOptions(channels, channels, 4).stride(2).padding(1)));
        tower_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    }
    register_module("tower", tower_);
    project_ = register_module("project", nn::Conv2d(nn::Conv2dOptions(channels, dim, 1)));
    global_ = register_module("global", nn::Linear(dim, dim));
}

RegionFeatures ImageEncoderImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != image_size_ || images.size(3) != image_size_)
        throw ShapeError("image encoder expects [B,3," + std::to_string(image_size_) + "," +
                         std::to_string(image_size_) + "], got " + std::string(c10::str(images.sizes())));
    auto x = project_->forward(tower_->forward(images));  // [B,D,G,G]
    auto regions = x.flatten(2);
    return {regions, global_->forward(regions.mean(2))};
}

namespace {

void check_pair_shapes(const torch::Tensor& words, const torch::Tensor& mask, const torch::Tensor& regions) {
    if (words.dim() != 3 || regions.dim() != 3 || mask.dim() != 2)
        throw ShapeError("matching expects words [B,D,T], regions [B,D,N], mask [B,T]");
    if (words.size(0) != regions.size(0) || words.size(0) != mask.size(0))
        throw ShapeError("matching: batch sizes differ");
    if (words.size(1) != regions.size(1))
        throw ShapeError("matching: word width " + std::to_string(words.size(1)) + " != region width " +
                         std::to_string(regions.size(1)));
    if (mask.size(1) != words.size(2)) throw ShapeError("matching: mask does not cover word slots");
}

}  // namespace

std::pair<torch::Tensor, torch::Tensor> similarity_matrix(const torch::Tensor& words, const torch::Tensor& mask,
                                                          const torch::Tensor& regions) {
    check_pair_shapes(words, mask, regions);
    const auto row_mask = mask.unsqueeze(2);  // [B,T,1]
    auto s = torch::bmm(words.transpose(1, 2), regions);
    s = torch::where(row_mask, s, torch::zeros_like(s));
    auto logits = s.masked_fill(row_mask.logical_not(), -std::numeric_limits<double>::infinity());
    auto s_norm = torch::softmax(logits, 1);
    s_norm = torch::where(row_mask, s_norm, torch::zeros_like(s_norm));
    return {s, s_norm};
}

std::pair<torch::Tensor, torch::Tensor> region_context(const torch::Tensor& normalized_similarity,
                                                       const torch::Tensor& regions, const torch::Tensor& mask,
                                                       double gamma1) {
    if (normalized_similarity.size(0) != regions.size(0) || normalized_similarity.size(2) != regions.size(2))
        throw ShapeError("region_context: shapes disagree");
    const auto row_mask = mask.unsqueeze(2);
    auto a = torch::softmax(gamma1 * normalized_similarity, 2);
    a = torch::where(row_mask, a, torch::zeros_like(a));
    auto c = torch::bmm(regions, a.transpose(1, 2));  // [B,D,T]
    return {a, c};
}

torch::Tensor relevance(const torch::Tensor& context, const torch::Tensor& words, const torch::Tensor& mask) {
    if (context.sizes() != words.sizes()) throw ShapeError("relevance: context and words differ in shape");
    constexpr double kEps = 1e-8;
    const auto dot = (context * words).sum(1);
    const auto nc = context.norm(2, 1);
    const auto nt = words.norm(2, 1);
    const auto ok = (nc >= kEps).logical_and(nt >= kEps).logical_and(mask);
    const auto denom = torch::where(ok, nc * nt, torch::ones_like(nc));
    return torch::where(ok, dot / denom, torch::zeros_like(dot));
}

torch::Tensor tim_from_relevance(const torch::Tensor& rel, const torch::Tensor& mask, double gamma2) {
    auto logits = (gamma2 * rel).masked_fill(mask.logical_not(), -std::numeric_limits<double>::infinity());
    return torch::logsumexp(logits, 1);
}

MatchResult match(const TextFeatures& text, const RegionFeatures& image, const MatchingConfig& config) {
    if ((text.lengths < 1).any().item<bool>()) throw EmptyCaptionError("matching: caption without real words");
    // Trailing all-PAD slots are dropped so padding cannot affect any result.
    const auto steps = std::min(text.lengths.max().item<std::int64_t>(), text.words.size(2));
    const auto words = text.words.narrow(2, 0, steps);
    const auto mask = text.word_mask().narrow(1, 0, steps);
    MatchResult r;
    std::tie(r.similarity, r.normalized_similarity) = similarity_matrix(words, mask, image.regions);
    std::tie(r.attention, r.context) = region_context(r.normalized_similarity, image.regions, mask, config.gamma1);
    r.relevance = relevance(r.context, words, mask);
    r.tim = tim_from_relevance(r.relevance, mask, config.gamma2);
    return r;
}

torch::Tensor pairwise_relevance(const TextFeatures& text, const RegionFeatures& image, const MatchingConfig& config) {
    const auto M = text.words.size(0);
    if (M == 0) throw EmptyBatchError("pairwise_relevance: empty batch");
    if (image.regions.size(0) != M) throw ShapeError("pairwise_relevance: batch sizes differ");
    // Pair (n, m) at flat index n*M + m: image n, caption m.
    const auto words = text.words.unsqueeze(0).expand({M, M, text.words.size(1), text.words.size(2)}).reshape(
        {M * M, text.words.size(1), text.words.size(2)});
    const auto lengths = text.lengths.unsqueeze(0).expand({M, M}).reshape({M * M});
    const auto regions = image.regions.unsqueeze(1).expand({M, M, image.regions.size(1), image.regions.size(2)})
                             .reshape({M * M, image.regions.size(1), image.regions.size(2)});
    TextFeatures pair_text{words, torch::Tensor(), lengths};
    const auto result = match(pair_text, RegionFeatures{regions, torch::Tensor()}, config);
    return (result.tim / config.gamma2).reshape({M, M});
}

BatchPosterior tic_from_relevance(const torch::Tensor& rel, double gamma3) {
    if (rel.dim() != 2 || rel.size(0) != rel.size(1)) throw ShapeError("relevance matrix must be square");
    if (rel.size(0) == 0) throw EmptyBatchError("tic_loss: empty batch");
    BatchPosterior p;
    p.relevance = rel;
    const auto log_t_given_i = torch::log_softmax(gamma3 * rel, 1);
    const auto log_i_given_t = torch::log_softmax(gamma3 * rel.transpose(0, 1), 1);
    p.text_given_image = log_t_given_i.exp();
    p.image_given_text = log_i_given_t.exp();
    p.loss = -(log_t_given_i.diagonal().sum() + log_i_given_t.diagonal().sum());
    return p;
}

BatchPosterior tic_loss(const TextFeatures& text, const RegionFeatures& image, const MatchingConfig& config) {
    return tic_from_relevance(pairwise_relevance(text, image, config), config.gamma3);
}

RPrecision r_precision(const PairScorer& scorer, std::span<const std::string> captions, int distractors,
                       std::uint64_t seed) {
    if (distractors < 1) throw ConfigError("r_precision needs at least one distractor");
    const auto n = static_cast<std::int64_t>(captions.size());
    if (n <= distractors) throw ConfigError("r_precision: evaluation set must be larger than the distractor count");

    std::mt19937_64 rng(seed);
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    pairs.reserve(static_cast<std::size_t>(n * (distractors + 1)));
    std::vector<std::int64_t> pool;
    for (std::int64_t k = 0; k < n; ++k) {
        pool.clear();
        for (std::int64_t j = 0; j < n; ++j)
            if (captions[static_cast<std::size_t>(j)] != captions[static_cast<std::size_t>(k)]) pool.push_back(j);
        if (static_cast<std::int64_t>(pool.size()) < distractors)
            throw ConfigError("r_precision: not enough mismatched captions to sample distractors");
        pairs.emplace_back(k, k);
        for (int d = 0; d < distractors; ++d) {
            std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(d), pool.size() - 1);
            std::swap(pool[static_cast<std::size_t>(d)], pool[pick(rng)]);
            pairs.emplace_back(k, pool[static_cast<std::size_t>(d)]);
        }
    }

    const auto scores = scorer(pairs);
    if (scores.size() != pairs.size()) throw ShapeError("r_precision: scorer returned wrong number of scores");

    RPrecision out;
    std::int64_t hits = 0;
    const auto group = static_cast<std::size_t>(distractors + 1);
    for (std::int64_t k = 0; k < n; ++k) {
        const auto base = static_cast<std::size_t>(k) * group;
        RankRow row{k, scores[base], 1, false};
        for (std::size_t d = 1; d < group; ++d)
            if (scores[base + d] >= row.score) ++row.rank;
        row.hit = row.rank == 1;
        hits += row.hit;
        out.rows.push_back(row);
    }
    out.value = static_cast<double>(hits) / static_cast<double>(n);
    return out;
}

PairScorer make_tim_scorer(TextEncoder text_encoder, ImageEncoder image_encoder, const torch::Tensor& images,
                           const TokenBatch& captions, const MatchingConfig& config) {
    torch::NoGradGuard no_grad;
    constexpr std::int64_t kChunk = 256;
    std::vector<torch::Tensor> region_parts;
    for (std::int64_t i = 0; i < images.size(0); i += kChunk)
        region_parts.push_back(image_encoder->forward(images.narrow(0, i, std::min(kChunk, images.size(0) - i))).regions);
    auto regions = torch::cat(region_parts);
    auto text = text_encoder->forward(captions);

    return [regions, text, config](std::span<const std::pair<std::int64_t, std::int64_t>> pairs) {
        torch::NoGradGuard guard;
        std::vector<double> scores;
        scores.reserve(pairs.size());
        for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
            const auto count = std::min<std::size_t>(kChunk, pairs.size() - start);
            auto img_idx = torch::empty({static_cast<std::int64_t>(count)}, torch::kInt64);
            auto cap_idx = torch::empty({static_cast<std::int64_t>(count)}, torch::kInt64);
            for (std::size_t i = 0; i < count; ++i) {
                img_idx[static_cast<std::int64_t>(i)] = pairs[start + i].first;
                cap_idx[static_cast<std::int64_t>(i)] = pairs[start + i].second;
            }
            TextFeatures sub{text.words.index_select(0, cap_idx), text.sentence.index_select(0, cap_idx),
                             text.lengths.index_select(0, cap_idx)};
            const auto r = match(sub, RegionFeatures{regions.index_select(0, img_idx), torch::Tensor()}, config);
            const auto tim = r.tim.to(torch::kFloat64).contiguous();
            scores.insert(scores.end(), tim.data_ptr<double>(), tim.data_ptr<double>() + tim.numel());
        }
        return scores;
    };
}

}  // namespace tgsr
