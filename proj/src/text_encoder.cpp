#include "tgsr/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "tgsr/errors.hpp"

namespace tgsr {

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<unk>");
}

void Vocabulary::add(const std::string& token) {
    if (index_.count(token)) return;
    index_[token] = static_cast<std::int64_t>(tokens_.size());
    tokens_.push_back(token);
}

std::int64_t Vocabulary::index(const std::string& token) const {
    const auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int64_t index) const {
    if (index < 0 || index >= static_cast<std::int64_t>(tokens_.size()))
        throw LookupError("vocabulary index out of range: " + std::to_string(index));
    return tokens_[static_cast<std::size_t>(index)];
}

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [tok, idx] : index_) j[tok] = idx;
    return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    std::vector<std::pair<std::int64_t, std::string>> entries;
    for (const auto& [tok, idx] : j.items()) entries.emplace_back(idx.get<std::int64_t>(), tok);
    std::sort(entries.begin(), entries.end());
    Vocabulary v;
    v.index_.clear();
    v.tokens_.clear();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].first != static_cast<std::int64_t>(i)) throw ConfigError("vocabulary indices are not dense");
        v.add(entries[i].second);
    }
    if (v.size() < 2 || v.tokens_[kPad] != "<pad>" || v.tokens_[kUnk] != "<unk>")
        throw ConfigError("vocabulary is missing reserved PAD/UNK entries");
    return v;
}

std::vector<std::string> clean_words(const std::string& caption) {
    std::string cleaned;
    cleaned.reserve(caption.size());
    for (unsigned char ch : caption) {
        if (std::isspace(ch)) cleaned += ' ';
        else if (std::isalnum(ch)) cleaned += static_cast<char>(std::tolower(ch));
    }
    std::istringstream in(cleaned);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

Vocabulary build_vocab(std::span<const std::string> captions, int min_count) {
    if (captions.empty()) throw ConfigError("cannot build a vocabulary from an empty corpus");
    std::map<std::string, int> counts;
    for (const auto& c : captions)
        for (const auto& w : clean_words(c)) ++counts[w];
    Vocabulary v;
    for (const auto& [w, n] : counts)
        if (n >= min_count) v.add(w);
    return v;
}

TokenizedCaption tokenize(const std::string& caption, const Vocabulary& vocab, int t_max) {
    if (t_max < 1) throw ConfigError("t_max must be >= 1");
    const auto words = clean_words(caption);
    if (words.empty()) throw EmptyCaptionError("caption has no tokens");
    TokenizedCaption out;
    out.ids.assign(static_cast<std::size_t>(t_max), Vocabulary::kPad);
    out.length = std::min<int>(static_cast<int>(words.size()), t_max);
    for (int i = 0; i < out.length; ++i) out.ids[static_cast<std::size_t>(i)] = vocab.index(words[static_cast<std::size_t>(i)]);
    return out;
}

TokenBatch make_token_batch(std::span<const TokenizedCaption> captions) {
    if (captions.empty()) throw EmptyBatchError("token batch is empty");
    const auto t_max = static_cast<std::int64_t>(captions.front().ids.size());
    auto ids = torch::empty({static_cast<std::int64_t>(captions.size()), t_max}, torch::kInt64);
    auto lengths = torch::empty({static_cast<std::int64_t>(captions.size())}, torch::kInt64);
    auto ids_a = ids.accessor<std::int64_t, 2>();
    auto len_a = lengths.accessor<std::int64_t, 1>();
    for (std::size_t b = 0; b < captions.size(); ++b) {
        if (static_cast<std::int64_t>(captions[b].ids.size()) != t_max) throw ShapeError("mixed t_max in token batch");
        for (std::int64_t t = 0; t < t_max; ++t) ids_a[b][t] = captions[b].ids[static_cast<std::size_t>(t)];
        len_a[b] = captions[b].length;
    }
    return {ids, lengths};
}

TokenBatch tokenize_batch(std::span<const std::string> captions, const Vocabulary& vocab, int t_max) {
    std::vector<TokenizedCaption> toks;
    toks.reserve(captions.size());
    for (const auto& c : captions) toks.push_back(tokenize(c, vocab, t_max));
    return make_token_batch(toks);
}

torch::Tensor TextFeatures::word_mask() const {
    auto pos = torch::arange(slots(), torch::TensorOptions().dtype(torch::kInt64));
    return pos.unsqueeze(0) < lengths.unsqueeze(1);
}

TextEncoderImpl::TextEncoderImpl(std::int64_t vocab_size, std::int64_t dim) : dim_(dim) {
    embedding_ = register_module("embedding", torch::nn::Embedding(vocab_size, dim));
    forward_cell_ = register_module("forward_cell", torch::nn::LSTMCell(dim, dim));
    backward_cell_ = register_module("backward_cell", torch::nn::LSTMCell(dim, dim));
}

TextFeatures TextEncoderImpl::forward(const TokenBatch& tokens) {
    const auto B = tokens.batch();
    const auto t_max = tokens.ids.size(1);
    if (B == 0) throw EmptyBatchError("text encoder: empty batch");
    if ((tokens.lengths < 1).any().item<bool>()) throw EmptyCaptionError("caption with zero real words");

    // Only the longest real caption's span is unrolled; further slots stay zero.
    const auto steps = tokens.lengths.max().item<std::int64_t>();
    const auto options = embedding_->weight.options();
    auto emb = embedding_->forward(tokens.ids.narrow(1, 0, steps));  // [B,steps,D]

    auto valid_at = [&](std::int64_t s) { return (tokens.lengths > s).unsqueeze(1); };  // [B,1]

    std::vector<torch::Tensor> fwd(static_cast<std::size_t>(steps)), bwd(static_cast<std::size_t>(steps));
    auto h = torch::zeros({B, dim_}, options), c = torch::zeros({B, dim_}, options);
    for (std::int64_t s = 0; s < steps; ++s) {
        auto [h2, c2] = forward_cell_->forward(emb.select(1, s), std::make_tuple(h, c));
        const auto m = valid_at(s);
        h = torch::where(m, h2, h);
        c = torch::where(m, c2, c);
        fwd[static_cast<std::size_t>(s)] = h;
    }
    const auto sentence_fwd = h;

    h = torch::zeros({B, dim_}, options);
    c = torch::zeros({B, dim_}, options);
    for (std::int64_t s = steps - 1; s >= 0; --s) {
        auto [h2, c2] = backward_cell_->forward(emb.select(1, s), std::make_tuple(h, c));
        const auto m = valid_at(s);
        h = torch::where(m, h2, h);
        c = torch::where(m, c2, c);
        bwd[static_cast<std::size_t>(s)] = h;
    }
    const auto sentence_bwd = h;

    std::vector<torch::Tensor> cols;
    cols.reserve(static_cast<std::size_t>(t_max));
    for (std::int64_t s = 0; s < steps; ++s) {
        const auto m = valid_at(s);
        const auto col = fwd[static_cast<std::size_t>(s)] + bwd[static_cast<std::size_t>(s)];
        cols.push_back(torch::where(m, col, torch::zeros_like(col)));
    }
    for (std::int64_t s = steps; s < t_max; ++s) cols.push_back(torch::zeros({B, dim_}, options));

    return {torch::stack(cols, 2), sentence_fwd + sentence_bwd, tokens.lengths};
}

}  // namespace tgsr
