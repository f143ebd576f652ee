#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace tgsr {

class Vocabulary {
public:
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kUnk = 1;

    Vocabulary();

    std::int64_t index(const std::string& token) const;  // UNK when absent
    const std::string& token(std::int64_t index) const;
    bool contains(const std::string& token) const { return index_.count(token) > 0; }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// {token: index}, reserved entries included.
    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    void add(const std::string& token);

    std::map<std::string, std::int64_t> index_;
    std::vector<std::string> tokens_;

    friend Vocabulary build_vocab(std::span<const std::string>, int);
};

/// Tokens with count >= min_count, in lexicographic order after PAD/UNK.
Vocabulary build_vocab(std::span<const std::string> captions, int min_count = 1);

/// Lowercase, drop punctuation, split on whitespace.
std::vector<std::string> clean_words(const std::string& caption);

struct TokenizedCaption {
    std::vector<std::int64_t> ids;  // length t_max, PAD-right
    int length = 0;
};

TokenizedCaption tokenize(const std::string& caption, const Vocabulary& vocab, int t_max);

/// A batch of tokenized captions as tensors: ids [B,T] int64, lengths [B] int64.
struct TokenBatch {
    torch::Tensor ids;
    torch::Tensor lengths;

    std::int64_t batch() const { return ids.size(0); }
};

TokenBatch make_token_batch(std::span<const TokenizedCaption> captions);
TokenBatch tokenize_batch(std::span<const std::string> captions, const Vocabulary& vocab, int t_max);

/// Per-word features t [B,D,T] (columns >= length are exactly zero) and a
/// sentence vector [B,D].
struct TextFeatures {
    torch::Tensor words;
    torch::Tensor sentence;
    torch::Tensor lengths;

    std::int64_t dim() const { return words.size(1); }
    std::int64_t slots() const { return words.size(2); }
    /// [B,T] bool, true on real words.
    torch::Tensor word_mask() const;
    TextFeatures detached() const { return {words.detach(), sentence.detach(), lengths}; }
};

/// Word embedding followed by a single-layer bidirectional LSTM whose two
/// directions are summed to width D. Each direction only consumes the real
/// words of its caption, so padding never leaks into the features.
class TextEncoderImpl : public torch::nn::Module {
public:
    TextEncoderImpl(std::int64_t vocab_size, std::int64_t dim);

    TextFeatures forward(const TokenBatch& tokens);

    std::int64_t dim() const { return dim_; }

private:
    std::int64_t dim_;
    torch::nn::Embedding embedding_{nullptr};
    torch::nn::LSTMCell forward_cell_{nullptr};
    torch::nn::LSTMCell backward_cell_{nullptr};
};
TORCH_MODULE(TextEncoder);

}  // namespace tgsr
