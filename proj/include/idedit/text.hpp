// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Word-level tokenizer, a two-layer bidirectional transformer text encoder
// with a prepended CLS token, and the registry of learnable special tokens.

#pragma once

#include "idedit/nn.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace idedit::text {

using ad::Matrix;
using ad::Var;

inline constexpr int kSeqLen = 16;

class VocabularyError : public std::invalid_argument {
 public:
  explicit VocabularyError(const std::string& word)
      : std::invalid_argument("word not in vocabulary: \"" + word + "\""), word_(word) {}
  const std::string& word() const { return word_; }

 private:
  std::string word_;
};

/// Dense ids: 0 = PAD, 1 = CLS, then caption words, then special tokens in
/// registration order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;

  explicit Vocabulary(const std::vector<std::string>& words);

  std::optional<int> find(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(words_.size()); }
  /// Number of ids backed by the word-embedding table (PAD, CLS, words).
  int word_count() const { return word_count_; }
  bool is_special(int id) const { return id >= word_count_; }

  int add_special(const std::string& name);
  std::vector<std::string> specials() const;
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
  int word_count_ = 0;
};

struct TokenSeq {
  std::array<int, kSeqLen> ids{};
  std::vector<std::string> tokens;  // non-PAD tokens including "<cls>" at 0
  std::map<std::string, int> special_positions;
  static constexpr int cls_position = 0;

  int length() const { return static_cast<int>(tokens.size()); }
  std::array<bool, kSeqLen> valid() const;
  /// Position of a word's k-th occurrence, if any.
  std::optional<int> position_of(const std::string& word, int occurrence = 0) const;
};

/// Splits on whitespace, prepends CLS and pads to kSeqLen.
TokenSeq tokenize(const std::string& prompt, const Vocabulary& vocab);

template <typename Scalar>
struct TextEmbedding {
  Var<Scalar> tokens;  // d x kSeqLen contextual outputs
  Var<Scalar> pooled;  // d x 1, equal to the CLS column
};

struct TextEncoderConfig {
  int width = 64;
  int heads = 4;
  int layers = 2;
  int mlp_width = 128;
};

template <typename Scalar>
class TextEncoder {
 public:
  TextEncoder(const TextEncoderConfig& config, Vocabulary vocab, nn::Rng& rng);

  TextEmbedding<Scalar> encode(const TokenSeq& seq) const;

  /// Adds a learnable token and returns its id. The raw embedding is a random
  /// direction scaled to the mean norm of the caption-word embeddings.
  int register_token(const std::string& name, std::uint64_t init_seed);
  bool has_token(const std::string& name) const { return registry_.count(name) > 0; }
  /// Raw (input-side) embedding of a registered token, d x 1.
  const Var<Scalar>& token_embedding(const std::string& name) const;
  /// Mean L2 norm of caption-word embedding columns (PAD and CLS excluded).
  Scalar mean_word_norm() const;

  const Vocabulary& vocab() const { return vocab_; }
  const TextEncoderConfig& config() const { return config_; }
  nn::ParamStore<Scalar>& params() { return store_; }
  const nn::ParamStore<Scalar>& params() const { return store_; }

 private:
  struct Layer {
    nn::LayerNorm<Scalar> ln1, ln2;
    nn::Linear<Scalar> q, k, v, o, fc1, fc2;
  };

  Var<Scalar> self_attention(const Layer& layer, const Var<Scalar>& x, std::span<const bool> valid) const;

  TextEncoderConfig config_;
  Vocabulary vocab_;
  nn::ParamStore<Scalar> store_;
  Var<Scalar> table_;
  Var<Scalar> positions_;
  std::vector<Layer> layers_;
  nn::LayerNorm<Scalar> final_ln_;
  std::map<std::string, Var<Scalar>> registry_;
};

}  // namespace idedit::text
