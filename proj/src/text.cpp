// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/text.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace idedit::text {

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  words_ = {"<pad>", "<cls>"};
  for (const auto& w : words) {
    if (w == "<pad>" || w == "<cls>" || std::find(words_.begin(), words_.end(), w) != words_.end())
      throw std::invalid_argument("vocabulary: duplicate or reserved word " + w);
    words_.push_back(w);
  }
  for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
  word_count_ = static_cast<int>(words_.size());
}

std::optional<int> Vocabulary::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::add_special(const std::string& name) {
  if (index_.count(name)) throw std::invalid_argument("token already registered: " + name);
  const int id = static_cast<int>(words_.size());
  words_.push_back(name);
  index_[name] = id;
  return id;
}

std::vector<std::string> Vocabulary::specials() const {
  return {words_.begin() + word_count_, words_.end()};
}

std::array<bool, kSeqLen> TokenSeq::valid() const {
  std::array<bool, kSeqLen> v{};
  for (int i = 0; i < kSeqLen; ++i) v[i] = i < length();
  return v;
}

std::optional<int> TokenSeq::position_of(const std::string& word, int occurrence) const {
  for (int i = 0; i < length(); ++i) {
    if (tokens[static_cast<std::size_t>(i)] == word && occurrence-- == 0) return i;
  }
  return std::nullopt;
}

TokenSeq tokenize(const std::string& prompt, const Vocabulary& vocab) {
  TokenSeq seq;
  seq.ids.fill(Vocabulary::kPad);
  seq.ids[0] = Vocabulary::kCls;
  seq.tokens.push_back("<cls>");
  std::istringstream in(prompt);
  std::string word;
  while (in >> word) {
    const auto id = vocab.find(word);
    if (!id || *id == Vocabulary::kPad || *id == Vocabulary::kCls) throw VocabularyError(word);
    if (seq.length() >= kSeqLen) throw std::invalid_argument("prompt longer than " + std::to_string(kSeqLen - 1) + " words");
    if (vocab.is_special(*id)) {
      if (seq.special_positions.count(word)) throw std::invalid_argument("special token repeated: " + word);
      seq.special_positions[word] = seq.length();
    }
    seq.ids[static_cast<std::size_t>(seq.length())] = *id;
    seq.tokens.push_back(word);
  }
  return seq;
}

template <typename Scalar>
TextEncoder<Scalar>::TextEncoder(const TextEncoderConfig& config, Vocabulary vocab, nn::Rng& rng)
    : config_(config), vocab_(std::move(vocab)) {
  const int d = config_.width;
  table_ = store_.add("text.table", nn::gaussian<Scalar>(d, vocab_.word_count(), rng, 0.3));
  positions_ = store_.add("text.positions", nn::gaussian<Scalar>(d, kSeqLen, rng, 0.1));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "text.layer" + std::to_string(l);
    Layer layer;
    layer.ln1 = nn::LayerNorm<Scalar>(store_, p + ".ln1", d);
    layer.ln2 = nn::LayerNorm<Scalar>(store_, p + ".ln2", d);
    layer.q = nn::Linear<Scalar>(store_, p + ".q", d, d, rng);
    layer.k = nn::Linear<Scalar>(store_, p + ".k", d, d, rng);
    layer.v = nn::Linear<Scalar>(store_, p + ".v", d, d, rng);
    layer.o = nn::Linear<Scalar>(store_, p + ".o", d, d, rng, 0.5);
    layer.fc1 = nn::Linear<Scalar>(store_, p + ".fc1", d, config_.mlp_width, rng);
    layer.fc2 = nn::Linear<Scalar>(store_, p + ".fc2", config_.mlp_width, d, rng, 0.5);
    layers_.push_back(std::move(layer));
  }
  final_ln_ = nn::LayerNorm<Scalar>(store_, "text.final_ln", d);
  // Specials already present in the vocabulary (e.g. from a checkpoint) get a
  // placeholder embedding; callers overwrite it when restoring values.
  for (const auto& name : vocab_.specials())
    registry_[name] = store_.add("text.special." + name, Matrix<Scalar>::Zero(d, 1));
}

template <typename Scalar>
Scalar TextEncoder<Scalar>::mean_word_norm() const {
  const auto& t = table_.value();
  Scalar total = 0;
  const int first = Vocabulary::kCls + 1;
  for (int c = first; c < t.cols(); ++c) total += t.col(c).norm();
  return total / static_cast<Scalar>(t.cols() - first);
}

template <typename Scalar>
int TextEncoder<Scalar>::register_token(const std::string& name, std::uint64_t init_seed) {
  if (vocab_.find(name)) throw std::invalid_argument("token already registered: " + name);
  nn::Rng rng(init_seed);
  Matrix<Scalar> init = nn::gaussian<Scalar>(config_.width, 1, rng);
  init *= mean_word_norm() / init.norm();
  const int id = vocab_.add_special(name);
  registry_[name] = store_.add("text.special." + name, std::move(init));
  return id;
}

template <typename Scalar>
const Var<Scalar>& TextEncoder<Scalar>::token_embedding(const std::string& name) const {
  auto it = registry_.find(name);
  if (it == registry_.end()) throw std::out_of_range("token not registered: " + name);
  return it->second;
}

template <typename Scalar>
Var<Scalar> TextEncoder<Scalar>::self_attention(const Layer& layer, const Var<Scalar>& x,
                                                std::span<const bool> valid) const {
  const int d = config_.width;
  const int dh = d / config_.heads;
  const Var<Scalar> q = layer.q(x);
  const Var<Scalar> k = layer.k(x);
  const Var<Scalar> v = layer.v(x);
  const Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Var<Scalar>> heads;
  for (int h = 0; h < config_.heads; ++h) {
    auto qh = ad::slice_rows(q, h * dh, dh);
    auto kh = ad::slice_rows(k, h * dh, dh);
    auto vh = ad::slice_rows(v, h * dh, dh);
    auto probs = ad::softmax_rows(ad::scale(ad::matmul_tn(qh, kh), inv), valid);
    heads.push_back(ad::matmul_nt(vh, probs));
  }
  return layer.o(ad::vcat<Scalar>(heads));
}

template <typename Scalar>
TextEmbedding<Scalar> TextEncoder<Scalar>::encode(const TokenSeq& seq) const {
  std::array<int, kSeqLen> word_ids{};
  for (int i = 0; i < kSeqLen; ++i) {
    const int id = seq.ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= vocab_.size()) throw std::invalid_argument("token id out of range");
    word_ids[static_cast<std::size_t>(i)] = vocab_.is_special(id) ? -1 : id;
  }
  Var<Scalar> x = ad::gather_columns<Scalar>(table_, word_ids);
  for (int i = 0; i < kSeqLen; ++i) {
    const int id = seq.ids[static_cast<std::size_t>(i)];
    if (vocab_.is_special(id)) x = ad::set_column(x, i, token_embedding(vocab_.word(id)));
  }
  x = ad::add(x, positions_);
  const auto valid = seq.valid();
  for (const auto& layer : layers_) {
    x = ad::add(x, self_attention(layer, layer.ln1(x), valid));
    x = ad::add(x, layer.fc2(ad::silu(layer.fc1(layer.ln2(x)))));
  }
  x = final_ln_(x);
  const std::array<int, 1> cls{TokenSeq::cls_position};
  return {x, ad::gather_columns<Scalar>(x, cls)};
}

template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace idedit::text
