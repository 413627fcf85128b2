// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/synthworld.hpp"
#include "idedit/text.hpp"

#include <doctest.h>

using namespace idedit;
using namespace idedit::text;

namespace {

TextEncoder<float> encoder(std::uint64_t seed = 1) {
  nn::Rng rng(seed);
  return TextEncoder<float>(TextEncoderConfig{}, Vocabulary(synth::caption_words()), rng);
}

}  // namespace

TEST_CASE("tokenization layout") {
  const Vocabulary vocab(synth::caption_words());
  const TokenSeq seq = tokenize("a red circle on a white background", vocab);
  CHECK(seq.length() == 8);
  CHECK(seq.tokens.front() == "<cls>");
  CHECK(seq.ids[0] == Vocabulary::kCls);
  for (int i = seq.length(); i < kSeqLen; ++i) CHECK(seq.ids[static_cast<std::size_t>(i)] == Vocabulary::kPad);
  const auto valid = seq.valid();
  for (int i = 0; i < kSeqLen; ++i) CHECK(valid[static_cast<std::size_t>(i)] == (i < seq.length()));
  CHECK(seq.position_of("a") == 1);
  CHECK(seq.position_of("a", 1) == 5);
  CHECK_FALSE(seq.position_of("a", 2).has_value());
  CHECK(seq.position_of("circle") == 3);
}

TEST_CASE("tokenization errors") {
  const Vocabulary vocab(synth::caption_words());
  CHECK_THROWS_AS(tokenize("a red hexagon", vocab), VocabularyError);
  CHECK_THROWS_AS(tokenize("a [I] circle", vocab), VocabularyError);
  std::string long_prompt;
  for (int i = 0; i < kSeqLen; ++i) long_prompt += "a ";
  CHECK_THROWS_AS(tokenize(long_prompt, vocab), std::invalid_argument);
}

TEST_CASE("special tokens") {
  auto enc = encoder();
  const int before = enc.vocab().size();
  const int id = enc.register_token("[I]", 9);
  CHECK(id == before);
  CHECK(enc.has_token("[I]"));
  CHECK(enc.vocab().is_special(id));
  CHECK_FALSE(enc.vocab().is_special(*enc.vocab().find("red")));
  const TokenSeq seq = tokenize("a red [I] circle", enc.vocab());
  CHECK(seq.special_positions.at("[I]") == 3);
  CHECK_THROWS(tokenize("a [I] red [I] circle", enc.vocab()));
  // Initialized at the mean word-embedding norm.
  const double norm = enc.token_embedding("[I]").value().norm();
  CHECK(norm == doctest::Approx(enc.mean_word_norm()).epsilon(1e-4));
}

TEST_CASE("encoding shape, pooling and determinism") {
  auto a = encoder(4);
  auto b = encoder(4);
  const TokenSeq seq = tokenize("a striped blue star with a hat on a gray background", a.vocab());
  const auto ea = a.encode(seq);
  const auto eb = b.encode(seq);
  CHECK(ea.tokens.rows() == TextEncoderConfig{}.width);
  CHECK(ea.tokens.cols() == kSeqLen);
  CHECK(ea.pooled.cols() == 1);
  CHECK(ea.pooled.value() == ea.tokens.value().col(0));
  CHECK(ea.tokens.value() == eb.tokens.value());
  CHECK(ea.tokens.value().allFinite());
}

TEST_CASE("padding does not influence valid outputs") {
  auto enc = encoder();
  const TokenSeq seq = tokenize("a red circle", enc.vocab());
  const auto base = enc.encode(seq).tokens.value();
  TokenSeq other = seq;
  // Padding slots hold PAD; outputs at valid positions must not see them.
  other.ids[10] = *enc.vocab().find("blue");
  const auto changed = enc.encode(other).tokens.value();
  CHECK((base.leftCols(seq.length()) - changed.leftCols(seq.length())).cwiseAbs().maxCoeff() == 0.0f);
}
