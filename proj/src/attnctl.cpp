// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/attnctl.hpp"

#include "idedit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace idedit::attn {

void AttentionRecord::add(const AttentionSite& site, int timestep, const Map& map) {
  if (map.rows() != static_cast<Eigen::Index>(site.resolution) * site.resolution)
    throw std::invalid_argument("attention record: map rows do not match the resolution");
  maps_[{site.layer, timestep, site.head}] = map;
  resolution_[site.layer] = site.resolution;
  heads_ = std::max(heads_, site.head + 1);
}

bool AttentionRecord::contains(int layer, int timestep, int head) const {
  return maps_.count({layer, timestep, head}) > 0;
}

const Map& AttentionRecord::at(int layer, int timestep, int head) const {
  auto it = maps_.find({layer, timestep, head});
  if (it == maps_.end())
    throw std::out_of_range("attention record: no map for layer " + std::to_string(layer) + " timestep " +
                            std::to_string(timestep) + " head " + std::to_string(head));
  return it->second;
}

Map AttentionRecord::head_mean(int layer, int timestep) const {
  Map sum = at(layer, timestep, 0);
  for (int h = 1; h < heads_; ++h) sum += at(layer, timestep, h);
  return sum / static_cast<float>(heads_);
}

int AttentionRecord::resolution(int layer) const {
  auto it = resolution_.find(layer);
  if (it == resolution_.end()) throw std::out_of_range("attention record: unknown layer " + std::to_string(layer));
  return it->second;
}

std::set<int> AttentionRecord::layers() const {
  std::set<int> out;
  for (const auto& [layer, _] : resolution_) out.insert(layer);
  return out;
}

std::set<int> AttentionRecord::timesteps() const {
  std::set<int> out;
  for (const auto& [key, _] : maps_) out.insert(std::get<1>(key));
  return out;
}

void mask_token_attention_inplace(Map& map, int token, const Eigen::VectorXf& mask) {
  if (token < 0 || token >= map.cols()) throw std::out_of_range("mask_token_attention: token index out of range");
  if (mask.size() != map.rows()) throw std::invalid_argument("mask_token_attention: mask length does not match queries");
  map.col(token).array() *= mask.array();
}

Map mask_token_attention(const Map& map, int token, const Eigen::VectorXf& mask) {
  Map out = map;
  mask_token_attention_inplace(out, token, mask);
  return out;
}

const BinaryMask& ObjectMask::at(int resolution) const {
  auto it = by_resolution.find(resolution);
  if (it == by_resolution.end()) throw std::out_of_range("object mask: no mask at resolution " + std::to_string(resolution));
  return it->second;
}

Binarized binarize_attention(const Eigen::VectorXf& averaged, int side, const MaskPolicy& policy) {
  if (averaged.size() != static_cast<Eigen::Index>(side) * side)
    throw std::invalid_argument("binarize_attention: map size does not match side");
  const double mean = averaged.mean();
  const double var = (averaged.array() - static_cast<float>(mean)).square().mean();
  Binarized out{BinaryMask(side), mean + policy.std_factor * std::sqrt(var), false};
  out.mask.data = averaged.array() > static_cast<float>(out.threshold);
  if (out.mask.count() > 0) return out;

  // Keep the top fraction by rank; ties resolve to the lower pixel index.
  out.used_fallback = true;
  const auto n = static_cast<std::size_t>(averaged.size());
  const auto keep = static_cast<std::size_t>(std::ceil(policy.fallback_fraction * static_cast<double>(n)));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return averaged(a) > averaged(b); });
  out.mask.data.setZero();
  for (std::size_t i = 0; i < std::min(keep, n); ++i) out.mask.data(order[i]) = true;
  out.threshold = keep > 0 ? averaged(order[std::min(keep, n) - 1]) : 0.0;
  if (out.mask.count() == 0) throw std::runtime_error("object mask: empty foreground after fallback");
  return out;
}

ObjectMask derive_object_mask(const AttentionRecord& record, int token, const std::vector<int>& resolutions,
                              const MaskPolicy& policy, const std::string& token_name) {
  if (record.empty()) throw std::invalid_argument("derive_object_mask: empty attention record");
  Eigen::VectorXf sum;
  int count = 0;
  for (int layer : record.layers()) {
    if (record.resolution(layer) != policy.resolution) continue;
    for (int t : record.timesteps()) {
      for (int h = 0; h < record.heads(); ++h) {
        if (!record.contains(layer, t, h)) continue;
        const Map& m = record.at(layer, t, h);
        if (token < 0 || token >= m.cols()) throw std::out_of_range("derive_object_mask: token index out of range");
        if (count == 0) sum = Eigen::VectorXf::Zero(m.rows());
        sum += m.col(token);
        ++count;
      }
    }
  }
  if (count == 0)
    throw std::invalid_argument("derive_object_mask: no recorded layer at resolution " +
                                std::to_string(policy.resolution));
  const Binarized b = binarize_attention(sum / static_cast<float>(count), policy.resolution, policy);
  ObjectMask out;
  out.token = token_name;
  out.derived_at = policy.resolution;
  out.threshold = b.threshold;
  out.used_fallback = b.used_fallback;
  out.by_resolution[policy.resolution] = b.mask;
  for (int r : resolutions) {
    out.by_resolution[r] = resample_nearest(b.mask, r);
    if (out.by_resolution[r].count() == 0)
      throw std::runtime_error("object mask: empty foreground at resolution " + std::to_string(r));
  }
  return out;
}

AttentionRecord record_image_attention(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                                       const diffusion::Var<float>& text, std::uint64_t seed) {
  nn::Rng rng(seed);
  const Eigen::MatrixXf eps = nn::gaussian<float>(3, x0.cols(), rng);
  AttentionRecord record;
  AttentionController ctl;
  ctl.record_into(&record);
  const auto& steps = model.scheduler().timesteps();
  for (int k = 0; k < static_cast<int>(steps.size()); ++k) {
    const int t = steps[static_cast<std::size_t>(k)];
    ctl.set_step(k, t);
    model.predict_noise(diffusion::add_noise(model.scheduler(), x0, eps, t), t, text, &ctl);
  }
  return record;
}

namespace {

std::vector<int> attention_resolutions(const diffusion::DiffusionModel& model) {
  std::vector<int> out;
  for (const auto& [_, r] : model.unet().attention_layers())
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  out.push_back(model.config().denoiser.image_size);
  return out;
}

}  // namespace

ObjectMask object_mask_for(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                           const std::string& prompt, const std::string& word, std::uint64_t seed,
                           const MaskPolicy& policy) {
  const text::TokenSeq seq = model.tokenize(prompt);
  const auto pos = seq.position_of(word);
  if (!pos) throw std::invalid_argument("object word '" + word + "' not in prompt '" + prompt + "'");
  const AttentionRecord record = record_image_attention(model, x0, model.text().encode(seq).tokens, seed);
  return derive_object_mask(record, *pos, attention_resolutions(model), policy, word);
}

Alignment align_tokens(const text::TokenSeq& source, const text::TokenSeq& target) {
  Alignment out;
  std::map<std::string, int> seen;
  for (int i = 0; i < target.length(); ++i) {
    const std::string& w = target.tokens[static_cast<std::size_t>(i)];
    if (const auto j = source.position_of(w, seen[w]++)) out.emplace_back(i, *j);
  }
  const int pad_from = std::max(source.length(), target.length());
  for (int i = pad_from; i < text::kSeqLen; ++i) out.emplace_back(i, i);
  return out;
}

void validate_alignment(const Alignment& alignment, const text::TokenSeq& source, const text::TokenSeq& target) {
  auto token_at = [](const text::TokenSeq& s, int i) -> std::string {
    if (i < 0 || i >= text::kSeqLen) throw std::invalid_argument("alignment index out of range");
    return i < s.length() ? s.tokens[static_cast<std::size_t>(i)] : std::string("<pad>");
  };
  for (const auto& [t, s] : alignment) {
    const std::string a = token_at(target, t);
    const std::string b = token_at(source, s);
    if (a != b) throw std::invalid_argument("alignment pairs '" + a + "' with '" + b + "': token absent from one prompt");
  }
}

int injection_steps(double tau, int total_steps) {
  if (tau < 0.0 || tau > 1.0) throw std::invalid_argument("injection window must lie in [0, 1]");
  return static_cast<int>(std::lround(tau * total_steps));
}

std::vector<int> inject_columns(Map& current, const Map& source, const Alignment& alignment) {
  const Map* src = &source;
  Map resampled;
  if (source.rows() != current.rows()) {
    const int from = static_cast<int>(std::lround(std::sqrt(static_cast<double>(source.rows()))));
    const int to = static_cast<int>(std::lround(std::sqrt(static_cast<double>(current.rows()))));
    resampled.resize(current.rows(), source.cols());
    for (int y = 0; y < to; ++y)
      for (int x = 0; x < to; ++x) resampled.row(y * to + x) = source.row((y * from / to) * from + x * from / to);
    src = &resampled;
  }
  std::vector<int> replaced;
  for (const auto& [t, s] : alignment) {
    current.col(t) = src->col(s);
    replaced.push_back(t);
  }
  return replaced;
}

Map inject(const AttentionRecord& source, const Map& current, const AttentionSite& site, int timestep,
           int step_index, int total_steps, const Alignment& alignment, double tau) {
  Map out = current;
  if (step_index < injection_steps(tau, total_steps))
    inject_columns(out, source.at(site.layer, timestep, site.head), alignment);
  return out;
}

void AttentionController::on_attention(const AttentionSite& site, Map& probs, ad::ProbabilityEdit<float>& edit) {
  const bool injecting = inject_ && step_index_ < injection_steps(inject_->tau, inject_->total_steps);
  if (injecting || !masks_.empty()) edit.gate = Map::Ones(probs.rows(), probs.cols());
  if (injecting) {
    const auto replaced = inject_columns(probs, inject_->source->at(site.layer, timestep_, site.head),
                                         inject_->alignment);
    for (int c : replaced) edit.gate.col(c).setZero();
  }
  for (const auto& m : masks_) {
    const Eigen::VectorXf v = m.mask.vector_at(site.resolution);
    mask_token_attention_inplace(probs, m.token, v);
    mask_token_attention_inplace(edit.gate, m.token, v);
  }
  if (observer_) observer_(site, probs);
  if (record_) record_->add(site, timestep_, probs);
}

void dump_attention(const AttentionRecord& record, int token, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (int layer : record.layers()) {
    const int side = record.resolution(layer);
    for (int t : record.timesteps()) {
      if (!record.contains(layer, t, 0)) continue;
      char name[64];
      std::snprintf(name, sizeof(name), "layer%d_t%03d.png", layer, t);
      write_gray_png(dir / name, side, record.head_mean(layer, t).col(token));
    }
  }
}

}  // namespace idedit::attn
