// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-attention instrumentation: recording, per-token spatial masking,
// attention-derived object masks and shared-token injection. Maps are
// queries x tokens (Q x L), one per (layer, timestep, head).

#pragma once

#include "idedit/denoiser.hpp"
#include "idedit/image.hpp"
#include "idedit/text.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace idedit::diffusion {
class DiffusionModel;
}

namespace idedit::attn {

using Map = Eigen::MatrixXf;
using diffusion::AttentionSite;

/// Cross-attention maps of one or more denoiser passes.
class AttentionRecord {
 public:
  void add(const AttentionSite& site, int timestep, const Map& map);

  bool contains(int layer, int timestep, int head) const;
  /// Throws std::out_of_range when the entry is missing.
  const Map& at(int layer, int timestep, int head) const;
  /// Mean over heads.
  Map head_mean(int layer, int timestep) const;

  bool empty() const { return maps_.empty(); }
  std::size_t size() const { return maps_.size(); }
  /// Spatial side length of a layer's query grid.
  int resolution(int layer) const;
  std::set<int> layers() const;
  std::set<int> timesteps() const;
  int heads() const { return heads_; }

 private:
  std::map<std::tuple<int, int, int>, Map> maps_;  // (layer, timestep, head)
  std::map<int, int> resolution_;
  int heads_ = 0;
};

/// Multiplies column `token` of `map` elementwise by the binary vector `mask`
/// (length Q). Other columns are untouched; there is no renormalization.
Map mask_token_attention(const Map& map, int token, const Eigen::VectorXf& mask);
void mask_token_attention_inplace(Map& map, int token, const Eigen::VectorXf& mask);

/// Binary object mask at every attention resolution.
struct ObjectMask {
  std::map<int, BinaryMask> by_resolution;
  std::string token;        // word whose attention produced the mask
  int derived_at = 0;       // resolution the threshold was applied at
  double threshold = 0.0;
  bool used_fallback = false;

  const BinaryMask& at(int resolution) const;
  /// Resolution-matched vector form for mask_token_attention.
  Eigen::VectorXf vector_at(int resolution) const { return at(resolution).as_float(); }
};

struct MaskPolicy {
  int resolution = 16;              // derive at this attention resolution
  double std_factor = 0.5;          // threshold = mean + std_factor * std
  double fallback_fraction = 0.25;  // top fraction kept when the threshold leaves nothing
};

/// Thresholds one averaged side x side map. Returns the mask, the threshold
/// and whether the quantile fallback was used. Throws std::runtime_error when
/// even the fallback is empty.
struct Binarized {
  BinaryMask mask;
  double threshold = 0.0;
  bool used_fallback = false;
};
Binarized binarize_attention(const Eigen::VectorXf& averaged, int side, const MaskPolicy& policy = {});

/// Averages column `token` over every recorded layer at policy.resolution, all
/// heads and all timesteps, binarizes, and resamples (nearest) to each entry of
/// `resolutions`.
ObjectMask derive_object_mask(const AttentionRecord& record, int token, const std::vector<int>& resolutions,
                              const MaskPolicy& policy = {}, const std::string& token_name = {});

/// Conditional passes over a noised copy of `x0` at every inference timestep,
/// recording attention (the input of derive_object_mask).
AttentionRecord record_image_attention(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                                       const diffusion::Var<float>& text, std::uint64_t seed);

/// Convenience: record, then derive the mask of `word` in `prompt`.
ObjectMask object_mask_for(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                           const std::string& prompt, const std::string& word, std::uint64_t seed,
                           const MaskPolicy& policy = {});

/// Pairs of (target position, source position) for tokens present in both
/// sequences: <cls>, words matched by identity and occurrence order, and
/// padding slots matched by position.
using Alignment = std::vector<std::pair<int, int>>;
Alignment align_tokens(const text::TokenSeq& source, const text::TokenSeq& target);
/// Throws std::invalid_argument unless every pair names the same token on both sides.
void validate_alignment(const Alignment& alignment, const text::TokenSeq& source, const text::TokenSeq& target);

/// Number of leading inference steps that receive injection.
int injection_steps(double tau, int total_steps);

/// Replaces the aligned columns of `current` with the source map's columns
/// (query axis resampled nearest if resolutions differ). Returns the replaced
/// target columns.
std::vector<int> inject_columns(Map& current, const Map& source, const Alignment& alignment);

/// Pure form: returns `current` with aligned columns replaced when
/// step_index < injection_steps(tau, total_steps), else unchanged.
Map inject(const AttentionRecord& source, const Map& current, const AttentionSite& site, int timestep,
           int step_index, int total_steps, const Alignment& alignment, double tau);

/// Hook that records and/or edits maps. Call set_step before every forward.
class AttentionController : public diffusion::CrossAttentionHook<float> {
 public:
  struct MaskSpec {
    int token = -1;
    ObjectMask mask;
  };
  struct InjectSpec {
    const AttentionRecord* source = nullptr;
    Alignment alignment;
    double tau = 0.6;
    int total_steps = 50;
  };

  void record_into(AttentionRecord* record) { record_ = record; }
  void set_mask(MaskSpec spec) { masks_.push_back(std::move(spec)); }
  void clear_masks() { masks_.clear(); }
  void set_inject(InjectSpec spec) { inject_ = std::move(spec); }
  /// Called with every map after edits are applied.
  void set_observer(std::function<void(const AttentionSite&, const Map&)> fn) { observer_ = std::move(fn); }
  void set_step(int step_index, int timestep) {
    step_index_ = step_index;
    timestep_ = timestep;
  }

  void on_attention(const AttentionSite& site, Map& probs, ad::ProbabilityEdit<float>& edit) override;

 private:
  AttentionRecord* record_ = nullptr;
  std::vector<MaskSpec> masks_;
  std::optional<InjectSpec> inject_;
  std::function<void(const AttentionSite&, const Map&)> observer_;
  int step_index_ = 0;
  int timestep_ = 0;
};

/// One grayscale PNG per (layer, timestep) of the head-mean column `token`.
void dump_attention(const AttentionRecord& record, int token, const std::filesystem::path& dir);

}  // namespace idedit::attn
