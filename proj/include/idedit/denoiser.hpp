// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Small text-conditional U-Net noise predictor. Cross-attention layers expose
// their per-head probability maps to an optional hook, which may record or
// edit them before they weight the text values.

#pragma once

#include "idedit/nn.hpp"

#include <set>
#include <string>
#include <vector>

namespace idedit::diffusion {

using ad::Matrix;
using ad::Var;

struct DenoiserConfig {
  int image_size = 32;
  int base_channels = 16;
  std::vector<int> channel_mults{1, 2, 4};
  std::set<int> attention_resolutions{16, 8};
  int heads = 4;
  int text_width = 64;
  int norm_groups = 8;
  int time_width = 64;

  /// Throws if an attention resolution does not divide the image size or is
  /// not reached by the down path.
  void validate() const;
};

/// Where a cross-attention map was produced.
struct AttentionSite {
  int layer = 0;       // cross-attention layer id, in forward order
  int head = 0;
  int resolution = 0;  // spatial side length of the query grid
};

/// Receives every cross-attention probability map (queries x tokens) after
/// the softmax. Implementations may edit `probs` in place; `edit.gate` must
/// then describe the edit for backpropagation.
template <typename Scalar>
class CrossAttentionHook {
 public:
  virtual ~CrossAttentionHook() = default;
  virtual void on_attention(const AttentionSite& site, Matrix<Scalar>& probs, ad::ProbabilityEdit<Scalar>& edit) = 0;
};

template <typename Scalar>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, nn::Rng& rng);

  /// x: 3 x side*side latent; text: text_width x L token embeddings.
  Var<Scalar> forward(const Var<Scalar>& x, int t, const Var<Scalar>& text,
                      CrossAttentionHook<Scalar>* hook = nullptr) const;

  const DenoiserConfig& config() const { return config_; }
  /// (layer id, resolution) of every cross-attention layer.
  const std::vector<std::pair<int, int>>& attention_layers() const { return attention_layers_; }

  nn::ParamStore<Scalar>& params() { return store_; }
  const nn::ParamStore<Scalar>& params() const { return store_; }

 private:
  struct ResBlock {
    nn::GroupNorm<Scalar> norm1, norm2;
    nn::Conv2d<Scalar> conv1, conv2;
    nn::Linear<Scalar> time_proj;
    nn::Conv2d<Scalar> skip;  // 1x1, only when channel counts differ
    bool has_skip = false;
  };
  struct CrossAttention {
    nn::GroupNorm<Scalar> norm;
    nn::Linear<Scalar> q, k, v, o;
    int layer_id = 0;
    int resolution = 0;
  };
  struct Level {
    ResBlock block;
    bool has_attention = false;
    CrossAttention attention;
    nn::Conv2d<Scalar> down;
  };
  struct UpLevel {
    ResBlock block;
    bool has_attention = false;
    CrossAttention attention;
  };

  ResBlock make_block(const std::string& name, int in, int out, nn::Rng& rng);
  CrossAttention make_attention(const std::string& name, int channels, int resolution, nn::Rng& rng);
  Var<Scalar> run_block(const ResBlock& b, const Var<Scalar>& x, int side, const Var<Scalar>& temb) const;
  Var<Scalar> run_attention(const CrossAttention& a, const Var<Scalar>& x, const Var<Scalar>& text,
                            CrossAttentionHook<Scalar>* hook) const;
  Var<Scalar> time_embedding(int t) const;
  int groups_for(int channels) const;

  DenoiserConfig config_;
  nn::ParamStore<Scalar> store_;
  nn::Conv2d<Scalar> conv_in_;
  nn::Linear<Scalar> time1_, time2_;
  std::vector<Level> levels_;
  std::vector<UpLevel> up_levels_;  // ordered from the coarsest skip back to full resolution
  nn::GroupNorm<Scalar> norm_out_;
  nn::Conv2d<Scalar> conv_out_;
  std::vector<std::pair<int, int>> attention_layers_;
};

}  // namespace idedit::diffusion
