// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/denoiser.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace idedit::diffusion {

void DenoiserConfig::validate() const {
  if (image_size < 1 || base_channels < 1 || channel_mults.empty() || heads < 1)
    throw std::invalid_argument("denoiser config: non-positive size");
  const int coarsest = image_size >> (channel_mults.size() - 1);
  if (coarsest < 1 || (coarsest << (channel_mults.size() - 1)) != image_size)
    throw std::invalid_argument("denoiser config: image size not divisible by the down path");
  for (int r : attention_resolutions) {
    if (r < 1 || image_size % r != 0) throw std::invalid_argument("denoiser config: attention resolution must divide image size");
    bool reached = false;
    for (std::size_t l = 0; l < channel_mults.size(); ++l) reached = reached || (image_size >> l) == r;
    if (!reached) throw std::invalid_argument("denoiser config: attention resolution not on the down path");
  }
  for (int m : channel_mults)
    if ((base_channels * m) % heads != 0) throw std::invalid_argument("denoiser config: channels not divisible by heads");
}

template <typename Scalar>
int Denoiser<Scalar>::groups_for(int channels) const {
  return std::gcd(config_.norm_groups, channels);
}

template <typename Scalar>
typename Denoiser<Scalar>::ResBlock Denoiser<Scalar>::make_block(const std::string& name, int in, int out,
                                                                 nn::Rng& rng) {
  ResBlock b;
  b.norm1 = nn::GroupNorm<Scalar>(store_, name + ".norm1", in, groups_for(in));
  b.conv1 = nn::Conv2d<Scalar>(store_, name + ".conv1", in, out, 3, 1, rng);
  b.time_proj = nn::Linear<Scalar>(store_, name + ".time", 2 * config_.time_width, out, rng);
  b.norm2 = nn::GroupNorm<Scalar>(store_, name + ".norm2", out, groups_for(out));
  b.conv2 = nn::Conv2d<Scalar>(store_, name + ".conv2", out, out, 3, 1, rng, 0.5);
  if (in != out) {
    b.has_skip = true;
    b.skip = nn::Conv2d<Scalar>(store_, name + ".skip", in, out, 1, 1, rng);
  }
  return b;
}

template <typename Scalar>
typename Denoiser<Scalar>::CrossAttention Denoiser<Scalar>::make_attention(const std::string& name, int channels,
                                                                           int resolution, nn::Rng& rng) {
  CrossAttention a;
  a.norm = nn::GroupNorm<Scalar>(store_, name + ".norm", channels, groups_for(channels));
  a.q = nn::Linear<Scalar>(store_, name + ".q", channels, channels, rng);
  a.k = nn::Linear<Scalar>(store_, name + ".k", config_.text_width, channels, rng);
  a.v = nn::Linear<Scalar>(store_, name + ".v", config_.text_width, channels, rng);
  a.o = nn::Linear<Scalar>(store_, name + ".o", channels, channels, rng, 0.5);
  a.layer_id = static_cast<int>(attention_layers_.size());
  a.resolution = resolution;
  attention_layers_.emplace_back(a.layer_id, resolution);
  return a;
}

template <typename Scalar>
Denoiser<Scalar>::Denoiser(const DenoiserConfig& config, nn::Rng& rng) : config_(config) {
  config_.validate();
  const int base = config_.base_channels;
  const auto& mults = config_.channel_mults;
  const int n = static_cast<int>(mults.size());
  conv_in_ = nn::Conv2d<Scalar>(store_, "unet.conv_in", 3, base * mults[0], 3, 1, rng);
  time1_ = nn::Linear<Scalar>(store_, "unet.time1", config_.time_width, 2 * config_.time_width, rng);
  time2_ = nn::Linear<Scalar>(store_, "unet.time2", 2 * config_.time_width, 2 * config_.time_width, rng);

  int ch = base * mults[0];
  std::vector<int> skip_channels;
  for (int l = 0; l < n; ++l) {
    const int side = config_.image_size >> l;
    const int out = base * mults[static_cast<std::size_t>(l)];
    const std::string p = "unet.down" + std::to_string(l);
    Level level;
    level.block = make_block(p + ".block", ch, out, rng);
    ch = out;
    if (config_.attention_resolutions.count(side)) {
      level.has_attention = true;
      level.attention = make_attention(p + ".attn", ch, side, rng);
    }
    if (l + 1 < n) {
      skip_channels.push_back(ch);
      level.down = nn::Conv2d<Scalar>(store_, p + ".downsample", ch, ch, 3, 2, rng);
    }
    levels_.push_back(std::move(level));
  }
  for (int l = n - 2; l >= 0; --l) {
    const int side = config_.image_size >> l;
    const int out = base * mults[static_cast<std::size_t>(l)];
    const std::string p = "unet.up" + std::to_string(l);
    UpLevel up;
    up.block = make_block(p + ".block", ch + skip_channels[static_cast<std::size_t>(l)], out, rng);
    ch = out;
    if (config_.attention_resolutions.count(side)) {
      up.has_attention = true;
      up.attention = make_attention(p + ".attn", ch, side, rng);
    }
    up_levels_.push_back(std::move(up));
  }
  norm_out_ = nn::GroupNorm<Scalar>(store_, "unet.norm_out", ch, groups_for(ch));
  conv_out_ = nn::Conv2d<Scalar>(store_, "unet.conv_out", ch, 3, 3, 1, rng, 0.1);
}

template <typename Scalar>
Var<Scalar> Denoiser<Scalar>::time_embedding(int t) const {
  const int half = config_.time_width / 2;
  Matrix<Scalar> e(config_.time_width, 1);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i, 0) = static_cast<Scalar>(std::sin(t * freq));
    e(i + half, 0) = static_cast<Scalar>(std::cos(t * freq));
  }
  return ad::silu(time2_(ad::silu(time1_(ad::constant<Scalar>(std::move(e))))));
}

template <typename Scalar>
Var<Scalar> Denoiser<Scalar>::run_block(const ResBlock& b, const Var<Scalar>& x, int side,
                                        const Var<Scalar>& temb) const {
  Var<Scalar> h = b.conv1(ad::silu(b.norm1(x)), side, side);
  h = ad::add_colwise(h, b.time_proj(temb));
  h = b.conv2(ad::silu(b.norm2(h)), side, side);
  return ad::add(b.has_skip ? b.skip(x, side, side) : x, h);
}

template <typename Scalar>
Var<Scalar> Denoiser<Scalar>::run_attention(const CrossAttention& a, const Var<Scalar>& x, const Var<Scalar>& text,
                                            CrossAttentionHook<Scalar>* hook) const {
  const int channels = static_cast<int>(x.rows());
  const int dh = channels / config_.heads;
  const Var<Scalar> q = a.q(a.norm(x));
  const Var<Scalar> k = a.k(text);
  const Var<Scalar> v = a.v(text);
  const Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  std::vector<Var<Scalar>> heads;
  heads.reserve(static_cast<std::size_t>(config_.heads));
  for (int h = 0; h < config_.heads; ++h) {
    auto scores = ad::scale(ad::matmul_tn(ad::slice_rows(q, h * dh, dh), ad::slice_rows(k, h * dh, dh)), inv);
    ad::ProbabilityHook<Scalar> fn;
    if (hook) {
      const AttentionSite site{a.layer_id, h, a.resolution};
      fn = [hook, site](Matrix<Scalar>& probs, ad::ProbabilityEdit<Scalar>& edit) {
        hook->on_attention(site, probs, edit);
      };
    }
    auto probs = ad::softmax_rows<Scalar>(scores, {}, fn);
    heads.push_back(ad::matmul_nt(ad::slice_rows(v, h * dh, dh), probs));
  }
  return ad::add(x, a.o(ad::vcat<Scalar>(heads)));
}

template <typename Scalar>
Var<Scalar> Denoiser<Scalar>::forward(const Var<Scalar>& x, int t, const Var<Scalar>& text,
                                      CrossAttentionHook<Scalar>* hook) const {
  const int side = config_.image_size;
  if (x.rows() != 3 || x.cols() != static_cast<Eigen::Index>(side) * side)
    throw std::invalid_argument("denoiser: latent shape mismatch");
  if (text.rows() != config_.text_width) throw std::invalid_argument("denoiser: text width mismatch");
  const Var<Scalar> temb = time_embedding(t);
  Var<Scalar> h = conv_in_(x, side, side);
  std::vector<Var<Scalar>> skips;
  const int n = static_cast<int>(levels_.size());
  for (int l = 0; l < n; ++l) {
    const int s = side >> l;
    const Level& level = levels_[static_cast<std::size_t>(l)];
    h = run_block(level.block, h, s, temb);
    if (level.has_attention) h = run_attention(level.attention, h, text, hook);
    if (l + 1 < n) {
      skips.push_back(h);
      h = level.down(h, s, s);
    }
  }
  for (int i = 0; i < static_cast<int>(up_levels_.size()); ++i) {
    const int l = n - 2 - i;
    const int s = side >> l;
    const UpLevel& up = up_levels_[static_cast<std::size_t>(i)];
    h = ad::upsample_nearest2x(h, s / 2, s / 2);
    const std::array<Var<Scalar>, 2> parts{h, skips[static_cast<std::size_t>(l)]};
    h = run_block(up.block, ad::vcat<Scalar>(parts), s, temb);
    if (up.has_attention) h = run_attention(up.attention, h, text, hook);
  }
  return conv_out_(ad::silu(norm_out_(h)), side, side);
}

template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace idedit::diffusion
