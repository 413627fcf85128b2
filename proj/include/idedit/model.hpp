// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// The text-conditional diffusion model as one unit: vocabulary + text encoder,
// denoiser, learned null-text sequence and schedule. Also base training and
// checkpoint persistence.

#pragma once

#include "idedit/container.hpp"
#include "idedit/denoiser.hpp"
#include "idedit/scheduler.hpp"
#include "idedit/text.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace idedit::diffusion {

struct ModelConfig {
  DenoiserConfig denoiser;
  text::TextEncoderConfig text;
  ScheduleConfig schedule;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

class DiffusionModel {
 public:
  DiffusionModel(const ModelConfig& config, const std::vector<std::string>& words, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Scheduler& scheduler() const { return scheduler_; }
  text::TextEncoder<float>& text() { return text_; }
  const text::TextEncoder<float>& text() const { return text_; }
  Denoiser<float>& unet() { return unet_; }
  const Denoiser<float>& unet() const { return unet_; }
  /// Learned unconditional text sequence (text_width x L).
  const Var<float>& null_text() const { return null_text_; }

  text::TokenSeq tokenize(const std::string& prompt) const { return text::tokenize(prompt, text_.vocab()); }
  text::TextEmbedding<float> encode(const std::string& prompt) const { return text_.encode(tokenize(prompt)); }

  /// Differentiable noise prediction.
  Var<float> predict(const Var<float>& z, int t, const Var<float>& text_tokens,
                     CrossAttentionHook<float>* hook = nullptr) const;
  /// Inference-only noise prediction (no graph).
  Eigen::MatrixXf predict_noise(const Eigen::MatrixXf& z, int t, const Var<float>& text_tokens,
                                CrossAttentionHook<float>* hook = nullptr) const;

  /// Every leaf: text encoder (incl. registered tokens), denoiser, null text.
  /// Models start frozen; training loops enable and restore gradients.
  std::vector<Var<float>> parameters() const;
  void set_trainable(bool on);

  Container to_container() const;
  static DiffusionModel from_container(const Container& c);
  DiffusionModel clone() const { return from_container(to_container()); }

 private:
  ModelConfig config_;
  Scheduler scheduler_;
  text::TextEncoder<float> text_;
  Denoiser<float> unet_;
  nn::ParamStore<float> extra_;
  Var<float> null_text_;
};

struct Checkpoint {
  DiffusionModel model;
  std::string hash;         // sha256 of the file it was loaded from / saved to
  std::string parent_hash;  // empty for a base checkpoint
  nlohmann::json info;      // free-form provenance (training summary, object word, ...)
};

std::string save_checkpoint(const std::filesystem::path& path, const DiffusionModel& model,
                            const std::string& parent_hash = {}, const nlohmann::json& info = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct TrainSample {
  Eigen::MatrixXf x0;  // 3 x side*side in [-1, 1]
  std::string caption;
};

struct TrainConfig {
  int steps = 6000;
  int batch = 4;
  double lr = 1e-3;
  int warmup = 200;
  double cond_drop = 0.1;
  std::uint64_t seed = 0;
};

/// Epsilon-prediction training. Returns the per-step mean batch loss.
/// Throws NumericalError with the step index on a non-finite loss.
std::vector<double> train_base(DiffusionModel& model, const std::vector<TrainSample>& data, const TrainConfig& config,
                               const std::function<void(int, double)>& on_step = {});

/// Mean epsilon-MSE over a fixed seeded set of (sample, t, noise) draws.
double evaluate_eps_mse(const DiffusionModel& model, const std::vector<TrainSample>& data, int draws,
                        std::uint64_t seed);

}  // namespace idedit::diffusion
