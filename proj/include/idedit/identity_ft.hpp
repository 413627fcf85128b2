// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Identity fine-tuning: learn a special token on a single image with the
// reconstruction loss, an orthogonality penalty against the prompt's pooled
// embedding, and the token's cross-attention confined to the object mask.

#pragma once

#include "idedit/attnctl.hpp"
#include "idedit/model.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace idedit::identity {

inline constexpr const char* kIdentityToken = "[I]";
inline constexpr const char* kAttributeToken = "[A]";

/// A prompt with a special token inserted directly before an anchor word.
struct EnhancedPrompt {
  std::string base;         // original prompt, without the token
  std::string object_word;  // anchor the token precedes
  std::string token;        // e.g. "[I]"
  std::string text;         // prompt with the token inserted
};

/// Pure string form. Throws std::invalid_argument if the anchor word is absent
/// or repeated, or the prompt already contains the token.
EnhancedPrompt build_enhanced_prompt(const std::string& prompt, const std::string& object_word,
                                     const std::string& token = kIdentityToken);

/// Registers `token` in the model's vocabulary unless it is already there.
void ensure_token(diffusion::DiffusionModel& model, const std::string& token, std::uint64_t init_seed);

/// |cos(e_I, e_P)|. Throws std::invalid_argument on a zero-norm input.
double semantic_loss(const Eigen::VectorXf& e_I, const Eigen::VectorXf& e_P);
diffusion::Var<float> semantic_loss(const diffusion::Var<float>& e_I, const diffusion::Var<float>& e_P);

struct FinetuneConfig {
  double lambda = 0.1;
  double lr = 1e-4;         // denoiser and text encoder; the large-model origin value is 2e-6
  double token_lr = 5e-3;   // the special-token embeddings
  int steps = 200;
  int batch = 1;
  int mask_refresh = 50;    // re-derive masks from the current model every N steps (0: never)
  bool spatial_control = true;
  bool train_model = true;  // false: only the token embeddings move
  attn::MaskPolicy mask_policy;
  std::uint64_t seed = 0;
};

struct FinetuneTarget {
  Eigen::MatrixXf x0;         // model range
  EnhancedPrompt prompt;
  std::string mask_word;      // word whose attention defines the token mask; empty = object word
};

struct LossRecord {
  int step = 0;
  int target = 0;
  double recons = 0.0;
  double semantic = 0.0;  // |cos(e_P, e_I)| before the update
  double total = 0.0;
};

struct FinetuneHooks {
  std::function<void(const LossRecord&)> on_step;
  /// Every conditional cross-attention map after masking.
  std::function<void(int step, const attn::AttentionSite&, const attn::Map&)> on_attention;
};

struct FinetuneResult {
  std::vector<LossRecord> trace;
  std::vector<attn::ObjectMask> masks;  // latest mask per target
  std::vector<double> final_cos;        // per target, after the last step
};

/// Alternates one optimization step per target. Every target's token must
/// already be registered (ensure_token). Throws NumericalError with the step
/// on a non-finite loss.
FinetuneResult finetune_joint(diffusion::DiffusionModel& model, const std::vector<FinetuneTarget>& targets,
                              const FinetuneConfig& config, const FinetuneHooks& hooks = {});

/// Single image; registers the token if needed.
FinetuneResult finetune(diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0, const EnhancedPrompt& prompt,
                        const FinetuneConfig& config, const FinetuneHooks& hooks = {});

/// One JSON object per line: step, target, L_recons, L_semantic, abs_cos, total.
void write_trace(const std::filesystem::path& path, const std::vector<LossRecord>& trace);

}  // namespace idedit::identity
