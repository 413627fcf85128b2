// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Prompt-driven editing of an inverted image: a source pass regenerates the
// image and supplies attention for shared tokens, a lockstep target pass
// follows the target prompt. Also two-token composition.

#pragma once

#include "idedit/identity_ft.hpp"
#include "idedit/inversion.hpp"

#include <optional>
#include <string>
#include <vector>

namespace idedit::editor {

struct EditTask {
  std::string source_prompt;  // the prompt the bundle was inverted with
  std::string target_prompt;
  double w = 4.5;
  double tau_inj = 0.6;
  bool spatial_control = true;
  /// Token that must appear in both prompts; empty disables the check
  /// (editing with a model that never learned one).
  std::string identity_token = identity::kIdentityToken;
  /// Further target tokens confined to the bundle's object mask.
  std::vector<std::string> extra_masked_tokens;
  /// Computed from the prompts when empty.
  std::optional<attn::Alignment> alignment;
};

struct EditResult {
  Eigen::MatrixXf edited;                     // model range
  attn::AttentionRecord target_attention;     // filled when requested
  int injected_steps = 0;
};

/// Throws PrerequisiteError when the bundle was made with another checkpoint
/// or prompt, std::invalid_argument for an invalid task.
EditResult edit(const diffusion::DiffusionModel& model, const std::string& checkpoint_hash,
                const inversion::InversionBundle& bundle, const EditTask& task, bool record_target = false);

struct ComposeTask {
  Eigen::MatrixXf source_x0;               // model range
  identity::EnhancedPrompt source;         // carries [I]
  Eigen::MatrixXf reference_x0;
  identity::EnhancedPrompt reference;      // carries [A]
  std::string reference_mask_word;         // attention word for the [A] mask; empty = anchor word
  std::string mix_prompt;                  // contains both tokens
  double w = 4.5;
  double tau_inj = 0.6;
};

struct ComposeResult {
  diffusion::DiffusionModel model;
  inversion::InversionBundle bundle;
  Eigen::MatrixXf reconstruction;
  Eigen::MatrixXf composed;
  std::vector<identity::LossRecord> trace;
};

/// Object mask of `word` in `prompt` from the given model, packaged as the
/// bundle's spatial control for `token`.
inversion::SpatialControl spatial_control_for(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                                              const std::string& prompt, const std::string& word,
                                              const std::string& token, std::uint64_t seed,
                                              const attn::MaskPolicy& policy = {});

/// Joint alternating fine-tune on both pairs, inversion of the source with its
/// prompt, then generation with the mix prompt.
ComposeResult compose(const diffusion::DiffusionModel& base, const ComposeTask& task,
                      const identity::FinetuneConfig& ft, const inversion::NtiConfig& nti = {});

}  // namespace idedit::editor
