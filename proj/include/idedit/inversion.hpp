// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// DDIM inversion of an image, per-timestep null-text optimization, guided
// resampling, and the persisted inversion bundle.

#pragma once

#include "idedit/attnctl.hpp"
#include "idedit/model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace idedit::inversion {

/// Latents from the clean image (index 0, t = 0) up to z_T (index steps), in
/// ascending noise order: index i sits at timestep timesteps()[steps - i].
using Trajectory = std::vector<Eigen::MatrixXf>;

/// Deterministic DDIM inversion with guidance fixed to 1. The noise estimate
/// for the move t_prev -> t is taken at the destination timestep t.
/// Throws NumericalError (with the timestep) on a non-finite latent.
Trajectory ddim_invert(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                       const diffusion::Var<float>& cond, attn::AttentionController* hook = nullptr);

struct NtiConfig {
  int inner_steps = 10;
  double lr = 1e-2;
  double tol = 1e-5;
  int divergence_patience = 5;  // consecutive loss increases before giving up on a step
};

struct NtiResult {
  std::vector<Eigen::MatrixXf> nulls;  // one per inference step, step 0 = largest t
  std::vector<double> loss_before;     // per step, at the warm start
  std::vector<double> loss_after;      // per step, best found
  int diverged_steps = 0;
};

/// For each step from z_T down, optimizes the null sequence so the guided DDIM
/// step from the running latent lands on the inverted trajectory; warm-starts
/// from the previous optimum and keeps the best iterate.
NtiResult null_text_optimize(const diffusion::DiffusionModel& model, const Trajectory& trajectory,
                             const diffusion::Var<float>& cond, double w, const NtiConfig& config = {},
                             attn::AttentionController* hook = nullptr);

/// Guided DDIM sampling from z_T. `nulls` holds one unconditional sequence per
/// step; empty means the model's learned null everywhere. The hook applies to
/// the conditional branch only.
Eigen::MatrixXf sample(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& z_T,
                       const diffusion::Var<float>& cond, const std::vector<Eigen::MatrixXf>& nulls, double w,
                       attn::AttentionController* hook = nullptr);

/// Spatial control carried by a bundle: mask `token` of the prompt by `mask`.
struct SpatialControl {
  std::string token;  // e.g. "[I]"
  attn::ObjectMask mask;
};

struct InversionBundle {
  Trajectory trajectory;
  std::vector<Eigen::MatrixXf> nulls;  // empty for plain DDIM inversion
  std::string prompt;
  double w = 1.0;
  std::optional<SpatialControl> control;
  std::string checkpoint_hash;
  std::string image_key;
  std::vector<double> nti_loss_before, nti_loss_after;

  /// Throws std::invalid_argument unless the trajectory/nulls match `steps`
  /// and every latent is finite.
  void validate(int steps) const;
  const Eigen::MatrixXf& z_T() const { return trajectory.back(); }
};

/// Controller applying the bundle's spatial control for `prompt` (or nothing).
attn::AttentionController control_hook(const diffusion::DiffusionModel& model, const std::string& prompt,
                                       const std::optional<SpatialControl>& control);

struct InvertOptions {
  double w = 4.5;
  bool optimize_nulls = true;
  NtiConfig nti;
};

/// ddim_invert followed (optionally) by null_text_optimize.
InversionBundle invert_image(const diffusion::DiffusionModel& model, const Eigen::MatrixXf& x0,
                             const std::string& prompt, const InvertOptions& options,
                             std::optional<SpatialControl> control = std::nullopt, std::string checkpoint_hash = {},
                             std::string image_key = {});

/// Deterministic guided resampling of a bundle (model range, 3 x side^2).
Eigen::MatrixXf reconstruct(const diffusion::DiffusionModel& model, const InversionBundle& bundle);

void save_bundle(const std::filesystem::path& path, const InversionBundle& bundle);
/// Rejects (PrerequisiteError) a bundle made from another checkpoint or image.
InversionBundle load_bundle(const std::filesystem::path& path, const std::string& expected_checkpoint_hash,
                            const std::string& expected_image_key);

}  // namespace idedit::inversion
