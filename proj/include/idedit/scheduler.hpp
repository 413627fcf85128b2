// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Noise schedule, deterministic DDIM updates and classifier-free guidance.

#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

namespace idedit::diffusion {

struct ScheduleConfig {
  int train_steps = 256;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  int inference_steps = 50;
};

/// Linear-beta schedule. alpha_bar(0) == 1; alpha_bar(t) = prod_{s<=t}(1 - beta_s).
class Scheduler {
 public:
  explicit Scheduler(const ScheduleConfig& config = {});

  double alpha_bar(int t) const;
  const ScheduleConfig& config() const { return config_; }

  /// Inference timesteps, strictly decreasing, e.g. 250, 245, ..., 5.
  const std::vector<int>& timesteps() const { return timesteps_; }
  int steps() const { return static_cast<int>(timesteps_.size()); }
  /// Timestep reached after inference step k (0 after the last one).
  int previous(int step_index) const;

 private:
  ScheduleConfig config_;
  std::vector<double> alpha_bar_;
  std::vector<int> timesteps_;
};

/// z_to = z_coef * z_from + eps_coef * eps, the deterministic DDIM map between
/// two noise levels under a shared noise estimate. Works in both directions.
struct DdimMap {
  double z_coef;
  double eps_coef;
};

DdimMap ddim_map(const Scheduler& scheduler, int t_from, int t_to);

/// Reverse (denoising) update t -> t_prev with eta = 0. Only eta = 0 is supported.
Eigen::MatrixXf ddim_step(const Scheduler& scheduler, const Eigen::MatrixXf& z_t, const Eigen::MatrixXf& eps,
                          int t, int t_prev, double eta = 0.0);

/// Exact algebraic inverse of ddim_step under the same eps: t_prev -> t.
Eigen::MatrixXf ddim_inverse_step(const Scheduler& scheduler, const Eigen::MatrixXf& z_prev,
                                  const Eigen::MatrixXf& eps, int t_prev, int t);

/// eps_uncond + w * (eps_cond - eps_uncond); exact at w = 0 and w = 1.
Eigen::MatrixXf cfg_combine(const Eigen::MatrixXf& eps_uncond, const Eigen::MatrixXf& eps_cond, double w);

/// Forward noising sqrt(ab) x0 + sqrt(1 - ab) eps.
Eigen::MatrixXf add_noise(const Scheduler& scheduler, const Eigen::MatrixXf& x0, const Eigen::MatrixXf& eps, int t);

}  // namespace idedit::diffusion
