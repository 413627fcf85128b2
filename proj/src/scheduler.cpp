// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/scheduler.hpp"

#include <cmath>
#include <string>

namespace idedit::diffusion {

Scheduler::Scheduler(const ScheduleConfig& config) : config_(config) {
  if (config_.train_steps < 2 || config_.inference_steps < 1 || config_.inference_steps >= config_.train_steps)
    throw std::invalid_argument("scheduler: invalid step counts");
  const int n = config_.train_steps;
  alpha_bar_.resize(static_cast<std::size_t>(n) + 1);
  alpha_bar_[0] = 1.0;
  for (int s = 1; s <= n; ++s) {
    const double beta = config_.beta_start + (config_.beta_end - config_.beta_start) * (s - 1) / (n - 1);
    alpha_bar_[static_cast<std::size_t>(s)] = alpha_bar_[static_cast<std::size_t>(s) - 1] * (1.0 - beta);
  }
  const int ratio = n / config_.inference_steps;
  for (int k = 0; k < config_.inference_steps; ++k) timesteps_.push_back((config_.inference_steps - k) * ratio);
}

double Scheduler::alpha_bar(int t) const {
  if (t < 0 || t > config_.train_steps) throw std::out_of_range("scheduler: timestep " + std::to_string(t));
  return alpha_bar_[static_cast<std::size_t>(t)];
}

int Scheduler::previous(int step_index) const {
  if (step_index < 0 || step_index >= steps()) throw std::out_of_range("scheduler: step index");
  return step_index + 1 < steps() ? timesteps_[static_cast<std::size_t>(step_index) + 1] : 0;
}

DdimMap ddim_map(const Scheduler& scheduler, int t_from, int t_to) {
  const double a_from = scheduler.alpha_bar(t_from);
  const double a_to = scheduler.alpha_bar(t_to);
  const double s_from = std::sqrt(a_from);
  const double s_to = std::sqrt(a_to);
  // x0 = (z - sqrt(1-a_from) eps) / sqrt(a_from); z_to = sqrt(a_to) x0 + sqrt(1-a_to) eps
  return {s_to / s_from, std::sqrt(1.0 - a_to) - s_to * std::sqrt(1.0 - a_from) / s_from};
}

Eigen::MatrixXf ddim_step(const Scheduler& scheduler, const Eigen::MatrixXf& z_t, const Eigen::MatrixXf& eps,
                          int t, int t_prev, double eta) {
  if (eta != 0.0) throw std::invalid_argument("ddim_step: only eta = 0 is supported");
  if (!(t > t_prev && t_prev >= 0)) throw std::invalid_argument("ddim_step: requires t > t_prev >= 0");
  const DdimMap m = ddim_map(scheduler, t, t_prev);
  return static_cast<float>(m.z_coef) * z_t + static_cast<float>(m.eps_coef) * eps;
}

Eigen::MatrixXf ddim_inverse_step(const Scheduler& scheduler, const Eigen::MatrixXf& z_prev,
                                  const Eigen::MatrixXf& eps, int t_prev, int t) {
  if (!(t > t_prev && t_prev >= 0)) throw std::invalid_argument("ddim_inverse_step: requires t > t_prev >= 0");
  const DdimMap m = ddim_map(scheduler, t_prev, t);
  return static_cast<float>(m.z_coef) * z_prev + static_cast<float>(m.eps_coef) * eps;
}

Eigen::MatrixXf cfg_combine(const Eigen::MatrixXf& eps_uncond, const Eigen::MatrixXf& eps_cond, double w) {
  if (eps_uncond.rows() != eps_cond.rows() || eps_uncond.cols() != eps_cond.cols())
    throw std::invalid_argument("cfg_combine: shape mismatch");
  if (w == 1.0) return eps_cond;
  if (w == 0.0) return eps_uncond;
  return eps_uncond + static_cast<float>(w) * (eps_cond - eps_uncond);
}

Eigen::MatrixXf add_noise(const Scheduler& scheduler, const Eigen::MatrixXf& x0, const Eigen::MatrixXf& eps, int t) {
  const double a = scheduler.alpha_bar(t);
  return static_cast<float>(std::sqrt(a)) * x0 + static_cast<float>(std::sqrt(1.0 - a)) * eps;
}

}  // namespace idedit::diffusion
