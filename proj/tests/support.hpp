// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests: a tiny random-weight model and a
// finite-difference gradient checker.

#pragma once

#include "idedit/autograd.hpp"
#include "idedit/model.hpp"
#include "idedit/synthworld.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

namespace idedit::testing {

/// Small untrained model; enough for shape, wiring and determinism checks.
inline diffusion::DiffusionModel tiny_model(std::uint64_t seed = 7, int base_channels = 8) {
  diffusion::ModelConfig c;
  c.denoiser.base_channels = base_channels;
  c.denoiser.norm_groups = 4;
  c.schedule.inference_steps = 10;
  return diffusion::DiffusionModel(c, synth::caption_words(), seed);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = d(rng);
  return m;
}

/// Max relative error between the analytic gradient of a scalar function and
/// central differences, over every entry of every input.
inline double gradcheck(const std::function<ad::Var<double>(const std::vector<ad::Var<double>>&)>& f,
                        std::vector<Eigen::MatrixXd> inputs, double h = 1e-6) {
  std::vector<ad::Var<double>> vars;
  for (auto& m : inputs) vars.emplace_back(m, true);
  const ad::Var<double> out = f(vars);
  REQUIRE(out.rows() == 1);
  REQUIRE(out.cols() == 1);
  ad::backward(out);

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Eigen::MatrixXd analytic =
        vars[k].grad().size() ? vars[k].grad() : Eigen::MatrixXd::Zero(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<ad::Var<double>> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Eigen::MatrixXd m = inputs[j];
          if (j == k) m(i) += delta;
          probe.emplace_back(m, false);
        }
        return f(probe).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double err = std::abs(numeric - analytic(i)) / std::max(1e-6, std::abs(numeric) + std::abs(analytic(i)));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

/// Reduces a matrix output to a scalar with fixed random weights so every
/// entry's gradient is exercised.
inline ad::Var<double> project(const ad::Var<double>& x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd w = random_matrix(x.rows(), x.cols(), rng);
  const ad::Var<double> ones(Eigen::MatrixXd::Ones(1, x.rows()), false);
  const ad::Var<double> col_ones(Eigen::MatrixXd::Ones(x.cols(), 1), false);
  return ad::matmul(ad::matmul(ones, ad::cwise_mul(x, ad::Var<double>(w, false))), col_ones);
}

}  // namespace idedit::testing
