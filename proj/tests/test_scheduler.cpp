// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/scheduler.hpp"

#include <doctest.h>

#include <random>

using namespace idedit;
using namespace idedit::diffusion;

namespace {

Eigen::MatrixXf gaussian(std::mt19937_64& rng, int rows = 3, int cols = 64) {
  std::normal_distribution<float> d(0.0f, 1.0f);
  Eigen::MatrixXf m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = d(rng);
  return m;
}

}  // namespace

TEST_CASE("schedule shape") {
  const Scheduler s;
  CHECK(s.steps() == 50);
  CHECK(s.timesteps().front() == 250);
  CHECK(s.timesteps().back() == 5);
  CHECK(s.previous(0) == 245);
  CHECK(s.previous(49) == 0);
  CHECK_THROWS(s.previous(50));
  CHECK(s.alpha_bar(0) == 1.0);
  for (int t = 1; t <= 256; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  CHECK(s.alpha_bar(256) > 0.0);
  CHECK_THROWS(Scheduler(ScheduleConfig{256, 1e-4, 2e-2, 256}));
}

// Values from tests/oracles/reference_values.py.
TEST_CASE("schedule matches the reference values") {
  const Scheduler s;
  CHECK(s.alpha_bar(1) == doctest::Approx(0.99990000000000001).epsilon(1e-12));
  CHECK(s.alpha_bar(5) == doctest::Approx(0.99872023300965396).epsilon(1e-12));
  CHECK(s.alpha_bar(100) == doctest::Approx(0.67210735458297188).epsilon(1e-12));
  CHECK(s.alpha_bar(250) == doctest::Approx(0.084573195128831227).epsilon(1e-12));
  CHECK(s.alpha_bar(256) == doctest::Approx(0.075008049429064944).epsilon(1e-12));
  const DdimMap a = ddim_map(s, 250, 245);
  CHECK(a.z_coef == doctest::Approx(1.0501307226215972).epsilon(1e-12));
  CHECK(a.eps_coef == doctest::Approx(-0.052517182734012846).epsilon(1e-12));
  const DdimMap b = ddim_map(s, 5, 0);
  CHECK(b.z_coef == doctest::Approx(1.0006404983272406).epsilon(1e-12));
  CHECK(b.eps_coef == doctest::Approx(-0.035796744161842142).epsilon(1e-12));
  const DdimMap c = ddim_map(s, 0, 250);
  CHECK(c.z_coef == doctest::Approx(0.29081470927178227).epsilon(1e-12));
  CHECK(c.eps_coef == doctest::Approx(0.95677939195572603).epsilon(1e-12));
}

TEST_CASE("guidance combination properties") {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 100; ++k) {
    const Eigen::MatrixXf u = gaussian(rng), c = gaussian(rng);
    CHECK(cfg_combine(u, c, 1.0) == c);
    CHECK(cfg_combine(u, c, 0.0) == u);
    const double w = std::uniform_real_distribution<double>(-2.0, 10.0)(rng);
    const Eigen::MatrixXf affine = u + static_cast<float>(w) * (c - u);
    CHECK((cfg_combine(u, c, w) - affine).cwiseAbs().maxCoeff() <= 1e-6f * (1.0f + affine.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("deterministic step inverts the inverse step") {
  const Scheduler s;
  std::mt19937_64 rng(3);
  for (int k = 0; k < 100; ++k) {
    const int i = static_cast<int>(rng() % 50);
    const int t = s.timesteps()[static_cast<std::size_t>(i)];
    const int t_prev = s.previous(i);
    const Eigen::MatrixXf z_prev = gaussian(rng), eps = gaussian(rng);
    const Eigen::MatrixXf z_t = ddim_inverse_step(s, z_prev, eps, t_prev, t);
    CHECK((ddim_step(s, z_t, eps, t, t_prev) - z_prev).cwiseAbs().maxCoeff() <= 1e-5f);
  }
}

TEST_CASE("noising matches the deterministic map from zero") {
  const Scheduler s;
  std::mt19937_64 rng(4);
  const Eigen::MatrixXf x0 = gaussian(rng), eps = gaussian(rng);
  for (int t : {5, 100, 250}) {
    const Eigen::MatrixXf z = add_noise(s, x0, eps, t);
    const DdimMap m = ddim_map(s, 0, t);
    CHECK((z - (static_cast<float>(m.z_coef) * x0 + static_cast<float>(m.eps_coef) * eps)).cwiseAbs().maxCoeff() < 1e-5f);
    // A clean step with the true noise recovers x0.
    CHECK((ddim_step(s, z, eps, t, 0) - x0).cwiseAbs().maxCoeff() < 1e-4f);
  }
}
