// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/denoiser.hpp"
#include "idedit/text.hpp"
#include "support.hpp"

using namespace idedit;
using ad::Var;
using testing::gradcheck;
using testing::project;
using testing::random_matrix;
using Inputs = std::vector<Var<double>>;

namespace {

constexpr double kTol = 1e-6;

std::mt19937_64& rng() {
  static std::mt19937_64 r(1234);
  return r;
}

}  // namespace

TEST_CASE("elementwise and matrix products") {
  CHECK(gradcheck([](const Inputs& v) { return project(ad::add(v[0], v[1])); },
                  {random_matrix(3, 4, rng()), random_matrix(3, 4, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::sub(v[0], ad::scale(v[1], 0.3))); },
                  {random_matrix(3, 4, rng()), random_matrix(3, 4, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::cwise_mul(v[0], v[1])); },
                  {random_matrix(3, 4, rng()), random_matrix(3, 4, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::matmul(v[0], v[1])); },
                  {random_matrix(3, 5, rng()), random_matrix(5, 2, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::matmul_tn(v[0], v[1])); },
                  {random_matrix(5, 3, rng()), random_matrix(5, 2, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::matmul_nt(v[0], v[1])); },
                  {random_matrix(3, 5, rng()), random_matrix(2, 5, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::add_colwise(v[0], v[1])); },
                  {random_matrix(3, 5, rng()), random_matrix(3, 1, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::silu(v[0])); }, {random_matrix(4, 4, rng())}) < kTol);
}

TEST_CASE("slicing, concatenation and gathers") {
  CHECK(gradcheck([](const Inputs& v) { return project(ad::slice_rows(v[0], 1, 2)); }, {random_matrix(4, 3, rng())}) <
        kTol);
  CHECK(gradcheck(
            [](const Inputs& v) {
              const std::array parts{v[0], v[1]};
              return project(ad::vcat<double>(parts));
            },
            {random_matrix(2, 3, rng()), random_matrix(3, 3, rng())}) < kTol);
  CHECK(gradcheck(
            [](const Inputs& v) {
              const std::array ids{2, 0, -1, 2};
              return project(ad::gather_columns<double>(v[0], ids));
            },
            {random_matrix(3, 4, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::set_column(v[0], 1, v[1])); },
                  {random_matrix(3, 4, rng()), random_matrix(3, 1, rng())}) < kTol);
}

TEST_CASE("convolution, upsampling and normalization") {
  CHECK(gradcheck([](const Inputs& v) { return project(ad::conv2d(v[0], 4, 4, v[1], v[2], 3, 1, 1)); },
                  {random_matrix(2, 16, rng()), random_matrix(3, 18, rng()), random_matrix(3, 1, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::conv2d(v[0], 4, 4, v[1], v[2], 3, 2, 1)); },
                  {random_matrix(2, 16, rng()), random_matrix(3, 18, rng()), random_matrix(3, 1, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::upsample_nearest2x(v[0], 2, 3)); },
                  {random_matrix(2, 6, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::group_norm(v[0], v[1], v[2], 2)); },
                  {random_matrix(4, 9, rng()), random_matrix(4, 1, rng()), random_matrix(4, 1, rng())}) < 1e-5);
  CHECK(gradcheck([](const Inputs& v) { return project(ad::layer_norm(v[0], v[1], v[2])); },
                  {random_matrix(5, 3, rng()), random_matrix(5, 1, rng()), random_matrix(5, 1, rng())}) < 1e-5);
}

TEST_CASE("softmax with invalid keys and a gated edit") {
  const std::array valid{true, true, false, true};
  CHECK(gradcheck([&](const Inputs& v) { return project(ad::softmax_rows<double>(v[0], valid)); },
                  {random_matrix(3, 4, rng())}) < kTol);

  // Column 1 scaled by a fixed 0/1 mask, column 3 replaced by constants.
  const ad::ProbabilityHook<double> hook = [](ad::Matrix<double>& p, ad::ProbabilityEdit<double>& e) {
    e.gate = ad::Matrix<double>::Ones(p.rows(), p.cols());
    p(0, 1) = 0.0;
    e.gate(0, 1) = 0.0;
    p.col(3).setConstant(0.125);
    e.gate.col(3).setZero();
  };
  CHECK(gradcheck([&](const Inputs& v) { return project(ad::softmax_rows<double>(v[0], valid, hook)); },
                  {random_matrix(3, 4, rng())}) < kTol);

  const Var<double> s(random_matrix(3, 4, rng()), false);
  const auto p = ad::softmax_rows<double>(s, valid).value();
  CHECK((p.col(2).array() == 0.0).all());
  CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("losses") {
  CHECK(gradcheck([](const Inputs& v) { return ad::mse(v[0], v[1]); },
                  {random_matrix(3, 4, rng()), random_matrix(3, 4, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return ad::abs_cosine(v[0], v[1]); },
                  {random_matrix(6, 1, rng()), random_matrix(6, 1, rng())}) < kTol);
  CHECK(gradcheck([](const Inputs& v) { return ad::weighted_sum(ad::mse(v[0], v[1]), 0.7, ad::abs_cosine(v[0], v[1]), 2.0); },
                  {random_matrix(5, 1, rng()), random_matrix(5, 1, rng())}) < kTol);
  const Var<double> zero(Eigen::MatrixXd::Zero(4, 1), false);
  const Var<double> one(Eigen::MatrixXd::Ones(4, 1), false);
  CHECK_THROWS(ad::abs_cosine(zero, one));
}

TEST_CASE("detach and no-grad stop the graph") {
  Var<double> a(random_matrix(2, 2, rng()), true);
  const auto d = ad::detach(a);
  CHECK_FALSE(d.requires_grad());
  {
    ad::NoGradGuard guard;
    CHECK_FALSE(ad::grad_enabled());
    CHECK_FALSE(ad::matmul(a, a).requires_grad());
  }
  CHECK(ad::grad_enabled());
  CHECK(ad::matmul(a, a).requires_grad());
}

TEST_CASE("gradients accumulate across backward calls") {
  Var<double> a(random_matrix(3, 1, rng()), true);
  const Var<double> b(random_matrix(3, 1, rng()), false);
  ad::backward(ad::mse(a, b));
  const Eigen::MatrixXd once = a.grad();
  ad::backward(ad::mse(a, b));
  CHECK((a.grad() - 2 * once).cwiseAbs().maxCoeff() < 1e-12);
  a.zero_grad();
  CHECK(a.grad().size() == 0);
}

// Full denoiser in double on a 4x4 input: every parameter tensor and the
// text input get a finite-difference check on a few entries.
TEST_CASE("denoiser gradients at 4x4") {
  diffusion::DenoiserConfig c;
  c.image_size = 4;
  c.base_channels = 4;
  c.channel_mults = {1, 2};
  c.attention_resolutions = {4, 2};
  c.heads = 2;
  c.text_width = 6;
  c.norm_groups = 2;
  c.time_width = 4;
  nn::Rng r(5);
  diffusion::Denoiser<double> net(c, r);
  net.params().set_trainable(true);

  const Eigen::MatrixXd x = random_matrix(3, 16, rng());
  const Eigen::MatrixXd text = random_matrix(6, 16, rng());
  Var<double> xv(x, true), tv(text, true);
  ad::backward(project(net.forward(xv, 37, tv), 3));

  auto loss_at = [&](const Eigen::MatrixXd& xx, const Eigen::MatrixXd& tt) {
    ad::NoGradGuard guard;
    return project(net.forward(Var<double>(xx), 37, Var<double>(tt)), 3).item();
  };
  // Floor keeps analytically-zero gradients (key bias under softmax) from
  // comparing rounding noise against rounding noise.
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-4, std::abs(a) + std::abs(n)); };
  constexpr double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); i += 5) {
    Eigen::MatrixXd p = x, m = x;
    p(i) += h;
    m(i) -= h;
    worst = std::max(worst, rel(xv.grad()(i), (loss_at(p, text) - loss_at(m, text)) / (2 * h)));
  }
  for (Eigen::Index i = 0; i < text.size(); i += 7) {
    Eigen::MatrixXd p = text, m = text;
    p(i) += h;
    m(i) -= h;
    worst = std::max(worst, rel(tv.grad()(i), (loss_at(x, p) - loss_at(x, m)) / (2 * h)));
  }
  for (auto& [name, param] : net.params().entries()) {
    const Eigen::MatrixXd g = param.grad();
    REQUIRE_MESSAGE(g.size() == param.value().size(), name);
    for (Eigen::Index i = 0; i < param.value().size(); i += std::max<Eigen::Index>(1, param.value().size() / 3)) {
      const double keep = param.value()(i);
      param.mutable_value()(i) = keep + h;
      const double up = loss_at(x, text);
      param.mutable_value()(i) = keep - h;
      const double down = loss_at(x, text);
      param.mutable_value()(i) = keep;
      const double e = rel(g(i), (up - down) / (2 * h));
      if (e > 1e-4) MESSAGE(name << "[" << i << "] rel err " << e);
      worst = std::max(worst, e);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("text encoder gradients reach a registered token") {
  text::Vocabulary vocab({"a", "red", "circle"});
  nn::Rng r(3);
  text::TextEncoderConfig c;
  c.width = 8;
  c.heads = 2;
  c.mlp_width = 12;
  text::TextEncoder<double> enc(c, vocab, r);
  enc.register_token("[I]", 11);
  const auto seq = text::tokenize("a red [I] circle", enc.vocab());
  const Var<double>& token = enc.token_embedding("[I]");
  const Eigen::MatrixXd base = token.value();
  auto loss = [&] { return project(enc.encode(seq).tokens, 4); };
  ad::backward(loss());
  REQUIRE(token.grad().size() == base.size());
  const Eigen::MatrixXd g = token.grad();
  constexpr double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    ad::NoGradGuard guard;
    auto& v = const_cast<Var<double>&>(token).mutable_value();
    v(i) = base(i) + h;
    const double up = loss().item();
    v(i) = base(i) - h;
    const double down = loss().item();
    v(i) = base(i);
    const double n = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(n - g(i)) / std::max(1e-6, std::abs(n) + std::abs(g(i))));
  }
  CHECK(worst < 1e-5);
}
