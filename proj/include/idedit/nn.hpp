// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Named parameter storage and the handful of layers the denoiser and the text
// encoder are built from.

#pragma once

#include "idedit/autograd.hpp"

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace idedit::nn {

using ad::Matrix;
using ad::Var;

using Rng = std::mt19937_64;

template <typename Scalar>
Matrix<Scalar> gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  return m;
}

/// Ordered collection of trainable leaves addressed by dotted names.
template <typename Scalar>
class ParamStore {
 public:
  Var<Scalar> add(const std::string& name, Matrix<Scalar> init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter: " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, Var<Scalar>(std::move(init), true));
    return params_.back().second;
  }

  const Var<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return params_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Var<Scalar>>>& entries() { return params_; }
  const std::vector<std::pair<std::string, Var<Scalar>>>& entries() const { return params_; }

  void set_trainable(bool on) {
    for (auto& [_, p] : params_) p.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& [_, p] : params_) p.zero_grad();
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += static_cast<std::size_t>(p.value().size());
    return n;
  }

  /// Deep copy: new leaves with the same values.
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, p] : params_) out.add(name, p.value());
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.params_[i].second.set_requires_grad(params_[i].second.requires_grad());
    return out;
  }

 private:
  std::vector<std::pair<std::string, Var<Scalar>>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Restores trainability flags on scope exit.
template <typename Scalar>
class FreezeGuard {
 public:
  explicit FreezeGuard(ParamStore<Scalar>& store) : store_(store) {
    for (auto& [_, p] : store_.entries()) saved_.push_back(p.requires_grad());
    store_.set_trainable(false);
  }
  ~FreezeGuard() {
    auto& e = store_.entries();
    for (std::size_t i = 0; i < e.size(); ++i) e[i].second.set_requires_grad(saved_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamStore<Scalar>& store_;
  std::vector<bool> saved_;
};

template <typename Scalar>
struct Linear {
  Var<Scalar> weight;
  Var<Scalar> bias;

  Linear() = default;
  Linear(ParamStore<Scalar>& store, const std::string& name, int in, int out, Rng& rng, double gain = 1.0)
      : weight(store.add(name + ".weight", gaussian<Scalar>(out, in, rng, gain / std::sqrt(double(in))))),
        bias(store.add(name + ".bias", Matrix<Scalar>::Zero(out, 1))) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return ad::add_colwise(ad::matmul(weight, x), bias); }
};

template <typename Scalar>
struct Conv2d {
  Var<Scalar> weight;
  Var<Scalar> bias;
  int kernel = 3;
  int stride = 1;

  Conv2d() = default;
  Conv2d(ParamStore<Scalar>& store, const std::string& name, int in, int out, int kernel_size, int stride_,
         Rng& rng, double gain = 1.0)
      : weight(store.add(name + ".weight",
                         gaussian<Scalar>(out, in * kernel_size * kernel_size, rng,
                                          gain / std::sqrt(double(in * kernel_size * kernel_size))))),
        bias(store.add(name + ".bias", Matrix<Scalar>::Zero(out, 1))),
        kernel(kernel_size),
        stride(stride_) {}

  int out_size(int in) const { return (in + 2 * (kernel / 2) - kernel) / stride + 1; }

  Var<Scalar> operator()(const Var<Scalar>& x, int height, int width) const {
    return ad::conv2d(x, height, width, weight, bias, kernel, stride, kernel / 2);
  }
};

template <typename Scalar>
struct GroupNorm {
  Var<Scalar> gamma;
  Var<Scalar> beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(ParamStore<Scalar>& store, const std::string& name, int channels, int groups_)
      : gamma(store.add(name + ".gamma", Matrix<Scalar>::Ones(channels, 1))),
        beta(store.add(name + ".beta", Matrix<Scalar>::Zero(channels, 1))),
        groups(groups_) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return ad::group_norm(x, gamma, beta, groups); }
};

template <typename Scalar>
struct LayerNorm {
  Var<Scalar> gamma;
  Var<Scalar> beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<Scalar>& store, const std::string& name, int width)
      : gamma(store.add(name + ".gamma", Matrix<Scalar>::Ones(width, 1))),
        beta(store.add(name + ".beta", Matrix<Scalar>::Zero(width, 1))) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return ad::layer_norm(x, gamma, beta); }
};

/// Adam with optional decoupled weight decay.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam(std::vector<Var<Scalar>> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (const auto& p : params_) {
      m_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix<Scalar>::Zero(p.rows(), p.cols()));
    }
  }

  void set_lr(double lr) { opt_.lr = lr; }
  const Options& options() const { return opt_; }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.grad().size() == 0) continue;
      const auto& g = p.grad();
      m_[i] = Scalar(opt_.beta1) * m_[i] + Scalar(1 - opt_.beta1) * g;
      v_[i] = Scalar(opt_.beta2) * v_[i] + Scalar(1 - opt_.beta2) * g.cwiseProduct(g);
      auto& w = p.mutable_value();
      if (opt_.weight_decay > 0) w *= Scalar(1 - opt_.lr * opt_.weight_decay);
      const Scalar lr = Scalar(opt_.lr / c1);
      w.array() -= lr * m_[i].array() / ((v_[i].array() / Scalar(c2)).sqrt() + Scalar(opt_.eps));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Var<Scalar>> params_;
  Options opt_;
  std::vector<Matrix<Scalar>> m_;
  std::vector<Matrix<Scalar>> v_;
  long t_ = 0;
};

}  // namespace idedit::nn
