// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// Every value is a 2-D matrix. Feature maps are stored channel-major as
// (channels x pixels) with pixel index y * width + x; token sequences are
// stored as (width x tokens). A Var either records how it was produced (when
// any input requires a gradient and grad mode is on) or is a plain constant.

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace idedit::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<Scalar> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  const Matrix<Scalar>& value() const { return node_->value; }
  Matrix<Scalar>& mutable_value() { return node_->value; }
  const Matrix<Scalar>& grad() const { return node_->grad; }
  Matrix<Scalar>& mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool defined() const { return static_cast<bool>(node_); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Scalar item() const { return node_->value(0, 0); }

  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Global (thread-local) switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Seeds d(root)/d(root) = 1 and propagates to every leaf that requires a
/// gradient. Leaf gradients accumulate across calls; interior ones are freed.
template <typename Scalar>
void backward(const Var<Scalar>& root);

template <typename Scalar>
Var<Scalar> constant(Matrix<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

/// Returns a constant holding the same value (gradient stop).
template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& a);

template <typename Scalar> Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> cwise_mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar> Var<Scalar> scale(const Var<Scalar>& a, Scalar s);

template <typename Scalar> Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// a^T * b
template <typename Scalar> Var<Scalar> matmul_tn(const Var<Scalar>& a, const Var<Scalar>& b);

/// a * b^T
template <typename Scalar> Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b);

/// a + v broadcast over columns; v is (rows x 1).
template <typename Scalar> Var<Scalar> add_colwise(const Var<Scalar>& a, const Var<Scalar>& v);

template <typename Scalar> Var<Scalar> silu(const Var<Scalar>& a);

template <typename Scalar> Var<Scalar> slice_rows(const Var<Scalar>& a, Eigen::Index start, Eigen::Index n);
template <typename Scalar> Var<Scalar> vcat(std::span<const Var<Scalar>> parts);

/// Columns of `table` selected by `ids`; negative ids produce zero columns.
template <typename Scalar> Var<Scalar> gather_columns(const Var<Scalar>& table, std::span<const int> ids);
/// Copy of `a` with column `col` replaced by `v` (rows x 1).
template <typename Scalar> Var<Scalar> set_column(const Var<Scalar>& a, Eigen::Index col, const Var<Scalar>& v);

/// 2-D convolution, zero padded. `x` is (Cin x H*W); `weight` is
/// (Cout x Cin*k*k) with row-major (c, ky, kx) unrolling; `bias` (Cout x 1).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, int height, int width, const Var<Scalar>& weight,
                   const Var<Scalar>& bias, int kernel, int stride, int pad);

template <typename Scalar> Var<Scalar> upsample_nearest2x(const Var<Scalar>& x, int height, int width);

/// Group normalization over (channels-in-group x pixels); gamma/beta (C x 1).
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       int groups, Scalar eps = Scalar(1e-5));

/// Normalizes each column over its rows; gamma/beta (rows x 1).
template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5));

/// Gradient description of an in-place edit to softmax probabilities: the
/// edited output depends on the raw probabilities through `gate` elementwise
/// (empty gate = unmodified). Replaced entries have gate 0, masked ones 0/1.
template <typename Scalar>
struct ProbabilityEdit {
  Matrix<Scalar> gate;
};

template <typename Scalar>
using ProbabilityHook = std::function<void(Matrix<Scalar>& probs, ProbabilityEdit<Scalar>& edit)>;

/// Row softmax of `scores` (queries x keys). Keys with key_valid[k] == false
/// receive probability 0. An optional hook may edit the probabilities.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& scores, std::span<const bool> key_valid = {},
                         const ProbabilityHook<Scalar>& hook = {});

/// Mean squared error, 1x1.
template <typename Scalar> Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b);

/// |cos(a, b)| for two vectors of equal size, 1x1. Throws on zero norm.
template <typename Scalar> Var<Scalar> abs_cosine(const Var<Scalar>& a, const Var<Scalar>& b);

/// Weighted sum of 1x1 terms.
template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& a, Scalar wa, const Var<Scalar>& b, Scalar wb);

}  // namespace idedit::ad
