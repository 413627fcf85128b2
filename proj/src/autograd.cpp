// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace idedit::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename Scalar, typename Fn>
Var<Scalar> make_result(Matrix<Scalar> value, std::span<const Var<Scalar>* const> inputs, Fn&& fn) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->leaf = false;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto* in : inputs) needs = needs || in->requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto* in : inputs) node->parents.push_back(in->node());
    node->backward_fn = std::forward<Fn>(fn);
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar, typename Fn>
Var<Scalar> make_result(Matrix<Scalar> value, std::initializer_list<const Var<Scalar>*> inputs, Fn&& fn) {
  return make_result<Scalar>(std::move(value),
                             std::span<const Var<Scalar>* const>(inputs.begin(), inputs.size()),
                             std::forward<Fn>(fn));
}

template <typename Scalar>
bool wants(const Node<Scalar>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
Var<Scalar>::Var(Matrix<Scalar> value, bool requires_grad) : node_(std::make_shared<Node<Scalar>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->leaf = true;
}

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(Matrix<Scalar>::Ones(root.rows(), root.cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->backward_fn && node->grad.size() > 0) node->backward_fn(*node);
    if (!node->leaf) node->grad.resize(0, 0);
  }
}

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& a) {
  return Var<Scalar>(a.value(), false);
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_result<Scalar>(a.value() + b.value(), {&a, &b}, [](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_result<Scalar>(a.value() - b.value(), {&a, &b}, [](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(-self.grad);
  });
}

template <typename Scalar>
Var<Scalar> cwise_mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "cwise_mul: shape mismatch");
  return make_result<Scalar>(a.value().cwiseProduct(b.value()), {&a, &b}, [](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad.cwiseProduct(self.parents[1]->value));
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.cwiseProduct(self.parents[0]->value));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return make_result<Scalar>(a.value() * s, {&a}, [s](Node<Scalar>& self) {
    self.parents[0]->accumulate(self.grad * s);
  });
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix<Scalar> out = a.value() * b.value();
  return make_result<Scalar>(std::move(out), {&a, &b}, [](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * self.parents[1]->value.transpose());
    if (wants(self, 1)) self.parents[1]->accumulate(self.parents[0]->value.transpose() * self.grad);
  });
}

template <typename Scalar>
Var<Scalar> matmul_tn(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.rows() == b.rows(), "matmul_tn: inner dimension mismatch");
  Matrix<Scalar> out = a.value().transpose() * b.value();
  return make_result<Scalar>(std::move(out), {&a, &b}, [](Node<Scalar>& self) {
    // out = A^T B ; dA = B dOut^T ; dB = A dOut
    if (wants(self, 0)) self.parents[0]->accumulate(self.parents[1]->value * self.grad.transpose());
    if (wants(self, 1)) self.parents[1]->accumulate(self.parents[0]->value * self.grad);
  });
}

template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Matrix<Scalar> out = a.value() * b.value().transpose();
  return make_result<Scalar>(std::move(out), {&a, &b}, [](Node<Scalar>& self) {
    // out = A B^T ; dA = dOut B ; dB = dOut^T A
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * self.parents[1]->value);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.transpose() * self.parents[0]->value);
  });
}

template <typename Scalar>
Var<Scalar> add_colwise(const Var<Scalar>& a, const Var<Scalar>& v) {
  check(v.cols() == 1 && v.rows() == a.rows(), "add_colwise: bias shape mismatch");
  Matrix<Scalar> out = a.value().colwise() + v.value().col(0);
  return make_result<Scalar>(std::move(out), {&a, &v}, [](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.rowwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& a) {
  Matrix<Scalar> sig = (Scalar(1) + (-a.value().array()).exp()).inverse().matrix();
  Matrix<Scalar> out = a.value().cwiseProduct(sig);
  return make_result<Scalar>(std::move(out), {&a}, [sig = std::move(sig)](Node<Scalar>& self) {
    const auto& x = self.parents[0]->value;
    // d/dx x*s(x) = s + x*s*(1-s)
    Matrix<Scalar> d = (sig.array() * (Scalar(1) + x.array() * (Scalar(1) - sig.array()))).matrix();
    self.parents[0]->accumulate(self.grad.cwiseProduct(d));
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Eigen::Index start, Eigen::Index n) {
  check(start >= 0 && start + n <= a.rows(), "slice_rows: out of range");
  Matrix<Scalar> out = a.value().middleRows(start, n);
  return make_result<Scalar>(std::move(out), {&a}, [start, n](Node<Scalar>& self) {
    auto& parent = *self.parents[0];
    if (parent.grad.size() == 0) parent.grad = Matrix<Scalar>::Zero(parent.value.rows(), parent.value.cols());
    parent.grad.middleRows(start, n) += self.grad;
  });
}

template <typename Scalar>
Var<Scalar> vcat(std::span<const Var<Scalar>> parts) {
  check(!parts.empty(), "vcat: no inputs");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    check(p.cols() == cols, "vcat: column mismatch");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<const Var<Scalar>*> inputs;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    inputs.push_back(&p);
  }
  return make_result<Scalar>(std::move(out), std::span<const Var<Scalar>* const>(inputs), [](Node<Scalar>& self) {
    Eigen::Index row = 0;
    for (auto& parent : self.parents) {
      const Eigen::Index n = parent->value.rows();
      if (parent->requires_grad) parent->accumulate(self.grad.middleRows(row, n));
      row += n;
    }
  });
}

template <typename Scalar>
Var<Scalar> gather_columns(const Var<Scalar>& table, std::span<const int> ids) {
  Matrix<Scalar> out = Matrix<Scalar>::Zero(table.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= 0) {
      check(ids[i] < table.cols(), "gather_columns: id out of range");
      out.col(static_cast<Eigen::Index>(i)) = table.value().col(ids[i]);
    }
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result<Scalar>(std::move(out), {&table}, [idv = std::move(idv)](Node<Scalar>& self) {
    auto& parent = *self.parents[0];
    if (parent.grad.size() == 0) parent.grad = Matrix<Scalar>::Zero(parent.value.rows(), parent.value.cols());
    for (std::size_t i = 0; i < idv.size(); ++i) {
      if (idv[i] >= 0) parent.grad.col(idv[i]) += self.grad.col(static_cast<Eigen::Index>(i));
    }
  });
}

template <typename Scalar>
Var<Scalar> set_column(const Var<Scalar>& a, Eigen::Index col, const Var<Scalar>& v) {
  check(v.cols() == 1 && v.rows() == a.rows() && col >= 0 && col < a.cols(), "set_column: shape mismatch");
  Matrix<Scalar> out = a.value();
  out.col(col) = v.value().col(0);
  return make_result<Scalar>(std::move(out), {&a, &v}, [col](Node<Scalar>& self) {
    if (wants(self, 0)) {
      Matrix<Scalar> g = self.grad;
      g.col(col).setZero();
      self.parents[0]->accumulate(g);
    }
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad.col(col));
  });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, int height, int width, const Var<Scalar>& weight,
                   const Var<Scalar>& bias, int kernel, int stride, int pad) {
  const Eigen::Index cin = x.rows();
  check(x.cols() == static_cast<Eigen::Index>(height) * width, "conv2d: input pixel count mismatch");
  check(weight.cols() == cin * kernel * kernel, "conv2d: weight shape mismatch");
  check(bias.rows() == weight.rows() && bias.cols() == 1, "conv2d: bias shape mismatch");
  const int out_h = (height + 2 * pad - kernel) / stride + 1;
  const int out_w = (width + 2 * pad - kernel) / stride + 1;
  const Eigen::Index patch = cin * kernel * kernel;
  Matrix<Scalar> cols(patch, static_cast<Eigen::Index>(out_h) * out_w);
  const auto& xv = x.value();
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      Scalar* dst = cols.col(oy * out_w + ox).data();
      for (Eigen::Index c = 0; c < cin; ++c) {
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            const bool inside = iy >= 0 && iy < height && ix >= 0 && ix < width;
            *dst++ = inside ? xv(c, iy * width + ix) : Scalar(0);
          }
        }
      }
    }
  }
  Matrix<Scalar> out = weight.value() * cols;
  out.colwise() += bias.value().col(0);
  return make_result<Scalar>(
      std::move(out), {&x, &weight, &bias},
      [cols = std::move(cols), height, width, kernel, stride, pad, out_h, out_w](Node<Scalar>& self) {
        if (wants(self, 1)) self.parents[1]->accumulate(self.grad * cols.transpose());
        if (wants(self, 2)) self.parents[2]->accumulate(self.grad.rowwise().sum());
        if (!wants(self, 0)) return;
        Matrix<Scalar> dcols = self.parents[1]->value.transpose() * self.grad;
        auto& in = *self.parents[0];
        if (in.grad.size() == 0) in.grad = Matrix<Scalar>::Zero(in.value.rows(), in.value.cols());
        const Eigen::Index channels = in.value.rows();
        for (int oy = 0; oy < out_h; ++oy) {
          for (int ox = 0; ox < out_w; ++ox) {
            const Scalar* src = dcols.col(oy * out_w + ox).data();
            for (Eigen::Index c = 0; c < channels; ++c) {
              for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride - pad + ky;
                for (int kx = 0; kx < kernel; ++kx, ++src) {
                  const int ix = ox * stride - pad + kx;
                  if (iy >= 0 && iy < height && ix >= 0 && ix < width) in.grad(c, iy * width + ix) += *src;
                }
              }
            }
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> upsample_nearest2x(const Var<Scalar>& x, int height, int width) {
  check(x.cols() == static_cast<Eigen::Index>(height) * width, "upsample: pixel count mismatch");
  const int ow = 2 * width;
  Matrix<Scalar> out(x.rows(), static_cast<Eigen::Index>(4) * height * width);
  for (int y = 0; y < 2 * height; ++y) {
    for (int xx = 0; xx < ow; ++xx) out.col(y * ow + xx) = x.value().col((y / 2) * width + xx / 2);
  }
  return make_result<Scalar>(std::move(out), {&x}, [height, width, ow](Node<Scalar>& self) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(self.grad.rows(), static_cast<Eigen::Index>(height) * width);
    for (int y = 0; y < 2 * height; ++y) {
      for (int xx = 0; xx < ow; ++xx) g.col((y / 2) * width + xx / 2) += self.grad.col(y * ow + xx);
    }
    self.parents[0]->accumulate(g);
  });
}

template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, int groups,
                       Scalar eps) {
  const Eigen::Index channels = x.rows();
  check(groups > 0 && channels % groups == 0, "group_norm: channels not divisible by groups");
  check(gamma.rows() == channels && beta.rows() == channels, "group_norm: affine shape mismatch");
  const Eigen::Index per = channels / groups;
  const Scalar count = static_cast<Scalar>(per * x.cols());
  Matrix<Scalar> xhat(x.rows(), x.cols());
  Vector<Scalar> inv_std(groups);
  for (int g = 0; g < groups; ++g) {
    auto block = x.value().middleRows(g * per, per);
    const Scalar mean = block.sum() / count;
    const Scalar var = (block.array() - mean).square().sum() / count;
    inv_std(g) = Scalar(1) / std::sqrt(var + eps);
    xhat.middleRows(g * per, per) = ((block.array() - mean) * inv_std(g)).matrix();
  }
  Matrix<Scalar> out = gamma.value().col(0).asDiagonal() * xhat;
  out.colwise() += beta.value().col(0);
  return make_result<Scalar>(
      std::move(out), {&x, &gamma, &beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), groups, per, count](Node<Scalar>& self) {
        if (wants(self, 1)) self.parents[1]->accumulate(self.grad.cwiseProduct(xhat).rowwise().sum());
        if (wants(self, 2)) self.parents[2]->accumulate(self.grad.rowwise().sum());
        if (!wants(self, 0)) return;
        Matrix<Scalar> dxhat = self.parents[1]->value.col(0).asDiagonal() * self.grad;
        Matrix<Scalar> dx(dxhat.rows(), dxhat.cols());
        for (int g = 0; g < groups; ++g) {
          auto d = dxhat.middleRows(g * per, per);
          auto h = xhat.middleRows(g * per, per);
          const Scalar mean_d = d.sum() / count;
          const Scalar mean_dh = d.cwiseProduct(h).sum() / count;
          dx.middleRows(g * per, per) = ((d.array() - mean_d - h.array() * mean_dh) * inv_std(g)).matrix();
        }
        self.parents[0]->accumulate(dx);
      });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  const Eigen::Index rows = x.rows();
  check(gamma.rows() == rows && beta.rows() == rows, "layer_norm: affine shape mismatch");
  const Scalar n = static_cast<Scalar>(rows);
  Matrix<Scalar> xhat(x.rows(), x.cols());
  Vector<Scalar> inv_std(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    auto col = x.value().col(c);
    const Scalar mean = col.sum() / n;
    const Scalar var = (col.array() - mean).square().sum() / n;
    inv_std(c) = Scalar(1) / std::sqrt(var + eps);
    xhat.col(c) = ((col.array() - mean) * inv_std(c)).matrix();
  }
  Matrix<Scalar> out = gamma.value().col(0).asDiagonal() * xhat;
  out.colwise() += beta.value().col(0);
  return make_result<Scalar>(std::move(out), {&x, &gamma, &beta},
                             [xhat = std::move(xhat), inv_std = std::move(inv_std), n](Node<Scalar>& self) {
                               if (wants(self, 1))
                                 self.parents[1]->accumulate(self.grad.cwiseProduct(xhat).rowwise().sum());
                               if (wants(self, 2)) self.parents[2]->accumulate(self.grad.rowwise().sum());
                               if (!wants(self, 0)) return;
                               Matrix<Scalar> dxhat = self.parents[1]->value.col(0).asDiagonal() * self.grad;
                               Matrix<Scalar> dx(dxhat.rows(), dxhat.cols());
                               for (Eigen::Index c = 0; c < dxhat.cols(); ++c) {
                                 auto d = dxhat.col(c);
                                 auto h = xhat.col(c);
                                 const Scalar mean_d = d.sum() / n;
                                 const Scalar mean_dh = d.dot(h) / n;
                                 dx.col(c) = ((d.array() - mean_d - h.array() * mean_dh) * inv_std(c)).matrix();
                               }
                               self.parents[0]->accumulate(dx);
                             });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& scores, std::span<const bool> key_valid,
                         const ProbabilityHook<Scalar>& hook) {
  const Eigen::Index keys = scores.cols();
  check(key_valid.empty() || static_cast<Eigen::Index>(key_valid.size()) == keys, "softmax_rows: mask size");
  Matrix<Scalar> probs(scores.rows(), keys);
  const auto& s = scores.value();
  for (Eigen::Index q = 0; q < s.rows(); ++q) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index k = 0; k < keys; ++k) {
      if (key_valid.empty() || key_valid[k]) mx = std::max(mx, s(q, k));
    }
    Scalar total = 0;
    for (Eigen::Index k = 0; k < keys; ++k) {
      const Scalar e = (key_valid.empty() || key_valid[k]) ? std::exp(s(q, k) - mx) : Scalar(0);
      probs(q, k) = e;
      total += e;
    }
    probs.row(q) /= total;
  }
  ProbabilityEdit<Scalar> edit;
  Matrix<Scalar> raw;
  if (hook) {
    raw = probs;
    hook(probs, edit);
  }
  return make_result<Scalar>(
      std::move(probs), {&scores},
      [raw = std::move(raw), gate = std::move(edit.gate)](Node<Scalar>& self) {
        const Matrix<Scalar>& p = raw.size() ? raw : self.value;
        Matrix<Scalar> dp = gate.size() ? Matrix<Scalar>(self.grad.cwiseProduct(gate)) : self.grad;
        Vector<Scalar> inner = dp.cwiseProduct(p).rowwise().sum();
        Matrix<Scalar> ds = p.cwiseProduct(Matrix<Scalar>(dp.colwise() - inner));
        self.parents[0]->accumulate(ds);
      });
}

template <typename Scalar>
Var<Scalar> mse(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mse: shape mismatch");
  Matrix<Scalar> diff = a.value() - b.value();
  const Scalar n = static_cast<Scalar>(diff.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return make_result<Scalar>(std::move(out), {&a, &b}, [diff = std::move(diff), n](Node<Scalar>& self) {
    const Scalar g = self.grad(0, 0) * Scalar(2) / n;
    if (wants(self, 0)) self.parents[0]->accumulate(diff * g);
    if (wants(self, 1)) self.parents[1]->accumulate(diff * (-g));
  });
}

template <typename Scalar>
Var<Scalar> abs_cosine(const Var<Scalar>& a, const Var<Scalar>& b) {
  check(a.value().size() == b.value().size(), "abs_cosine: size mismatch");
  const auto av = a.value().reshaped();
  const auto bv = b.value().reshaped();
  const Scalar na = av.norm();
  const Scalar nb = bv.norm();
  if (!(na > 0) || !(nb > 0)) throw std::invalid_argument("abs_cosine: zero-norm input");
  const Scalar c = av.dot(bv) / (na * nb);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = std::abs(c);
  return make_result<Scalar>(std::move(out), {&a, &b}, [c, na, nb](Node<Scalar>& self) {
    const Scalar sign = c > 0 ? Scalar(1) : (c < 0 ? Scalar(-1) : Scalar(0));
    const Scalar g = self.grad(0, 0) * sign;
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->accumulate((bv / (na * nb) - av * (c / (na * na))) * g);
    if (wants(self, 1)) self.parents[1]->accumulate((av / (na * nb) - bv * (c / (nb * nb))) * g);
  });
}

template <typename Scalar>
Var<Scalar> weighted_sum(const Var<Scalar>& a, Scalar wa, const Var<Scalar>& b, Scalar wb) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "weighted_sum: shape mismatch");
  return make_result<Scalar>(a.value() * wa + b.value() * wb, {&a, &b}, [wa, wb](Node<Scalar>& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad * wa);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad * wb);
  });
}

#define IDEDIT_INSTANTIATE(S)                                                                               \
  template class Var<S>;                                                                                    \
  template void backward<S>(const Var<S>&);                                                                 \
  template Var<S> detach<S>(const Var<S>&);                                                                 \
  template Var<S> add<S>(const Var<S>&, const Var<S>&);                                                     \
  template Var<S> sub<S>(const Var<S>&, const Var<S>&);                                                     \
  template Var<S> cwise_mul<S>(const Var<S>&, const Var<S>&);                                               \
  template Var<S> scale<S>(const Var<S>&, S);                                                               \
  template Var<S> matmul<S>(const Var<S>&, const Var<S>&);                                                  \
  template Var<S> matmul_tn<S>(const Var<S>&, const Var<S>&);                                               \
  template Var<S> matmul_nt<S>(const Var<S>&, const Var<S>&);                                               \
  template Var<S> add_colwise<S>(const Var<S>&, const Var<S>&);                                             \
  template Var<S> silu<S>(const Var<S>&);                                                                   \
  template Var<S> slice_rows<S>(const Var<S>&, Eigen::Index, Eigen::Index);                                 \
  template Var<S> vcat<S>(std::span<const Var<S>>);                                                         \
  template Var<S> gather_columns<S>(const Var<S>&, std::span<const int>);                                   \
  template Var<S> set_column<S>(const Var<S>&, Eigen::Index, const Var<S>&);                                \
  template Var<S> conv2d<S>(const Var<S>&, int, int, const Var<S>&, const Var<S>&, int, int, int);          \
  template Var<S> upsample_nearest2x<S>(const Var<S>&, int, int);                                           \
  template Var<S> group_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, int, S);                       \
  template Var<S> layer_norm<S>(const Var<S>&, const Var<S>&, const Var<S>&, S);                            \
  template Var<S> softmax_rows<S>(const Var<S>&, std::span<const bool>, const ProbabilityHook<S>&);         \
  template Var<S> mse<S>(const Var<S>&, const Var<S>&);                                                     \
  template Var<S> abs_cosine<S>(const Var<S>&, const Var<S>&);                                              \
  template Var<S> weighted_sum<S>(const Var<S>&, S, const Var<S>&, S);

IDEDIT_INSTANTIATE(float)
IDEDIT_INSTANTIATE(double)

#undef IDEDIT_INSTANTIATE

}  // namespace idedit::ad
