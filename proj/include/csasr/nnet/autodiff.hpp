/* Copyright 2026 The csasr Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Dynamic-graph reverse-mode differentiation over dense row-major matrices.
// Every op records its parents and a closure that pushes its gradient back;
// `backward` replays closures in reverse creation order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace csasr::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {
inline std::uint64_t& node_counter() {
  thread_local std::uint64_t n = 0;
  return n;
}
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

template <class T>
struct Node {
  Mat<T> value;
  Mat<T> grad;
  bool requires_grad = false;
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Mat<T>& grad_ref() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) grad = Mat<T>::Zero(value.rows(), value.cols());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Mat<T> v, bool requires_grad = false) : node(std::make_shared<Node<T>>()) {
    node->value = std::move(v);
    node->requires_grad = requires_grad;
    node->order = ++detail::node_counter();
  }
  static Var scalar(T v) {
    Mat<T> m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m));
  }

  const Mat<T>& value() const { return node->value; }
  Mat<T>& mutable_value() { return node->value; }
  Mat<T>& grad() { return node->grad_ref(); }
  bool requires_grad() const { return node && node->requires_grad; }
  Eigen::Index rows() const { return node->value.rows(); }
  Eigen::Index cols() const { return node->value.cols(); }
  T item() const { return node->value(0, 0); }
  bool defined() const { return static_cast<bool>(node); }

  std::shared_ptr<Node<T>> node;
};

// Creates an op result. The backward closure receives the result node and
// must accumulate into parents that require gradients.
template <class T>
Var<T> make_op(Mat<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
  Var<T> out(std::move(value));
  if (!detail::grad_mode()) return out;
  bool any = false;
  for (const auto& p : parents) any |= p.requires_grad();
  if (!any) return out;
  out.node->requires_grad = true;
  out.node->parents.reserve(parents.size());
  for (auto& p : parents) out.node->parents.push_back(p.node);
  out.node->backward_fn = std::move(backward);
  return out;
}

template <class T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  // Orders are unique and increase with creation, so sorting by descending
  // order is a valid reverse topological order.
  std::vector<Node<T>*> found;
  std::unordered_set<Node<T>*> visited;
  std::vector<Node<T>*> todo{root.node.get()};
  while (!todo.empty()) {
    Node<T>* n = todo.back();
    todo.pop_back();
    if (!visited.insert(n).second || !n->backward_fn) continue;
    found.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad) todo.push_back(p.get());
  }
  std::sort(found.begin(), found.end(), [](const Node<T>* a, const Node<T>* b) { return a->order > b->order; });
  root.node->grad_ref().setOnes();
  for (Node<T>* n : found) {
    n->grad_ref();
    n->backward_fn(*n);
  }
}

namespace detail {
template <class T>
inline Mat<T>& pgrad(Node<T>& self, std::size_t i) {
  return self.parents[i]->grad_ref();
}
template <class T>
inline bool preq(Node<T>& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}
}  // namespace detail

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul shape mismatch");
  Mat<T> v = a.value() * b.value();
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& s) {
    const auto& A = s.parents[0]->value;
    const auto& B = s.parents[1]->value;
    if (detail::preq(s, 0)) detail::pgrad(s, 0).noalias() += s.grad * B.transpose();
    if (detail::preq(s, 1)) detail::pgrad(s, 1).noalias() += A.transpose() * s.grad;
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add shape mismatch");
  return make_op<T>(a.value() + b.value(), {a, b}, [](Node<T>& s) {
    if (detail::preq(s, 0)) detail::pgrad(s, 0) += s.grad;
    if (detail::preq(s, 1)) detail::pgrad(s, 1) += s.grad;
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(a.value() - b.value(), {a, b}, [](Node<T>& s) {
    if (detail::preq(s, 0)) detail::pgrad(s, 0) += s.grad;
    if (detail::preq(s, 1)) detail::pgrad(s, 1) -= s.grad;
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Mat<T> v = a.value().cwiseProduct(b.value());
  return make_op<T>(std::move(v), {a, b}, [](Node<T>& s) {
    if (detail::preq(s, 0)) detail::pgrad(s, 0) += s.grad.cwiseProduct(s.parents[1]->value);
    if (detail::preq(s, 1)) detail::pgrad(s, 1) += s.grad.cwiseProduct(s.parents[0]->value);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T k) {
  return make_op<T>(a.value() * k, {a}, [k](Node<T>& s) { detail::pgrad(s, 0) += s.grad * k; });
}

// a (m x n) + row (1 x n) broadcast over rows.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row shape mismatch");
  Mat<T> v = a.value().rowwise() + row.value().row(0);
  return make_op<T>(std::move(v), {a, row}, [](Node<T>& s) {
    if (detail::preq(s, 0)) detail::pgrad(s, 0) += s.grad;
    if (detail::preq(s, 1)) detail::pgrad(s, 1) += s.grad.colwise().sum();
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Mat<T> v = a.value().array().tanh().matrix();
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    detail::pgrad(s, 0).array() += s.grad.array() * (T(1) - s.value.array().square());
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Mat<T> v = (T(1) / (T(1) + (-a.value().array()).exp())).matrix();
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    detail::pgrad(s, 0).array() += s.grad.array() * s.value.array() * (T(1) - s.value.array());
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Mat<T> v = a.value().cwiseMax(T(0));
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) {
    detail::pgrad(s, 0).array() += (s.parents[0]->value.array() > T(0)).select(s.grad.array(), T(0));
  });
}

template <class T>
Mat<T> log_softmax_rows_value(const Mat<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T m = x.row(r).maxCoeff();
    T lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return y;
}

template <class T>
Var<T> log_softmax_rows(const Var<T>& a) {
  return make_op<T>(log_softmax_rows_value(a.value()), {a}, [](Node<T>& s) {
    Mat<T> p = s.value.array().exp().matrix();
    auto& g = detail::pgrad(s, 0);
    for (Eigen::Index r = 0; r < s.value.rows(); ++r) g.row(r) += s.grad.row(r) - p.row(r) * s.grad.row(r).sum();
  });
}

template <class T>
Var<T> softmax_rows(const Var<T>& a) {
  Mat<T> y = log_softmax_rows_value(a.value()).array().exp().matrix();
  return make_op<T>(std::move(y), {a}, [](Node<T>& s) {
    auto& g = detail::pgrad(s, 0);
    for (Eigen::Index r = 0; r < s.value.rows(); ++r) {
      T dot = s.grad.row(r).dot(s.value.row(r));
      g.row(r).array() += s.value.row(r).array() * (s.grad.row(r).array() - dot);
    }
  });
}

template <class T>
Var<T> transpose(const Var<T>& a) {
  Mat<T> v = a.value().transpose();
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) { detail::pgrad(s, 0) += s.grad.transpose(); });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  Eigen::Index rows = parts.front().rows(), cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols row mismatch");
    cols += p.cols();
  }
  Mat<T> v(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return make_op<T>(std::move(v), parts, [](Node<T>& s) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < s.parents.size(); ++i) {
      Eigen::Index c = s.parents[i]->value.cols();
      if (s.parents[i]->requires_grad) s.parents[i]->grad_ref() += s.grad.middleCols(o, c);
      o += c;
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  Eigen::Index cols = parts.front().cols(), rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows col mismatch");
    rows += p.rows();
  }
  Mat<T> v(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
  }
  return make_op<T>(std::move(v), parts, [](Node<T>& s) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < s.parents.size(); ++i) {
      Eigen::Index r = s.parents[i]->value.rows();
      if (s.parents[i]->requires_grad) s.parents[i]->grad_ref() += s.grad.middleRows(o, r);
      o += r;
    }
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index n) {
  Mat<T> v = a.value().middleCols(start, n);
  return make_op<T>(std::move(v), {a}, [start, n](Node<T>& s) { detail::pgrad(s, 0).middleCols(start, n) += s.grad; });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index n) {
  Mat<T> v = a.value().middleRows(start, n);
  return make_op<T>(std::move(v), {a}, [start, n](Node<T>& s) { detail::pgrad(s, 0).middleRows(start, n) += s.grad; });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  Mat<T> v(1, 1);
  v(0, 0) = a.value().sum();
  return make_op<T>(std::move(v), {a}, [](Node<T>& s) { detail::pgrad(s, 0).array() += s.grad(0, 0); });
}

// Weighted sum of selected entries: sum_k w_k * a(r_k, c_k).
template <class T>
Var<T> pick_sum(const Var<T>& a, std::vector<std::pair<Eigen::Index, Eigen::Index>> idx, T weight) {
  T total = 0;
  for (auto [r, c] : idx) total += a.value()(r, c);
  Mat<T> v(1, 1);
  v(0, 0) = total * weight;
  return make_op<T>(std::move(v), {a}, [idx = std::move(idx), weight](Node<T>& s) {
    auto& g = detail::pgrad(s, 0);
    for (auto [r, c] : idx) g(r, c) += s.grad(0, 0) * weight;
  });
}

// Linear combination of 1x1 scalars.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& xs, const std::vector<T>& ws) {
  Mat<T> v = Mat<T>::Zero(1, 1);
  for (std::size_t i = 0; i < xs.size(); ++i) v(0, 0) += ws[i] * xs[i].item();
  return make_op<T>(std::move(v), xs, [ws](Node<T>& s) {
    for (std::size_t i = 0; i < s.parents.size(); ++i)
      if (s.parents[i]->requires_grad) s.parents[i]->grad_ref()(0, 0) += ws[i] * s.grad(0, 0);
  });
}

// Location features: a (1 x T) convolved with filters (C x W), zero padded so
// output row i is centred on frame i. Result is T x C.
template <class T>
Var<T> conv1d_location(const Var<T>& a, const Var<T>& filters) {
  const Eigen::Index n = a.cols(), C = filters.rows(), W = filters.cols(), pad = W / 2;
  Mat<T> v = Mat<T>::Zero(n, C);
  const auto& av = a.value();
  const auto& K = filters.value();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < W; ++k) {
      Eigen::Index j = i + k - pad;
      if (j < 0 || j >= n) continue;
      for (Eigen::Index c = 0; c < C; ++c) v(i, c) += K(c, k) * av(0, j);
    }
  return make_op<T>(std::move(v), {a, filters}, [n, C, W, pad](Node<T>& s) {
    const auto& av = s.parents[0]->value;
    const auto& K = s.parents[1]->value;
    const bool ga = s.parents[0]->requires_grad, gk = s.parents[1]->requires_grad;
    Mat<T>* da = ga ? &s.parents[0]->grad_ref() : nullptr;
    Mat<T>* dk = gk ? &s.parents[1]->grad_ref() : nullptr;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < W; ++k) {
        Eigen::Index j = i + k - pad;
        if (j < 0 || j >= n) continue;
        for (Eigen::Index c = 0; c < C; ++c) {
          if (da) (*da)(0, j) += s.grad(i, c) * K(c, k);
          if (dk) (*dk)(c, k) += s.grad(i, c) * av(0, j);
        }
      }
  });
}

// 3x3 convolution over a (time x freq) plane with `cin` input channels laid
// out channel-major along columns: x is T x (cin*D), weights cout x (cin*9),
// bias 1 x cout. Stride `stride_t` in time, 1 in frequency, zero padding 1.
// Output is ceil(T/stride_t) x (cout*D).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Eigen::Index cin, Eigen::Index stride_t) {
  const Eigen::Index Tn = x.rows(), D = x.cols() / cin, cout = weight.rows();
  if (D * cin != x.cols() || weight.cols() != cin * 9 || bias.cols() != cout)
    throw std::invalid_argument("conv2d shape mismatch");
  const Eigen::Index To = (Tn + stride_t - 1) / stride_t;
  Mat<T> v(To, cout * D);
  const auto& X = x.value();
  const auto& Wt = weight.value();
  for (Eigen::Index o = 0; o < cout; ++o)
    for (Eigen::Index t = 0; t < To; ++t)
      for (Eigen::Index d = 0; d < D; ++d) {
        T acc = bias.value()(0, o);
        for (Eigen::Index ci = 0; ci < cin; ++ci)
          for (int dt = -1; dt <= 1; ++dt) {
            Eigen::Index ti = t * stride_t + dt;
            if (ti < 0 || ti >= Tn) continue;
            for (int df = -1; df <= 1; ++df) {
              Eigen::Index di = d + df;
              if (di < 0 || di >= D) continue;
              acc += Wt(o, ci * 9 + (dt + 1) * 3 + (df + 1)) * X(ti, ci * D + di);
            }
          }
        v(t, o * D + d) = acc;
      }
  return make_op<T>(std::move(v), {x, weight, bias}, [Tn, D, cin, cout, To, stride_t](Node<T>& s) {
    const auto& X = s.parents[0]->value;
    const auto& Wt = s.parents[1]->value;
    Mat<T>* dx = s.parents[0]->requires_grad ? &s.parents[0]->grad_ref() : nullptr;
    Mat<T>* dw = s.parents[1]->requires_grad ? &s.parents[1]->grad_ref() : nullptr;
    Mat<T>* db = s.parents[2]->requires_grad ? &s.parents[2]->grad_ref() : nullptr;
    for (Eigen::Index o = 0; o < cout; ++o)
      for (Eigen::Index t = 0; t < To; ++t)
        for (Eigen::Index d = 0; d < D; ++d) {
          T g = s.grad(t, o * D + d);
          if (g == T(0)) continue;
          if (db) (*db)(0, o) += g;
          for (Eigen::Index ci = 0; ci < cin; ++ci)
            for (int dt = -1; dt <= 1; ++dt) {
              Eigen::Index ti = t * stride_t + dt;
              if (ti < 0 || ti >= Tn) continue;
              for (int df = -1; df <= 1; ++df) {
                Eigen::Index di = d + df;
                if (di < 0 || di >= D) continue;
                Eigen::Index widx = ci * 9 + (dt + 1) * 3 + (df + 1);
                if (dw) (*dw)(o, widx) += g * X(ti, ci * D + di);
                if (dx) (*dx)(ti, ci * D + di) += g * Wt(o, widx);
              }
            }
        }
  });
}

}  // namespace csasr::nn
