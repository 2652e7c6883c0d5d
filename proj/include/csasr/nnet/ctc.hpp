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

// CTC negative log-likelihood by forward-backward over the blank-augmented
// label lattice, in log space.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "csasr/common.hpp"
#include "csasr/nnet/autodiff.hpp"

namespace csasr::nn {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// Minimum number of frames able to carry `labels`: one per label plus a blank
// between adjacent repeats.
inline std::size_t ctc_min_frames(std::span<const int> labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

struct CtcResult {
  double loss = 0.0;
  Mat<double> grad;  // d loss / d log_probs
};

// `log_probs` is frames x (V+1) with blank in the last column unless given.
template <class T>
CtcResult ctc_loss(const Mat<T>& log_probs, std::span<const int> labels, int blank = -1) {
  const Eigen::Index frames = log_probs.rows();
  if (blank < 0) blank = static_cast<int>(log_probs.cols()) - 1;
  if (frames == 0) throw DataError("target longer than input");
  if (static_cast<std::size_t>(frames) < ctc_min_frames(labels)) throw DataError("target longer than input");
  const Eigen::Index S = 2 * static_cast<Eigen::Index>(labels.size()) + 1;
  auto lab = [&](Eigen::Index s) { return s % 2 == 0 ? blank : labels[static_cast<std::size_t>(s / 2)]; };
  auto lp = [&](Eigen::Index t, Eigen::Index s) { return static_cast<double>(log_probs(t, lab(s))); };
  auto can_skip = [&](Eigen::Index s) { return s >= 2 && lab(s) != blank && lab(s) != lab(s - 2); };

  Mat<double> alpha = Mat<double>::Constant(frames, S, kLogZero);
  Mat<double> beta = Mat<double>::Constant(frames, S, kLogZero);
  alpha(0, 0) = lp(0, 0);
  if (S > 1) alpha(0, 1) = lp(0, 1);
  for (Eigen::Index t = 1; t < frames; ++t)
    for (Eigen::Index s = 0; s < S; ++s) {
      double a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      alpha(t, s) = a == kLogZero ? kLogZero : a + lp(t, s);
    }
  // beta excludes the emission at its own frame.
  beta(frames - 1, S - 1) = 0.0;
  if (S > 1) beta(frames - 1, S - 2) = 0.0;
  for (Eigen::Index t = frames - 2; t >= 0; --t)
    for (Eigen::Index s = 0; s < S; ++s) {
      double b = beta(t + 1, s) + lp(t + 1, s);
      if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1) + lp(t + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2) + lp(t + 1, s + 2));
      beta(t, s) = b;
    }
  double log_z = alpha(frames - 1, S - 1);
  if (S > 1) log_z = log_add(log_z, alpha(frames - 1, S - 2));
  if (log_z == kLogZero) throw DataError("target longer than input");

  CtcResult out;
  out.loss = -log_z;
  out.grad = Mat<double>::Zero(frames, log_probs.cols());
  for (Eigen::Index t = 0; t < frames; ++t)
    for (Eigen::Index s = 0; s < S; ++s) {
      double occ = alpha(t, s) + beta(t, s) - log_z;
      if (occ != kLogZero) out.grad(t, lab(s)) -= std::exp(occ);
    }
  return out;
}

// Graph op: scalar CTC loss of a (frames x (V+1)) log-probability matrix.
template <class T>
Var<T> ctc_loss_op(const Var<T>& log_probs, std::vector<int> labels) {
  CtcResult r = ctc_loss(log_probs.value(), std::span<const int>(labels));
  Mat<T> v(1, 1);
  v(0, 0) = static_cast<T>(r.loss);
  Mat<T> g = r.grad.template cast<T>();
  return make_op<T>(std::move(v), {log_probs}, [g = std::move(g)](Node<T>& s) { detail::pgrad(s, 0) += g * s.grad(0, 0); });
}

}  // namespace csasr::nn
