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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "csasr/nnet/ctc.hpp"
#include "csasr/nnet/train.hpp"
#include "oracles.hpp"

namespace csasr::nn {
namespace {

Mat<double> logs(std::initializer_list<std::initializer_list<double>> rows) {
  Mat<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (auto row : rows) {
    Eigen::Index c = 0;
    for (double p : row) m(r, c++) = std::log(p);
    ++r;
  }
  return m;
}

TEST(Ctc, SingleFrame) {
  std::vector<int> y{0};
  EXPECT_NEAR(ctc_loss(logs({{0.5, 0.2, 0.3}}), y).loss, -std::log(0.5), 1e-12);
}

TEST(Ctc, TwoFramesThreePaths) {
  std::vector<int> y{0};
  EXPECT_NEAR(ctc_loss(logs({{0.5, 0.2, 0.3}, {0.6, 0.1, 0.3}}), y).loss, -std::log(0.63), 1e-12);
}

TEST(Ctc, RepeatNeedsBlank) {
  std::vector<int> y{0, 0};
  auto two = logs({{0.5, 0.2, 0.3}, {0.6, 0.1, 0.3}});
  EXPECT_THROW(ctc_loss(two, y), DataError);
  auto three = logs({{0.5, 0.2, 0.3}, {0.6, 0.1, 0.3}, {0.4, 0.4, 0.2}});
  EXPECT_NEAR(ctc_loss(three, y).loss, -std::log(0.5 * 0.3 * 0.4), 1e-12);
  try {
    ctc_loss(two, y);
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "target longer than input");
  }
}

TEST(Ctc, MatchesEnumeration) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    int T = 1 + static_cast<int>(rng() % 6), V = 1 + static_cast<int>(rng() % 4);
    int L = static_cast<int>(rng() % 4);
    std::vector<int> y;
    for (int i = 0; i < L; ++i) y.push_back(static_cast<int>(rng() % static_cast<unsigned>(V)));
    auto lp = oracle::random_log_softmax(T, V + 1, rng);
    double p = oracle::ctc_prob_enum(lp, y);
    if (static_cast<std::size_t>(T) < ctc_min_frames(y)) {
      EXPECT_EQ(p, 0.0);
      EXPECT_THROW(ctc_loss(lp, y), DataError);
      continue;
    }
    EXPECT_NEAR(ctc_loss(lp, y).loss, -std::log(p), 1e-8);
  }
}

TEST(Ctc, GradientIsOccupancy) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto lp = oracle::random_log_softmax(5, 4, rng);
    std::vector<int> y{0, 2, 2};
    auto r = ctc_loss(lp, y);
    // Unconstrained log-prob inputs: d(-log p)/d lp(t,k) by central differences.
    for (int t = 0; t < 5; ++t)
      for (int k = 0; k < 4; ++k) {
        auto up = lp, down = lp;
        up(t, k) += 1e-6;
        down(t, k) -= 1e-6;
        double num = (ctc_loss(up, y).loss - ctc_loss(down, y).loss) / 2e-6;
        EXPECT_NEAR(r.grad(t, k), num, 1e-6);
      }
    // Occupancies of each frame sum to one.
    for (int t = 0; t < 5; ++t) EXPECT_NEAR(-r.grad.row(t).sum(), 1.0, 1e-9);
  }
}

TEST(Ctc, GraphOpThroughSoftmaxGradChecks) {
  ParamSet<double> ps;
  ps.add("logits", 6, 4, 2.0, 11);
  std::vector<int> y{1, 0, 1};
  auto loss = [&] { return ctc_loss_op(log_softmax_rows(ps.get("logits")), y); };
  EXPECT_LT(grad_check(ps, loss).max_rel_error, 1e-4);
}

TEST(Ctc, EmptyInputRejected) {
  Mat<double> none(0, 3);
  std::vector<int> y;
  EXPECT_THROW(ctc_loss(none, y), DataError);
}

}  // namespace
}  // namespace csasr::nn
