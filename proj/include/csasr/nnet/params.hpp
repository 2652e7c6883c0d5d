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

// Named parameter tensors, deterministic initialization, Adam.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csasr/common.hpp"
#include "csasr/nnet/autodiff.hpp"

namespace csasr::nn {

// splitmix64; one independent stream per (seed, parameter name) so adding or
// removing a parameter never shifts the initial values of the others.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  std::uint64_t below(std::uint64_t n) { return next() % n; }

 private:
  std::uint64_t state_;
};

template <class T>
class ParamSet {
 public:
  // Adds a tensor initialized uniformly in [-scale, scale].
  Var<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, double scale, std::uint64_t seed) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    SplitMix rng(seed ^ fnv1a(name));
    Mat<T> v(rows, cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<T>((2.0 * rng.uniform() - 1.0) * scale);
    index_[name] = names_.size();
    names_.push_back(name);
    vars_.emplace_back(std::move(v), true);
    return vars_.back();
  }

  Var<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter " + name);
    return vars_[it->second];
  }
  const Var<T>& get(const std::string& name) const { return const_cast<ParamSet*>(this)->get(name); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Var<T>>& vars() { return vars_; }
  const std::vector<Var<T>>& vars() const { return vars_; }
  std::size_t size() const { return vars_.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& v : vars_) n += static_cast<std::size_t>(v.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& v : vars_) v.node->grad.setZero(v.rows(), v.cols());
  }

  // Copies values into a parameter set of another scalar type, by name.
  template <class U>
  void copy_values_to(ParamSet<U>& dst) const {
    for (std::size_t i = 0; i < names_.size(); ++i) dst.get(names_[i]).mutable_value() = vars_[i].value().template cast<U>();
  }

 private:
  std::vector<std::string> names_;
  std::vector<Var<T>> vars_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Clips the global gradient norm, then applies one update. Returns the
  // pre-clip norm.
  double step(ParamSet<double>& params) {
    if (m_.empty()) {
      for (auto& v : params.vars()) {
        m_.push_back(Mat<double>::Zero(v.rows(), v.cols()));
        v_.push_back(Mat<double>::Zero(v.rows(), v.cols()));
      }
    }
    double sq = 0;
    for (auto& v : params.vars()) sq += v.grad().squaredNorm();
    double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    double k = norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    auto& vars = params.vars();
    for (std::size_t i = 0; i < vars.size(); ++i) {
      Mat<double> g = vars[i].grad() * k;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      Mat<double> upd = (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
      vars[i].mutable_value() -= cfg_.lr * upd;
    }
    return norm;
  }

 private:
  AdamConfig cfg_;
  std::vector<Mat<double>> m_, v_;
  int t_ = 0;
};

}  // namespace csasr::nn
