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

// Mini-batch training of the hybrid model, the checkpoint format, and the
// finite-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "csasr/common.hpp"
#include "csasr/nnet/model.hpp"
#include "csasr/nnet/params.hpp"
#include "json.hpp"

namespace csasr::nn {

struct TrainExample {
  std::string id;
  Mat<double> feats;
  std::vector<int> units;
  LidSeq lid;
};

struct TrainHyper {
  AdamConfig adam;
  int batch_size = 8;
  int epochs = 30;
  std::uint64_t seed = 1;
  long max_steps = -1;  // stop early after this many updates when >= 0
};

struct LossBreakdown {
  double total = 0, att = 0, ctc = 0, lid = 0;
};

struct StepLog {
  int epoch = 0;
  long step = 0;
  LossBreakdown loss;
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown mean;
  std::size_t utterances = 0;
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::vector<std::string> skipped;
};

inline nlohmann::json to_json(const LossBreakdown& l) {
  return {{"total", l.total}, {"att", l.att}, {"ctc", l.ctc}, {"lid", l.lid}};
}

// Batches of length-sorted utterances; the batch order is reshuffled each
// epoch from the seed.
inline std::vector<std::vector<std::size_t>> length_sorted_batches(const std::vector<TrainExample>& data,
                                                                    const std::vector<std::size_t>& usable, int batch_size) {
  std::vector<std::size_t> order = usable;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (data[a].feats.rows() != data[b].feats.rows()) return data[a].feats.rows() < data[b].feats.rows();
    return data[a].id < data[b].id;
  });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size))
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + static_cast<std::size_t>(batch_size))));
  return batches;
}

inline void shuffle_in_place(std::vector<std::size_t>& v, SplitMix& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

using EpochCallback = std::function<void(const EpochLog&)>;

inline TrainResult train(AsrModel<double>& model, const std::vector<TrainExample>& data, const TrainHyper& hyper,
                         const EpochCallback& on_epoch = {}) {
  TrainResult result;
  if (hyper.batch_size < 1) throw UsageError("batch_size must be positive");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    if (ex.feats.rows() < model.config().subsample) {
      warn("skipping " + ex.id + ": fewer frames than the subsampling factor");
      result.skipped.push_back(ex.id);
      continue;
    }
    auto frames = encoded_frames(static_cast<std::size_t>(ex.feats.rows()), model.config().subsample);
    if (frames < ctc_min_frames(ex.units)) {
      warn("skipping " + ex.id + ": target longer than encoder frames");
      result.skipped.push_back(ex.id);
      continue;
    }
    usable.push_back(i);
  }
  if (usable.empty()) throw DataError("no trainable utterances");

  auto batches = length_sorted_batches(data, usable, hyper.batch_size);
  Adam opt(hyper.adam);
  auto& params = model.params();
  SplitMix rng(hyper.seed ^ 0x747261696eULL);
  long step = 0;
  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::vector<std::size_t> order(batches.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_in_place(order, rng);
    EpochLog elog;
    elog.epoch = epoch;
    for (std::size_t bi : order) {
      if (hyper.max_steps >= 0 && step >= hyper.max_steps) break;
      const auto& batch = batches[bi];
      params.zero_grad();
      LossBreakdown bl;
      const double w = 1.0 / static_cast<double>(batch.size());
      for (std::size_t idx : batch) {
        const auto& ex = data[idx];
        auto terms = model.losses(ex.feats, ex.units, &ex.lid);
        double total = terms.total.item();
        if (!std::isfinite(total))
          throw NumericError("non-finite loss in batch " + std::to_string(bi) + " (utterance " + ex.id + ")");
        backward(scale(terms.total, w));
        bl.total += w * total;
        bl.att += w * terms.att.item();
        bl.ctc += w * terms.ctc.item();
        if (terms.lid.defined()) bl.lid += w * terms.lid.item();
      }
      opt.step(params);
      ++step;
      result.steps.push_back({epoch, step, bl});
      const double n = static_cast<double>(batch.size());
      elog.mean.total += bl.total * n;
      elog.mean.att += bl.att * n;
      elog.mean.ctc += bl.ctc * n;
      elog.mean.lid += bl.lid * n;
      elog.utterances += batch.size();
    }
    if (elog.utterances == 0) break;
    const double n = static_cast<double>(elog.utterances);
    elog.mean.total /= n;
    elog.mean.att /= n;
    elog.mean.ctc /= n;
    elog.mean.lid /= n;
    result.epochs.push_back(elog);
    if (on_epoch) on_epoch(elog);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: "CKPT1" line, one-line JSON metadata, then for each tensor an
// ASCII "<name> <rank> <dims...>" line followed by little-endian f32 values.

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"enc_layers", c.enc_layers},
          {"enc_units", c.enc_units},
          {"dec_units", c.dec_units},
          {"conv_channels", c.conv_channels},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"lid_mode", lid_mode_name(c.lid_mode)},
          {"lid_granularity", granularity_name(c.lid_granularity)},
          {"subsample", c.subsample},
          {"att_units", c.att_units},
          {"att_conv_channels", c.att_conv_channels},
          {"att_conv_width", c.att_conv_width}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.enc_layers = j.at("enc_layers");
  c.enc_units = j.at("enc_units");
  c.dec_units = j.at("dec_units");
  c.conv_channels = j.at("conv_channels");
  c.lambda1 = j.at("lambda1");
  c.lambda2 = j.at("lambda2");
  c.lid_mode = parse_lid_mode(j.at("lid_mode"));
  c.lid_granularity = parse_granularity(j.at("lid_granularity"));
  c.subsample = j.at("subsample");
  c.att_units = j.at("att_units");
  c.att_conv_channels = j.at("att_conv_channels");
  c.att_conv_width = j.at("att_conv_width");
  return c;
}

template <class T>
std::string tensors_to_bytes(const ParamSet<T>& params) {
  std::string out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& v = params.vars()[i].value();
    out += params.names()[i] + " 2 " + std::to_string(v.rows()) + ' ' + std::to_string(v.cols()) + '\n';
    std::size_t off = out.size();
    out.resize(off + static_cast<std::size_t>(v.size()) * 4);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      float f = static_cast<float>(v.data()[k]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) out[off + static_cast<std::size_t>(k) * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  return out;
}

struct RawCheckpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, Mat<double>>> tensors;
};

inline RawCheckpoint parse_checkpoint(const std::string& bytes) {
  RawCheckpoint ck;
  std::size_t pos = bytes.find('\n');
  if (pos == std::string::npos || bytes.substr(0, pos) != "CKPT1") throw DataError("not a CKPT1 checkpoint");
  std::size_t jend = bytes.find('\n', pos + 1);
  if (jend == std::string::npos) throw DataError("checkpoint metadata truncated");
  ck.meta = nlohmann::json::parse(bytes.substr(pos + 1, jend - pos - 1));
  pos = jend + 1;
  while (pos < bytes.size()) {
    std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw DataError("checkpoint tensor header truncated");
    auto f = split_ws(bytes.substr(pos, nl - pos));
    if (f.size() < 2) throw DataError("bad tensor header");
    std::size_t rank = std::stoul(f[1]);
    if (f.size() != 2 + rank || rank < 1 || rank > 2) throw DataError("bad tensor rank for " + f[0]);
    Eigen::Index rows = rank == 2 ? std::stol(f[2]) : 1, cols = std::stol(f[rank == 2 ? 3 : 2]);
    pos = nl + 1;
    std::size_t nbytes = static_cast<std::size_t>(rows * cols) * 4;
    if (pos + nbytes > bytes.size()) throw DataError("checkpoint payload truncated for " + f[0]);
    Mat<double> m(rows, cols);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    for (Eigen::Index k = 0; k < rows * cols; ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[k * 4 + b]) << (8 * b);
      float v;
      std::memcpy(&v, &bits, 4);
      m.data()[k] = v;
    }
    pos += nbytes;
    ck.tensors.emplace_back(f[0], std::move(m));
  }
  return ck;
}

// Metadata carries the config, sizes, unit list and training bookkeeping.
template <class T>
std::string checkpoint_to_bytes(const AsrModel<T>& model, nlohmann::json meta) {
  meta["config"] = config_to_json(model.config());
  meta["input_dim"] = model.input_dim();
  meta["vocab_size"] = model.vocab_size();
  meta["seed"] = model.seed();
  meta["tensors"] = model.params().size();
  return "CKPT1\n" + meta.dump() + "\n" + tensors_to_bytes(model.params());
}

template <class T>
void load_tensors(ParamSet<T>& params, const RawCheckpoint& ck) {
  if (ck.tensors.size() != params.size()) throw DataError("checkpoint tensor count does not match model");
  for (const auto& [name, m] : ck.tensors) {
    auto& v = params.get(name);
    if (v.rows() != m.rows() || v.cols() != m.cols()) throw DataError("shape mismatch for tensor " + name);
    v.mutable_value() = m.template cast<T>();
  }
}

template <class T>
AsrModel<T> model_from_checkpoint(const RawCheckpoint& ck) {
  AsrModel<T> model(config_from_json(ck.meta.at("config")), ck.meta.at("input_dim"), ck.meta.at("vocab_size"),
                    ck.meta.at("seed").get<std::uint64_t>());
  load_tensors(model.params(), ck);
  return model;
}

// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Relative error with a floor on the denominator so entries whose true
// gradient is ~0 are judged on absolute error. Central differences at
// eps=1e-5 carry ~1e-11 of round-off on an O(1) loss, so the floor sits where
// that noise is still two orders below the 1e-4 tolerance.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences on up to `max_samples` randomly chosen parameter
// entries of `params`. `loss` must rebuild the graph from current values.
inline GradCheckResult grad_check(ParamSet<double>& params, const std::function<Var<double>()>& loss, double eps = 1e-5,
                                  std::size_t max_samples = 200, std::uint64_t seed = 7) {
  params.zero_grad();
  backward(loss());
  std::vector<std::pair<std::size_t, Eigen::Index>> all;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Eigen::Index k = 0; k < params.vars()[i].value().size(); ++k) all.emplace_back(i, k);
  SplitMix rng(seed);
  if (all.size() > max_samples) {
    for (std::size_t i = 0; i < max_samples; ++i) std::swap(all[i], all[i + rng.below(all.size() - i)]);
    all.resize(max_samples);
  }
  GradCheckResult res;
  NoGradGuard ng;
  for (auto [i, k] : all) {
    auto& v = params.vars()[i];
    double analytic = v.node->grad.data()[k];
    double orig = v.value().data()[k];
    v.mutable_value().data()[k] = orig + eps;
    double up = loss().item();
    v.mutable_value().data()[k] = orig - eps;
    double down = loss().item();
    v.mutable_value().data()[k] = orig;
    double numeric = (up - down) / (2 * eps);
    double err = relative_error(analytic, numeric);
    ++res.checked;
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = params.names()[i] + "[" + std::to_string(k) + "]";
    }
  }
  return res;
}

}  // namespace csasr::nn
