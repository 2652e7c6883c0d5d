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

// Hybrid CTC/attention encoder-decoder with an optional language-ID branch.
//
// Encoder: a 3x3 convolution block subsampling time by 2 (or 4), followed by
// bidirectional LSTM layers. Heads: a CTC projection over units + blank, a
// location-aware attention decoder over units + sos + eos, and a LID branch
// that either reuses the ASR attention contexts (shared) or owns its own
// attention and decoder (indep).

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "csasr/common.hpp"
#include "csasr/nnet/autodiff.hpp"
#include "csasr/nnet/ctc.hpp"
#include "csasr/nnet/params.hpp"
#include "csasr/tokenize.hpp"

namespace csasr::nn {

enum class LidMode { Off, Shared, Indep };

inline const char* lid_mode_name(LidMode m) {
  switch (m) {
    case LidMode::Shared: return "shared";
    case LidMode::Indep: return "indep";
    default: return "off";
  }
}

inline LidMode parse_lid_mode(const std::string& s) {
  if (s == "off") return LidMode::Off;
  if (s == "shared") return LidMode::Shared;
  if (s == "indep") return LidMode::Indep;
  throw UsageError("lid_mode must be off, shared or indep, got " + s);
}

inline const char* granularity_name(LidGranularity g) {
  return g == LidGranularity::PerToken ? "per_token" : "collapsed";
}

inline LidGranularity parse_granularity(const std::string& s) {
  if (s == "per_token") return LidGranularity::PerToken;
  if (s == "collapsed") return LidGranularity::Collapsed;
  throw UsageError("lid_granularity must be per_token or collapsed, got " + s);
}

struct ModelConfig {
  int enc_layers = 2;
  int enc_units = 64;
  int dec_units = 64;
  int conv_channels = 16;
  double lambda1 = 0.8;
  double lambda2 = 0.0;
  LidMode lid_mode = LidMode::Off;
  LidGranularity lid_granularity = LidGranularity::PerToken;
  int subsample = 2;
  int att_units = 64;
  int att_conv_channels = 8;
  int att_conv_width = 11;

  void validate() const {
    if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) throw UsageError("lambda1 must be in [0,1]");
    if (!(lambda2 >= 0.0 && lambda2 <= 1.0)) throw UsageError("lambda2 must be in [0,1]");
    if (lid_mode == LidMode::Off && lambda2 != 0.0) throw UsageError("lid_mode=off requires lambda2=0");
    if (lid_mode == LidMode::Shared && lid_granularity != LidGranularity::PerToken)
      throw UsageError("shared LID mode requires lid_granularity=per_token");
    if (subsample != 2 && subsample != 4) throw UsageError("subsample must be 2 or 4");
    if (enc_layers < 1 || enc_units < 1 || dec_units < 1 || conv_channels < 1 || att_units < 1 ||
        att_conv_channels < 1 || att_conv_width < 1)
      throw UsageError("model sizes must be positive");
  }
};

inline constexpr int kNumLidOut = 3;  // M, E, eos
inline constexpr int kLidSos = 2;     // input id for the start of the tag sequence

template <class T>
struct AttentionParams {
  Var<T> w_state, w_enc, w_loc, bias, score, filters;
};

// Projection of the encoder output that only depends on H.
template <class T>
struct AttentionCache {
  Var<T> H;
  Var<T> enc_proj;
};

template <class T>
struct AttentionResult {
  Var<T> context;  // 1 x d
  Var<T> weights;  // 1 x frames'
};

// One location-aware attention step:
//   f = conv(a_prev), e_i = w . tanh(W s + V h_i + U f_i + b), a = softmax(e).
template <class T>
AttentionResult<T> attention_step(const AttentionParams<T>& p, const Var<T>& s_prev, const AttentionCache<T>& cache,
                                  const Var<T>& a_prev) {
  Var<T> loc = matmul(conv1d_location(a_prev, p.filters), p.w_loc);
  Var<T> state = add(matmul(s_prev, p.w_state), p.bias);
  Var<T> hidden = tanh(add_row(add(cache.enc_proj, loc), state));
  Var<T> energies = transpose(matmul(hidden, p.score));
  Var<T> a = softmax_rows(energies);
  return {matmul(a, cache.H), a};
}

template <class T>
struct LstmParams {
  Var<T> w_in, w_rec, bias;
  Eigen::Index units = 0;
};

template <class T>
std::pair<Var<T>, Var<T>> lstm_cell(const LstmParams<T>& p, const Var<T>& input_proj, const Var<T>& h, const Var<T>& c) {
  const Eigen::Index n = p.units;
  Var<T> g = add(input_proj, matmul(h, p.w_rec));
  Var<T> i = sigmoid(slice_cols(g, 0, n));
  Var<T> f = sigmoid(slice_cols(g, n, n));
  Var<T> cand = tanh(slice_cols(g, 2 * n, n));
  Var<T> o = sigmoid(slice_cols(g, 3 * n, n));
  Var<T> c_new = add(mul(f, c), mul(i, cand));
  Var<T> h_new = mul(o, tanh(c_new));
  return {h_new, c_new};
}

template <class T>
Var<T> zeros(Eigen::Index r, Eigen::Index c) {
  return Var<T>(Mat<T>::Zero(r, c));
}

template <class T>
Var<T> one_hot(int index, int size) {
  Mat<T> m = Mat<T>::Zero(1, size);
  m(0, index) = T(1);
  return Var<T>(std::move(m));
}

template <class T>
struct DecoderState {
  Var<T> h, c, a;
};

template <class T>
struct Encoded {
  Var<T> H;                  // frames' x d
  Var<T> ctc_log_probs;      // frames' x (V+1)
  AttentionCache<T> att;     // ASR attention
  AttentionCache<T> lid_att; // indep LID attention
  int subsample_factor = 2;
};

template <class T>
struct LossTerms {
  Var<T> att, ctc, lid, total;
};

inline std::size_t encoded_frames(std::size_t frames, int subsample) {
  return (frames + static_cast<std::size_t>(subsample) - 1) / static_cast<std::size_t>(subsample);
}

template <class T>
class AsrModel {
 public:
  AsrModel(const ModelConfig& cfg, int input_dim, int vocab_size, std::uint64_t seed)
      : cfg_(cfg), input_dim_(input_dim), vocab_(vocab_size), seed_(seed) {
    cfg_.validate();
    if (input_dim < 1 || vocab_size < 1) throw UsageError("input_dim and vocab_size must be positive");
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  int input_dim() const { return input_dim_; }
  int vocab_size() const { return vocab_; }
  int blank_id() const { return vocab_; }
  int sos_id() const { return vocab_; }
  int eos_id() const { return vocab_ + 1; }
  int att_classes() const { return vocab_ + 2; }
  int enc_dim() const { return 2 * cfg_.enc_units; }
  std::uint64_t seed() const { return seed_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  Var<T> encoder_forward(const Mat<T>& x) const {
    if (x.cols() != input_dim_) throw DataError("feature dimension " + std::to_string(x.cols()) + " != model input " + std::to_string(input_dim_));
    if (x.rows() < cfg_.subsample) throw DataError("utterance has fewer frames than the subsampling factor");
    Var<T> h(x);
    Eigen::Index cin = 1;
    int convs = cfg_.subsample == 4 ? 2 : 1;
    for (int k = 0; k < convs; ++k) {
      std::string p = "enc.conv" + std::to_string(k);
      h = relu(conv2d(h, P(p + ".weight"), P(p + ".bias"), cin, 2));
      cin = cfg_.conv_channels;
    }
    for (int l = 0; l < cfg_.enc_layers; ++l) h = blstm_layer(h, l);
    return h;
  }

  Encoded<T> encode(const Mat<T>& x) const {
    Encoded<T> e;
    e.subsample_factor = cfg_.subsample;
    e.H = encoder_forward(x);
    e.ctc_log_probs = log_softmax_rows(add_row(matmul(e.H, P("ctc.weight")), P("ctc.bias")));
    e.att = {e.H, matmul(e.H, P("att.w_enc"))};
    if (cfg_.lid_mode == LidMode::Indep) e.lid_att = {e.H, matmul(e.H, P("lid_att.w_enc"))};
    return e;
  }

  AttentionParams<T> attention_params(const std::string& prefix) const {
    return {P(prefix + ".w_state"), P(prefix + ".w_enc"), P(prefix + ".w_loc"),
            P(prefix + ".bias"),    P(prefix + ".score"), P(prefix + ".filters")};
  }

  DecoderState<T> initial_state(const Encoded<T>& e) const {
    const Eigen::Index frames = e.H.rows();
    return {zeros<T>(1, cfg_.dec_units), zeros<T>(1, cfg_.dec_units),
            Var<T>(Mat<T>::Constant(1, frames, T(1) / static_cast<T>(frames)))};
  }

  struct StepOut {
    Var<T> log_probs;  // 1 x (V+2)
    Var<T> context;
    DecoderState<T> state;
  };

  // Consumes the previous output unit (sos at the start) and predicts the next.
  StepOut decoder_step(const Encoded<T>& e, const DecoderState<T>& st, int prev) const {
    auto att = attention_step(attention_params("att"), st.h, e.att, st.a);
    LstmParams<T> lp{P("dec.lstm.w_in"), P("dec.lstm.w_rec"), P("dec.lstm.bias"), cfg_.dec_units};
    Var<T> in = concat_cols<T>({slice_rows(P("dec.embed"), prev, 1), att.context});
    auto [h, c] = lstm_cell(lp, add(matmul(in, lp.w_in), lp.bias), st.h, st.c);
    Var<T> logits = add(matmul(concat_cols<T>({h, att.context}), P("dec.out.weight")), P("dec.out.bias"));
    return {log_softmax_rows(logits), att.context, {h, c, att.weights}};
  }

  // Teacher-forced attention loss: mean cross-entropy over |y|+1 steps.
  Var<T> attention_loss(const Encoded<T>& e, const std::vector<int>& y, std::vector<Var<T>>* contexts = nullptr) const {
    DecoderState<T> st = initial_state(e);
    std::vector<Var<T>> step_losses;
    int prev = sos_id();
    for (std::size_t t = 0; t <= y.size(); ++t) {
      int target = t < y.size() ? y[t] : eos_id();
      auto out = decoder_step(e, st, prev);
      step_losses.push_back(pick_sum<T>(out.log_probs, {{0, target}}, T(-1)));
      if (contexts) contexts->push_back(out.context);
      st = out.state;
      prev = target;
    }
    return mean_of(step_losses);
  }

  Var<T> ctc_loss(const Encoded<T>& e, const std::vector<int>& y) const { return ctc_loss_op(e.ctc_log_probs, y); }

  // LID cross-entropy over {M, E, eos}. Shared mode needs the ASR contexts
  // from attention_loss (one per output step).
  Var<T> lid_loss(const Encoded<T>& e, const LidSeq& z, const std::vector<Var<T>>& asr_contexts) const {
    std::vector<Var<T>> step_losses;
    if (cfg_.lid_mode == LidMode::Shared) {
      if (asr_contexts.size() != z.tags.size() + 1) throw DataError("shared LID needs one tag per output unit");
      int prev = kLidSos;
      for (std::size_t t = 0; t <= z.tags.size(); ++t) {
        int target = t < z.tags.size() ? z.tags[t] : kLidEos;
        Var<T> in = concat_cols<T>({asr_contexts[t], one_hot<T>(prev, kNumLidOut)});
        Var<T> lp = log_softmax_rows(add(matmul(in, P("lid_out.weight")), P("lid_out.bias")));
        step_losses.push_back(pick_sum<T>(lp, {{0, target}}, T(-1)));
        prev = target;
      }
    } else if (cfg_.lid_mode == LidMode::Indep) {
      auto ap = attention_params("lid_att");
      LstmParams<T> lp{P("lid_dec.lstm.w_in"), P("lid_dec.lstm.w_rec"), P("lid_dec.lstm.bias"), cfg_.dec_units};
      DecoderState<T> st = initial_state(e);
      int prev = kLidSos;
      for (std::size_t t = 0; t <= z.tags.size(); ++t) {
        int target = t < z.tags.size() ? z.tags[t] : kLidEos;
        auto att = attention_step(ap, st.h, e.lid_att, st.a);
        Var<T> in = concat_cols<T>({slice_rows(P("lid_dec.embed"), prev, 1), att.context});
        auto [h, c] = lstm_cell(lp, add(matmul(in, lp.w_in), lp.bias), st.h, st.c);
        Var<T> logits = add(matmul(concat_cols<T>({h, att.context}), P("lid_dec.out.weight")), P("lid_dec.out.bias"));
        step_losses.push_back(pick_sum<T>(log_softmax_rows(logits), {{0, target}}, T(-1)));
        st = {h, c, att.weights};
        prev = target;
      }
    } else {
      throw UsageError("lid_loss requires lid_mode shared or indep");
    }
    return mean_of(step_losses);
  }

  // lambda1 * att + (1 - lambda1) * ctc [+ lambda2 * lid].
  LossTerms<T> losses(const Mat<T>& x, const std::vector<int>& y, const LidSeq* z) const {
    LossTerms<T> out;
    Encoded<T> e = encode(x);
    std::vector<Var<T>> contexts;
    out.att = attention_loss(e, y, &contexts);
    out.ctc = ctc_loss(e, y);
    const T l1 = static_cast<T>(cfg_.lambda1);
    if (cfg_.lid_mode != LidMode::Off) {
      if (!z) throw UsageError("LID targets required when lid_mode is not off");
      out.lid = lid_loss(e, *z, contexts);
      out.total = weighted_sum<T>({out.att, out.ctc, out.lid}, {l1, T(1) - l1, static_cast<T>(cfg_.lambda2)});
    } else {
      out.total = weighted_sum<T>({out.att, out.ctc}, {l1, T(1) - l1});
    }
    return out;
  }

 private:
  Var<T> P(const std::string& name) const { return params_.get(name); }

  static Var<T> mean_of(const std::vector<Var<T>>& xs) {
    std::vector<T> w(xs.size(), T(1) / static_cast<T>(xs.size()));
    return weighted_sum<T>(xs, w);
  }

  Var<T> blstm_layer(const Var<T>& x, int layer) const {
    std::vector<Var<T>> dirs;
    for (const char* d : {"fwd", "bwd"}) {
      std::string p = "enc.lstm" + std::to_string(layer) + "." + d;
      LstmParams<T> lp{P(p + ".w_in"), P(p + ".w_rec"), P(p + ".bias"), cfg_.enc_units};
      Var<T> proj = add_row(matmul(x, lp.w_in), lp.bias);
      const Eigen::Index n = x.rows();
      std::vector<Var<T>> outs(static_cast<std::size_t>(n));
      Var<T> h = zeros<T>(1, cfg_.enc_units), c = zeros<T>(1, cfg_.enc_units);
      bool forward = d[0] == 'f';
      for (Eigen::Index k = 0; k < n; ++k) {
        Eigen::Index t = forward ? k : n - 1 - k;
        std::tie(h, c) = lstm_cell(lp, slice_rows(proj, t, 1), h, c);
        outs[static_cast<std::size_t>(t)] = h;
      }
      dirs.push_back(concat_rows(outs));
    }
    return concat_cols(dirs);
  }

  void add_linear(const std::string& name, Eigen::Index in, Eigen::Index out) {
    double s = 1.0 / std::sqrt(static_cast<double>(in));
    params_.add(name + ".weight", in, out, s, seed_);
    params_.add(name + ".bias", 1, out, s, seed_);
  }

  void add_lstm(const std::string& name, Eigen::Index in, Eigen::Index units) {
    double s = 1.0 / std::sqrt(static_cast<double>(units));
    params_.add(name + ".w_in", in, 4 * units, s, seed_);
    params_.add(name + ".w_rec", units, 4 * units, s, seed_);
    params_.add(name + ".bias", 1, 4 * units, s, seed_);
  }

  void add_attention(const std::string& name) {
    const Eigen::Index d = enc_dim(), A = cfg_.att_units;
    params_.add(name + ".w_state", cfg_.dec_units, A, 1.0 / std::sqrt(static_cast<double>(cfg_.dec_units)), seed_);
    params_.add(name + ".w_enc", d, A, 1.0 / std::sqrt(static_cast<double>(d)), seed_);
    params_.add(name + ".w_loc", cfg_.att_conv_channels, A, 1.0 / std::sqrt(static_cast<double>(cfg_.att_conv_channels)), seed_);
    params_.add(name + ".bias", 1, A, 1.0 / std::sqrt(static_cast<double>(A)), seed_);
    params_.add(name + ".score", A, 1, 1.0 / std::sqrt(static_cast<double>(A)), seed_);
    params_.add(name + ".filters", cfg_.att_conv_channels, cfg_.att_conv_width, 1.0 / std::sqrt(static_cast<double>(cfg_.att_conv_width)), seed_);
  }

  void build() {
    const Eigen::Index C = cfg_.conv_channels, d = enc_dim();
    params_.add("enc.conv0.weight", C, 9, 1.0 / 3.0, seed_);
    params_.add("enc.conv0.bias", 1, C, 1.0 / 3.0, seed_);
    if (cfg_.subsample == 4) {
      double s = 1.0 / std::sqrt(9.0 * static_cast<double>(C));
      params_.add("enc.conv1.weight", C, 9 * C, s, seed_);
      params_.add("enc.conv1.bias", 1, C, s, seed_);
    }
    Eigen::Index in = C * input_dim_;
    for (int l = 0; l < cfg_.enc_layers; ++l) {
      add_lstm("enc.lstm" + std::to_string(l) + ".fwd", in, cfg_.enc_units);
      add_lstm("enc.lstm" + std::to_string(l) + ".bwd", in, cfg_.enc_units);
      in = d;
    }
    add_linear("ctc", d, vocab_ + 1);
    add_attention("att");
    params_.add("dec.embed", vocab_ + 2, cfg_.dec_units, 1.0, seed_);
    add_lstm("dec.lstm", cfg_.dec_units + d, cfg_.dec_units);
    add_linear("dec.out", cfg_.dec_units + d, vocab_ + 2);
    if (cfg_.lid_mode == LidMode::Shared) {
      add_linear("lid_out", d + kNumLidOut, kNumLidOut);
    } else if (cfg_.lid_mode == LidMode::Indep) {
      add_attention("lid_att");
      params_.add("lid_dec.embed", kNumLidOut, cfg_.dec_units, 1.0, seed_);
      add_lstm("lid_dec.lstm", cfg_.dec_units + d, cfg_.dec_units);
      add_linear("lid_dec.out", cfg_.dec_units + d, kNumLidOut);
    }
  }

  ModelConfig cfg_;
  int input_dim_;
  int vocab_;
  std::uint64_t seed_;
  ParamSet<T> params_;
};

}  // namespace csasr::nn
