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

// Joint CTC/attention beam search with CTC prefix scoring, and the N-best
// file format.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "csasr/common.hpp"
#include "csasr/nnet/ctc.hpp"
#include "csasr/nnet/model.hpp"

namespace csasr {

// Per-frame forward variables of a prefix: r_n ends in a non-blank emission
// of the last unit, r_b in blank. Log space.
struct CtcPrefixState {
  std::vector<double> r_n, r_b;
  double psi = 0.0;  // log prefix probability
};

class CtcPrefixScorer {
 public:
  // `log_probs` is frames x (V+1) with blank in the last column.
  explicit CtcPrefixScorer(nn::Mat<double> log_probs)
      : lp_(std::move(log_probs)), T_(lp_.rows()), blank_(static_cast<int>(lp_.cols()) - 1) {}

  Eigen::Index frames() const { return T_; }
  int blank() const { return blank_; }

  CtcPrefixState initial() const {
    CtcPrefixState s;
    s.r_n.assign(static_cast<std::size_t>(T_), nn::kLogZero);
    s.r_b.assign(static_cast<std::size_t>(T_), nn::kLogZero);
    double acc = 0.0;
    for (Eigen::Index t = 0; t < T_; ++t) s.r_b[static_cast<std::size_t>(t)] = acc += lp_(t, blank_);
    s.psi = 0.0;
    return s;
  }

  // State of prefix+c given the state of a prefix of length `len` whose last
  // unit is `last` (-1 when empty). Returns psi = log of the total
  // probability of label sequences starting with prefix+c.
  CtcPrefixState extend(const CtcPrefixState& prev, std::size_t len, int last, int c) const {
    using nn::kLogZero;
    using nn::log_add;
    CtcPrefixState s;
    const auto T = static_cast<std::size_t>(T_);
    s.r_n.assign(T, kLogZero);
    s.r_b.assign(T, kLogZero);
    if (len == 0) s.r_n[0] = lp_(0, c);
    auto phi = [&](std::size_t t) { return c == last ? prev.r_b[t] : log_add(prev.r_n[t], prev.r_b[t]); };
    double psi = s.r_n[0];
    for (std::size_t t = std::max<std::size_t>(len, 1); t < T; ++t) {
      double ph = phi(t - 1);
      s.r_n[t] = add(log_add(s.r_n[t - 1], ph), lp_(static_cast<Eigen::Index>(t), c));
      s.r_b[t] = add(log_add(s.r_n[t - 1], s.r_b[t - 1]), lp_(static_cast<Eigen::Index>(t), blank_));
      psi = log_add(psi, add(ph, lp_(static_cast<Eigen::Index>(t), c)));
    }
    s.psi = psi;
    return s;
  }

  // Probability that the label sequence is exactly the prefix.
  double final_score(const CtcPrefixState& s) const {
    return nn::log_add(s.r_n[static_cast<std::size_t>(T_ - 1)], s.r_b[static_cast<std::size_t>(T_ - 1)]);
  }

 private:
  static double add(double a, double b) { return a == nn::kLogZero ? nn::kLogZero : a + b; }

  nn::Mat<double> lp_;
  Eigen::Index T_;
  int blank_;
};

// One-shot prefix score: log p_ctc(prefix + unit, ... | X).
inline double ctc_prefix_score(const nn::Mat<double>& log_probs, const std::vector<int>& prefix, int unit) {
  CtcPrefixScorer sc(log_probs);
  auto st = sc.initial();
  int last = -1;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    st = sc.extend(st, i, last, prefix[i]);
    last = prefix[i];
  }
  return sc.extend(st, prefix.size(), last, unit).psi;
}

// alpha * ctc + (1 - alpha) * att, with a zero weight silencing -inf terms.
inline double combine_scores(double alpha, double ctc, double att) {
  double s = 0.0;
  if (alpha > 0.0) s += alpha * ctc;
  if (alpha < 1.0) s += (1.0 - alpha) * att;
  return s;
}

struct Hypothesis {
  std::vector<int> units;
  double score_att = 0.0;
  double score_ctc = 0.0;
  double score_total = 0.0;
};

struct NBestList {
  std::string utt_id;
  std::vector<Hypothesis> hyps;  // sorted by score_total, descending
  bool unfinished = false;       // no hypothesis reached eos within the length bound
};

struct BeamOptions {
  int beam = 10;
  double alpha = 0.2;
  int nbest = 1;
  double max_ratio = 1.0;
};

template <class T>
NBestList beam_search(const nn::AsrModel<T>& model, const nn::Mat<T>& x, const BeamOptions& opt) {
  if (opt.beam < 1 || opt.nbest < 1) throw UsageError("beam and nbest must be >= 1");
  if (!(opt.alpha >= 0.0 && opt.alpha <= 1.0)) throw UsageError("alpha must be in [0,1]");
  nn::NoGradGuard no_grad;
  auto enc = model.encode(x);
  CtcPrefixScorer ctc(enc.ctc_log_probs.value().template cast<double>());
  const auto frames = static_cast<std::size_t>(enc.H.rows());
  const auto max_len = static_cast<std::size_t>(std::floor(opt.max_ratio * static_cast<double>(frames) + 1e-9));
  const int V = model.vocab_size(), eos = model.eos_id();

  struct Entry {
    Hypothesis hyp;
    nn::DecoderState<T> state;
    CtcPrefixState ctc;
  };
  struct Cand {
    std::size_t parent;
    int unit;
    double att, ctc, total;
  };

  std::vector<Entry> active(1);
  active[0].state = model.initial_state(enc);
  active[0].ctc = ctc.initial();
  std::vector<Hypothesis> finished;
  auto by_total = [](const Hypothesis& a, const Hypothesis& b) { return a.score_total > b.score_total; };

  for (std::size_t len = 0; len <= max_len && !active.empty(); ++len) {
    std::vector<Cand> cands;
    std::vector<nn::DecoderState<T>> next_states(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) {
      const auto& e = active[i];
      int prev = e.hyp.units.empty() ? model.sos_id() : e.hyp.units.back();
      auto out = model.decoder_step(enc, e.state, prev);
      next_states[i] = out.state;
      const auto& lp = out.log_probs.value();
      double ctc_eos = ctc.final_score(e.ctc);
      double att_eos = e.hyp.score_att + static_cast<double>(lp(0, eos));
      cands.push_back({i, eos, att_eos, ctc_eos, combine_scores(opt.alpha, ctc_eos, att_eos)});
      if (len == max_len) continue;
      for (int c = 0; c < V; ++c) {
        double att = e.hyp.score_att + static_cast<double>(lp(0, c));
        // With alpha = 0 the prefix score does not affect ranking; survivors
        // still get it below for reporting.
        double ctc_psi = opt.alpha > 0.0 ? ctc.extend(e.ctc, e.hyp.units.size(), prev == model.sos_id() ? -1 : prev, c).psi
                                         : 0.0;
        cands.push_back({i, c, att, ctc_psi, combine_scores(opt.alpha, ctc_psi, att)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.total > b.total; });
    if (cands.size() > static_cast<std::size_t>(opt.beam)) cands.resize(static_cast<std::size_t>(opt.beam));

    std::vector<Entry> next;
    for (const auto& c : cands) {
      const auto& parent = active[c.parent];
      Hypothesis h;
      h.units = parent.hyp.units;
      h.score_att = c.att;
      if (c.unit == eos) {
        h.score_ctc = c.ctc;
        h.score_total = c.total;
        finished.push_back(std::move(h));
        continue;
      }
      h.units.push_back(c.unit);
      int last = parent.hyp.units.empty() ? -1 : parent.hyp.units.back();
      Entry e;
      e.ctc = ctc.extend(parent.ctc, parent.hyp.units.size(), last, c.unit);
      h.score_ctc = e.ctc.psi;
      h.score_total = c.total;
      e.hyp = std::move(h);
      e.state = next_states[c.parent];
      next.push_back(std::move(e));
    }
    active = std::move(next);

    // Scores never increase along a hypothesis, so once the n-th best
    // finished score reaches the best active score the top n are final.
    if (!active.empty() && finished.size() >= static_cast<std::size_t>(opt.nbest)) {
      std::vector<Hypothesis> sorted = finished;
      std::stable_sort(sorted.begin(), sorted.end(), by_total);
      double best_active = active.front().hyp.score_total;
      if (sorted[static_cast<std::size_t>(opt.nbest) - 1].score_total >= best_active) break;
    }
  }

  NBestList out;
  if (finished.empty()) {
    out.unfinished = true;
    for (auto& e : active) finished.push_back(e.hyp);
  }
  std::stable_sort(finished.begin(), finished.end(), by_total);
  if (finished.size() > static_cast<std::size_t>(opt.nbest)) finished.resize(static_cast<std::size_t>(opt.nbest));
  out.hyps = std::move(finished);
  return out;
}

// ---------------------------------------------------------------------------
// N-best file: "<utt>\t<rank>\t<total>\t<att>\t<ctc>\t<units>" per line, with
// optional extra numeric columns appended after the units.

struct NBestRow {
  std::string utt_id;
  int rank = 0;
  double score_total = 0, score_att = 0, score_ctc = 0;
  std::vector<std::string> units;
  std::vector<double> extra;
};

inline std::string nbest_row_to_line(const NBestRow& r) {
  std::string line = r.utt_id + '\t' + std::to_string(r.rank) + '\t' + fmt_double(r.score_total) + '\t' +
                     fmt_double(r.score_att) + '\t' + fmt_double(r.score_ctc) + '\t' + join(r.units, " ");
  for (double v : r.extra) line += '\t' + fmt_double(v);
  return line + '\n';
}

inline std::vector<NBestRow> nbest_rows(const NBestList& l, const std::vector<std::string>& unit_names) {
  std::vector<NBestRow> rows;
  for (std::size_t i = 0; i < l.hyps.size(); ++i) {
    const auto& h = l.hyps[i];
    NBestRow r{l.utt_id, static_cast<int>(i + 1), h.score_total, h.score_att, h.score_ctc, {}, {}};
    for (int u : h.units) r.units.push_back(unit_names.at(static_cast<std::size_t>(u)));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline double parse_score(const std::string& s) {
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = std::stod(s, &used);
  if (used != s.size()) throw DataError("bad score field '" + s + "'");
  return v;
}

inline std::vector<NBestRow> parse_nbest(const std::vector<std::string>& lines) {
  std::vector<NBestRow> rows;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_char(lines[i], '\t');
    if (f.size() < 6) throw DataError("n-best line " + std::to_string(i + 1) + ": expected at least 6 tab-separated fields");
    NBestRow r;
    r.utt_id = f[0];
    try {
      r.rank = std::stoi(f[1]);
      r.score_total = parse_score(f[2]);
      r.score_att = parse_score(f[3]);
      r.score_ctc = parse_score(f[4]);
      for (std::size_t k = 6; k < f.size(); ++k) r.extra.push_back(parse_score(f[k]));
    } catch (const std::logic_error&) {
      throw DataError("n-best line " + std::to_string(i + 1) + ": bad numeric field");
    }
    r.units = split_ws(f[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace csasr
