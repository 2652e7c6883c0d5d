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

// N-best rescoring with an external token LM and a (gamma, eta) grid search
// on a development set. Hypotheses are rescored on word tokens rebuilt from
// their units.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csasr/decode.hpp"
#include "csasr/eval.hpp"
#include "csasr/lm.hpp"
#include "csasr/tokenize.hpp"

namespace csasr::lm {

// Per-token floor, log(1e-10), used only when a sequence scores -inf (e.g. an
// expanded model whose <unk> mass was moved away).
inline constexpr double kLmLogFloor = -23.025850929940457;

inline double floored_lm_score(const LanguageModel& lm, const Sentence& words) {
  double s = lm.score_sequence(words);
  if (std::isfinite(s)) return s;
  double total = 0.0;
  Sentence h;
  for (const auto& w : words) {
    total += std::max(std::log(lm.prob(h, w)), kLmLogFloor);
    h.push_back(w);
  }
  return total + std::max(std::log(lm.prob(h, kEos)), kLmLogFloor);
}

// One utterance's hypotheses with their LM scores attached.
struct NBestGroup {
  std::string utt_id;
  std::vector<NBestRow> rows;        // in input rank order
  std::vector<std::vector<Token>> words;
  std::vector<double> lm;
};

inline std::vector<NBestGroup> group_nbest(const std::vector<NBestRow>& rows) {
  std::vector<NBestGroup> groups;
  std::map<std::string, std::size_t> index;
  for (const auto& r : rows) {
    auto [it, fresh] = index.emplace(r.utt_id, groups.size());
    if (fresh) groups.push_back({r.utt_id, {}, {}, {}});
    auto& g = groups[it->second];
    g.rows.push_back(r);
  }
  for (auto& g : groups) {
    std::stable_sort(g.rows.begin(), g.rows.end(), [](const NBestRow& a, const NBestRow& b) { return a.rank < b.rank; });
    for (const auto& r : g.rows) g.words.push_back(decode(r.units));
  }
  return groups;
}

inline void attach_lm_scores(std::vector<NBestGroup>& groups, const LanguageModel& lm, int jobs = 1) {
  parallel_for(groups.size(), jobs, [&](std::size_t i) {
    auto& g = groups[i];
    g.lm.clear();
    for (const auto& w : g.words) {
      Sentence s;
      for (const auto& t : w) s.push_back(t.surface);
      g.lm.push_back(floored_lm_score(lm, s));
    }
  });
}

inline double final_score(const NBestGroup& g, std::size_t i, double gamma, double eta) {
  return g.rows[i].score_total + gamma * g.lm[i] + eta * static_cast<double>(g.words[i].size());
}

// Order of hypotheses after rescoring; ties keep the input rank order.
inline std::vector<std::size_t> rescored_order(const NBestGroup& g, double gamma, double eta) {
  std::vector<std::size_t> order(g.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return final_score(g, a, gamma, eta) > final_score(g, b, gamma, eta); });
  return order;
}

// Rows re-ranked, with `score_lm` and `score_final` appended.
inline std::vector<NBestRow> rescore_group(const NBestGroup& g, double gamma, double eta) {
  std::vector<NBestRow> out;
  int rank = 1;
  for (std::size_t i : rescored_order(g, gamma, eta)) {
    NBestRow r = g.rows[i];
    r.rank = rank++;
    r.extra.push_back(g.lm[i]);
    r.extra.push_back(final_score(g, i, gamma, eta));
    out.push_back(std::move(r));
  }
  return out;
}

inline eval::Transcripts top_hypotheses(const std::vector<NBestGroup>& groups, double gamma, double eta) {
  eval::Transcripts t;
  for (const auto& g : groups) t[g.utt_id] = g.rows.empty() ? std::vector<Token>{} : g.words[rescored_order(g, gamma, eta)[0]];
  return t;
}

struct GridPoint {
  double gamma = 0, eta = 0;
  double ter = 0;  // ALL, fraction
};

struct GridResult {
  GridPoint best;
  std::vector<GridPoint> table;  // gamma-major grid order
};

// Picks the (gamma, eta) with the lowest ALL TER. Among tied points the one
// with the smallest |gamma| + |eta| wins (a saturated dev set then leaves the
// decoder ranking alone); remaining ties go to the earliest point in
// gamma-major order.
inline GridResult grid_search(const std::vector<NBestGroup>& groups, const eval::Transcripts& refs,
                              const std::vector<double>& gammas, const std::vector<double>& etas) {
  if (gammas.empty() || etas.empty()) throw UsageError("rescoring grid must have at least one gamma and one eta");
  GridResult r;
  bool have = false;
  for (double gm : gammas)
    for (double et : etas) {
      ScopedWarningCapture quiet;
      auto set = eval::align_sets(refs, top_hypotheses(groups, gm, et));
      auto rate = eval::ter(set.alignments).all.rate();
      if (!rate) throw DataError("development references contain no tokens");
      GridPoint p{gm, et, *rate};
      r.table.push_back(p);
      auto dist = [](const GridPoint& q) { return std::abs(q.gamma) + std::abs(q.eta); };
      if (!have || p.ter < r.best.ter || (p.ter == r.best.ter && dist(p) < dist(r.best))) {
        r.best = p;
        have = true;
      }
    }
  return r;
}

inline nlohmann::json to_json(const GridResult& g) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& p : g.table) table.push_back({{"gamma", p.gamma}, {"eta", p.eta}, {"ter_percent", p.ter * 100.0}});
  return {{"best", {{"gamma", g.best.gamma}, {"eta", g.best.eta}, {"ter_percent", g.best.ter * 100.0}}}, {"grid", table}};
}

}  // namespace csasr::lm
