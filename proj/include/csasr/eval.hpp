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

// Mixed-language scoring: Levenshtein alignment, token error rate split by
// language, the substitution taxonomy and top confusions.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csasr/common.hpp"
#include "csasr/corpus.hpp"

namespace csasr::eval {

enum class EditOp { Match, Sub, Del, Ins };

inline const char* op_name(EditOp op) {
  switch (op) {
    case EditOp::Match: return "Match";
    case EditOp::Sub: return "Sub";
    case EditOp::Del: return "Del";
    case EditOp::Ins: return "Ins";
  }
  return "?";
}

// `ref` is empty for Ins, `hyp` is empty for Del.
struct Edit {
  EditOp op;
  Token ref, hyp;
};

struct Alignment {
  std::vector<Edit> edits;

  long count(EditOp op) const {
    return static_cast<long>(std::count_if(edits.begin(), edits.end(), [op](const Edit& e) { return e.op == op; }));
  }
  long errors() const { return static_cast<long>(edits.size()) - count(EditOp::Match); }
};

// Minimal-cost alignment with unit costs. Backtrace from the end prefers
// Match, then Sub, Del, Ins among equal-cost moves.
inline Alignment align(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      int diag = d[i - 1][j - 1] + (ref[i - 1].surface == hyp[j - 1].surface ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  Alignment a;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      bool same = ref[i - 1].surface == hyp[j - 1].surface;
      if (same && d[i][j] == d[i - 1][j - 1]) {
        a.edits.push_back({EditOp::Match, ref[i - 1], hyp[j - 1]});
        --i, --j;
        continue;
      }
      if (!same && d[i][j] == d[i - 1][j - 1] + 1) {
        a.edits.push_back({EditOp::Sub, ref[i - 1], hyp[j - 1]});
        --i, --j;
        continue;
      }
    }
    if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      a.edits.push_back({EditOp::Del, ref[i - 1], {}});
      --i;
    } else {
      a.edits.push_back({EditOp::Ins, {}, hyp[j - 1]});
      --j;
    }
  }
  std::reverse(a.edits.begin(), a.edits.end());
  return a;
}

// ---------------------------------------------------------------------------

struct ErrorCounts {
  long n_ref = 0, sub = 0, del = 0, ins = 0;

  long errors() const { return sub + del + ins; }
  // Undefined without reference tokens.
  std::optional<double> rate() const {
    if (n_ref == 0) return std::nullopt;
    return static_cast<double>(errors()) / static_cast<double>(n_ref);
  }
  ErrorCounts& operator+=(const ErrorCounts& o) {
    n_ref += o.n_ref;
    sub += o.sub;
    del += o.del;
    ins += o.ins;
    return *this;
  }
};

struct TerBreakdown {
  ErrorCounts all, man, eng;

  TerBreakdown& operator+=(const TerBreakdown& o) {
    all += o.all;
    man += o.man;
    eng += o.eng;
    return *this;
  }
};

// Per-language accounting: substitutions and deletions follow the reference
// token's language, insertions follow the inserted hypothesis token.
inline TerBreakdown ter(const Alignment& a) {
  TerBreakdown t;
  auto bucket = [&](Lang l) -> ErrorCounts* {
    if (l == Lang::Man) return &t.man;
    if (l == Lang::Eng) return &t.eng;
    return nullptr;
  };
  for (const auto& e : a.edits) {
    if (e.op != EditOp::Ins) {
      ++t.all.n_ref;
      if (auto* b = bucket(e.ref.lang)) ++b->n_ref;
    }
    switch (e.op) {
      case EditOp::Match: break;
      case EditOp::Sub:
        ++t.all.sub;
        if (auto* b = bucket(e.ref.lang)) ++b->sub;
        break;
      case EditOp::Del:
        ++t.all.del;
        if (auto* b = bucket(e.ref.lang)) ++b->del;
        break;
      case EditOp::Ins:
        ++t.all.ins;
        if (auto* b = bucket(e.hyp.lang)) ++b->ins;
        break;
    }
  }
  return t;
}

inline TerBreakdown ter(const std::vector<Alignment>& as) {
  TerBreakdown t;
  for (const auto& a : as) t += ter(a);
  return t;
}

// ---------------------------------------------------------------------------

struct SubTaxonomy {
  long e_e = 0, e_m = 0, m_e = 0, m_m = 0;  // ref language -> hyp language
  long other = 0;                           // substitutions touching an Other token
  long ref_man = 0, ref_eng = 0;            // normalizers

  long total_me() const { return e_e + e_m + m_e + m_m; }
  // Count over reference tokens of the source language.
  static std::optional<double> rate(long count, long denom) {
    if (denom == 0) return std::nullopt;
    return static_cast<double>(count) / static_cast<double>(denom);
  }
  std::optional<double> rate_e_e() const { return rate(e_e, ref_eng); }
  std::optional<double> rate_e_m() const { return rate(e_m, ref_eng); }
  std::optional<double> rate_m_e() const { return rate(m_e, ref_man); }
  std::optional<double> rate_m_m() const { return rate(m_m, ref_man); }
};

inline SubTaxonomy sub_taxonomy(const std::vector<Alignment>& as) {
  SubTaxonomy s;
  for (const auto& a : as)
    for (const auto& e : a.edits) {
      if (e.op != EditOp::Ins) {
        if (e.ref.lang == Lang::Man) ++s.ref_man;
        if (e.ref.lang == Lang::Eng) ++s.ref_eng;
      }
      if (e.op != EditOp::Sub) continue;
      const Lang r = e.ref.lang, h = e.hyp.lang;
      if (r == Lang::Other || h == Lang::Other) ++s.other;
      else if (r == Lang::Eng) ++(h == Lang::Eng ? s.e_e : s.e_m);
      else ++(h == Lang::Eng ? s.m_e : s.m_m);
    }
  return s;
}

struct Confusion {
  std::string ref, hyp;
  long count = 0;
};

enum class ConfusionFilter { CrossLingual, All };

// Substitution pairs by descending count; ties by ref then hyp surface.
inline std::vector<Confusion> top_confusions(const std::vector<Alignment>& as, std::size_t k, ConfusionFilter filter) {
  std::map<std::pair<std::string, std::string>, long> counts;
  for (const auto& a : as)
    for (const auto& e : a.edits) {
      if (e.op != EditOp::Sub) continue;
      bool cross = (e.ref.lang == Lang::Man && e.hyp.lang == Lang::Eng) || (e.ref.lang == Lang::Eng && e.hyp.lang == Lang::Man);
      if (filter == ConfusionFilter::CrossLingual && !cross) continue;
      ++counts[{e.ref.surface, e.hyp.surface}];
    }
  std::vector<Confusion> out;
  for (const auto& [p, c] : counts) out.push_back({p.first, p.second, c});
  std::stable_sort(out.begin(), out.end(), [](const Confusion& a, const Confusion& b) { return a.count > b.count; });
  if (out.size() > k) out.resize(k);
  return out;
}

// ---------------------------------------------------------------------------
// Set-level scoring from Kaldi-style `text` files.

using Transcripts = std::map<std::string, std::vector<Token>>;

inline Transcripts parse_text(const std::vector<std::string>& lines, const std::string& what) {
  Transcripts t;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& line = lines[i];
    auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos) continue;
    auto sp = line.find_first_of(" \t", start);
    std::string id = line.substr(start, sp == std::string::npos ? std::string::npos : sp - start);
    std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (!rest.empty() && rest.back() == '\r') rest.pop_back();
    if (!t.emplace(id, tokenize_transcript(rest)).second)
      throw DataError(what + " line " + std::to_string(i + 1) + ": duplicate utterance id " + id);
  }
  return t;
}

struct ScoreReport {
  std::size_t utterances = 0;
  std::vector<std::string> missing_hyps;
  TerBreakdown ter;
  SubTaxonomy taxonomy;
  std::vector<Confusion> cross_confusions;
  std::vector<Confusion> all_confusions;
};

struct ScoredSet {
  std::vector<std::string> ids;
  std::vector<Alignment> alignments;
};

// Aligns every reference utterance; a missing hypothesis scores as empty
// (with a warning) and a hypothesis without a reference is an error.
inline ScoredSet align_sets(const Transcripts& refs, const Transcripts& hyps, int jobs = 1,
                            std::vector<std::string>* missing = nullptr) {
  for (const auto& [id, toks] : hyps)
    if (!refs.count(id)) throw DataError("hypothesis for unknown utterance " + id);
  ScoredSet s;
  for (const auto& [id, toks] : refs) s.ids.push_back(id);
  s.alignments.resize(s.ids.size());
  static const std::vector<Token> kEmpty;
  std::vector<char> absent(s.ids.size(), 0);
  parallel_for(s.ids.size(), jobs, [&](std::size_t i) {
    auto h = hyps.find(s.ids[i]);
    absent[i] = h == hyps.end();
    s.alignments[i] = align(refs.at(s.ids[i]), absent[i] ? kEmpty : h->second);
  });
  for (std::size_t i = 0; i < s.ids.size(); ++i)
    if (absent[i]) {
      warn("no hypothesis for " + s.ids[i] + "; scored as empty");
      if (missing) missing->push_back(s.ids[i]);
    }
  return s;
}

inline ScoreReport score(const Transcripts& refs, const Transcripts& hyps, std::size_t k = 5, int jobs = 1) {
  ScoreReport r;
  auto set = align_sets(refs, hyps, jobs, &r.missing_hyps);
  r.utterances = set.ids.size();
  r.ter = ter(set.alignments);
  r.taxonomy = sub_taxonomy(set.alignments);
  r.cross_confusions = top_confusions(set.alignments, k, ConfusionFilter::CrossLingual);
  r.all_confusions = top_confusions(set.alignments, k, ConfusionFilter::All);
  return r;
}

inline nlohmann::json rate_json(std::optional<double> r) { return r ? nlohmann::json(*r * 100.0) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const ErrorCounts& c) {
  return {{"ter_percent", rate_json(c.rate())}, {"n_ref", c.n_ref}, {"sub", c.sub}, {"del", c.del}, {"ins", c.ins}};
}

inline nlohmann::json to_json(const ScoreReport& r) {
  auto conf = [](const std::vector<Confusion>& cs) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& c : cs) a.push_back({{"ref", c.ref}, {"hyp", c.hyp}, {"count", c.count}});
    return a;
  };
  const auto& t = r.taxonomy;
  return {
      {"utterances", r.utterances},
      {"missing_hypotheses", r.missing_hyps},
      {"ter", {{"ALL", to_json(r.ter.all)}, {"Man", to_json(r.ter.man)}, {"En", to_json(r.ter.eng)}}},
      {"substitutions",
       {{"counts", {{"E->E", t.e_e}, {"E->M", t.e_m}, {"M->E", t.m_e}, {"M->M", t.m_m}}},
        {"rate_percent_of_source_refs",
         {{"E->E", rate_json(t.rate_e_e())}, {"E->M", rate_json(t.rate_e_m())}, {"M->E", rate_json(t.rate_m_e())},
          {"M->M", rate_json(t.rate_m_m())}}},
        {"other", t.other},
        {"ref_man", t.ref_man},
        {"ref_eng", t.ref_eng}}},
      {"top_cross_lingual", conf(r.cross_confusions)},
      {"top_all", conf(r.all_confusions)},
  };
}

inline std::string pct(std::optional<double> r) { return r ? fmt_fixed(*r * 100.0, 1) : "N/A"; }

inline std::string pad(const std::string& s, std::size_t w) {
  std::size_t cps = utf8::decode(s).size();
  return cps >= w ? s + " " : s + std::string(w - cps, ' ');
}

inline std::string to_text(const ScoreReport& r) {
  std::string out;
  out += "utterances: " + std::to_string(r.utterances) + "\n";
  if (!r.missing_hyps.empty()) out += "missing hypotheses: " + std::to_string(r.missing_hyps.size()) + "\n";
  out += "\nTER (%)\n";
  out += pad("", 6) + pad("ALL", 10) + pad("Man", 10) + pad("En", 10) + "\n";
  out += pad("TER", 6) + pad(pct(r.ter.all.rate()), 10) + pad(pct(r.ter.man.rate()), 10) + pad(pct(r.ter.eng.rate()), 10) + "\n";
  auto row = [&](const std::string& name, long ErrorCounts::*f) {
    out += pad(name, 6) + pad(std::to_string(r.ter.all.*f), 10) + pad(std::to_string(r.ter.man.*f), 10) +
           pad(std::to_string(r.ter.eng.*f), 10) + "\n";
  };
  row("N", &ErrorCounts::n_ref);
  row("Sub", &ErrorCounts::sub);
  row("Del", &ErrorCounts::del);
  row("Ins", &ErrorCounts::ins);

  const auto& t = r.taxonomy;
  out += "\nSubstitutions (ref -> hyp)\n";
  out += pad("", 10) + pad("E->E", 10) + pad("E->M", 10) + pad("M->E", 10) + pad("M->M", 10) + "\n";
  out += pad("count", 10) + pad(std::to_string(t.e_e), 10) + pad(std::to_string(t.e_m), 10) + pad(std::to_string(t.m_e), 10) +
         pad(std::to_string(t.m_m), 10) + "\n";
  out += pad("rate (%)", 10) + pad(pct(t.rate_e_e()), 10) + pad(pct(t.rate_e_m()), 10) + pad(pct(t.rate_m_e()), 10) +
         pad(pct(t.rate_m_m()), 10) + "\n";
  out += "other: " + std::to_string(t.other) + "\n";

  out += "\nTop cross-lingual substitutions\n";
  out += pad("ref", 16) + pad("hyp", 16) + "count\n";
  for (const auto& c : r.cross_confusions) out += pad(c.ref, 16) + pad(c.hyp, 16) + std::to_string(c.count) + "\n";
  return out;
}

}  // namespace csasr::eval
