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

// Mixed output-unit inventory: Mandarin characters pass through, English
// words are split into BPE subwords carrying a fused word-initial marker.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csasr/common.hpp"
#include "csasr/corpus.hpp"

namespace csasr {

inline const std::string kWordMarker = "\xE2\x96\x81";  // U+2581
inline const std::string kDefaultUnk = "<unk>";

inline std::vector<std::string> english_alphabet() {
  std::vector<std::string> out;
  for (char c = 'a'; c <= 'z'; ++c) out.emplace_back(1, c);
  out.emplace_back("'");
  return out;
}

struct SymbolInventory {
  std::vector<std::string> symbols;
  std::vector<long> counts;  // parallel to symbols
  double coverage = 1.0;
  std::string unk_symbol = kDefaultUnk;

  std::optional<std::size_t> index_of(std::string_view s) const {
    for (std::size_t i = 0; i < symbols.size(); ++i)
      if (symbols[i] == s) return i;
    return std::nullopt;
  }
  bool contains(std::string_view s) const { return index_of(s).has_value(); }
  std::size_t mandarin_count() const {
    std::size_t n = 0;
    for (const auto& s : symbols) {
      auto cps = utf8::decode(s);
      if (cps.size() == 1 && is_cjk(cps[0])) ++n;
    }
    return n;
  }
};

// Base units: unk, the bare marker, marker-fused and plain English characters,
// then Mandarin characters by descending frequency until `coverage` of the
// Mandarin character mass is reached.
inline SymbolInventory base_inventory(const Corpus& c, double coverage) {
  if (!(coverage > 0.0 && coverage <= 1.0)) throw UsageError("coverage must be in (0, 1]");
  if (c.utterances.empty()) throw DataError("empty corpus");
  std::map<char32_t, long> man;
  std::map<std::string, long> latin;
  for (const auto& u : c.utterances)
    for (const auto& t : u.tokens) {
      if (t.lang == Lang::Man) {
        ++man[utf8::decode(t.surface)[0]];
      } else if (t.lang == Lang::Eng) {
        auto ch = utf8::chars(t.surface);
        for (std::size_t i = 0; i < ch.size(); ++i) ++latin[i == 0 ? kWordMarker + ch[i] : ch[i]];
      }
    }

  SymbolInventory inv;
  inv.coverage = coverage;
  std::vector<std::pair<char32_t, long>> sorted(man.begin(), man.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  long total = 0;
  for (const auto& [cp, n] : sorted) total += n;
  long kept = 0, unk = 0;
  std::vector<std::pair<std::string, long>> man_syms;
  for (const auto& [cp, n] : sorted) {
    if (total > 0 && static_cast<double>(kept) / static_cast<double>(total) >= coverage) {
      unk += n;
      continue;
    }
    kept += n;
    man_syms.emplace_back(utf8::encode(cp), n);
  }

  auto add = [&](const std::string& s, long n) {
    inv.symbols.push_back(s);
    inv.counts.push_back(n);
  };
  add(inv.unk_symbol, unk);
  add(kWordMarker, 0);
  for (const auto& a : english_alphabet()) add(kWordMarker + a, latin.count(kWordMarker + a) ? latin[kWordMarker + a] : 0);
  for (const auto& a : english_alphabet()) add(a, latin.count(a) ? latin[a] : 0);
  for (const auto& [s, n] : man_syms) add(s, n);
  return inv;
}

inline std::string inventory_to_text(const SymbolInventory& inv) {
  std::string out;
  for (std::size_t i = 0; i < inv.symbols.size(); ++i)
    out += inv.symbols[i] + ' ' + std::to_string(inv.counts.empty() ? 0 : inv.counts[i]) + '\n';
  return out;
}

struct BpeModel {
  SymbolInventory base;
  std::vector<std::pair<std::string, std::string>> merges;
  std::size_t target_vocab = 0;
  bool word_marker = true;

  // Output units: base symbols followed by merge products not already present.
  std::vector<std::string> units() const {
    std::vector<std::string> out = base.symbols;
    std::unordered_map<std::string, bool> seen;
    for (const auto& s : out) seen[s] = true;
    for (const auto& [l, r] : merges) {
      std::string m = l + r;
      if (!seen[m]) {
        seen[m] = true;
        out.push_back(m);
      }
    }
    return out;
  }
};

struct BpeTrainOptions {
  bool word_marker = true;
  long min_pair_count = 2;
};

using SymbolSeq = std::vector<std::string>;

inline SymbolSeq initial_segmentation(std::string_view word, bool marker) {
  SymbolSeq s = utf8::chars(word);
  if (marker && !s.empty()) s[0] = kWordMarker + s[0];
  return s;
}

inline void apply_merge(SymbolSeq& seq, const std::string& left, const std::string& right) {
  SymbolSeq out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(seq[i]);
    }
  }
  seq = std::move(out);
}

// Counts adjacent symbol pairs, weighted by word frequency.
inline std::map<std::pair<std::string, std::string>, long> count_pairs(
    const std::vector<std::pair<SymbolSeq, long>>& words) {
  std::map<std::pair<std::string, std::string>, long> counts;
  for (const auto& [seq, n] : words)
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) counts[{seq[i], seq[i + 1]}] += n;
  return counts;
}

// Greedy BPE: merge the most frequent adjacent pair (lexicographically
// smallest on ties) until the vocabulary budget is used or no pair occurs at
// least `min_pair_count` times.
inline BpeModel bpe_train(const std::map<std::string, long>& word_counts, std::size_t target_vocab,
                          const SymbolInventory& base, const BpeTrainOptions& opts = {}) {
  if (target_vocab < base.symbols.size())
    throw UsageError("target_vocab " + std::to_string(target_vocab) + " smaller than base inventory " +
                     std::to_string(base.symbols.size()));
  BpeModel model;
  model.base = base;
  model.target_vocab = target_vocab;
  model.word_marker = opts.word_marker;

  std::vector<std::pair<SymbolSeq, long>> words;
  for (const auto& [w, n] : word_counts)
    if (!w.empty() && n > 0) words.emplace_back(initial_segmentation(w, opts.word_marker), n);

  while (base.symbols.size() + model.merges.size() < target_vocab) {
    auto counts = count_pairs(words);
    const std::pair<std::string, std::string>* best = nullptr;
    long best_n = 0;
    for (const auto& [pair, n] : counts)
      if (n > best_n) {
        best = &pair;
        best_n = n;
      }
    if (!best || best_n < opts.min_pair_count) break;
    auto merge = *best;
    for (auto& [seq, n] : words) apply_merge(seq, merge.first, merge.second);
    model.merges.push_back(std::move(merge));
  }
  return model;
}

inline std::map<std::string, long> english_word_counts(const Corpus& c) {
  std::map<std::string, long> out;
  for (const auto& u : c.utterances)
    for (const auto& t : u.tokens)
      if (t.lang == Lang::Eng) ++out[t.surface];
  return out;
}

// Stateful encoder with merge-rank lookup and a per-word cache.
class BpeEncoder {
 public:
  explicit BpeEncoder(const BpeModel& model) : model_(&model) {
    for (const auto& u : model.units()) known_.emplace(u, true);
    for (std::size_t i = 0; i < model.merges.size(); ++i) {
      auto key = model.merges[i].first + '\x1f' + model.merges[i].second;
      ranks_.emplace(key, i);  // first occurrence wins
    }
  }

  SymbolSeq encode_word(const std::string& word) {
    auto it = cache_.find(word);
    if (it != cache_.end()) return it->second;
    SymbolSeq seq = initial_segmentation(word, model_->word_marker);
    while (seq.size() > 1) {
      std::size_t best_rank = SIZE_MAX;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        auto r = ranks_.find(seq[i] + '\x1f' + seq[i + 1]);
        if (r != ranks_.end()) best_rank = std::min(best_rank, r->second);
      }
      if (best_rank == SIZE_MAX) break;
      const auto& m = model_->merges[best_rank];
      apply_merge(seq, m.first, m.second);
    }
    for (auto& s : seq)
      if (!known_.count(s)) s = model_->base.unk_symbol;
    cache_.emplace(word, seq);
    return seq;
  }

  std::vector<std::string> encode(const std::vector<Token>& tokens) {
    std::vector<std::string> out;
    for (const auto& t : tokens) {
      if (t.lang == Lang::Man) {
        out.push_back(known_.count(t.surface) ? t.surface : model_->base.unk_symbol);
      } else if (t.lang == Lang::Eng) {
        auto seq = encode_word(t.surface);
        out.insert(out.end(), seq.begin(), seq.end());
      } else {
        out.push_back(model_->base.unk_symbol);
      }
    }
    return out;
  }

 private:
  const BpeModel* model_;
  std::unordered_map<std::string, std::size_t> ranks_;
  std::unordered_map<std::string, SymbolSeq> cache_;
  std::unordered_map<std::string, bool> known_;
};

inline std::vector<std::string> encode(const BpeModel& m, const std::vector<Token>& tokens) {
  BpeEncoder enc(m);
  return enc.encode(tokens);
}

inline bool starts_with_marker(std::string_view u) {
  return u.size() >= kWordMarker.size() && u.substr(0, kWordMarker.size()) == kWordMarker;
}

inline bool is_cjk_unit(std::string_view u) {
  auto cps = utf8::decode(u);
  return cps.size() == 1 && is_cjk(cps[0]);
}

inline bool is_latin_unit(std::string_view u) {
  if (u.empty()) return false;
  for (char32_t c : utf8::decode(u))
    if (!is_latin(c)) return false;
  return true;
}

// Inverse of encode: a marker opens an English word, plain Latin units extend
// it, CJK units are standalone Mandarin tokens.
inline std::vector<Token> decode(const std::vector<std::string>& units, const std::string& unk = kDefaultUnk) {
  std::vector<Token> out;
  bool open = false;
  for (const auto& u : units) {
    if (starts_with_marker(u)) {
      out.push_back({u.substr(kWordMarker.size()), Lang::Eng});
      open = true;
    } else if (is_latin_unit(u)) {
      if (!open) {
        warn("orphan continuation unit '" + u + "' starts a new word");
        out.push_back({u, Lang::Eng});
        open = true;
      } else {
        out.back().surface += u;
      }
    } else if (is_cjk_unit(u)) {
      out.push_back({u, Lang::Man});
      open = false;
    } else {
      out.push_back({u == unk ? unk : u, Lang::Other});
      open = false;
    }
  }
  std::erase_if(out, [](const Token& t) { return t.surface.empty(); });
  return out;
}

enum class LidGranularity { PerToken, Collapsed };

enum LidTag : int { kLidMan = 0, kLidEng = 1, kLidEos = 2 };

struct LidSeq {
  std::vector<int> tags;  // kLidMan / kLidEng; the end marker is implicit
  bool flagged = false;   // sequence-initial unk defaulted to Mandarin
};

inline LidSeq derive_lid_targets(const std::vector<std::string>& units, LidGranularity mode) {
  LidSeq seq;
  for (const auto& u : units) {
    int tag;
    if (is_cjk_unit(u)) {
      tag = kLidMan;
    } else if (starts_with_marker(u) || is_latin_unit(u)) {
      tag = kLidEng;
    } else if (!seq.tags.empty()) {
      tag = seq.tags.back();
    } else {
      tag = kLidMan;
      seq.flagged = true;
    }
    seq.tags.push_back(tag);
  }
  if (mode == LidGranularity::Collapsed) {
    auto last = std::unique(seq.tags.begin(), seq.tags.end());
    seq.tags.erase(last, seq.tags.end());
  }
  return seq;
}

inline std::string bpe_to_text(const BpeModel& m) {
  std::string out = "bpe v1 " + std::to_string(m.base.symbols.size()) + ' ' + std::to_string(m.merges.size());
  if (!m.word_marker) out += " nomarker";
  out += '\n';
  for (const auto& s : m.base.symbols) out += s + '\n';
  for (const auto& [l, r] : m.merges) out += l + ' ' + r + '\n';
  return out;
}

inline BpeModel bpe_from_text(const std::string& text) {
  auto lines = split_char(text, '\n');
  if (lines.empty()) throw DataError("empty BPE model");
  auto head = split_ws(lines[0]);
  if (head.size() < 4 || head[0] != "bpe" || head[1] != "v1") throw DataError("bad BPE model header");
  std::size_t nbase = std::stoul(head[2]), nmerge = std::stoul(head[3]);
  if (lines.size() < 1 + nbase + nmerge) throw DataError("truncated BPE model");
  BpeModel m;
  m.word_marker = !(head.size() > 4 && head[4] == "nomarker");
  for (std::size_t i = 0; i < nbase; ++i) {
    m.base.symbols.push_back(lines[1 + i]);
    m.base.counts.push_back(0);
  }
  m.base.unk_symbol = m.base.symbols.empty() ? kDefaultUnk : m.base.symbols.front();
  for (std::size_t i = 0; i < nmerge; ++i) {
    auto f = split_ws(lines[1 + nbase + i]);
    if (f.size() != 2) throw DataError("bad merge line " + std::to_string(i));
    m.merges.emplace_back(f[0], f[1]);
  }
  m.target_vocab = nbase + nmerge;
  return m;
}

// Unit string <-> id map over the model's output units.
class UnitVocab {
 public:
  UnitVocab() = default;
  explicit UnitVocab(std::vector<std::string> units, std::string unk = kDefaultUnk)
      : units_(std::move(units)), unk_(std::move(unk)) {
    for (std::size_t i = 0; i < units_.size(); ++i) ids_.emplace(units_[i], static_cast<int>(i));
  }
  explicit UnitVocab(const BpeModel& m) : UnitVocab(m.units(), m.base.unk_symbol) {}

  std::size_t size() const { return units_.size(); }
  const std::vector<std::string>& units() const { return units_; }
  const std::string& unit(int id) const { return units_.at(static_cast<std::size_t>(id)); }
  const std::string& unk() const { return unk_; }
  int id(const std::string& u) const {
    auto it = ids_.find(u);
    if (it != ids_.end()) return it->second;
    auto k = ids_.find(unk_);
    return k == ids_.end() ? 0 : k->second;
  }
  std::vector<int> ids(const std::vector<std::string>& us) const {
    std::vector<int> out;
    for (const auto& u : us) out.push_back(id(u));
    return out;
  }
  std::vector<std::string> strings(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) out.push_back(unit(i));
    return out;
  }

 private:
  std::vector<std::string> units_;
  std::string unk_ = kDefaultUnk;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace csasr
