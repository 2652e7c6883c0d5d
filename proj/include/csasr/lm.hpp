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

// Token language models over the mixed vocabulary: interpolated Kneser-Ney
// n-grams (with ARPA I/O), a shortlist LSTM LM, PPMI-SVD embeddings, and the
// out-of-shortlist vocabulary expansion that moves the unknown-token mass onto
// expanded words.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "csasr/common.hpp"
#include "csasr/nnet/model.hpp"
#include "csasr/nnet/params.hpp"
#include "csasr/nnet/train.hpp"

namespace csasr::lm {

inline const std::string kBos = "<s>";
inline const std::string kEos = "</s>";
inline const std::string kUnk = "<unk>";

using Sentence = std::vector<std::string>;
using Gram = std::vector<std::string>;

// Next-token distribution model. Histories exclude the implicit sentence
// start; the support always contains kEos.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual const std::vector<std::string>& support() const = 0;
  // Probabilities aligned with support().
  virtual std::vector<double> next_probs(const Sentence& history) const = 0;
  virtual double prob(const Sentence& history, const std::string& w) const {
    const auto& s = support();
    auto probs = next_probs(history);
    auto it = std::find(s.begin(), s.end(), w);
    if (it == s.end()) it = std::find(s.begin(), s.end(), kUnk);
    return it == s.end() ? 0.0 : probs[static_cast<std::size_t>(it - s.begin())];
  }
  // Sum of per-step log-probabilities including the end of sentence.
  virtual double score_sequence(const Sentence& tokens) const {
    double total = 0.0;
    Sentence h;
    for (const auto& w : tokens) {
      total += std::log(prob(h, w));
      h.push_back(w);
    }
    return total + std::log(prob(h, kEos));
  }
};

// ---------------------------------------------------------------------------
// Interpolated Kneser-Ney with a fixed discount at every order. The top order
// and n-grams starting with <s> use raw counts; other lower orders use
// continuation counts (number of distinct left extensions). The unigram level
// is interpolated with a uniform distribution over vocab + <unk>.

class NgramLm : public LanguageModel {
 public:
  static NgramLm train(const std::vector<Sentence>& sentences, int order, double discount = 0.75) {
    if (order < 1) throw UsageError("n-gram order must be >= 1");
    if (sentences.empty()) throw DataError("empty training stream for n-gram LM");
    NgramLm lm;
    lm.order_ = order;
    lm.D_ = discount;
    lm.levels_.resize(static_cast<std::size_t>(order));
    std::vector<std::map<Gram, double>> raw(static_cast<std::size_t>(order));
    for (const auto& s : sentences) {
      Gram padded{kBos};
      for (const auto& w : s) {
        if (w == kBos || w == kEos) throw DataError("reserved token " + w + " inside a training sentence");
        padded.push_back(w);
      }
      padded.push_back(kEos);
      for (std::size_t i = 1; i < padded.size(); ++i) lm.vocab_.insert(padded[i]);
      for (std::size_t end = 1; end < padded.size(); ++end)
        for (std::size_t n = 1; n <= static_cast<std::size_t>(order) && n <= end + 1; ++n)
          raw[n - 1][Gram(padded.begin() + static_cast<std::ptrdiff_t>(end + 1 - n), padded.begin() + static_cast<std::ptrdiff_t>(end + 1))] += 1;
    }
    for (std::size_t n = 1; n <= static_cast<std::size_t>(order); ++n) {
      auto& level = lm.levels_[n - 1];
      if (n == static_cast<std::size_t>(order)) {
        level.count = raw[n - 1];
      } else {
        for (const auto& [g, c] : raw[n - 1])
          if (g[0] == kBos) level.count[g] = c;
        for (const auto& [g, c] : raw[n]) level.count[Gram(g.begin() + 1, g.end())] += 1;
      }
      for (const auto& [g, c] : level.count) {
        auto& st = level.hist[Gram(g.begin(), g.end() - 1)];
        st.total += c;
        st.types += 1;
      }
    }
    lm.support_.assign(lm.vocab_.begin(), lm.vocab_.end());
    lm.support_.push_back(kUnk);
    return lm;
  }

  int order() const { return order_; }
  double discount() const { return D_; }

  // Level count of an n-gram (raw or continuation, whichever its level uses).
  double count(const Gram& g) const {
    if (g.empty() || static_cast<int>(g.size()) > order_) return 0.0;
    const auto& c = levels_[g.size() - 1].count;
    auto it = c.find(g);
    return it == c.end() ? 0.0 : it->second;
  }

  // Copy with one n-gram's level count set to zero; other levels unchanged.
  NgramLm without(const Gram& g) const {
    NgramLm out = *this;
    double c = count(g);
    if (c <= 0) return out;
    auto& level = out.levels_[g.size() - 1];
    level.count.erase(g);
    Gram h(g.begin(), g.end() - 1);
    auto& st = level.hist.at(h);
    st.total -= c;
    st.types -= 1;
    if (st.types <= 0) level.hist.erase(h);
    return out;
  }
  const std::set<std::string>& vocab() const { return vocab_; }
  const std::vector<std::string>& support() const override { return support_; }

  double prob(const Sentence& history, const std::string& w) const override {
    Gram h{kBos};
    h.insert(h.end(), history.begin(), history.end());
    if (static_cast<int>(h.size()) > order_ - 1) h.erase(h.begin(), h.end() - (order_ - 1));
    for (auto& t : h)
      if (t != kBos && !vocab_.count(t)) t = kUnk;
    return interp(h, vocab_.count(w) ? w : kUnk);
  }

  std::vector<double> next_probs(const Sentence& history) const override {
    std::vector<double> out;
    out.reserve(support_.size());
    for (const auto& w : support_) out.push_back(prob(history, w));
    return out;
  }

  // ARPA text; probabilities are the interpolated ones and back-off weights
  // the interpolation mass gamma(h), so back-off queries reproduce prob().
  std::string to_arpa() const {
    std::vector<std::vector<std::pair<Gram, std::pair<double, std::optional<double>>>>> entries(static_cast<std::size_t>(order_));
    auto bow_of = [&](const Gram& g) -> std::optional<double> {
      if (static_cast<int>(g.size()) >= order_) return std::nullopt;
      const auto& hist = levels_[g.size()].hist;
      auto it = hist.find(g);
      if (it == hist.end()) return std::nullopt;
      return D_ * it->second.types / it->second.total;
    };
    auto prob_of = [&](const Gram& g) { return interp(Gram(g.begin(), g.end() - 1), g.back()); };
    std::vector<Gram> unigrams{{kBos}, {kUnk}};
    for (const auto& w : vocab_) unigrams.push_back({w});
    std::sort(unigrams.begin(), unigrams.end());
    for (const auto& g : unigrams) entries[0].push_back({g, {g[0] == kBos ? 0.0 : prob_of(g), bow_of(g)}});
    for (int n = 2; n <= order_; ++n)
      for (const auto& [g, c] : levels_[static_cast<std::size_t>(n - 1)].count)
        if (c > 0) entries[static_cast<std::size_t>(n - 1)].push_back({g, {prob_of(g), bow_of(g)}});

    auto log10s = [](double p) { return p > 0 ? fmt_double(std::log10(p), 12) : std::string("-99"); };
    std::string out = "\\data\\\n";
    for (int n = 1; n <= order_; ++n)
      out += "ngram " + std::to_string(n) + "=" + std::to_string(entries[static_cast<std::size_t>(n - 1)].size()) + "\n";
    for (int n = 1; n <= order_; ++n) {
      out += "\n\\" + std::to_string(n) + "-grams:\n";
      for (const auto& [g, pb] : entries[static_cast<std::size_t>(n - 1)]) {
        out += log10s(pb.first) + '\t' + join(g, " ");
        if (pb.second) out += '\t' + log10s(*pb.second);
        out += '\n';
      }
    }
    return out + "\n\\end\\\n";
  }

 private:
  struct HistStats {
    double total = 0;
    double types = 0;
  };
  struct Level {
    std::map<Gram, double> count;
    std::map<Gram, HistStats> hist;
  };

  double interp(const Gram& h, const std::string& w) const {
    if (h.empty()) {
      const auto& level = levels_[0];
      const double uniform = 1.0 / static_cast<double>(vocab_.size() + 1);
      auto st = level.hist.find(Gram{});
      if (st == level.hist.end() || st->second.total <= 0) return uniform;
      auto it = level.count.find(Gram{w});
      double c = it == level.count.end() ? 0.0 : it->second;
      return (std::max(c - D_, 0.0) + D_ * st->second.types * uniform) / st->second.total;
    }
    Gram lower(h.begin() + 1, h.end());
    const auto& level = levels_[h.size()];
    auto st = level.hist.find(h);
    if (st == level.hist.end()) return interp(lower, w);
    Gram g = h;
    g.push_back(w);
    auto it = level.count.find(g);
    double c = it == level.count.end() ? 0.0 : it->second;
    return (std::max(c - D_, 0.0) + D_ * st->second.types * interp(lower, w)) / st->second.total;
  }

  int order_ = 1;
  double D_ = 0.75;
  std::set<std::string> vocab_;  // includes </s>, excludes <s> and <unk>
  std::vector<std::string> support_;
  std::vector<Level> levels_;
};

// Back-off model read from ARPA text.
class ArpaLm : public LanguageModel {
 public:
  static ArpaLm parse(const std::string& text) {
    ArpaLm lm;
    int section = 0;
    std::size_t lineno = 0;
    for (const auto& raw : split_char(text, '\n')) {
      ++lineno;
      std::string line = raw;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line == "\\data\\" || line.rfind("ngram ", 0) == 0) continue;
      if (line == "\\end\\") break;
      if (line.front() == '\\') {
        auto dash = line.find("-grams:");
        if (dash == std::string::npos) throw DataError("ARPA line " + std::to_string(lineno) + ": bad section header");
        try {
          section = std::stoi(line.substr(1, dash - 1));
        } catch (const std::logic_error&) {
          throw DataError("ARPA line " + std::to_string(lineno) + ": bad section header");
        }
        lm.order_ = std::max(lm.order_, section);
        continue;
      }
      if (section == 0) throw DataError("ARPA line " + std::to_string(lineno) + ": entry outside a section");
      auto f = split_char(line, '\t');
      if (f.size() == 1) f = split_ws(line);
      Gram g;
      double lp, bow = 0.0;
      if (f.size() == 2 || f.size() == 3) {
        g = split_ws(f[1]);
        try {
          lp = std::stod(f[0]);
          if (f.size() == 3) bow = std::stod(f[2]);
        } catch (const std::logic_error&) {
          throw DataError("ARPA line " + std::to_string(lineno) + ": bad number");
        }
      } else {
        throw DataError("ARPA line " + std::to_string(lineno) + ": expected prob, n-gram and optional back-off");
      }
      if (static_cast<int>(g.size()) != section) throw DataError("ARPA line " + std::to_string(lineno) + ": n-gram length mismatch");
      lm.table_[g] = {lp, bow};
      if (section == 1 && g[0] != kBos && g[0] != kUnk) lm.support_.push_back(g[0]);
    }
    if (lm.table_.empty()) throw DataError("ARPA model has no entries");
    std::sort(lm.support_.begin(), lm.support_.end());
    if (!std::binary_search(lm.support_.begin(), lm.support_.end(), kEos)) throw DataError("ARPA model lacks </s>");
    if (!lm.table_.count(Gram{kUnk})) throw DataError("ARPA model lacks <unk>");
    lm.support_.push_back(kUnk);
    for (const auto& w : lm.support_) lm.known_.insert(w);
    return lm;
  }

  int order() const { return order_; }
  const std::vector<std::string>& support() const override { return support_; }

  double prob(const Sentence& history, const std::string& w) const override {
    Gram h{kBos};
    h.insert(h.end(), history.begin(), history.end());
    if (static_cast<int>(h.size()) > order_ - 1) h.erase(h.begin(), h.end() - (order_ - 1));
    for (auto& t : h)
      if (t != kBos && !known_.count(t)) t = kUnk;
    return std::pow(10.0, log10_backoff(h, known_.count(w) ? w : kUnk));
  }

  std::vector<double> next_probs(const Sentence& history) const override {
    std::vector<double> out;
    for (const auto& w : support_) out.push_back(prob(history, w));
    return out;
  }

 private:
  double log10_backoff(const Gram& h, const std::string& w) const {
    Gram g = h;
    g.push_back(w);
    auto it = table_.find(g);
    if (it != table_.end()) return it->second.first;
    if (h.empty()) return -99.0;
    auto hb = table_.find(h);
    double bow = hb == table_.end() ? 0.0 : hb->second.second;
    return bow + log10_backoff(Gram(h.begin() + 1, h.end()), w);
  }

  int order_ = 1;
  std::map<Gram, std::pair<double, double>> table_;
  std::vector<std::string> support_;
  std::set<std::string> known_;
};

// ---------------------------------------------------------------------------
// Shortlist LSTM LM. Output classes: shortlist tokens, <unk>, </s>. Inputs
// add a sentence-start symbol.

struct NlmHyper {
  int emb = 32;
  int hidden = 64;
  int epochs = 8;
  int batch_size = 16;
  nn::AdamConfig adam;
  std::uint64_t seed = 1;
};

struct NlmEpochLog {
  int epoch = 0;
  double train_ppl = 0;
};

// Top-F tokens by frequency, ties broken lexicographically.
inline std::vector<std::string> select_shortlist(const std::vector<Sentence>& sentences, std::size_t F) {
  if (F < 2) throw UsageError("shortlist size must be >= 2");
  std::map<std::string, long> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  std::vector<std::pair<std::string, long>> v(counts.begin(), counts.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (F > v.size()) throw UsageError("shortlist size " + std::to_string(F) + " exceeds vocabulary size " + std::to_string(v.size()));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < F; ++i) out.push_back(v[i].first);
  return out;
}

// Smallest F whose top-F tokens cover `mass` of all token occurrences.
inline std::size_t shortlist_size_for_mass(const std::vector<Sentence>& sentences, double mass) {
  std::map<std::string, long> counts;
  long total = 0;
  for (const auto& s : sentences)
    for (const auto& w : s) {
      ++counts[w];
      ++total;
    }
  std::vector<long> c;
  for (const auto& [w, n] : counts) c.push_back(n);
  std::sort(c.rbegin(), c.rend());
  long acc = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    acc += c[i];
    if (static_cast<double>(acc) >= mass * static_cast<double>(total)) return std::max<std::size_t>(2, i + 1);
  }
  return std::max<std::size_t>(2, c.size());
}

class ShortlistNlm : public LanguageModel {
 public:
  ShortlistNlm(std::vector<std::string> shortlist, int emb, int hidden, std::uint64_t seed)
      : shortlist_(std::move(shortlist)), emb_(emb), hidden_(hidden), seed_(seed) {
    if (shortlist_.size() < 2) throw UsageError("shortlist size must be >= 2");
    for (std::size_t i = 0; i < shortlist_.size(); ++i) index_.emplace(shortlist_[i], static_cast<int>(i));
    support_ = shortlist_;
    support_.push_back(kUnk);
    support_.push_back(kEos);
    const auto F = static_cast<Eigen::Index>(shortlist_.size());
    params_.add("nlm.embed", F + 3, emb, 0.1, seed);
    double s = 1.0 / std::sqrt(static_cast<double>(hidden));
    params_.add("nlm.lstm.w_in", emb, 4 * hidden, s, seed);
    params_.add("nlm.lstm.w_rec", hidden, 4 * hidden, s, seed);
    params_.add("nlm.lstm.bias", 1, 4 * hidden, s, seed);
    params_.add("nlm.out.weight", hidden, F + 2, s, seed);
    params_.add("nlm.out.bias", 1, F + 2, s, seed);
  }

  const std::vector<std::string>& shortlist() const { return shortlist_; }
  const std::vector<std::string>& support() const override { return support_; }
  int unk_id() const { return static_cast<int>(shortlist_.size()); }
  int eos_id() const { return unk_id() + 1; }
  int bos_id() const { return unk_id() + 2; }
  int emb() const { return emb_; }
  int hidden() const { return hidden_; }
  std::uint64_t seed() const { return seed_; }
  nn::ParamSet<double>& params() { return params_; }
  const nn::ParamSet<double>& params() const { return params_; }

  int id(const std::string& w) const {
    if (w == kEos) return eos_id();
    auto it = index_.find(w);
    return it == index_.end() ? unk_id() : it->second;
  }

  struct State {
    nn::Var<double> h, c;
  };

  State start() const { return {nn::zeros<double>(1, hidden_), nn::zeros<double>(1, hidden_)}; }

  // Feeds input id `x` and returns the new state with next-token log-probs.
  std::pair<State, nn::Var<double>> step(const State& st, int x) const {
    nn::LstmParams<double> lp{P("nlm.lstm.w_in"), P("nlm.lstm.w_rec"), P("nlm.lstm.bias"), hidden_};
    nn::Var<double> e = nn::slice_rows(P("nlm.embed"), x, 1);
    auto [h, c] = nn::lstm_cell(lp, nn::add(nn::matmul(e, lp.w_in), lp.bias), st.h, st.c);
    auto logits = nn::add(nn::matmul(h, P("nlm.out.weight")), P("nlm.out.bias"));
    return {{h, c}, nn::log_softmax_rows(logits)};
  }

  std::vector<double> next_probs(const Sentence& history) const override {
    nn::NoGradGuard ng;
    State st = start();
    auto [s1, lp] = step(st, bos_id());
    for (const auto& w : history) std::tie(s1, lp) = step(s1, id(w));
    std::vector<double> out(static_cast<std::size_t>(lp.cols()));
    for (Eigen::Index i = 0; i < lp.cols(); ++i) out[static_cast<std::size_t>(i)] = std::exp(lp.value()(0, i));
    return out;
  }

  double prob(const Sentence& history, const std::string& w) const override {
    return next_probs(history)[static_cast<std::size_t>(id(w))];
  }

  double score_sequence(const Sentence& tokens) const override {
    nn::NoGradGuard ng;
    auto [st, lp] = step(start(), bos_id());
    double total = 0;
    for (const auto& w : tokens) {
      total += lp.value()(0, id(w));
      std::tie(st, lp) = step(st, id(w));
    }
    return total + lp.value()(0, eos_id());
  }

  // Mean per-token cross-entropy of one sentence (targets include </s>).
  nn::Var<double> sentence_loss(const Sentence& s) const {
    State st = start();
    int prev = bos_id();
    std::vector<nn::Var<double>> terms;
    for (std::size_t t = 0; t <= s.size(); ++t) {
      int target = t < s.size() ? id(s[t]) : eos_id();
      auto [next, lp] = step(st, prev);
      terms.push_back(nn::pick_sum<double>(lp, {{0, target}}, -1.0));
      st = next;
      prev = target;
    }
    std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
    return nn::weighted_sum<double>(terms, w);
  }

  std::vector<NlmEpochLog> train(const std::vector<Sentence>& data, const NlmHyper& hyper) {
    if (data.empty()) throw DataError("empty training stream for NLM");
    nn::Adam opt(hyper.adam);
    nn::SplitMix rng(hyper.seed ^ 0x6e6c6dULL);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<NlmEpochLog> logs;
    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
      nn::shuffle_in_place(order, rng);
      double nll = 0;
      std::size_t tokens = 0;
      for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(hyper.batch_size)) {
        std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(hyper.batch_size));
        params_.zero_grad();
        for (std::size_t k = b; k < e; ++k) {
          const auto& s = data[order[k]];
          auto loss = sentence_loss(s);
          if (!std::isfinite(loss.item())) throw NumericError("non-finite NLM loss");
          nll += loss.item() * static_cast<double>(s.size() + 1);
          tokens += s.size() + 1;
          nn::backward(nn::scale(loss, 1.0 / static_cast<double>(e - b)));
        }
        opt.step(params_);
      }
      logs.push_back({epoch, std::exp(nll / static_cast<double>(tokens))});
    }
    return logs;
  }

  double perplexity(const std::vector<Sentence>& data) const {
    double nll = 0;
    std::size_t n = 0;
    for (const auto& s : data) {
      nll -= score_sequence(s);
      n += s.size() + 1;
    }
    return std::exp(nll / static_cast<double>(n));
  }

  std::string to_checkpoint() const {
    nlohmann::json meta = {{"type", "shortlist_nlm"}, {"shortlist", shortlist_}, {"emb", emb_}, {"hidden", hidden_}, {"seed", seed_}};
    return "CKPT1\n" + meta.dump() + "\n" + nn::tensors_to_bytes(params_);
  }

  static ShortlistNlm from_checkpoint(const std::string& bytes) {
    auto ck = nn::parse_checkpoint(bytes);
    if (ck.meta.value("type", "") != "shortlist_nlm") throw DataError("checkpoint is not a shortlist NLM");
    ShortlistNlm m(ck.meta.at("shortlist").get<std::vector<std::string>>(), ck.meta.at("emb"), ck.meta.at("hidden"),
                   ck.meta.at("seed").get<std::uint64_t>());
    nn::load_tensors(m.params_, ck);
    return m;
  }

 private:
  nn::Var<double> P(const std::string& n) const { return params_.get(n); }

  std::vector<std::string> shortlist_;
  std::vector<std::string> support_;
  std::unordered_map<std::string, int> index_;
  int emb_, hidden_;
  std::uint64_t seed_;
  nn::ParamSet<double> params_;
};

// ---------------------------------------------------------------------------
// Embeddings: symmetric windowed co-occurrence counts, positive PMI, rank-d
// truncated SVD, unit-normalized rows. Tokens seen fewer than twice share the
// <unk> row.

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int dim, std::map<std::string, Eigen::VectorXd> rows) : dim_(dim), rows_(std::move(rows)) {}

  int dim() const { return dim_; }
  const std::map<std::string, Eigen::VectorXd>& rows() const { return rows_; }
  bool has_own(const std::string& w) const { return rows_.count(w) > 0; }

  const Eigen::VectorXd& vec(const std::string& w) const {
    auto it = rows_.find(w);
    if (it != rows_.end()) return it->second;
    auto u = rows_.find(kUnk);
    if (u == rows_.end()) throw DataError("no embedding for '" + w + "' and no <unk> row");
    return u->second;
  }

  double cosine(const std::string& a, const std::string& b) const {
    double c = vec(a).dot(vec(b));
    return std::clamp(c, -1.0, 1.0);
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [w, v] : rows_) {
      out += w;
      for (Eigen::Index i = 0; i < v.size(); ++i) out += ' ' + fmt_double(v(i));
      out += '\n';
    }
    return out;
  }

  static EmbeddingTable from_text(const std::string& text) {
    std::map<std::string, Eigen::VectorXd> rows;
    int dim = -1;
    std::size_t lineno = 0;
    for (const auto& line : split_char(text, '\n')) {
      ++lineno;
      auto f = split_ws(line);
      if (f.empty()) continue;
      if (dim < 0) dim = static_cast<int>(f.size()) - 1;
      if (static_cast<int>(f.size()) - 1 != dim || dim < 1)
        throw DataError("embedding line " + std::to_string(lineno) + ": inconsistent dimension");
      Eigen::VectorXd v(dim);
      for (int i = 0; i < dim; ++i) v(i) = std::stod(f[static_cast<std::size_t>(i) + 1]);
      rows[f[0]] = v;
    }
    return EmbeddingTable(std::max(dim, 0), std::move(rows));
  }

 private:
  int dim_ = 0;
  std::map<std::string, Eigen::VectorXd> rows_;
};

inline EmbeddingTable train_embeddings(const std::vector<Sentence>& sentences, int dim, int window) {
  if (dim < 1 || window < 1) throw UsageError("embedding dim and window must be >= 1");
  std::map<std::string, long> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  if (counts.empty()) throw DataError("empty training stream for embeddings");
  std::map<std::string, int> index;
  for (const auto& [w, n] : counts)
    if (n >= 2 && w != kUnk) index.emplace(w, 0);
  index.emplace(kUnk, 0);
  int k = 0;
  for (auto& [w, i] : index) i = k++;
  const int n = k;
  auto id = [&](const std::string& w) {
    auto it = index.find(w);
    return it == index.end() || counts[w] < 2 ? index.at(kUnk) : it->second;
  };

  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, n);
  for (const auto& s : sentences)
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size() && j <= i + static_cast<std::size_t>(window); ++j) {
        int a = id(s[i]), b = id(s[j]);
        C(a, b) += 1;
        C(b, a) += 1;
      }
  Eigen::VectorXd row = C.rowwise().sum();
  const double total = row.sum();
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      if (C(a, b) > 0) M(a, b) = std::max(0.0, std::log(C(a, b) * total / (row(a) * row(b))));

  Eigen::BDCSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU);
  Eigen::MatrixXd U = svd.matrixU();
  Eigen::VectorXd sv = svd.singularValues();
  const int r = std::min(dim, n);
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(n, dim);
  for (int c = 0; c < r; ++c) {
    Eigen::Index arg = 0;
    U.col(c).cwiseAbs().maxCoeff(&arg);  // first index among equal magnitudes
    double sign = U(arg, c) < 0 ? -1.0 : 1.0;
    E.col(c) = sign * sv(c) * U.col(c);
  }
  std::map<std::string, Eigen::VectorXd> rows;
  for (const auto& [w, i] : index) {
    Eigen::VectorXd v = E.row(i).transpose();
    double norm = v.norm();
    if (norm > 0) {
      v /= norm;
    } else {
      // Token without positive associations: a fixed unit vector.
      v = Eigen::VectorXd::Zero(dim);
      v(0) = 1.0;
    }
    rows.emplace(w, v);
  }
  return EmbeddingTable(dim, std::move(rows));
}

// ---------------------------------------------------------------------------
// Vocabulary expansion: the base model's <unk> mass is redistributed over
// out-of-shortlist words in proportion to neighbour-weighted shortlist
// probabilities. Shortlist and </s> probabilities are left untouched.

struct Neighbor {
  std::string token;
  double cosine = 0.0;
};

struct UnkSplit {
  std::vector<double> oos;
  double unk = 0.0;
  bool unk_retained = false;
};

// Splits unknown-token mass u over OOS words in proportion to `weights`. The
// last word takes the remainder so the pieces add up to u exactly. With no
// positive weight the mass stays on <unk>.
inline UnkSplit redistribute_unk(double u, const std::vector<double>& weights) {
  UnkSplit r;
  r.oos.assign(weights.size(), 0.0);
  double W = 0.0;
  for (double w : weights) W += w;
  if (weights.empty() || !(W > 0.0)) {
    r.unk = u;
    r.unk_retained = !weights.empty();
    return r;
  }
  double given = 0.0;
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) given += r.oos[i] = u * (weights[i] / W);
  r.oos.back() = std::max(0.0, u - given);
  return r;
}

struct ExpandedDist {
  std::vector<double> probs;  // aligned with ExpandedLm::support()
  bool unk_retained = false;  // every weight was zero, <unk> kept its mass
};

class ExpandedLm : public LanguageModel {
 public:
  ExpandedLm(const ShortlistNlm& base, const EmbeddingTable& emb, const std::vector<std::string>& oos, int k)
      : base_(&base) {
    if (k < 1) throw UsageError("expansion k must be >= 1");
    std::set<std::string> in_shortlist(base.shortlist().begin(), base.shortlist().end());
    std::set<std::string> seen;
    for (const auto& o : oos) {
      if (in_shortlist.count(o)) throw DataError("out-of-shortlist token '" + o + "' is in the shortlist");
      if (o == kUnk || o == kEos) throw DataError("reserved token '" + o + "' cannot be expanded");
      if (!seen.insert(o).second) continue;
      std::vector<Neighbor> cands;
      for (const auto& s : base.shortlist()) cands.push_back({s, emb.cosine(o, s)});
      std::stable_sort(cands.begin(), cands.end(), [](const Neighbor& a, const Neighbor& b) {
        if (a.cosine != b.cosine) return a.cosine > b.cosine;
        return a.token < b.token;
      });
      cands.resize(std::min(cands.size(), static_cast<std::size_t>(k)));
      oos_.push_back(o);
      neighbors_.push_back(std::move(cands));
    }
    support_ = base.support();
    support_.insert(support_.end(), oos_.begin(), oos_.end());
    for (std::size_t i = 0; i < support_.size(); ++i) pos_.emplace(support_[i], i);
  }

  const std::vector<std::string>& support() const override { return support_; }
  const std::vector<std::string>& oos() const { return oos_; }
  const std::vector<Neighbor>& neighbors(std::size_t i) const { return neighbors_[i]; }

  ExpandedDist expand(const Sentence& history) const {
    Sentence mapped;
    for (const auto& w : history) mapped.push_back(pos_.count(w) && !is_oos(w) ? w : kUnk);
    auto base = base_->next_probs(mapped);
    ExpandedDist d;
    d.probs = base;
    d.probs.resize(support_.size(), 0.0);
    const std::size_t F = base_->shortlist().size();
    const double u = base[F];
    std::vector<double> w(oos_.size(), 0.0);
    for (std::size_t i = 0; i < oos_.size(); ++i)
      for (const auto& nb : neighbors_[i])
        w[i] += std::max(nb.cosine, 0.0) * base[static_cast<std::size_t>(base_->id(nb.token))];
    if (oos_.empty()) return d;
    auto r = redistribute_unk(u, w);
    std::copy(r.oos.begin(), r.oos.end(), d.probs.begin() + static_cast<std::ptrdiff_t>(F + 2));
    d.probs[F] = r.unk;
    d.unk_retained = r.unk_retained;
    return d;
  }

  std::vector<double> next_probs(const Sentence& history) const override { return expand(history).probs; }

  double prob(const Sentence& history, const std::string& w) const override {
    auto probs = next_probs(history);
    auto it = pos_.find(w);
    return probs[it == pos_.end() ? base_->shortlist().size() : it->second];
  }

 private:
  bool is_oos(const std::string& w) const {
    auto it = pos_.find(w);
    return it != pos_.end() && it->second >= base_->shortlist().size() + 2;
  }

  const ShortlistNlm* base_;
  std::vector<std::string> oos_;
  std::vector<std::vector<Neighbor>> neighbors_;
  std::vector<std::string> support_;
  std::unordered_map<std::string, std::size_t> pos_;
};

}  // namespace csasr::lm
