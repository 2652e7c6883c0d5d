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

#include "csasr/lm.hpp"
#include "csasr/rescore.hpp"
#include "oracles.hpp"

namespace csasr::lm {
namespace {

std::vector<Sentence> random_corpus(std::mt19937& rng, int n, int vocab, int max_len) {
  std::vector<Sentence> out;
  for (int i = 0; i < n; ++i) {
    Sentence s;
    int len = static_cast<int>(rng() % static_cast<unsigned>(max_len + 1));
    for (int k = 0; k < len; ++k) s.push_back("w" + std::to_string(rng() % static_cast<unsigned>(vocab)));
    out.push_back(s);
  }
  return out;
}

Sentence random_history(std::mt19937& rng, int vocab, int max_len) {
  Sentence h;
  int len = static_cast<int>(rng() % static_cast<unsigned>(max_len + 1));
  for (int k = 0; k < len; ++k) {
    // Index `vocab` produces a token the model never saw.
    auto v = rng() % static_cast<unsigned>(vocab + 1);
    h.push_back(v == static_cast<unsigned>(vocab) ? "zz" : "w" + std::to_string(v));
  }
  return h;
}

TEST(Kn, WorkedBigram) {
  // "a b a c" with sentence boundaries: p(b|a) = 0.25/2 + (0.75*2/2) * p_uni(b),
  // continuation counts a:2 b:1 c:1 </s>:1, so
  // p_uni(b) = (1-0.75)/5 + 0.75*4/5 * 1/5 = 0.17 and p(b|a) = 0.2525.
  auto lm = NgramLm::train({{"a", "b", "a", "c"}}, 2);
  double p_uni_b = 0.25 / 5 + 0.75 * 4 / 5 / 5;
  EXPECT_NEAR(lm.prob({"unseen"}, "b"), p_uni_b, 1e-15);
  EXPECT_NEAR(lm.prob({"a"}, "b"), 0.125 + 0.75 * p_uni_b, 1e-15);
  EXPECT_NEAR(lm.prob({"a"}, "b"), 0.2525, 1e-15);
}

TEST(Kn, MatchesIndependentReference) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 12; ++trial) {
    int order = 1 + trial % 4;
    auto corpus = random_corpus(rng, 15, 5, 6);
    auto lm = NgramLm::train(corpus, order);
    oracle::KnReference ref(corpus, order);
    for (int q = 0; q < 40; ++q) {
      Sentence h = random_history(rng, 5, 4);
      Sentence full{"<s>"};
      for (const auto& t : h) full.push_back(lm.vocab().count(t) ? t : "<unk>");
      for (const auto& w : ref.vocab_with_unk()) EXPECT_NEAR(lm.prob(h, w), ref.prob(full, w), 1e-12) << trial;
    }
  }
}

TEST(Kn, NormalizedOverSupport) {
  std::mt19937 rng(2);
  auto lm = NgramLm::train(random_corpus(rng, 40, 8, 8), 5);
  for (int q = 0; q < 300; ++q) {
    auto p = lm.next_probs(random_history(rng, 8, 6));
    double s = 0;
    for (double v : p) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Kn, UnknownWordsGetTheFloor) {
  auto lm = NgramLm::train({{"a", "b"}, {"a"}}, 3);
  EXPECT_GT(lm.prob({"a"}, "never-seen"), 0.0);
  EXPECT_EQ(lm.prob({"a"}, "never-seen"), lm.prob({"a"}, kUnk));
  EXPECT_EQ(lm.prob({"x", "y"}, "b"), lm.prob({kUnk, kUnk}, "b"));
}

TEST(Kn, RemovingACountNeverRaisesItsProbability) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    int order = 2 + trial % 3;
    auto lm = NgramLm::train(random_corpus(rng, 20, 4, 6), order);
    for (int q = 0; q < 30; ++q) {
      Sentence h = random_history(rng, 3, order - 1);
      std::string w = "w" + std::to_string(rng() % 4);
      Gram g{kBos};
      g.insert(g.end(), h.begin(), h.end());
      if (static_cast<int>(g.size()) > order - 1) g.erase(g.begin(), g.end() - (order - 1));
      // Walk down to the level that actually holds the n-gram.
      for (g.push_back(w); g.size() > 1 && lm.count(g) == 0; g.erase(g.begin())) {
      }
      if (lm.count(g) == 0) continue;
      Sentence hist(g.begin(), g.end() - 1);
      if (!hist.empty() && hist[0] == kBos) hist.erase(hist.begin());
      else if (static_cast<int>(g.size()) < order) {
        // Lower-order gram not anchored at <s>: query through an unseen
        // history so the probability is read at this level.
        hist.insert(hist.begin(), static_cast<std::size_t>(order), "zz");
      }
      EXPECT_LE(lm.without(g).prob(hist, w), lm.prob(hist, w) + 1e-15);
    }
  }
}

TEST(Kn, ArpaRoundTripPreservesProbabilities) {
  std::mt19937 rng(4);
  auto lm = NgramLm::train(random_corpus(rng, 30, 6, 7), 3);
  auto text = lm.to_arpa();
  EXPECT_EQ(text.rfind("\\data\\", 0), 0u);
  auto arpa = ArpaLm::parse(text);
  EXPECT_EQ(arpa.order(), 3);
  EXPECT_EQ(arpa.support(), lm.support());
  for (int q = 0; q < 200; ++q) {
    Sentence h = random_history(rng, 6, 4);
    for (const auto& w : lm.support()) EXPECT_NEAR(std::log(arpa.prob(h, w)), std::log(lm.prob(h, w)), 1e-9);
  }
  EXPECT_THROW(ArpaLm::parse("\\data\\\n\\1-grams:\n-1 a b\n"), DataError);
}

TEST(Kn, RejectsBadInput) {
  EXPECT_THROW(NgramLm::train({}, 3), DataError);
  EXPECT_THROW(NgramLm::train({{"a"}}, 0), UsageError);
  EXPECT_THROW(NgramLm::train({{"a", "</s>"}}, 2), DataError);
}

TEST(Kn, ScoreSequenceSumsSteps) {
  auto lm = NgramLm::train({{"a", "b"}, {"b", "a"}}, 2);
  double want = std::log(lm.prob({}, "a")) + std::log(lm.prob({"a"}, "b")) + std::log(lm.prob({"a", "b"}, kEos));
  EXPECT_NEAR(lm.score_sequence({"a", "b"}), want, 1e-12);
}

// ---------------------------------------------------------------------------

std::vector<Sentence> nlm_corpus() {
  std::mt19937 rng(5);
  std::vector<Sentence> out;
  // A strongly patterned stream: "a b c", "a b d", "e f".
  for (int i = 0; i < 60; ++i) {
    switch (rng() % 3) {
      case 0: out.push_back({"a", "b", "c"}); break;
      case 1: out.push_back({"a", "b", "d"}); break;
      default: out.push_back({"e", "f"}); break;
    }
  }
  out.push_back({"rare"});
  return out;
}

NlmHyper small_hyper() {
  NlmHyper h;
  h.emb = 8;
  h.hidden = 12;
  h.epochs = 3;
  h.batch_size = 8;
  h.adam.lr = 0.02;
  return h;
}

TEST(Nlm, ShortlistSelection) {
  std::vector<Sentence> c{{"b", "a", "c"}, {"a", "b"}, {"d"}};
  EXPECT_EQ(select_shortlist(c, 2), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(select_shortlist(c, 3), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_THROW(select_shortlist(c, 1), UsageError);
  EXPECT_THROW(select_shortlist(c, 9), UsageError);
  EXPECT_EQ(shortlist_size_for_mass(c, 0.5), 2u);
  EXPECT_EQ(shortlist_size_for_mass(c, 1.0), 4u);
}

TEST(Nlm, PerplexityDropsOverFirstEpochs) {
  auto data = nlm_corpus();
  ShortlistNlm m(select_shortlist(data, 6), 8, 12, 3);
  auto h = small_hyper();
  double before = m.perplexity(data);
  auto logs = m.train(data, h);
  ASSERT_EQ(logs.size(), 3u);
  EXPECT_LT(logs[1].train_ppl, logs[0].train_ppl);
  EXPECT_LT(logs[2].train_ppl, logs[1].train_ppl);
  EXPECT_LT(m.perplexity(data), before);
}

TEST(Nlm, NormalizedAndDeterministic) {
  auto data = nlm_corpus();
  auto run = [&] {
    ShortlistNlm m(select_shortlist(data, 4), 8, 12, 3);
    m.train(data, small_hyper());
    return m.to_checkpoint();
  };
  auto a = run();
  EXPECT_EQ(a, run());
  auto m = ShortlistNlm::from_checkpoint(a);
  std::mt19937 rng(6);
  for (int q = 0; q < 50; ++q) {
    Sentence hist;
    for (unsigned k = rng() % 4; k > 0; --k) hist.push_back(std::string(1, static_cast<char>('a' + rng() % 7)));
    auto p = m.next_probs(hist);
    ASSERT_EQ(p.size(), 6u);
    double s = 0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  EXPECT_NEAR(m.score_sequence({"a", "b"}),
              std::log(m.prob({}, "a")) + std::log(m.prob({"a"}, "b")) + std::log(m.prob({"a", "b"}, kEos)), 1e-9);
  EXPECT_THROW(ShortlistNlm::from_checkpoint("CKPT1\n{\"type\":\"asr\"}\n"), DataError);
}

TEST(Nlm, FullVocabularyShortlistLearnsUnkAway) {
  auto data = nlm_corpus();
  ShortlistNlm m(select_shortlist(data, 7), 8, 12, 3);
  double before = m.prob({"a"}, kUnk);
  auto h = small_hyper();
  h.epochs = 6;
  m.train(data, h);
  EXPECT_LT(m.prob({"a"}, kUnk), before);
  EXPECT_LT(m.prob({"a"}, kUnk), 0.05);
}

// ---------------------------------------------------------------------------

TEST(Embeddings, IdenticalContextsHaveCosineOne) {
  std::vector<Sentence> c;
  for (int i = 0; i < 3; ++i) {
    c.push_back({"x", "p", "q"});
    c.push_back({"y", "p", "q"});
    c.push_back({"p", "r", "s"});
  }
  auto e = train_embeddings(c, 3, 2);
  EXPECT_NEAR(e.cosine("x", "y"), 1.0, 1e-6);
  for (const auto& [w, v] : e.rows()) EXPECT_NEAR(v.norm(), 1.0, 1e-12) << w;
}

TEST(Embeddings, TopicsSeparate) {
  std::mt19937 rng(7);
  std::vector<Sentence> c;
  for (int i = 0; i < 300; ++i) {
    char topic = rng() % 2 ? 'a' : 'b';
    Sentence s;
    for (int k = 0; k < 5; ++k) s.push_back(std::string(1, topic) + std::to_string(rng() % 5));
    c.push_back(s);
  }
  auto e = train_embeddings(c, 4, 2);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      if (i == j) continue;
      auto ai = "a" + std::to_string(i), aj = "a" + std::to_string(j), bj = "b" + std::to_string(j);
      EXPECT_GT(e.cosine(ai, aj), e.cosine(ai, bj)) << ai << " " << aj;
    }
}

TEST(Embeddings, RareTokensShareUnkAndTextRoundTrips) {
  std::vector<Sentence> c{{"a", "b", "once"}, {"a", "b"}, {"b", "a"}};
  auto e = train_embeddings(c, 2, 1);
  EXPECT_FALSE(e.has_own("once"));
  EXPECT_TRUE(e.has_own(kUnk));
  EXPECT_EQ(e.vec("once"), e.vec(kUnk));
  EXPECT_EQ(e.vec("unseen"), e.vec(kUnk));
  auto back = EmbeddingTable::from_text(e.to_text());
  EXPECT_EQ(back.dim(), 2);
  for (const auto& [w, v] : e.rows()) EXPECT_EQ(back.vec(w), v);
  EXPECT_THROW(EmbeddingTable::from_text("a 1 2\nb 1\n"), DataError);
  EXPECT_EQ(train_embeddings(c, 2, 1).to_text(), e.to_text());
}

// ---------------------------------------------------------------------------

TEST(Expansion, SplitArithmetic) {
  auto r = redistribute_unk(0.1, {3.0, 1.0});
  EXPECT_NEAR(r.oos[0], 0.075, 1e-15);
  EXPECT_NEAR(r.oos[1], 0.025, 1e-15);
  EXPECT_EQ(r.unk, 0.0);
  EXPECT_FALSE(r.unk_retained);
  auto z = redistribute_unk(0.1, {0.0, 0.0});
  EXPECT_EQ(z.unk, 0.1);
  EXPECT_TRUE(z.unk_retained);
  auto none = redistribute_unk(0.1, {});
  EXPECT_EQ(none.unk, 0.1);
  EXPECT_FALSE(none.unk_retained);
}

struct ExpansionFixture : ::testing::Test {
  void SetUp() override {
    data = nlm_corpus();
    for (int i = 0; i < 4; ++i) {
      data.push_back({"a", "b", "g"});
      data.push_back({"e", "h"});
    }
    nlm = std::make_unique<ShortlistNlm>(select_shortlist(data, 6), 8, 12, 3);
    nlm->train(data, small_hyper());
    emb = train_embeddings(data, 4, 2);
  }
  std::vector<Sentence> data;
  std::unique_ptr<ShortlistNlm> nlm;
  EmbeddingTable emb;
};

TEST_F(ExpansionFixture, ConservesMassAndShortlist) {
  ExpandedLm x(*nlm, emb, {"g", "h", "rare"}, 2);
  std::mt19937 rng(8);
  const std::size_t F = nlm->shortlist().size();
  for (int q = 0; q < 100; ++q) {
    Sentence hist;
    for (unsigned k = rng() % 4; k > 0; --k) hist.push_back(std::string(1, static_cast<char>('a' + rng() % 8)));
    Sentence mapped;
    for (const auto& t : hist) mapped.push_back(t == "g" || t == "h" ? kUnk : t);
    auto base = nlm->next_probs(mapped);
    auto d = x.expand(hist);
    double sb = 0, sx = 0;
    for (double v : base) sb += v;
    for (double v : d.probs) sx += v;
    EXPECT_NEAR(sx, 1.0, 1e-12);
    EXPECT_NEAR(sx, sb, 1e-12);
    for (std::size_t i = 0; i < F; ++i) EXPECT_EQ(d.probs[i], base[i]);
    EXPECT_EQ(d.probs[F + 1], base[F + 1]);  // </s>
    EXPECT_FALSE(d.unk_retained);
    EXPECT_EQ(d.probs[F], 0.0);
  }
  for (std::size_t i = 0; i < x.oos().size(); ++i) {
    ASSERT_EQ(x.neighbors(i).size(), 2u);
    for (const auto& nb : x.neighbors(i)) {
      EXPECT_GE(nb.cosine, -1.0);
      EXPECT_LE(nb.cosine, 1.0);
      EXPECT_NE(std::find(nlm->shortlist().begin(), nlm->shortlist().end(), nb.token), nlm->shortlist().end());
    }
    EXPECT_GE(x.neighbors(i)[0].cosine, x.neighbors(i)[1].cosine);
  }
}

TEST_F(ExpansionFixture, EmptyOosIsIdentity) {
  ExpandedLm x(*nlm, emb, {}, 3);
  for (const Sentence& h : {Sentence{}, Sentence{"a"}, Sentence{"a", "b"}}) EXPECT_EQ(x.next_probs(h), nlm->next_probs(h));
  EXPECT_EQ(x.score_sequence({"a", "b", "c"}), nlm->score_sequence({"a", "b", "c"}));
}

TEST_F(ExpansionFixture, Errors) {
  EXPECT_THROW(ExpandedLm(*nlm, emb, {"a"}, 2), DataError);
  EXPECT_THROW(ExpandedLm(*nlm, emb, {"g"}, 0), UsageError);
}

}  // namespace
}  // namespace csasr::lm

namespace csasr::lm {
namespace {

std::vector<NBestRow> toy_nbest() {
  // Two utterances; units are word-level BPE units.
  return {
      {"u1", 1, -1.0, -1.0, -1.0, {"▁ok", "我"}, {}},
      {"u1", 2, -1.5, -1.5, -1.5, {"▁so", "我"}, {}},
      {"u1", 3, -2.0, -2.0, -2.0, {"▁ok", "我", "饭"}, {}},
      {"u2", 1, -0.5, -0.5, -0.5, {"吃"}, {}},
      {"u2", 2, -0.7, -0.7, -0.7, {"吃", "饭"}, {}},
  };
}

NgramLm toy_lm() {
  std::vector<Sentence> train;
  for (int i = 0; i < 5; ++i) {
    train.push_back({"so", "我"});
    train.push_back({"吃", "饭"});
    train.push_back({"ok", "我", "饭"});
  }
  return NgramLm::train(train, 3);
}

TEST(Rescore, ZeroWeightsKeepOrder) {
  auto groups = group_nbest(toy_nbest());
  ASSERT_EQ(groups.size(), 2u);
  auto lm = toy_lm();
  attach_lm_scores(groups, lm, 2);
  for (const auto& g : groups) {
    auto rows = rescore_group(g, 0.0, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(rows[i].units, g.rows[i].units);
      ASSERT_EQ(rows[i].extra.size(), 2u);
      EXPECT_EQ(rows[i].extra[1], rows[i].score_total);
    }
  }
}

TEST(Rescore, LargeGammaOrdersByLm) {
  auto groups = group_nbest(toy_nbest());
  auto lm = toy_lm();
  attach_lm_scores(groups, lm);
  for (const auto& g : groups) {
    auto rows = rescore_group(g, 1e6, 0.0);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i - 1].extra[0], rows[i].extra[0]);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Sentence s;
      for (const auto& t : decode(rows[i].units)) s.push_back(t.surface);
      EXPECT_EQ(rows[i].extra[0], floored_lm_score(lm, s));
    }
  }
}

TEST(Rescore, GridReplayMatchesBest) {
  auto groups = group_nbest(toy_nbest());
  auto lm = toy_lm();
  attach_lm_scores(groups, lm);
  auto refs = eval::parse_text({"u1 so 我", "u2 吃 饭"}, "ref");
  std::vector<double> gammas{0.0, 0.1, 0.5, 1.0}, etas{-0.5, 0.0, 0.5};
  auto res = grid_search(groups, refs, gammas, etas);
  ASSERT_EQ(res.table.size(), 12u);
  // Replay every grid point independently; ties prefer the smaller
  // |gamma| + |eta|, then the earlier point.
  double best = 2.0;
  GridPoint want;
  for (double gm : gammas)
    for (double et : etas) {
      long errors = 0, n = 0;
      for (const auto& g : groups) {
        std::size_t arg = 0;
        for (std::size_t i = 1; i < g.rows.size(); ++i)
          if (final_score(g, i, gm, et) > final_score(g, arg, gm, et)) arg = i;
        auto a = eval::align(refs.at(g.utt_id), g.words[arg]);
        errors += a.errors();
        n += static_cast<long>(refs.at(g.utt_id).size());
      }
      double t = static_cast<double>(errors) / static_cast<double>(n);
      if (t < best || (t == best && std::abs(gm) + std::abs(et) < std::abs(want.gamma) + std::abs(want.eta))) {
        best = t;
        want = {gm, et, t};
      }
    }
  EXPECT_EQ(res.best.gamma, want.gamma);
  EXPECT_EQ(res.best.eta, want.eta);
  EXPECT_EQ(res.best.ter, want.ter);
  EXPECT_EQ(res.best.ter, 0.0);
  EXPECT_THROW(grid_search(groups, refs, {}, etas), UsageError);

  // With one hypothesis per utterance every point ties; zero weights win.
  auto single = groups;
  for (auto& g : single) {
    g.rows.resize(1);
    g.words.resize(1);
    g.lm.resize(1);
  }
  auto flat = grid_search(single, refs, gammas, etas);
  EXPECT_EQ(flat.best.gamma, 0.0);
  EXPECT_EQ(flat.best.eta, 0.0);
}

TEST(Rescore, FloorAppliesToZeroProbabilityWords) {
  struct ZeroLm : LanguageModel {
    std::vector<std::string> s{"a", kEos};
    const std::vector<std::string>& support() const override { return s; }
    std::vector<double> next_probs(const Sentence&) const override { return {0.0, 1.0}; }
  } zero;
  EXPECT_EQ(zero.score_sequence({"a"}), -INFINITY);
  EXPECT_NEAR(floored_lm_score(zero, {"a"}), kLmLogFloor, 1e-12);
}

}  // namespace
}  // namespace csasr::lm
