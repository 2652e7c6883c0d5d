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

#include <map>
#include <random>

#include <gtest/gtest.h>

#include "csasr/tokenize.hpp"

namespace csasr {
namespace {

Corpus corpus_of(const std::vector<std::string>& lines) {
  Corpus c;
  int i = 0;
  for (const auto& l : lines) {
    Utterance u;
    u.id = "u" + std::to_string(i++);
    u.tokens = tokenize_transcript(l);
    c.utterances.push_back(u);
  }
  return c;
}

// Brute-force pair counter: walks every word occurrence separately.
std::map<std::pair<std::string, std::string>, long> naive_pairs(const std::map<std::string, long>& words, bool marker,
                                                                 const std::vector<std::pair<std::string, std::string>>& merges) {
  std::map<std::pair<std::string, std::string>, long> out;
  for (const auto& [w, n] : words)
    for (long k = 0; k < n; ++k) {
      auto seq = initial_segmentation(w, marker);
      for (const auto& m : merges) apply_merge(seq, m.first, m.second);
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) out[{seq[i], seq[i + 1]}] += 1;
    }
  return out;
}

TEST(BaseInventory, CoverageCutoff) {
  auto c = corpus_of({"甲甲甲甲甲甲甲甲甲 乙"});
  auto inv = base_inventory(c, 0.9);
  EXPECT_TRUE(inv.contains("甲"));
  EXPECT_FALSE(inv.contains("乙"));
  EXPECT_EQ(inv.mandarin_count(), 1u);
  auto full = base_inventory(c, 1.0);
  EXPECT_TRUE(full.contains("乙"));
  EXPECT_EQ(full.mandarin_count(), 2u);
  EXPECT_EQ(encode(bpe_train({}, full.symbols.size(), inv), {{"乙", Lang::Man}}),
            (std::vector<std::string>{kDefaultUnk}));
}

TEST(BaseInventory, AlwaysHasEnglishAndMarkerAndUniqueSymbols) {
  auto inv = base_inventory(corpus_of({"我 吃"}), 1.0);
  EXPECT_TRUE(inv.contains(kWordMarker));
  for (const auto& a : english_alphabet()) EXPECT_TRUE(inv.contains(a)) << a;
  std::set<std::string> uniq(inv.symbols.begin(), inv.symbols.end());
  EXPECT_EQ(uniq.size(), inv.symbols.size());
  EXPECT_EQ(std::count(inv.symbols.begin(), inv.symbols.end(), inv.unk_symbol), 1);
  EXPECT_THROW(base_inventory(Corpus{}, 1.0), DataError);
}

TEST(BpeTrain, LowLowestFirstMerge) {
  SymbolInventory base;
  base.symbols = {kDefaultUnk, "l", "o", "w", "e", "s", "t"};
  std::map<std::string, long> words{{"low", 5}, {"lowest", 2}};
  BpeTrainOptions opts;
  opts.word_marker = false;
  auto m = bpe_train(words, base.symbols.size() + 1, base, opts);
  ASSERT_EQ(m.merges.size(), 1u);
  EXPECT_EQ(m.merges[0], (std::pair<std::string, std::string>{"l", "o"}));
  auto oracle = naive_pairs(words, false, {});
  EXPECT_EQ((oracle[{"l", "o"}]), 7);
  EXPECT_EQ((oracle[{"o", "w"}]), 7);
}

TEST(BpeTrain, RepeatedSymbolRecount) {
  SymbolInventory base;
  base.symbols = {kDefaultUnk, "a"};
  BpeTrainOptions opts;
  opts.word_marker = false;
  std::map<std::string, long> words{{"aaaa", 1}};
  EXPECT_EQ((naive_pairs(words, false, {})[{"a", "a"}]), 3);
  auto m = bpe_train(words, 10, base, opts);
  ASSERT_GE(m.merges.size(), 1u);
  EXPECT_EQ(m.merges[0], (std::pair<std::string, std::string>{"a", "a"}));
  // After merging, "aa aa" has one (aa, aa) pair, below the minimum of 2.
  EXPECT_EQ(m.merges.size(), 1u);
}

TEST(BpeTrain, EachMergeIsTheOracleArgmax) {
  std::map<std::string, long> words{{"the", 9}, {"then", 4}, {"there", 3}, {"eat", 5}, {"heat", 2}, {"ate", 2}};
  auto base = base_inventory(corpus_of({"the"}), 1.0);
  auto m = bpe_train(words, base.symbols.size() + 8, base);
  std::vector<std::pair<std::string, std::string>> done;
  for (const auto& merge : m.merges) {
    auto counts = naive_pairs(words, true, done);
    long best = 0;
    std::pair<std::string, std::string> arg;
    for (const auto& [p, n] : counts)
      if (n > best || (n == best && p < arg)) {
        best = n;
        arg = p;
      }
    EXPECT_EQ(merge, arg);
    done.push_back(merge);
  }
}

TEST(BpeTrain, ZeroBudgetAndEmptyWords) {
  auto base = base_inventory(corpus_of({"eat"}), 1.0);
  EXPECT_TRUE(bpe_train({{"eat", 10}}, base.symbols.size(), base).merges.empty());
  EXPECT_TRUE(bpe_train({}, base.symbols.size() + 50, base).merges.empty());
  EXPECT_THROW(bpe_train({}, base.symbols.size() - 1, base), UsageError);
}

TEST(BpeTrain, DeterministicAndPrefixMonotone) {
  std::mt19937 rng(3);
  std::map<std::string, long> words;
  for (int i = 0; i < 200; ++i) {
    std::string w;
    int len = 2 + static_cast<int>(rng() % 5);
    for (int k = 0; k < len; ++k) w += static_cast<char>('a' + rng() % 6);
    words[w] += 1 + static_cast<long>(rng() % 4);
  }
  auto base = base_inventory(corpus_of({"a"}), 1.0);
  auto small = bpe_train(words, base.symbols.size() + 10, base);
  auto again = bpe_train(words, base.symbols.size() + 10, base);
  auto big = bpe_train(words, base.symbols.size() + 30, base);
  EXPECT_EQ(bpe_to_text(small), bpe_to_text(again));
  ASSERT_LE(small.merges.size(), big.merges.size());
  for (std::size_t i = 0; i < small.merges.size(); ++i) EXPECT_EQ(small.merges[i], big.merges[i]);
  EXPECT_LE(base.symbols.size() + big.merges.size(), big.target_vocab);
}

TEST(Encode, NoMergesFusesMarker) {
  auto base = base_inventory(corpus_of({"我 eat"}), 1.0);
  auto m = bpe_train({}, base.symbols.size(), base);
  EXPECT_EQ(encode(m, {{"我", Lang::Man}, {"eat", Lang::Eng}}), (std::vector<std::string>{"我", "▁e", "a", "t"}));
}

TEST(Decode, Basics) {
  EXPECT_TRUE(decode({}).empty());
  EXPECT_EQ(decode({"▁t", "h", "e"}), (std::vector<Token>{{"the", Lang::Eng}}));
  ScopedWarningCapture w;
  EXPECT_EQ(decode({"h", "e", "我"}), (std::vector<Token>{{"he", Lang::Eng}, {"我", Lang::Man}}));
  EXPECT_EQ(w.messages.size(), 1u);
}

TEST(Encode, RoundTripRandomSequences) {
  auto c = corpus_of({"我 吃 饭 的 了 the cat eats rice lah okay don't"});
  auto base = base_inventory(c, 1.0);
  std::map<std::string, long> words{{"the", 5}, {"cat", 3}, {"eats", 3}, {"rice", 2}, {"lah", 4}, {"okay", 2}, {"don't", 2}};
  auto m = bpe_train(words, base.symbols.size() + 12, base);
  BpeEncoder enc(m);
  std::mt19937 rng(9);
  const std::vector<std::string> man = {"我", "吃", "饭", "的", "了"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Token> toks;
    int n = static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) {
      if (rng() % 2) {
        toks.push_back({man[rng() % man.size()], Lang::Man});
      } else {
        std::string w;
        int len = 1 + static_cast<int>(rng() % 7);
        for (int k = 0; k < len; ++k) w += "abcdefghijklmnopqrstuvwxyz'"[rng() % 27];
        toks.push_back({w, Lang::Eng});
      }
    }
    auto units = enc.encode(toks);
    EXPECT_EQ(decode(units), toks);
    auto lid = derive_lid_targets(units, LidGranularity::PerToken);
    EXPECT_EQ(lid.tags.size(), units.size());
    auto col = derive_lid_targets(units, LidGranularity::Collapsed);
    for (std::size_t i = 1; i < col.tags.size(); ++i) EXPECT_NE(col.tags[i], col.tags[i - 1]);
  }
}

TEST(LidTargets, Examples) {
  std::vector<std::string> u{"我", "▁e", "a", "t", "饭"};
  EXPECT_EQ(derive_lid_targets(u, LidGranularity::PerToken).tags, (std::vector<int>{0, 1, 1, 1, 0}));
  EXPECT_EQ(derive_lid_targets(u, LidGranularity::Collapsed).tags, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(derive_lid_targets({"我", "吃", "饭"}, LidGranularity::Collapsed).tags, (std::vector<int>{0}));
  auto unk = derive_lid_targets({"▁e", "<unk>", "<unk>"}, LidGranularity::PerToken);
  EXPECT_EQ(unk.tags, (std::vector<int>{1, 1, 1}));
  EXPECT_FALSE(unk.flagged);
  auto initial = derive_lid_targets({"<unk>", "▁e"}, LidGranularity::PerToken);
  EXPECT_EQ(initial.tags, (std::vector<int>{0, 1}));
  EXPECT_TRUE(initial.flagged);
}

TEST(BpeFile, RoundTrip) {
  auto base = base_inventory(corpus_of({"我 the then"}), 1.0);
  auto m = bpe_train({{"the", 4}, {"then", 2}}, base.symbols.size() + 4, base);
  auto text = bpe_to_text(m);
  EXPECT_EQ(text.substr(0, 7), "bpe v1 ");
  auto back = bpe_from_text(text);
  EXPECT_EQ(bpe_to_text(back), text);
  EXPECT_EQ(back.units(), m.units());
  EXPECT_THROW(bpe_from_text("nope"), DataError);
}

}  // namespace
}  // namespace csasr
