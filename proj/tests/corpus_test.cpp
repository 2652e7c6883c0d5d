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

#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "csasr/corpus.hpp"
#include "test_util.hpp"

namespace csasr {
namespace {

TEST(ClassifyToken, Rules) {
  EXPECT_EQ(classify_token("啊"), (std::vector<Token>{{"啊", Lang::Man}}));
  EXPECT_EQ(classify_token("Lor"), (std::vector<Token>{{"lor", Lang::Eng}}));
  EXPECT_EQ(classify_token("ok啦"), (std::vector<Token>{{"ok", Lang::Eng}, {"啦", Lang::Man}}));
  EXPECT_EQ(classify_token("我吃饭"), (std::vector<Token>{{"我", Lang::Man}, {"吃", Lang::Man}, {"饭", Lang::Man}}));
  EXPECT_EQ(classify_token("don't"), (std::vector<Token>{{"don't", Lang::Eng}}));
  EXPECT_EQ(classify_token("123"), (std::vector<Token>{{"123", Lang::Other}}));
  EXPECT_EQ(classify_token("<unk>"), (std::vector<Token>{{"<unk>", Lang::Other}}));
  // Extension A is Mandarin, other CJK blocks are not.
  EXPECT_EQ(classify_token("\xE3\x90\x80")[0].lang, Lang::Man);          // U+3400
  EXPECT_EQ(classify_token("\xF0\xA0\x80\x80")[0].lang, Lang::Other);    // U+20000
}

TEST(ClassifyToken, IdempotentOnRandomSurfaces) {
  const std::vector<std::string> pieces = {"a", "Z", "'", "我", "饭", "1", "-", "ok", "\xE3\x90\x80", "é"};
  std::mt19937 rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    int n = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) s += pieces[rng() % pieces.size()];
    for (const auto& t : classify_token(s)) {
      auto again = classify_token(t.surface);
      ASSERT_EQ(again.size(), 1u) << s;
      EXPECT_EQ(again[0], t);
    }
  }
}

TEST(UtteranceCategory, Cases) {
  Utterance u;
  u.tokens = {{"我", Lang::Man}, {"吃", Lang::Man}};
  EXPECT_EQ(utterance_category(u), Category::Man);
  u.tokens = {{"我", Lang::Man}, {"eat", Lang::Eng}};
  EXPECT_EQ(utterance_category(u), Category::CS);
  u.tokens = {{"eat", Lang::Eng}, {"lor", Lang::Eng}};
  EXPECT_EQ(utterance_category(u), Category::En);
  u.tokens = {{"123", Lang::Other}};
  EXPECT_THROW(utterance_category(u), DataError);
}

class KaldiDirTest : public ::testing::Test {
 protected:
  void SetUp() override { dir = test::temp_dir("kaldi"); }
  std::filesystem::path dir;
};

TEST_F(KaldiDirTest, LoadsTextSegmentsSpeakers) {
  test::write(dir / "text", "utt1 我 eat 饭\nutt2 \nutt3 OK啦\n");
  test::write(dir / "wav.scp", "rec1 /data/rec1.wav\n");
  test::write(dir / "segments", "utt1 rec1 1.00 3.50\nutt2 rec1 4.0 5.0\nutt3 rec1 5 6\n");
  test::write(dir / "utt2spk", "utt1 spkA\nutt2 spkA\nutt3 spkB\n");
  ScopedWarningCapture warnings;
  Corpus c = load_kaldi_dir(dir);
  ASSERT_EQ(c.utterances.size(), 3u);
  const auto& u1 = c.utterances[0];
  EXPECT_EQ(u1.id, "utt1");
  EXPECT_EQ(u1.tokens, (std::vector<Token>{{"我", Lang::Man}, {"eat", Lang::Eng}, {"饭", Lang::Man}}));
  EXPECT_DOUBLE_EQ(*u1.start_s, 1.0);
  EXPECT_DOUBLE_EQ(*u1.end_s, 3.5);
  EXPECT_DOUBLE_EQ(*u1.duration(), 2.5);
  EXPECT_EQ(u1.speaker, "spkA");
  EXPECT_EQ(u1.recording, "rec1");
  EXPECT_TRUE(c.utterances[1].tokens.empty());
  EXPECT_EQ(warnings.messages.size(), 1u);
  EXPECT_EQ(c.utterances[2].tokens, (std::vector<Token>{{"ok", Lang::Eng}, {"啦", Lang::Man}}));
}

TEST_F(KaldiDirTest, MissingTextIsFatal) { EXPECT_THROW(load_kaldi_dir(dir), DataError); }

TEST_F(KaldiDirTest, DuplicateIdIsFatalAndNamed) {
  test::write(dir / "text", "utt1 a\nutt1 b\n");
  try {
    load_kaldi_dir(dir);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("utt1"), std::string::npos);
  }
}

TEST_F(KaldiDirTest, UnknownRecordingIsFatal) {
  test::write(dir / "text", "utt1 a\n");
  test::write(dir / "wav.scp", "rec1 /x.wav\n");
  test::write(dir / "segments", "utt1 rec9 0 1\n");
  EXPECT_THROW(load_kaldi_dir(dir), DataError);
}

TEST_F(KaldiDirTest, RoundTripPreservesTokens) {
  test::write(dir / "text", "u1 我 eat 饭\nu2 Hello 世界 123\nu3 <unk> lah\n");
  test::write(dir / "wav.scp", "r1 /x.wav\n");
  test::write(dir / "segments", "u1 r1 0 1.5\nu2 r1 1.5 2.25\nu3 r1 3 4\n");
  test::write(dir / "utt2spk", "u1 s1\nu2 s2\nu3 s1\n");
  Corpus a = load_kaldi_dir(dir);
  auto out = test::temp_dir("kaldi_rt");
  write_kaldi_dir(a, out);
  Corpus b = load_kaldi_dir(out);
  ASSERT_EQ(a.utterances.size(), b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    EXPECT_EQ(a.utterances[i].tokens, b.utterances[i].tokens);
    EXPECT_EQ(a.utterances[i].speaker, b.utterances[i].speaker);
    EXPECT_DOUBLE_EQ(*a.utterances[i].duration(), *b.utterances[i].duration());
  }
}

Utterance timed(const std::string& id, std::vector<Token> toks, double dur, const std::string& spk = "s") {
  Utterance u;
  u.id = id;
  u.speaker = spk;
  u.start_s = 0.0;
  u.end_s = dur;
  u.tokens = std::move(toks);
  return u;
}

TEST(CorpusStats, SingleCodeSwitchedUtterance) {
  Corpus c;
  c.utterances.push_back(timed("a", {{"我", Lang::Man}, {"eat", Lang::Eng}}, 10.0));
  auto s = corpus_stats(c);
  EXPECT_EQ(s.ratio_man, 0.0);
  EXPECT_EQ(s.ratio_eng, 0.0);
  EXPECT_EQ(s.ratio_cs, 1.0);
  EXPECT_DOUBLE_EQ(s.hours, 10.0 / 3600.0);
  EXPECT_EQ(s.speakers, 1u);
}

TEST(CorpusStats, EqualSplit) {
  Corpus c;
  c.utterances.push_back(timed("a", {{"我", Lang::Man}}, 2.0, "x"));
  c.utterances.push_back(timed("b", {{"eat", Lang::Eng}}, 2.0, "y"));
  auto s = corpus_stats(c);
  EXPECT_DOUBLE_EQ(s.ratio_man, 0.5);
  EXPECT_DOUBLE_EQ(s.ratio_eng, 0.5);
  EXPECT_DOUBLE_EQ(s.ratio_cs, 0.0);
  EXPECT_EQ(s.speakers, 2u);
}

TEST(CorpusStats, RatiosSumToOne) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> dur(0.1, 20.0);
  Corpus c;
  for (int i = 0; i < 300; ++i) {
    std::vector<Token> toks;
    int kind = static_cast<int>(rng() % 3);
    if (kind != 1) toks.push_back({"我", Lang::Man});
    if (kind != 0) toks.push_back({"eat", Lang::Eng});
    c.utterances.push_back(timed("u" + std::to_string(i), toks, dur(rng)));
  }
  auto s = corpus_stats(c);
  EXPECT_NEAR(s.ratio_man + s.ratio_eng + s.ratio_cs, 1.0, 1e-9);
}

TEST(CorpusStats, UnknownDurationListsIds) {
  Corpus c;
  Utterance u;
  u.id = "nodur";
  u.tokens = {{"我", Lang::Man}};
  c.utterances.push_back(u);
  try {
    corpus_stats(c);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("nodur"), std::string::npos);
  }
}

}  // namespace
}  // namespace csasr
