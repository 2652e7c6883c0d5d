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

// Toy code-switched corpus: each token owns a fixed feature template that is
// repeated for a few frames with Gaussian noise. Used for end-to-end checks
// without audio.

#include <cstdint>
#include <string>
#include <vector>

#include "csasr/audio.hpp"
#include "csasr/corpus.hpp"
#include "csasr/nnet/params.hpp"

namespace csasr::synth {

inline const std::vector<std::string>& mandarin_symbols() {
  static const std::vector<std::string> v{"啊", "诶", "呃", "的", "哦", "咯", "有", "我", "吃", "饭"};
  return v;
}

inline const std::vector<std::string>& english_symbols() {
  static const std::vector<std::string> v{"ah", "eh", "er", "the", "oh", "lor", "you", "ok", "can", "so"};
  return v;
}

struct SynthConfig {
  int n_train = 200;
  int n_dev = 50;
  int n_test = 50;
  int min_len = 3;
  int max_len = 8;
  int dims = 8;
  int frames_per_token = 4;
  double noise = 0.1;
  double switch_prob = 0.35;  // chance the next token changes language
  std::uint64_t seed = 1;
};

struct SynthSplit {
  Corpus corpus;
  std::vector<FeatureMatrix> feats;  // aligned with corpus.utterances
};

struct SynthData {
  SynthSplit train, dev, test;
  std::vector<std::string> symbols;  // Mandarin then English
  FeatMat templates;                 // one row per symbol
};

inline SynthData make_synth(const SynthConfig& cfg) {
  if (cfg.min_len < 1 || cfg.max_len < cfg.min_len || cfg.dims < 1 || cfg.frames_per_token < 1 || cfg.noise < 0)
    throw UsageError("invalid synthetic corpus configuration");
  SynthData d;
  d.symbols = mandarin_symbols();
  d.symbols.insert(d.symbols.end(), english_symbols().begin(), english_symbols().end());
  const auto n_sym = static_cast<Eigen::Index>(d.symbols.size());
  nn::SplitMix trng(cfg.seed ^ 0x7465'6d70'6c61'7465ULL);
  d.templates.resize(n_sym, cfg.dims);
  for (Eigen::Index i = 0; i < d.templates.size(); ++i) d.templates.data()[i] = trng.normal();

  nn::SplitMix rng(cfg.seed);
  const auto half = static_cast<std::uint64_t>(mandarin_symbols().size());
  auto make = [&](SynthSplit& split, const std::string& prefix, int n) {
    for (int u = 0; u < n; ++u) {
      int len = cfg.min_len + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_len - cfg.min_len + 1)));
      bool eng = rng.uniform() < 0.5;
      std::vector<std::size_t> ids;
      for (int k = 0; k < len; ++k) {
        if (k > 0 && rng.uniform() < cfg.switch_prob) eng = !eng;
        ids.push_back(static_cast<std::size_t>(rng.below(half) + (eng ? half : 0)));
      }
      Utterance utt;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%s%04d", prefix.c_str(), u);
      utt.id = buf;
      utt.speaker = utt.id;
      FeatureMatrix f;
      f.frame_shift_s = 0.01;
      f.frame_len_s = 0.025;
      f.data.resize(static_cast<Eigen::Index>(len * cfg.frames_per_token), cfg.dims);
      for (int k = 0; k < len; ++k) {
        const auto& sym = d.symbols[ids[static_cast<std::size_t>(k)]];
        utt.tokens.push_back(classify_token(sym)[0]);
        for (int t = 0; t < cfg.frames_per_token; ++t)
          for (int j = 0; j < cfg.dims; ++j)
            f.data(k * cfg.frames_per_token + t, j) = d.templates(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(k)]), j) +
                                                      cfg.noise * rng.normal();
      }
      split.corpus.utterances.push_back(std::move(utt));
      split.feats.push_back(std::move(f));
    }
    split.corpus.has_utt2spk = true;
  };
  make(d.train, "train", cfg.n_train);
  make(d.dev, "dev", cfg.n_dev);
  make(d.test, "test", cfg.n_test);
  return d;
}

}  // namespace csasr::synth
