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

// Glue between on-disk stages: feature directories, training examples,
// batch decoding and transcript files.

#include <filesystem>
#include <string>
#include <vector>

#include "csasr/audio.hpp"
#include "csasr/corpus.hpp"
#include "csasr/decode.hpp"
#include "csasr/eval.hpp"
#include "csasr/nnet/train.hpp"
#include "csasr/synth.hpp"
#include "csasr/tokenize.hpp"

namespace csasr::pipeline {

namespace fs = std::filesystem;

inline const char* kFeatManifest = "feats.json";

// Writes DIR/feats/<id>.feat and DIR/feats.json with relative paths.
inline void write_feature_dir(const fs::path& dir, const std::vector<std::string>& ids,
                              const std::vector<FeatureMatrix>& feats) {
  fs::create_directories(dir / "feats");
  FeatureManifest m;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::string rel = "feats/" + ids[i] + ".feat";
    write_feature(dir / rel, feats[i]);
    m[ids[i]] = {rel, static_cast<long>(feats[i].frames()), static_cast<long>(feats[i].dims())};
  }
  write_file_atomic(dir / kFeatManifest, manifest_to_json(m).dump(1) + "\n");
}

inline FeatureManifest load_feature_dir(const fs::path& dir) {
  if (!fs::exists(dir / kFeatManifest)) throw DataError("no " + std::string(kFeatManifest) + " in " + dir.string());
  return load_manifest(dir / kFeatManifest);
}

inline std::vector<nn::TrainExample> make_examples(const Corpus& c, const FeatureManifest& feats, const BpeModel& bpe,
                                                   const UnitVocab& vocab, LidGranularity granularity) {
  BpeEncoder enc(bpe);
  std::vector<nn::TrainExample> out;
  long dims = -1;
  for (const auto& u : c.utterances) {
    auto it = feats.find(u.id);
    if (it == feats.end()) throw DataError("no features for utterance " + u.id);
    nn::TrainExample ex;
    ex.id = u.id;
    auto f = read_feature(it->second.path);
    if (dims >= 0 && f.dims() != dims) throw DataError("feature dimension mismatch at " + u.id);
    dims = f.dims();
    ex.feats = f.data;
    auto units = enc.encode(u.tokens);
    ex.units = vocab.ids(units);
    ex.lid = derive_lid_targets(units, granularity);
    out.push_back(std::move(ex));
  }
  return out;
}

// Round-trips through checkpoint bytes so decoding sees exactly the f32
// weights a saved model would have.
inline nn::AsrModel<float> inference_model(const nn::AsrModel<double>& m) {
  return nn::model_from_checkpoint<float>(nn::parse_checkpoint(nn::checkpoint_to_bytes(m, nlohmann::json::object())));
}

inline std::vector<NBestList> decode_examples(const nn::AsrModel<float>& model, const std::vector<nn::TrainExample>& data,
                                              const BeamOptions& opt, int jobs = 1) {
  std::vector<NBestList> out(data.size());
  parallel_for(data.size(), jobs, [&](std::size_t i) {
    nn::Mat<float> x = data[i].feats.cast<float>();
    out[i] = beam_search(model, x, opt);
    out[i].utt_id = data[i].id;
  });
  for (const auto& l : out)
    if (l.unfinished) warn("no hypothesis of " + l.utt_id + " reached eos within the length bound");
  return out;
}

inline eval::Transcripts reference_transcripts(const Corpus& c) {
  eval::Transcripts t;
  for (const auto& u : c.utterances) t[u.id] = u.tokens;
  return t;
}

inline eval::Transcripts best_transcripts(const std::vector<NBestList>& lists, const UnitVocab& vocab) {
  eval::Transcripts t;
  for (const auto& l : lists) t[l.utt_id] = l.hyps.empty() ? std::vector<Token>{} : decode(vocab.strings(l.hyps[0].units));
  return t;
}

inline std::string transcripts_to_text(const eval::Transcripts& t) {
  std::string out;
  for (const auto& [id, toks] : t) {
    out += id;
    if (!toks.empty()) out += ' ' + join_surfaces(toks);
    out += '\n';
  }
  return out;
}

inline std::string nbest_to_text(const std::vector<NBestList>& lists, const UnitVocab& vocab) {
  std::string out;
  for (const auto& l : lists)
    for (const auto& r : nbest_rows(l, vocab.units())) out += nbest_row_to_line(r);
  return out;
}

// DIR/{train,dev,test}: Kaldi text + utt2spk and a feature directory.
inline void write_synth(const synth::SynthData& d, const fs::path& dir) {
  for (const auto& [name, split] : {std::pair<const char*, const synth::SynthSplit*>{"train", &d.train},
                                    {"dev", &d.dev},
                                    {"test", &d.test}}) {
    fs::create_directories(dir / name);
    write_kaldi_dir(split->corpus, dir / name);
    std::vector<std::string> ids;
    for (const auto& u : split->corpus.utterances) ids.push_back(u.id);
    write_feature_dir(dir / name, ids, split->feats);
  }
}

}  // namespace csasr::pipeline
