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

// csasr: command-line front end for the code-switched ASR pipeline.
//
// Every subcommand owns its --out directory (locked for the duration of the
// run), writes files atomically and mirrors each report as JSON. Errors are
// reported as one line on stderr: "csasr: error: <kind>: <message>".

#include <cstdio>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csasr/audio.hpp"
#include "csasr/config.hpp"
#include "csasr/corpus.hpp"
#include "csasr/decode.hpp"
#include "csasr/eval.hpp"
#include "csasr/lm.hpp"
#include "csasr/nnet/train.hpp"
#include "csasr/pipeline.hpp"
#include "csasr/rescore.hpp"
#include "csasr/synth.hpp"
#include "csasr/tokenize.hpp"

namespace {

namespace fs = std::filesystem;
using namespace csasr;
using nlohmann::json;

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  int jobs = 1;
};

// A subcommand flag that maps onto a config key.
struct KeyFlag {
  std::string key;
  std::string value;
  CLI::Option* opt = nullptr;
};

class Flags {
 public:
  void add(CLI::App* sc, const std::string& flag, const std::string& key) {
    auto& f = flags_.emplace_back();
    f.key = key;
    std::string help;
    for (const auto& k : config_schema())
      if (key == k.name) help = std::string(k.help) + " (config key " + key + ")";
    f.opt = sc->add_option(flag, f.value, help);
  }
  void apply(Config& cfg) const {
    for (const auto& f : flags_)
      if (f.opt->count() > 0) cfg.set(f.key, f.value);
  }

 private:
  std::deque<KeyFlag> flags_;
};

Config load_config(const Globals& g, const Flags& flags) {
  Config cfg;
  if (!g.config_path.empty()) {
    if (!fs::exists(g.config_path)) throw UsageError("config file not found: " + g.config_path);
    cfg.load_text(read_file(g.config_path), g.config_path);
  }
  cfg.apply_env();
  for (const auto& kv : g.sets) cfg.apply_assignment(kv);
  flags.apply(cfg);
  return cfg;
}

void require_dir(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " is required");
  if (!fs::is_directory(p)) throw DataError(what + " does not exist: " + p.string());
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw UsageError(what + " is required");
  if (!fs::is_regular_file(p)) throw DataError(what + " does not exist: " + p.string());
}

// Output directory held under an exclusive lock while the command runs.
class OutDir {
 public:
  explicit OutDir(const fs::path& dir) : dir_(check(dir)), lock_(dir_) {}
  const fs::path& path() const { return dir_; }
  fs::path operator/(const std::string& name) const { return dir_ / name; }
  void write(const std::string& name, const std::string& content) const { write_file_atomic(dir_ / name, content); }
  void write_json(const std::string& name, const json& j) const { write(name, j.dump(1) + "\n"); }

 private:
  static fs::path check(const fs::path& d) {
    if (d.empty()) throw UsageError("--out is required");
    return d;
  }
  fs::path dir_;
  DirLock lock_;
};

std::string rate_text(const std::optional<double>& r) { return r ? fmt_fixed(*r * 100.0, 2) : "N/A"; }

json rate_json(const std::optional<double>& r) { return r ? json(*r * 100.0) : json(nullptr); }

BpeModel load_bpe(const fs::path& dir) {
  require_file(dir / "bpe.model", "BPE model");
  return bpe_from_text(read_file(dir / "bpe.model"));
}

std::vector<lm::Sentence> sentences_of(const Corpus& c) {
  std::vector<lm::Sentence> out;
  for (const auto& u : c.utterances) {
    lm::Sentence s;
    for (const auto& t : u.tokens) s.push_back(t.surface);
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

BeamOptions beam_options(const Config& cfg) {
  BeamOptions o;
  o.beam = static_cast<int>(cfg.integer("beam"));
  o.alpha = cfg.real("ctc_weight");
  o.nbest = static_cast<int>(cfg.integer("nbest"));
  o.max_ratio = cfg.real("max_ratio");
  if (!(o.alpha >= 0.0 && o.alpha <= 1.0)) throw UsageError("ctc_weight must be in [0,1]");
  if (!(o.max_ratio > 0.0)) throw UsageError("max_ratio must be positive");
  return o;
}

// ---------------------------------------------------------------------------
// prep

void run_prep(const Config& cfg, const fs::path& data, const fs::path& out_dir) {
  require_dir(data, "--data");
  Corpus c = load_kaldi_dir(data);
  // Without segments an utterance spans its whole recording.
  for (auto& u : c.utterances) {
    if (u.duration()) continue;
    auto it = c.recordings.find(u.recording);
    if (it == c.recordings.end() || !fs::is_regular_file(it->second)) continue;
    auto w = read_wav(it->second);
    u.start_s = 0.0;
    u.end_s = static_cast<double>(w.samples.size()) / w.rate;
  }
  auto stats = corpus_stats(c);
  OutDir out(out_dir);
  write_kaldi_dir(c, out.path());
  out.write_json("stats.json", to_json(stats));
  std::string txt;
  txt += "speakers\t" + std::to_string(stats.speakers) + "\n";
  txt += "hours\t" + fmt_fixed(stats.hours, 4) + "\n";
  txt += "ratio_man\t" + fmt_fixed(stats.ratio_man, 4) + "\n";
  txt += "ratio_eng\t" + fmt_fixed(stats.ratio_eng, 4) + "\n";
  txt += "ratio_cs\t" + fmt_fixed(stats.ratio_cs, 4) + "\n";
  txt += "uncategorized\t" + std::to_string(stats.uncategorized) + "\n";
  out.write("stats.txt", txt);
  out.write("config.txt", cfg.dump());
}

// ---------------------------------------------------------------------------
// augment

void run_augment(const Config& cfg, const fs::path& data, const fs::path& out_dir, int jobs) {
  require_dir(data, "--data");
  const auto factors = cfg.reals("augment_factors");
  if (factors.empty()) throw UsageError("augment_factors is empty");
  std::set<std::string> suffixes;
  for (double f : factors) {
    speed_perturb(Waveform{{0.0, 0.0}, 16000.0}, f);  // range check
    if (!suffixes.insert(f == 1.0 ? "" : speed_suffix(f)).second) throw UsageError("duplicate speed factor " + fmt_double(f));
  }
  Corpus c = load_kaldi_dir(data);
  if (c.recordings.empty()) throw DataError("augment needs wav.scp in " + data.string());
  for (const auto& u : c.utterances)
    if (!c.recordings.count(u.recording)) throw DataError("utterance " + u.id + " has no recording in wav.scp");

  OutDir out(out_dir);
  fs::create_directories(out / "wav");
  const fs::path wav_dir = fs::absolute(out / "wav");
  std::vector<std::pair<std::string, std::string>> recs(c.recordings.begin(), c.recordings.end());
  Corpus result;
  result.has_segments = c.has_segments;
  result.has_utt2spk = c.has_utt2spk;
  for (double f : factors) {
    const std::string sfx = f == 1.0 ? "" : speed_suffix(f);
    if (f != 1.0) {
      std::vector<std::string> paths(recs.size());
      parallel_for(recs.size(), jobs, [&](std::size_t i) {
        auto w = speed_perturb(read_wav(recs[i].second), f);
        paths[i] = (wav_dir / (recs[i].first + sfx + ".wav")).string();
        write_file_atomic(paths[i], wav_to_bytes(w));
      });
      for (std::size_t i = 0; i < recs.size(); ++i) result.recordings[recs[i].first + sfx] = paths[i];
    } else {
      for (const auto& [rec, path] : recs) result.recordings[rec] = path;
    }
    for (const auto& u : c.utterances) {
      Utterance v = u;
      v.id = u.id + sfx;
      v.speaker = u.speaker + sfx;
      v.recording = u.recording + sfx;
      if (u.start_s) v.start_s = *u.start_s / f;
      if (u.end_s) v.end_s = *u.end_s / f;
      result.utterances.push_back(std::move(v));
    }
  }
  write_kaldi_dir(result, out.path());
  json summary = {{"factors", factors}, {"input_utterances", c.utterances.size()}, {"output_utterances", result.utterances.size()}};
  out.write_json("augment.json", summary);
  out.write("augment.txt", "factors\t" + cfg.str("augment_factors") + "\ninput_utterances\t" + std::to_string(c.utterances.size()) +
                               "\noutput_utterances\t" + std::to_string(result.utterances.size()) + "\n");
  out.write("config.txt", cfg.dump());
}

// ---------------------------------------------------------------------------
// feats

void run_feats(const Config& cfg, const fs::path& data, const fs::path& out_dir, int jobs) {
  require_dir(data, "--data");
  const auto& scope = cfg.str("cmvn");
  if (scope != "utt" && scope != "global" && scope != "none") throw UsageError("cmvn must be utt, global or none");
  Corpus c = load_kaldi_dir(data);
  std::map<std::string, std::size_t> rec_index;
  std::vector<std::string> rec_paths;
  for (const auto& u : c.utterances) {
    auto it = c.recordings.find(u.recording);
    if (it == c.recordings.end()) throw DataError("utterance " + u.id + " has no recording in wav.scp");
    if (rec_index.emplace(u.recording, rec_paths.size()).second) rec_paths.push_back(it->second);
  }
  std::vector<Waveform> waves(rec_paths.size());
  parallel_for(rec_paths.size(), jobs, [&](std::size_t i) { waves[i] = read_wav(rec_paths[i]); });

  std::vector<FeatureMatrix> feats(c.utterances.size());
  parallel_for(c.utterances.size(), jobs, [&](std::size_t i) {
    const auto& u = c.utterances[i];
    const auto& w = waves[rec_index.at(u.recording)];
    FbankConfig fc;
    fc.sample_rate = w.rate;
    feats[i] = u.start_s && u.end_s ? logmel_fbank(slice_seconds(w, *u.start_s, *u.end_s), fc) : logmel_fbank(w, fc);
  });
  std::vector<FeatureMatrix*> ptrs;
  for (auto& f : feats) ptrs.push_back(&f);
  if (scope == "global") cmvn_inplace(ptrs, CmvnScope::Global);
  if (scope == "utt") cmvn_inplace(ptrs, CmvnScope::PerUtterance);

  OutDir out(out_dir);
  std::vector<std::string> ids;
  for (const auto& u : c.utterances) ids.push_back(u.id);
  pipeline::write_feature_dir(out.path(), ids, feats);
  out.write("config.txt", cfg.dump());
}

// ---------------------------------------------------------------------------
// bpe-train / bpe-apply

void run_bpe_train(const Config& cfg, const fs::path& data, const fs::path& out_dir) {
  require_dir(data, "--data");
  const long target = cfg.integer("bpe_target_vocab");
  if (target < 1) throw UsageError("bpe_target_vocab must be positive");
  Corpus c = load_kaldi_dir(data);
  auto inv = base_inventory(c, cfg.real("bpe_coverage"));
  auto bpe = bpe_train(english_word_counts(c), static_cast<std::size_t>(target), inv);
  OutDir out(out_dir);
  out.write("bpe.model", bpe_to_text(bpe));
  out.write("units.txt", join(bpe.units(), "\n") + "\n");
  out.write("config.txt", cfg.dump());
}

void run_bpe_apply(const Config& cfg, const fs::path& bpe_dir, const fs::path& data, const fs::path& out_dir) {
  require_dir(data, "--data");
  auto bpe = load_bpe(bpe_dir);
  Corpus c = load_kaldi_dir(data);
  const auto gran = cfg.model_config().lid_granularity;
  BpeEncoder enc(bpe);
  std::string units_txt, lid_txt;
  for (const auto& u : c.utterances) {
    auto units = enc.encode(u.tokens);
    auto lid = derive_lid_targets(units, gran);
    if (lid.flagged) warn("utterance " + u.id + " starts with an unknown unit; LID tag defaulted to Mandarin");
    units_txt += u.id;
    for (const auto& s : units) units_txt += ' ' + s;
    units_txt += '\n';
    lid_txt += u.id;
    for (int t : lid.tags) lid_txt += t == kLidMan ? " M" : " E";
    lid_txt += '\n';
  }
  OutDir out(out_dir);
  out.write("units", units_txt);
  out.write("lid", lid_txt);
  out.write("config.txt", cfg.dump());
}

// ---------------------------------------------------------------------------
// train / sweep-lid

struct TrainInputs {
  BpeModel bpe;
  UnitVocab vocab;
  std::vector<nn::TrainExample> examples;
};

TrainInputs load_train_inputs(const Config& cfg, const fs::path& data, const fs::path& feats, const fs::path& bpe_dir) {
  require_dir(data, "--data");
  TrainInputs in;
  in.bpe = load_bpe(bpe_dir);
  in.vocab = UnitVocab(in.bpe);
  Corpus c = load_kaldi_dir(data);
  const fs::path fdir = feats.empty() ? data : feats;
  in.examples = pipeline::make_examples(c, pipeline::load_feature_dir(fdir), in.bpe, in.vocab, cfg.model_config().lid_granularity);
  if (in.examples.empty()) throw DataError("no utterances in " + data.string());
  return in;
}

json checkpoint_meta(const UnitVocab& vocab, const nn::EpochLog& e) {
  return {{"epoch", e.epoch}, {"loss", nn::to_json(e.mean)}, {"units", vocab.units()}, {"unk", vocab.unk()}};
}

struct TrainedModel {
  nn::AsrModel<double> model;
  nn::TrainResult result;
};

TrainedModel train_model(const Config& cfg, const TrainInputs& in, const std::function<void(const nn::AsrModel<double>&, const nn::EpochLog&)>& on_epoch) {
  const auto mc = cfg.model_config();
  const auto hyper = cfg.train_hyper();
  const auto input_dim = static_cast<int>(in.examples.front().feats.cols());
  TrainedModel t{nn::AsrModel<double>(mc, input_dim, static_cast<int>(in.vocab.size()), hyper.seed), {}};
  t.result = nn::train(t.model, in.examples, hyper, [&](const nn::EpochLog& e) {
    if (on_epoch) on_epoch(t.model, e);
  });
  return t;
}

void write_train_log(const OutDir& out, const nn::TrainResult& r) {
  json steps = json::array(), epochs = json::array();
  std::string txt = "step\tepoch\ttotal\tatt\tctc\tlid\n";
  for (const auto& s : r.steps) {
    steps.push_back({{"step", s.step}, {"epoch", s.epoch}, {"loss", nn::to_json(s.loss)}});
    txt += std::to_string(s.step) + '\t' + std::to_string(s.epoch) + '\t' + fmt_double(s.loss.total) + '\t' +
           fmt_double(s.loss.att) + '\t' + fmt_double(s.loss.ctc) + '\t' + fmt_double(s.loss.lid) + '\n';
  }
  for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"utterances", e.utterances}, {"mean", nn::to_json(e.mean)}});
  out.write_json("train_log.json", {{"steps", steps}, {"epochs", epochs}, {"skipped", r.skipped}});
  out.write("train_log.txt", txt);
}

void run_train(const Config& cfg, const fs::path& data, const fs::path& feats, const fs::path& bpe_dir, const fs::path& out_dir) {
  auto in = load_train_inputs(cfg, data, feats, bpe_dir);
  OutDir out(out_dir);
  out.write("config.txt", cfg.dump());
  out.write("bpe.model", bpe_to_text(in.bpe));
  auto t = train_model(cfg, in, [&](const nn::AsrModel<double>& m, const nn::EpochLog& e) {
    out.write("model.ckpt", nn::checkpoint_to_bytes(m, checkpoint_meta(in.vocab, e)));
  });
  if (t.result.epochs.empty()) {
    nn::EpochLog none;
    out.write("model.ckpt", nn::checkpoint_to_bytes(t.model, checkpoint_meta(in.vocab, none)));
  }
  write_train_log(out, t.result);
}

struct LoadedModel {
  nn::AsrModel<float> model;
  UnitVocab vocab;
};

LoadedModel load_model(const fs::path& dir) {
  require_file(dir / "model.ckpt", "model checkpoint");
  auto ck = nn::parse_checkpoint(read_file(dir / "model.ckpt"));
  if (!ck.meta.contains("units")) throw DataError("checkpoint has no unit list: " + (dir / "model.ckpt").string());
  UnitVocab vocab(ck.meta.at("units").get<std::vector<std::string>>(), ck.meta.value("unk", std::string(kDefaultUnk)));
  auto model = nn::model_from_checkpoint<float>(ck);
  if (static_cast<std::size_t>(model.vocab_size()) != vocab.size()) throw DataError("checkpoint unit list does not match its output layer");
  return {std::move(model), std::move(vocab)};
}

std::vector<nn::TrainExample> feature_examples(const fs::path& fdir, long input_dim) {
  std::vector<nn::TrainExample> out;
  for (const auto& [id, e] : pipeline::load_feature_dir(fdir)) {
    nn::TrainExample ex;
    ex.id = id;
    auto f = read_feature(e.path);
    if (f.dims() != input_dim)
      throw DataError("feature dimension " + std::to_string(f.dims()) + " of " + id + " does not match model input " + std::to_string(input_dim));
    ex.feats = f.data;
    out.push_back(std::move(ex));
  }
  return out;
}


// ---------------------------------------------------------------------------
// decode

void run_decode(const Config& cfg, const fs::path& model_dir, const fs::path& feats, const fs::path& out_dir, int jobs) {
  require_dir(feats, "--feats");
  auto m = load_model(model_dir);
  auto data = feature_examples(feats, m.model.input_dim());
  auto lists = pipeline::decode_examples(m.model, data, beam_options(cfg), jobs);
  OutDir out(out_dir);
  out.write("nbest.txt", pipeline::nbest_to_text(lists, m.vocab));
  out.write("text", pipeline::transcripts_to_text(pipeline::best_transcripts(lists, m.vocab)));
  out.write("config.txt", cfg.dump());
}

// ---------------------------------------------------------------------------
// sweep-lid

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const auto& part : split_char(text, ',')) {
    auto f = split_ws(part);
    if (f.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(f[0], &used));
      if (used != f[0].size() || f.size() != 1) throw std::invalid_argument(part);
    } catch (const std::logic_error&) {
      throw UsageError(what + " expects a comma-separated number list, got '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError(what + " is empty");
  return out;
}

void run_sweep_lid(Config cfg, const fs::path& data, const fs::path& feats, const fs::path& dev, const fs::path& dev_feats,
                   const fs::path& bpe_dir, const std::string& lid_mode, const std::string& list, const fs::path& out_dir,
                   int jobs) {
  require_dir(dev, "--dev");
  if (lid_mode == "off") throw UsageError("sweep-lid needs --lid-mode shared or indep");
  cfg.set("lid_mode", lid_mode);
  cfg.set("lambda2", "0");
  const auto lambdas = parse_list(list, "--lambda2-list");
  auto in = load_train_inputs(cfg, data, feats, bpe_dir);
  Corpus dc = load_kaldi_dir(dev);
  auto dev_ex = pipeline::make_examples(dc, pipeline::load_feature_dir(dev_feats.empty() ? dev : dev_feats), in.bpe, in.vocab,
                                        cfg.model_config().lid_granularity);
  const auto refs = pipeline::reference_transcripts(dc);
  auto opt = beam_options(cfg);
  opt.nbest = 1;

  OutDir out(out_dir);
  out.write("config.txt", cfg.dump());
  json rows = json::array();
  std::string txt = "lambda2\tTER_ALL\tTER_Man\tTER_En\n";
  for (double l2 : lambdas) {
    Config c = cfg;
    c.set("lambda2", fmt_double(l2));
    auto t = train_model(c, in, {});
    const std::string sub = "lambda2_" + fmt_double(l2);
    fs::create_directories(out / sub);
    nn::EpochLog last = t.result.epochs.empty() ? nn::EpochLog{} : t.result.epochs.back();
    write_file_atomic(out / sub / "model.ckpt", nn::checkpoint_to_bytes(t.model, checkpoint_meta(in.vocab, last)));
    auto lists = pipeline::decode_examples(pipeline::inference_model(t.model), dev_ex, opt, jobs);
    auto r = eval::score(refs, pipeline::best_transcripts(lists, in.vocab), 5, jobs);
    rows.push_back({{"lambda2", l2},
                    {"ter_all", rate_json(r.ter.all.rate())},
                    {"ter_man", rate_json(r.ter.man.rate())},
                    {"ter_eng", rate_json(r.ter.eng.rate())}});
    txt += fmt_double(l2) + '\t' + rate_text(r.ter.all.rate()) + '\t' + rate_text(r.ter.man.rate()) + '\t' +
           rate_text(r.ter.eng.rate()) + '\n';
  }
  out.write_json("sweep.json", {{"lid_mode", lid_mode}, {"rows", rows}});
  out.write("sweep.txt", txt);
}

// ---------------------------------------------------------------------------
// lm-train

std::vector<lm::Sentence> load_sentences(const fs::path& text) {
  require_file(text, "--text");
  Corpus c;
  for (const auto& [id, toks] : eval::parse_text(read_lines(text), text.string())) c.utterances.push_back({id, id, id, {}, {}, toks});
  auto s = sentences_of(c);
  if (s.empty()) throw DataError("no LM training sentences in " + text.string());
  return s;
}

void run_lm_train(const Config& cfg, const fs::path& text, const fs::path& out_dir) {
  auto sentences = load_sentences(text);
  const auto& type = cfg.str("lm_type");
  if (type == "kn") {
    const long order = cfg.integer("lm_order");
    auto model = lm::NgramLm::train(sentences, static_cast<int>(order));
    OutDir out(out_dir);
    out.write("lm.arpa", model.to_arpa());
    out.write_json("lm.json", {{"type", "kn"}, {"order", order}, {"sentences", sentences.size()}});
    out.write("config.txt", cfg.dump());
    return;
  }
  if (type != "nlm") throw UsageError("lm_type must be kn or nlm");
  const long F_cfg = cfg.integer("lm_shortlist");
  if (F_cfg < 0) throw UsageError("lm_shortlist must be >= 0");
  const std::size_t F = F_cfg > 0 ? static_cast<std::size_t>(F_cfg) : lm::shortlist_size_for_mass(sentences, 0.9);
  auto shortlist = lm::select_shortlist(sentences, F);
  std::set<std::string> in_list(shortlist.begin(), shortlist.end()), oos;
  for (const auto& s : sentences)
    for (const auto& w : s)
      if (!in_list.count(w)) oos.insert(w);

  lm::NlmHyper h;
  h.emb = static_cast<int>(cfg.integer("lm_emb_dim"));
  h.hidden = static_cast<int>(cfg.integer("lm_hidden"));
  h.epochs = static_cast<int>(cfg.integer("lm_epochs"));
  h.adam.lr = cfg.real("lr");
  h.adam.clip_norm = cfg.real("clip_norm");
  h.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  if (h.emb < 1 || h.hidden < 1 || h.epochs < 0) throw UsageError("lm_emb_dim and lm_hidden must be positive");
  const long window = cfg.integer("lm_window");
  if (window < 1) throw UsageError("lm_window must be positive");

  auto emb = lm::train_embeddings(sentences, h.emb, static_cast<int>(window));
  lm::ShortlistNlm nlm(shortlist, h.emb, h.hidden, h.seed);
  auto logs = nlm.train(sentences, h);

  OutDir out(out_dir);
  out.write("nlm.ckpt", nlm.to_checkpoint());
  out.write("embeddings.txt", emb.to_text());
  std::string oos_txt;
  for (const auto& w : oos) oos_txt += w + '\n';
  out.write("oos.txt", oos_txt);
  json epochs = json::array();
  std::string log_txt = "epoch\ttrain_ppl\n";
  for (const auto& l : logs) {
    epochs.push_back({{"epoch", l.epoch}, {"train_ppl", l.train_ppl}});
    log_txt += std::to_string(l.epoch) + '\t' + fmt_double(l.train_ppl) + '\n';
  }
  out.write_json("lm.json", {{"type", "nlm"}, {"shortlist", F}, {"oos", oos.size()}, {"epochs", epochs}});
  out.write("nlm_log.txt", log_txt);
  out.write("config.txt", cfg.dump());
}

// ---------------------------------------------------------------------------
// rescore

struct LoadedLm {
  std::unique_ptr<lm::ArpaLm> arpa;
  std::unique_ptr<lm::ShortlistNlm> nlm;
  lm::EmbeddingTable emb;
  std::unique_ptr<lm::ExpandedLm> expanded;

  const lm::LanguageModel& get() const {
    if (arpa) return *arpa;
    return *expanded;
  }
};

std::unique_ptr<LoadedLm> load_lm(const Config& cfg, const fs::path& dir) {
  require_dir(dir, "--lm");
  auto out = std::make_unique<LoadedLm>();
  if (fs::exists(dir / "lm.arpa")) {
    out->arpa = std::make_unique<lm::ArpaLm>(lm::ArpaLm::parse(read_file(dir / "lm.arpa")));
    return out;
  }
  require_file(dir / "nlm.ckpt", "LM (lm.arpa or nlm.ckpt)");
  require_file(dir / "embeddings.txt", "embedding table");
  require_file(dir / "oos.txt", "out-of-shortlist list");
  out->nlm = std::make_unique<lm::ShortlistNlm>(lm::ShortlistNlm::from_checkpoint(read_file(dir / "nlm.ckpt")));
  out->emb = lm::EmbeddingTable::from_text(read_file(dir / "embeddings.txt"));
  std::vector<std::string> oos;
  for (const auto& line : read_lines(dir / "oos.txt"))
    if (!split_ws(line).empty()) oos.push_back(split_ws(line)[0]);
  out->expanded = std::make_unique<lm::ExpandedLm>(*out->nlm, out->emb, oos, static_cast<int>(cfg.integer("lm_k")));
  return out;
}

std::vector<lm::NBestGroup> load_groups(const fs::path& nbest, const lm::LanguageModel& model, int jobs) {
  require_file(nbest, "N-best file");
  auto groups = lm::group_nbest(parse_nbest(read_lines(nbest)));
  lm::attach_lm_scores(groups, model, jobs);
  return groups;
}

void run_rescore(const Config& cfg, const fs::path& nbest, const fs::path& lm_dir, const fs::path& dev_nbest, const fs::path& dev_ref,
                 const fs::path& out_dir, int jobs) {
  if (dev_nbest.empty() != dev_ref.empty()) throw UsageError("--dev-nbest and --dev-ref go together");
  auto model = load_lm(cfg, lm_dir);
  auto groups = load_groups(nbest, model->get(), jobs);
  double gamma = cfg.real("gamma"), eta = cfg.real("eta");
  std::optional<lm::GridResult> grid;
  if (!dev_nbest.empty()) {
    require_file(dev_ref, "--dev-ref");
    auto dev_groups = load_groups(dev_nbest, model->get(), jobs);
    grid = lm::grid_search(dev_groups, eval::parse_text(read_lines(dev_ref), dev_ref.string()), cfg.reals("gamma_grid"),
                           cfg.reals("eta_grid"));
    gamma = grid->best.gamma;
    eta = grid->best.eta;
  }
  std::string nb;
  for (const auto& g : groups)
    for (const auto& r : lm::rescore_group(g, gamma, eta)) nb += nbest_row_to_line(r);
  OutDir out(out_dir);
  out.write("nbest.txt", nb);
  out.write("text", pipeline::transcripts_to_text(lm::top_hypotheses(groups, gamma, eta)));
  out.write_json("weights.json", {{"gamma", gamma}, {"eta", eta}, {"from_grid", grid.has_value()}});
  out.write("weights.txt", "gamma\t" + fmt_double(gamma) + "\neta\t" + fmt_double(eta) + "\n");
  if (grid) {
    out.write_json("grid.json", lm::to_json(*grid));
    std::string txt = "gamma\teta\tTER_ALL\n";
    for (const auto& p : grid->table) txt += fmt_double(p.gamma) + '\t' + fmt_double(p.eta) + '\t' + fmt_fixed(p.ter * 100.0, 2) + '\n';
    txt += "best\t" + fmt_double(grid->best.gamma) + '\t' + fmt_double(grid->best.eta) + '\t' + fmt_fixed(grid->best.ter * 100.0, 2) + '\n';
    out.write("grid.txt", txt);
  }
  out.write("config.txt", cfg.dump());
}

// ---------------------------------------------------------------------------
// score

void run_score(const fs::path& ref, const fs::path& hyp, const fs::path& out_dir, int top_k, int jobs) {
  require_file(ref, "--ref");
  require_file(hyp, "--hyp");
  if (top_k < 0) throw UsageError("--top-k must be >= 0");
  auto r = eval::score(eval::parse_text(read_lines(ref), ref.string()), eval::parse_text(read_lines(hyp), hyp.string()),
                       static_cast<std::size_t>(top_k), jobs);
  auto txt = eval::to_text(r);
  if (!out_dir.empty()) {
    OutDir out(out_dir);
    out.write("report.txt", txt);
    out.write_json("report.json", eval::to_json(r));
  }
  std::cout << txt;
}

// ---------------------------------------------------------------------------
// synth

void run_synth(const Config& cfg, int n_train, int n_dev, int n_test, const fs::path& out_dir) {
  synth::SynthConfig sc;
  sc.n_train = n_train;
  sc.n_dev = n_dev;
  sc.n_test = n_test;
  sc.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  if (n_train < 1 || n_dev < 0 || n_test < 0) throw UsageError("split sizes must be non-negative and n_train positive");
  auto d = synth::make_synth(sc);
  OutDir out(out_dir);
  pipeline::write_synth(d, out.path());
  out.write("symbols.txt", join(d.symbols, "\n") + "\n");
  out.write("config.txt", cfg.dump());
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

int fail(const char* kind, const std::string& msg, int code) {
  std::cerr << "csasr: error: " << kind << ": " << one_line(msg) << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Code-switched speech recognition pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  Flags flags;
  app.add_option("--config", g.config_path, "key=value config file");
  app.add_option("--set", g.sets, "override a config key, key=value (repeatable)")->allow_extra_args(false);
  app.add_option("--jobs", g.jobs, "worker threads for per-utterance work")->check(CLI::Range(1, 1024));

  std::vector<std::pair<CLI::App*, std::function<void(const Config&)>>> actions;
  std::string data, out, feats, bpe, model, dev, dev_feats, text, nbest, lm_dir, dev_nbest, dev_ref, ref, hyp;
  std::string sweep_mode = "shared", sweep_list = "0,0.1,0.2,0.3";
  int top_k = 5, n_train = 200, n_dev = 50, n_test = 50;

  auto* prep = app.add_subcommand("prep", "validate a Kaldi data directory and report corpus statistics");
  prep->add_option("--data", data, "Kaldi data directory")->required();
  prep->add_option("--out", out, "output directory")->required();
  actions.emplace_back(prep, [&](const Config& c) { run_prep(c, data, out); });

  auto* aug = app.add_subcommand("augment", "speed-perturb every recording");
  aug->add_option("--data", data, "Kaldi data directory with wav.scp")->required();
  aug->add_option("--out", out, "output data directory")->required();
  flags.add(aug, "--factors", "augment_factors");
  actions.emplace_back(aug, [&](const Config& c) { run_augment(c, data, out, g.jobs); });

  auto* fe = app.add_subcommand("feats", "log-mel filterbank features with CMVN");
  fe->add_option("--data", data, "Kaldi data directory with wav.scp")->required();
  fe->add_option("--out", out, "feature directory")->required();
  flags.add(fe, "--cmvn", "cmvn");
  actions.emplace_back(fe, [&](const Config& c) { run_feats(c, data, out, g.jobs); });

  auto* bt = app.add_subcommand("bpe-train", "build the mixed character/BPE unit inventory");
  bt->add_option("--data", data, "Kaldi data directory")->required();
  bt->add_option("--out", out, "output directory for bpe.model")->required();
  flags.add(bt, "--target-vocab", "bpe_target_vocab");
  flags.add(bt, "--coverage", "bpe_coverage");
  actions.emplace_back(bt, [&](const Config& c) { run_bpe_train(c, data, out); });

  auto* ba = app.add_subcommand("bpe-apply", "encode transcripts into units and LID tags");
  ba->add_option("--bpe", bpe, "directory holding bpe.model")->required();
  ba->add_option("--data", data, "Kaldi data directory")->required();
  ba->add_option("--out", out, "output directory")->required();
  flags.add(ba, "--lid-granularity", "lid_granularity");
  actions.emplace_back(ba, [&](const Config& c) { run_bpe_apply(c, bpe, data, out); });

  auto* tr = app.add_subcommand("train", "train the joint CTC/attention model");
  tr->add_option("--data", data, "Kaldi data directory")->required();
  tr->add_option("--feats", feats, "feature directory (default: --data)");
  tr->add_option("--bpe", bpe, "directory holding bpe.model")->required();
  tr->add_option("--out", out, "model directory")->required();
  for (auto [f, k] : std::vector<std::pair<const char*, const char*>>{{"--lambda1", "lambda1"},
                                                                      {"--lambda2", "lambda2"},
                                                                      {"--lid-mode", "lid_mode"},
                                                                      {"--epochs", "epochs"},
                                                                      {"--max-steps", "max_steps"},
                                                                      {"--batch-size", "batch_size"},
                                                                      {"--lr", "lr"},
                                                                      {"--seed", "seed"}})
    flags.add(tr, f, k);
  actions.emplace_back(tr, [&](const Config& c) { run_train(c, data, feats, bpe, out); });

  auto* sw = app.add_subcommand("sweep-lid", "dev TER as a function of the LID weight");
  sw->add_option("--data", data, "training data directory")->required();
  sw->add_option("--feats", feats, "training features (default: --data)");
  sw->add_option("--dev", dev, "development data directory")->required();
  sw->add_option("--dev-feats", dev_feats, "development features (default: --dev)");
  sw->add_option("--bpe", bpe, "directory holding bpe.model")->required();
  sw->add_option("--out", out, "output directory")->required();
  sw->add_option("--lid-mode", sweep_mode, "shared or indep")->capture_default_str();
  sw->add_option("--lambda2-list", sweep_list, "comma-separated LID weights")->capture_default_str();
  for (auto [f, k] : std::vector<std::pair<const char*, const char*>>{{"--epochs", "epochs"}, {"--max-steps", "max_steps"}, {"--seed", "seed"}})
    flags.add(sw, f, k);
  actions.emplace_back(sw, [&](const Config& c) {
    run_sweep_lid(c, data, feats, dev, dev_feats, bpe, sweep_mode, sweep_list, out, g.jobs);
  });

  auto* de = app.add_subcommand("decode", "joint CTC/attention beam search to N-best lists");
  de->add_option("--model", model, "model directory")->required();
  de->add_option("--feats", feats, "feature directory")->required();
  de->add_option("--out", out, "output directory")->required();
  flags.add(de, "--beam", "beam");
  flags.add(de, "--nbest", "nbest");
  flags.add(de, "--ctc-weight", "ctc_weight");
  actions.emplace_back(de, [&](const Config& c) { run_decode(c, model, feats, out, g.jobs); });

  auto* lt = app.add_subcommand("lm-train", "train a KN n-gram or a shortlist neural LM");
  lt->add_option("--text", text, "Kaldi text file")->required();
  lt->add_option("--out", out, "LM directory")->required();
  flags.add(lt, "--type", "lm_type");
  flags.add(lt, "--order", "lm_order");
  flags.add(lt, "--shortlist", "lm_shortlist");
  actions.emplace_back(lt, [&](const Config& c) { run_lm_train(c, text, out); });

  auto* rs = app.add_subcommand("rescore", "re-rank N-best lists with an external LM");
  rs->add_option("--nbest", nbest, "N-best file")->required();
  rs->add_option("--lm", lm_dir, "LM directory")->required();
  rs->add_option("--dev-nbest", dev_nbest, "development N-best file for the weight grid search");
  rs->add_option("--dev-ref", dev_ref, "development reference text");
  rs->add_option("--out", out, "output directory")->required();
  flags.add(rs, "--gamma", "gamma");
  flags.add(rs, "--eta", "eta");
  flags.add(rs, "--k", "lm_k");
  actions.emplace_back(rs, [&](const Config& c) { run_rescore(c, nbest, lm_dir, dev_nbest, dev_ref, out, g.jobs); });

  auto* sc = app.add_subcommand("score", "token error rates and substitution analysis");
  sc->add_option("--ref", ref, "reference text")->required();
  sc->add_option("--hyp", hyp, "hypothesis text")->required();
  sc->add_option("--out", out, "report directory (optional)");
  sc->add_option("--top-k", top_k, "cross-lingual confusions to list")->capture_default_str();
  actions.emplace_back(sc, [&](const Config&) { run_score(ref, hyp, out, top_k, g.jobs); });

  auto* sy = app.add_subcommand("synth", "write the synthetic code-switched corpus");
  sy->add_option("--out", out, "output directory")->required();
  sy->add_option("--n-train", n_train, "training utterances")->capture_default_str();
  sy->add_option("--n-dev", n_dev, "development utterances")->capture_default_str();
  sy->add_option("--n-test", n_test, "test utterances")->capture_default_str();
  flags.add(sy, "--seed", "seed");
  actions.emplace_back(sy, [&](const Config& c) { run_synth(c, n_train, n_dev, n_test, out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 2);
  }

  try {
    const Config cfg = load_config(g, flags);
    for (auto& [cmd, fn] : actions)
      if (cmd->parsed()) fn(cfg);
    return 0;
  } catch (const UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), 4);
  } catch (const DataError& e) {
    return fail("data", e.what(), 3);
  } catch (const fs::filesystem_error& e) {
    return fail("data", e.what(), 3);
  } catch (const nlohmann::json::exception& e) {
    return fail("data", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("data", e.what(), 3);
  }
}
