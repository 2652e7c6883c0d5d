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

// Flat key=value pipeline configuration. Precedence, lowest first: built-in
// defaults, config file, CSASR_SEED (seed only), --set, subcommand flags.

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "csasr/common.hpp"
#include "csasr/nnet/model.hpp"
#include "csasr/nnet/train.hpp"

namespace csasr {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys{
      // model
      {"enc_layers", "2", "BiLSTM encoder layers"},
      {"enc_units", "64", "encoder units per direction"},
      {"dec_units", "64", "decoder LSTM units"},
      {"conv_channels", "16", "front-end conv channels"},
      {"subsample", "2", "time subsampling (2 or 4)"},
      {"att_units", "64", "attention projection size"},
      {"att_conv_channels", "8", "location filters"},
      {"att_conv_width", "11", "location filter width"},
      {"lambda1", "0.8", "attention weight in the ASR loss"},
      {"lambda2", "0", "LID loss weight"},
      {"lid_mode", "off", "off | shared | indep"},
      {"lid_granularity", "per_token", "per_token | collapsed"},
      // training
      {"epochs", "30", "training epochs"},
      {"batch_size", "8", "utterances per update"},
      {"lr", "0.001", "Adam learning rate"},
      {"clip_norm", "5", "global gradient-norm clip"},
      {"max_steps", "-1", "stop after this many updates (-1: no limit)"},
      {"seed", "1", "random seed"},
      // data
      {"augment_factors", "0.9,1.0,1.1", "speed perturbation factors"},
      {"cmvn", "utt", "utt | global | none"},
      {"bpe_target_vocab", "3000", "BPE vocabulary budget"},
      {"bpe_coverage", "1.0", "Mandarin character coverage of the base inventory"},
      // decoding
      {"beam", "10", "beam width"},
      {"ctc_weight", "0.2", "alpha: CTC weight in joint decoding"},
      {"nbest", "30", "hypotheses kept per utterance"},
      {"max_ratio", "1.0", "max output length / encoder frames"},
      // language models
      {"lm_type", "kn", "kn | nlm"},
      {"lm_order", "5", "n-gram order"},
      {"lm_shortlist", "0", "NLM shortlist size (0: top 90% token mass)"},
      {"lm_k", "5", "neighbours per expanded word"},
      {"lm_emb_dim", "32", "embedding and NLM input size"},
      {"lm_hidden", "64", "NLM hidden units"},
      {"lm_epochs", "8", "NLM training epochs"},
      {"lm_window", "2", "co-occurrence window"},
      {"gamma", "0", "rescoring LM weight"},
      {"eta", "0", "rescoring length bonus"},
      {"gamma_grid", "0,0.05,0.1,0.2,0.3,0.5", "gamma values for grid search"},
      {"eta_grid", "-0.5,0,0.5,1", "eta values for grid search"},
      // paths (optional; flags take precedence)
      {"corpus_dir", "", "Kaldi data directory"},
      {"feat_dir", "", "feature directory"},
      {"model_dir", "", "model directory"},
  };
  return keys;
}

class Config {
 public:
  Config() {
    for (const auto& k : config_schema()) values_[k.name] = k.default_value;
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_schema())
      if (key == k.name) return true;
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw UsageError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  // "key=value" form used by --set.
  void apply_assignment(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("expected key=value, got '" + kv + "'");
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }

  void load_text(const std::string& text, const std::string& origin) {
    std::size_t lineno = 0;
    for (const auto& raw : split_char(text, '\n')) {
      ++lineno;
      std::string line = raw.substr(0, raw.find('#'));
      if (trim(line).empty()) continue;
      if (line.find('=') == std::string::npos)
        throw UsageError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      try {
        apply_assignment(line);
      } catch (const UsageError& e) {
        throw UsageError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void apply_env() {
    if (const char* s = std::getenv("CSASR_SEED"); s && *s) set("seed", s);
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + key + "' expects a number, got '" + s + "'");
  }

  long integer(const std::string& key) const {
    const auto& s = str(key);
    try {
      std::size_t used = 0;
      long v = std::stol(s, &used);
      if (used == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + key + "' expects an integer, got '" + s + "'");
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split_char(str(key), ',')) {
      auto t = trim(part);
      if (t.empty()) continue;
      try {
        std::size_t used = 0;
        out.push_back(std::stod(t, &used));
        if (used != t.size()) throw std::invalid_argument(t);
      } catch (const std::logic_error&) {
        throw UsageError("config key '" + key + "' expects a comma-separated number list, got '" + str(key) + "'");
      }
    }
    return out;
  }

  // Sorted key=value lines; reloading the dump reproduces the config.
  std::string dump() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  nn::ModelConfig model_config() const {
    nn::ModelConfig c;
    c.enc_layers = static_cast<int>(integer("enc_layers"));
    c.enc_units = static_cast<int>(integer("enc_units"));
    c.dec_units = static_cast<int>(integer("dec_units"));
    c.conv_channels = static_cast<int>(integer("conv_channels"));
    c.subsample = static_cast<int>(integer("subsample"));
    c.att_units = static_cast<int>(integer("att_units"));
    c.att_conv_channels = static_cast<int>(integer("att_conv_channels"));
    c.att_conv_width = static_cast<int>(integer("att_conv_width"));
    c.lambda1 = real("lambda1");
    c.lambda2 = real("lambda2");
    c.lid_mode = parse_lid_mode(str("lid_mode"));
    const auto& g = str("lid_granularity");
    if (g == "per_token") c.lid_granularity = LidGranularity::PerToken;
    else if (g == "collapsed") c.lid_granularity = LidGranularity::Collapsed;
    else throw UsageError("lid_granularity must be per_token or collapsed");
    c.validate();
    return c;
  }

  nn::TrainHyper train_hyper() const {
    nn::TrainHyper h;
    h.epochs = static_cast<int>(integer("epochs"));
    h.batch_size = static_cast<int>(integer("batch_size"));
    h.adam.lr = real("lr");
    h.adam.clip_norm = real("clip_norm");
    h.max_steps = integer("max_steps");
    h.seed = static_cast<std::uint64_t>(integer("seed"));
    if (h.epochs < 1 || h.batch_size < 1) throw UsageError("epochs and batch_size must be positive");
    if (!(h.adam.lr >= 0.0)) throw UsageError("lr must be non-negative");
    return h;
  }

  static nn::LidMode parse_lid_mode(const std::string& s) {
    if (s == "off") return nn::LidMode::Off;
    if (s == "shared") return nn::LidMode::Shared;
    if (s == "indep") return nn::LidMode::Indep;
    throw UsageError("lid_mode must be off, shared or indep");
  }

 private:
  static std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace csasr
