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

// Kaldi data-directory ingestion, per-token language tagging and corpus
// duration statistics.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "csasr/common.hpp"
#include "json.hpp"

namespace csasr {

enum class Lang { Man, Eng, Other };

inline const char* lang_name(Lang l) {
  switch (l) {
    case Lang::Man: return "Man";
    case Lang::Eng: return "Eng";
    default: return "Other";
  }
}

struct Token {
  std::string surface;
  Lang lang = Lang::Other;

  friend bool operator==(const Token&, const Token&) = default;
};

inline bool is_cjk(char32_t cp) {
  return (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0x3400 && cp <= 0x4DBF);
}

inline bool is_latin(char32_t cp) {
  return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || cp == '\'';
}

// Bracketed markup such as <unk> or [noise] stays a single Other token.
inline bool is_markup(std::string_view s) {
  if (s.size() < 2) return false;
  return (s.front() == '<' && s.back() == '>') || (s.front() == '[' && s.back() == ']');
}

// Splits a whitespace-free surface at script boundaries. CJK characters become
// one Man token each; runs of ASCII letters/apostrophes become one lowercased
// Eng token; every other run becomes one Other token.
inline std::vector<Token> classify_token(std::string_view surface) {
  std::vector<Token> out;
  if (surface.empty()) return out;
  if (is_markup(surface)) {
    out.push_back({std::string(surface), Lang::Other});
    return out;
  }
  auto cps = utf8::decode(surface);
  std::size_t i = 0;
  while (i < cps.size()) {
    char32_t c = cps[i];
    if (is_cjk(c)) {
      out.push_back({utf8::encode(c), Lang::Man});
      ++i;
    } else if (is_latin(c)) {
      std::string word;
      while (i < cps.size() && is_latin(cps[i])) {
        char32_t l = cps[i];
        if (l >= 'A' && l <= 'Z') l = l - 'A' + 'a';
        word += static_cast<char>(l);
        ++i;
      }
      out.push_back({std::move(word), Lang::Eng});
    } else {
      std::vector<char32_t> run;
      while (i < cps.size() && !is_cjk(cps[i]) && !is_latin(cps[i])) run.push_back(cps[i++]);
      out.push_back({utf8::encode(run), Lang::Other});
    }
  }
  return out;
}

inline std::vector<Token> tokenize_transcript(std::string_view text) {
  std::vector<Token> out;
  for (const auto& field : split_ws(text)) {
    auto toks = classify_token(field);
    out.insert(out.end(), toks.begin(), toks.end());
  }
  return out;
}

inline std::string join_surfaces(const std::vector<Token>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i].surface;
  }
  return out;
}

struct Utterance {
  std::string id;
  std::string speaker;
  std::string recording;
  std::optional<double> start_s;
  std::optional<double> end_s;
  std::vector<Token> tokens;

  std::optional<double> duration() const {
    if (start_s && end_s) return *end_s - *start_s;
    return std::nullopt;
  }
};

struct Corpus {
  std::vector<Utterance> utterances;
  std::map<std::string, std::string> recordings;  // wav.scp: rec id -> path
  bool has_segments = false;
  bool has_utt2spk = false;

  const Utterance* find(std::string_view id) const {
    for (const auto& u : utterances)
      if (u.id == id) return &u;
    return nullptr;
  }
};

enum class Category { Man, En, CS };

inline const char* category_name(Category c) {
  switch (c) {
    case Category::Man: return "Man";
    case Category::En: return "En";
    default: return "CS";
  }
}

inline Category utterance_category(const Utterance& u) {
  bool man = false, eng = false;
  for (const auto& t : u.tokens) {
    if (t.lang == Lang::Man) man = true;
    if (t.lang == Lang::Eng) eng = true;
  }
  if (!man && !eng) throw DataError("uncategorizable utterance " + u.id);
  if (man && eng) return Category::CS;
  return man ? Category::Man : Category::En;
}

inline double parse_seconds(const std::string& s, const std::string& context) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("bad time value '" + s + "' in " + context);
  }
}

// Reads `text` plus optional `wav.scp`, `segments` and `utt2spk`.
inline Corpus load_kaldi_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "text")) throw DataError("missing text file in " + dir.string());
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& line : read_lines(dir / "text")) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto start = line.find_first_not_of(" \t");
    auto end = line.find_first_of(" \t", start);
    Utterance u;
    u.id = line.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (end != std::string::npos) u.tokens = tokenize_transcript(std::string_view(line).substr(end));
    if (index.count(u.id)) throw DataError("duplicate utterance id " + u.id);
    if (u.tokens.empty()) warn("utterance " + u.id + " has an empty transcript");
    u.speaker = u.id;
    u.recording = u.id;
    index[u.id] = corpus.utterances.size();
    corpus.utterances.push_back(std::move(u));
  }

  if (fs::exists(dir / "wav.scp")) {
    for (const auto& line : read_lines(dir / "wav.scp")) {
      auto f = split_ws(line);
      if (f.empty()) continue;
      if (f.size() < 2) throw DataError("wav.scp line without path: " + line);
      std::string rest = line.substr(line.find(f[1], f[0].size()));
      corpus.recordings[f[0]] = rest;
    }
  }

  if (fs::exists(dir / "segments")) {
    corpus.has_segments = true;
    for (const auto& line : read_lines(dir / "segments")) {
      auto f = split_ws(line);
      if (f.empty()) continue;
      if (f.size() != 4) throw DataError("malformed segments line: " + line);
      if (!corpus.recordings.count(f[1]))
        throw DataError("segments references unknown recording " + f[1] + " (utterance " + f[0] + ")");
      auto it = index.find(f[0]);
      if (it == index.end()) {
        warn("segments entry for utterance " + f[0] + " not in text; ignored");
        continue;
      }
      auto& u = corpus.utterances[it->second];
      u.recording = f[1];
      u.start_s = parse_seconds(f[2], "segments");
      u.end_s = parse_seconds(f[3], "segments");
      if (!(*u.end_s > *u.start_s)) throw DataError("segment end not after start for " + u.id);
    }
  }

  if (fs::exists(dir / "utt2spk")) {
    corpus.has_utt2spk = true;
    for (const auto& line : read_lines(dir / "utt2spk")) {
      auto f = split_ws(line);
      if (f.empty()) continue;
      if (f.size() != 2) throw DataError("malformed utt2spk line: " + line);
      auto it = index.find(f[0]);
      if (it != index.end()) corpus.utterances[it->second].speaker = f[1];
    }
  }
  return corpus;
}

// Writes the directory back in Kaldi layout. Only files with content are
// produced: segments needs known durations, wav.scp needs recordings.
inline void write_kaldi_dir(const Corpus& c, const std::filesystem::path& dir) {
  std::string text, utt2spk, segments, wavscp;
  bool all_timed = !c.utterances.empty();
  for (const auto& u : c.utterances) {
    text += u.id;
    if (!u.tokens.empty()) text += ' ' + join_surfaces(u.tokens);
    text += '\n';
    utt2spk += u.id + ' ' + u.speaker + '\n';
    if (!u.start_s || !u.end_s) all_timed = false;
  }
  write_file_atomic(dir / "text", text);
  write_file_atomic(dir / "utt2spk", utt2spk);
  if (!c.recordings.empty()) {
    for (const auto& [rec, path] : c.recordings) wavscp += rec + ' ' + path + '\n';
    write_file_atomic(dir / "wav.scp", wavscp);
    if (all_timed && c.has_segments) {
      for (const auto& u : c.utterances)
        segments += u.id + ' ' + u.recording + ' ' + fmt_double(*u.start_s, 10) + ' ' +
                    fmt_double(*u.end_s, 10) + '\n';
      write_file_atomic(dir / "segments", segments);
    }
  }
}

struct CorpusStats {
  std::size_t speakers = 0;
  double hours = 0.0;
  double ratio_man = 0.0;
  double ratio_eng = 0.0;
  double ratio_cs = 0.0;
  std::size_t uncategorized = 0;
};

inline nlohmann::json to_json(const CorpusStats& s) {
  return {{"speakers", s.speakers},   {"hours", s.hours},         {"ratio_man", s.ratio_man},
          {"ratio_eng", s.ratio_eng}, {"ratio_cs", s.ratio_cs}, {"uncategorized", s.uncategorized}};
}

// Duration-weighted category ratios. Utterances with no Man/Eng token count
// toward hours but not toward the ratios.
inline CorpusStats corpus_stats(const Corpus& c) {
  std::vector<std::string> unknown;
  for (const auto& u : c.utterances)
    if (!u.duration()) unknown.push_back(u.id);
  if (!unknown.empty()) {
    std::string ids = join(std::vector<std::string>(unknown.begin(), unknown.begin() + std::min<std::size_t>(unknown.size(), 20)), ",");
    if (unknown.size() > 20) ids += ",...";
    throw DataError("unknown duration for " + std::to_string(unknown.size()) + " utterances: " + ids);
  }
  CorpusStats s;
  std::set<std::string> speakers;
  double total = 0, man = 0, eng = 0, cs = 0;
  for (const auto& u : c.utterances) {
    speakers.insert(u.speaker);
    double d = *u.duration();
    total += d;
    bool man_tok = false, eng_tok = false;
    for (const auto& t : u.tokens) {
      man_tok |= t.lang == Lang::Man;
      eng_tok |= t.lang == Lang::Eng;
    }
    if (!man_tok && !eng_tok) {
      ++s.uncategorized;
      continue;
    }
    switch (utterance_category(u)) {
      case Category::Man: man += d; break;
      case Category::En: eng += d; break;
      case Category::CS: cs += d; break;
    }
  }
  s.speakers = speakers.size();
  s.hours = total / 3600.0;
  double categorized = man + eng + cs;
  if (categorized > 0) {
    s.ratio_man = man / categorized;
    s.ratio_eng = eng / categorized;
    s.ratio_cs = cs / categorized;
  }
  return s;
}

}  // namespace csasr
