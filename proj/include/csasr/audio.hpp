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

// Speed perturbation, log-mel filterbank features, CMVN, and the binary
// feature archive.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csasr/common.hpp"
#include "json.hpp"

namespace csasr {

struct Waveform {
  std::vector<double> samples;
  double rate = 16000.0;
};

using FeatMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureMatrix {
  FeatMat data;
  double frame_shift_s = 0.010;
  double frame_len_s = 0.025;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dims() const { return data.cols(); }
};

inline std::size_t perturbed_length(std::size_t n, double factor) {
  if (n == 0) return 0;
  return static_cast<std::size_t>(std::floor(static_cast<double>(n - 1) / factor)) + 1;
}

// Linear-interpolation resampling by `factor`, relabelled at the original
// rate; tempo and pitch both scale.
inline Waveform speed_perturb(const Waveform& w, double factor) {
  if (!(factor > 0.5 && factor < 2.0)) throw UsageError("speed factor must be in (0.5, 2.0), got " + fmt_double(factor));
  if (factor == 1.0) return w;
  Waveform out;
  out.rate = w.rate;
  const std::size_t n = w.samples.size();
  const std::size_t m = perturbed_length(n, factor);
  out.samples.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    double pos = static_cast<double>(j) * factor;
    auto i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 >= n - 1) {
      out.samples[j] = w.samples[n - 1];
      continue;
    }
    double frac = pos - static_cast<double>(i0);
    out.samples[j] = frac == 0.0 ? w.samples[i0] : w.samples[i0] * (1.0 - frac) + w.samples[i0 + 1] * frac;
  }
  return out;
}

inline std::string speed_suffix(double factor) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-sp%g", factor);
  return buf;
}

struct FbankConfig {
  double sample_rate = 16000.0;
  double frame_len_s = 0.025;
  double frame_shift_s = 0.010;
  double preemph = 0.97;
  int fft_size = 512;
  int num_bins = 80;
  double low_hz = 20.0;
  double high_hz = 7600.0;
  double log_floor = 1e-10;
};

namespace detail {

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 1127.0 * std::log(1.0 + hz / 700.0); }

}  // namespace detail

// Triangular filters on the mel scale, one row per bin over fft_size/2+1 bins.
inline FeatMat mel_filterbank(const FbankConfig& cfg) {
  const int nfreq = cfg.fft_size / 2 + 1;
  FeatMat fb = FeatMat::Zero(cfg.num_bins, nfreq);
  const double mlo = detail::hz_to_mel(cfg.low_hz), mhi = detail::hz_to_mel(cfg.high_hz);
  const double delta = (mhi - mlo) / (cfg.num_bins + 1);
  for (int b = 0; b < cfg.num_bins; ++b) {
    double left = mlo + b * delta, center = left + delta, right = center + delta;
    for (int k = 0; k < nfreq; ++k) {
      double mel = detail::hz_to_mel(cfg.sample_rate * k / cfg.fft_size);
      if (mel > left && mel < right)
        fb(b, k) = mel <= center ? (mel - left) / (center - left) : (right - mel) / (right - center);
    }
  }
  return fb;
}

inline FeatureMatrix logmel_fbank(const Waveform& w, const FbankConfig& cfg = {}) {
  if (w.rate != cfg.sample_rate)
    throw DataError("sample rate " + fmt_double(w.rate) + " does not match config " + fmt_double(cfg.sample_rate));
  const auto win = static_cast<std::size_t>(std::lround(cfg.frame_len_s * cfg.sample_rate));
  const auto hop = static_cast<std::size_t>(std::lround(cfg.frame_shift_s * cfg.sample_rate));
  const std::size_t n = w.samples.size();
  if (n < win) throw DataError("waveform shorter than one analysis window");
  const std::size_t frames = 1 + (n - win) / hop;

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(win - 1));
  const FeatMat fb = mel_filterbank(cfg);
  const int nfreq = cfg.fft_size / 2 + 1;

  FeatureMatrix out;
  out.frame_len_s = cfg.frame_len_s;
  out.frame_shift_s = cfg.frame_shift_s;
  out.data.resize(static_cast<Eigen::Index>(frames), cfg.num_bins);
  std::vector<double> frame(win);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
  Eigen::VectorXd power(nfreq);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* src = w.samples.data() + f * hop;
    for (std::size_t i = win; i-- > 0;) frame[i] = src[i] - cfg.preemph * src[i == 0 ? 0 : i - 1];
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0));
    for (std::size_t i = 0; i < win && i < buf.size(); ++i) buf[i] = frame[i] * window[i];
    detail::fft(buf);
    for (int k = 0; k < nfreq; ++k) power(k) = std::norm(buf[static_cast<std::size_t>(k)]);
    Eigen::VectorXd energies = fb * power;
    for (int b = 0; b < cfg.num_bins; ++b)
      out.data(static_cast<Eigen::Index>(f), b) = std::log(std::max(energies(b), cfg.log_floor));
  }
  return out;
}

enum class CmvnScope { PerUtterance, Global };

// Normalizes each dimension to zero mean and unit (population) variance,
// with statistics pooled over `feats` when the scope is global.
inline void cmvn_inplace(std::vector<FeatureMatrix*> feats, CmvnScope scope) {
  if (feats.empty()) return;
  auto normalize = [](const std::vector<FeatureMatrix*>& group) {
    const Eigen::Index dims = group.front()->dims();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dims), sq = Eigen::VectorXd::Zero(dims);
    double count = 0;
    for (auto* f : group) {
      if (f->dims() != dims) throw DataError("cmvn: dimension mismatch");
      sum += f->data.colwise().sum().transpose();
      count += static_cast<double>(f->frames());
    }
    if (count < 2) throw DataError("cmvn needs at least two frames");
    Eigen::VectorXd mean = sum / count;
    for (auto* f : group) sq += (f->data.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
    Eigen::VectorXd var = sq / count;
    for (Eigen::Index d = 0; d < dims; ++d) {
      bool flat = !(var(d) > 1e-20);
      if (flat) warn("cmvn: zero-variance dimension " + std::to_string(d) + " only mean-centered");
      double scale = flat ? 1.0 : 1.0 / std::sqrt(var(d));
      for (auto* f : group) f->data.col(d) = (f->data.col(d).array() - mean(d)) * scale;
    }
  };
  if (scope == CmvnScope::Global) {
    normalize(feats);
  } else {
    for (auto* f : feats) normalize({f});
  }
}

inline FeatureMatrix cmvn(FeatureMatrix f, CmvnScope scope = CmvnScope::PerUtterance) {
  cmvn_inplace({&f}, scope);
  return f;
}

// Feature archive: ASCII header line then row-major little-endian f32.
inline std::string feature_to_bytes(const FeatureMatrix& f) {
  std::string out = "FEAT1 " + std::to_string(f.frames()) + ' ' + std::to_string(f.dims()) + '\n';
  std::size_t off = out.size();
  out.resize(off + static_cast<std::size_t>(f.data.size()) * 4);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) {
    float v = static_cast<float>(f.data.data()[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int b = 0; b < 4; ++b) out[off + static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

inline FeatureMatrix feature_from_bytes(const std::string& bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError("feature file without header");
  auto head = split_ws(bytes.substr(0, nl));
  if (head.size() != 3 || head[0] != "FEAT1") throw DataError("bad feature header");
  Eigen::Index rows = std::stol(head[1]), cols = std::stol(head[2]);
  if (bytes.size() != nl + 1 + static_cast<std::size_t>(rows * cols) * 4) throw DataError("feature payload size mismatch");
  FeatureMatrix f;
  f.data.resize(rows, cols);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[i * 4 + b]) << (8 * b);
    float v;
    std::memcpy(&v, &bits, 4);
    f.data.data()[i] = v;
  }
  return f;
}

inline void write_feature(const std::filesystem::path& path, const FeatureMatrix& f) {
  write_file_atomic(path, feature_to_bytes(f));
}

inline FeatureMatrix read_feature(const std::filesystem::path& path) { return feature_from_bytes(read_file(path)); }

struct FeatureEntry {
  std::string path;
  long frames = 0;
  long dims = 0;
};

using FeatureManifest = std::map<std::string, FeatureEntry>;

inline nlohmann::json manifest_to_json(const FeatureManifest& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [id, e] : m) j[id] = {{"path", e.path}, {"frames", e.frames}, {"dims", e.dims}};
  return j;
}

inline FeatureManifest manifest_from_json(const nlohmann::json& j) {
  FeatureManifest m;
  for (const auto& [id, e] : j.items()) m[id] = {e.at("path").get<std::string>(), e.at("frames").get<long>(), e.at("dims").get<long>()};
  return m;
}

// Loads a manifest; relative paths resolve against the manifest's directory.
inline FeatureManifest load_manifest(const std::filesystem::path& path) {
  auto m = manifest_from_json(nlohmann::json::parse(read_file(path)));
  for (auto& [id, e] : m)
    if (std::filesystem::path(e.path).is_relative()) e.path = (path.parent_path() / e.path).string();
  return m;
}

// Minimal RIFF/WAVE support: mono or multi-channel PCM16 and float32 input
// (first channel kept), PCM16 output.
inline Waveform read_wav(const std::filesystem::path& path) {
  std::string b = read_file(path);
  auto u16 = [&](std::size_t o) { return static_cast<unsigned>(static_cast<unsigned char>(b[o]) | (static_cast<unsigned char>(b[o + 1]) << 8)); };
  auto u32 = [&](std::size_t o) { return static_cast<std::uint32_t>(u16(o) | (u16(o + 2) << 16)); };
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) throw DataError("not a WAVE file: " + path.string());
  std::size_t pos = 12;
  unsigned fmt = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= b.size()) {
    std::string id = b.substr(pos, 4);
    std::uint32_t size = u32(pos + 4);
    std::size_t body = pos + 8;
    if (body + size > b.size()) size = static_cast<std::uint32_t>(b.size() - body);
    if (id == "fmt ") {
      fmt = u16(body);
      channels = u16(body + 2);
      rate = u32(body + 4);
      bits = u16(body + 14);
    } else if (id == "data") {
      if (channels == 0) throw DataError("WAVE data before fmt chunk: " + path.string());
      Waveform w;
      w.rate = rate;
      const std::size_t frame_bytes = channels * bits / 8;
      const std::size_t n = size / frame_bytes;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t o = body + i * frame_bytes;
        if (fmt == 1 && bits == 16) {
          w.samples[i] = static_cast<std::int16_t>(u16(o)) / 32768.0;
        } else if (fmt == 3 && bits == 32) {
          std::uint32_t v = u32(o);
          float fv;
          std::memcpy(&fv, &v, 4);
          w.samples[i] = fv;
        } else {
          throw DataError("unsupported WAVE encoding in " + path.string());
        }
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw DataError("WAVE file without data chunk: " + path.string());
}

inline std::string wav_to_bytes(const Waveform& w) {
  auto put16 = [](std::string& s, unsigned v) { s += static_cast<char>(v & 0xFF); s += static_cast<char>((v >> 8) & 0xFF); };
  auto put32 = [&](std::string& s, std::uint32_t v) { put16(s, v & 0xFFFF); put16(s, v >> 16); };
  const auto data = static_cast<std::uint32_t>(w.samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(w.rate);
  std::string s = "RIFF";
  put32(s, 36 + data);
  s += "WAVEfmt ";
  put32(s, 16);
  put16(s, 1);
  put16(s, 1);
  put32(s, rate);
  put32(s, rate * 2);
  put16(s, 2);
  put16(s, 16);
  s += "data";
  put32(s, data);
  for (double x : w.samples) {
    double c = std::clamp(x, -1.0, 32767.0 / 32768.0);
    put16(s, static_cast<unsigned>(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0)))));
  }
  return s;
}

inline Waveform slice_seconds(const Waveform& w, double start_s, double end_s) {
  auto a = static_cast<std::size_t>(std::max(0.0, std::round(start_s * w.rate)));
  auto b = static_cast<std::size_t>(std::max(0.0, std::round(end_s * w.rate)));
  a = std::min(a, w.samples.size());
  b = std::min(std::max(a, b), w.samples.size());
  Waveform out;
  out.rate = w.rate;
  out.samples.assign(w.samples.begin() + static_cast<std::ptrdiff_t>(a), w.samples.begin() + static_cast<std::ptrdiff_t>(b));
  return out;
}

}  // namespace csasr
