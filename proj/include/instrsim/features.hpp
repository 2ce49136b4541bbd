#pragma once

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <utility>
#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "instrsim/common.hpp"

namespace instrsim {

/// A window into a source waveform.
struct SegmentRecord {
  std::string source_id;
  std::size_t start_sample = 0;
  std::size_t length_samples = 0;
  double start_s = 0.0;
  double length_s = 0.0;

  std::span<const float> slice(std::span<const float> wave) const {
    if (start_sample + length_samples > wave.size())
      throw ShapeError("segment of '" + source_id + "' exceeds its source");
    return wave.subspan(start_sample, length_samples);
  }
};

struct SegmentParams {
  double length_s = 3.0;
  double overlap = 0.5;
  int max_segments = 40;
  double silence_threshold_db = -60.0;
};

/// Cuts `wave` into fixed windows on a hop grid of length*(1-overlap), skipping
/// silent windows before counting towards `max_segments`.
inline std::vector<SegmentRecord> segment_waveform(std::span<const float> wave, int sample_rate_hz,
                                                   const SegmentParams& p,
                                                   const std::string& source_id = {}) {
  if (!(p.length_s > 0)) throw ParameterError("segment length must be positive");
  if (!(p.overlap >= 0 && p.overlap < 1)) throw ParameterError("overlap must lie in [0, 1)");
  std::vector<SegmentRecord> out;
  const auto len = static_cast<std::size_t>(std::lround(p.length_s * sample_rate_hz));
  const double hop_s = p.length_s * (1.0 - p.overlap);
  for (std::size_t k = 0;; ++k) {
    if (p.max_segments >= 0 && static_cast<int>(out.size()) >= p.max_segments) break;
    const double start_s = static_cast<double>(k) * hop_s;
    const auto start = static_cast<std::size_t>(std::lround(start_s * sample_rate_hz));
    if (start + len > wave.size()) break;
    if (is_silent(wave.subspan(start, len), p.silence_threshold_db)) continue;
    out.push_back({source_id, start, len, start_s, p.length_s});
  }
  return out;
}

struct MelParams {
  int sample_rate_hz = 16000;
  int n_fft = 1024;
  int hop = 256;
  int n_mels = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-6;

  bool operator==(const MelParams&) const = default;

  int frames_for(std::size_t n_samples) const {
    if (n_samples < static_cast<std::size_t>(n_fft)) return 0;
    return static_cast<int>((n_samples - static_cast<std::size_t>(n_fft)) / static_cast<std::size_t>(hop)) + 1;
  }
};

inline void to_json(nlohmann::json& j, const MelParams& p) {
  j = {{"sample_rate_hz", p.sample_rate_hz}, {"n_fft", p.n_fft}, {"hop", p.hop}, {"n_mels", p.n_mels},
       {"fmin", p.fmin}, {"fmax", p.fmax}, {"log_floor", p.log_floor}};
}
inline void from_json(const nlohmann::json& j, MelParams& p) {
  p.sample_rate_hz = j.at("sample_rate_hz");
  p.n_fft = j.at("n_fft");
  p.hop = j.at("hop");
  p.n_mels = j.at("n_mels");
  p.fmin = j.at("fmin");
  p.fmax = j.at("fmax");
  p.log_floor = j.at("log_floor");
}

/// Row-major (n_mels x n_frames) log-mel matrix.
struct MelSegment {
  int n_mels = 0;
  int n_frames = 0;
  std::vector<float> data;
  double norm_mean = 0.0;
  double norm_std = 1.0;
  bool normalized = false;

  float at(int m, int t) const {
    return data[static_cast<std::size_t>(m) * static_cast<std::size_t>(n_frames) + static_cast<std::size_t>(t)];
  }
};

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular, area-normalized mel filterbank and Hann-windowed STFT.
class MelExtractor {
 public:
  explicit MelExtractor(const MelParams& p) : params_(p) {
    if (p.n_fft < 2 || (p.n_fft & (p.n_fft - 1)) != 0) throw ParameterError("n_fft must be a power of two");
    if (p.hop < 1 || p.n_mels < 1) throw ParameterError("hop and n_mels must be positive");
    if (p.fmax > p.sample_rate_hz / 2.0) throw ParameterError("fmax exceeds Nyquist");
    if (!(p.fmin >= 0 && p.fmin < p.fmax)) throw ParameterError("need 0 <= fmin < fmax");
    if (!(p.log_floor > 0)) throw ParameterError("log_floor must be positive");
    n_bins_ = p.n_fft / 2 + 1;
    window_.resize(static_cast<std::size_t>(p.n_fft));
    for (int i = 0; i < p.n_fft; ++i)
      window_[static_cast<std::size_t>(i)] =
          static_cast<float>(0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / p.n_fft));
    edges_hz_.resize(static_cast<std::size_t>(p.n_mels + 2));
    const double m0 = hz_to_mel(p.fmin), m1 = hz_to_mel(p.fmax);
    for (int i = 0; i < p.n_mels + 2; ++i)
      edges_hz_[static_cast<std::size_t>(i)] = mel_to_hz(m0 + (m1 - m0) * i / (p.n_mels + 1));
    weights_.assign(static_cast<std::size_t>(p.n_mels * n_bins_), 0.0f);
    for (int m = 0; m < p.n_mels; ++m) {
      const double lo = edges_hz_[static_cast<std::size_t>(m)], mid = edges_hz_[static_cast<std::size_t>(m) + 1],
                   hi = edges_hz_[static_cast<std::size_t>(m) + 2];
      const double area = 2.0 / (hi - lo);
      for (int k = 0; k < n_bins_; ++k) {
        const double f = static_cast<double>(k) * p.sample_rate_hz / p.n_fft;
        double w = 0.0;
        if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
        else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
        weights_[static_cast<std::size_t>(m * n_bins_ + k)] = static_cast<float>(w * area);
      }
    }
    support_.resize(static_cast<std::size_t>(p.n_mels));
    for (int m = 0; m < p.n_mels; ++m) {
      int first = n_bins_, last = 0;
      for (int k = 0; k < n_bins_; ++k)
        if (weight(m, k) != 0.0f) {
          first = std::min(first, k);
          last = k + 1;
        }
      support_[static_cast<std::size_t>(m)] = {first, std::max(first, last)};
    }
  }

  const MelParams& params() const { return params_; }
  /// Center frequency of mel band m.
  double band_center_hz(int m) const { return edges_hz_[static_cast<std::size_t>(m) + 1]; }
  float weight(int m, int bin) const { return weights_[static_cast<std::size_t>(m * n_bins_ + bin)]; }
  int n_bins() const { return n_bins_; }

  MelSegment operator()(std::span<const float> segment) const {
    const int frames = params_.frames_for(segment.size());
    MelSegment out;
    out.n_mels = params_.n_mels;
    out.n_frames = frames;
    out.data.assign(static_cast<std::size_t>(params_.n_mels) * static_cast<std::size_t>(std::max(frames, 0)), 0.0f);
    if (frames <= 0) return out;
    const int n = params_.n_fft;
    std::unique_ptr<float, decltype(&fftwf_free)> buf(fftwf_alloc_real(static_cast<std::size_t>(n)), fftwf_free);
    std::unique_ptr<fftwf_complex, decltype(&fftwf_free)> spec(fftwf_alloc_complex(static_cast<std::size_t>(n_bins_)),
                                                               fftwf_free);
    std::unique_ptr<fftwf_plan_s, decltype(&fftwf_destroy_plan)> plan(
        fftwf_plan_dft_r2c_1d(n, buf.get(), spec.get(), FFTW_ESTIMATE), fftwf_destroy_plan);
    if (!plan) throw Error("FFT plan creation failed");
    std::vector<float> mag(static_cast<std::size_t>(n_bins_));
    for (int t = 0; t < frames; ++t) {
      const std::size_t off = static_cast<std::size_t>(t) * static_cast<std::size_t>(params_.hop);
      for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) buf.get()[i] = segment[off + i] * window_[i];
      fftwf_execute(plan.get());
      for (int k = 0; k < n_bins_; ++k) {
        const auto& c = spec.get()[k];
        mag[static_cast<std::size_t>(k)] = std::sqrt(c[0] * c[0] + c[1] * c[1]);
      }
      for (int m = 0; m < params_.n_mels; ++m) {
        const float* w = &weights_[static_cast<std::size_t>(m * n_bins_)];
        double acc = 0.0;
        for (int k = support_[static_cast<std::size_t>(m)].first; k < support_[static_cast<std::size_t>(m)].second; ++k)
          acc += static_cast<double>(w[k]) * mag[static_cast<std::size_t>(k)];
        out.data[static_cast<std::size_t>(m) * static_cast<std::size_t>(frames) + static_cast<std::size_t>(t)] =
            static_cast<float>(std::log(acc + params_.log_floor));
      }
    }
    return out;
  }

 private:
  MelParams params_;
  int n_bins_ = 0;
  std::vector<float> window_;
  std::vector<double> edges_hz_;
  std::vector<float> weights_;
  std::vector<std::pair<int, int>> support_;  // nonzero bin range per band
};

/// Columns of a whole-source mel covering a segment. Valid only when the
/// segment starts on a frame boundary; otherwise the segment is recomputed.
inline MelSegment segment_mel(const MelExtractor& ex, const MelSegment& source_mel,
                              std::span<const float> source, const SegmentRecord& seg) {
  const auto& p = ex.params();
  const int frames = p.frames_for(seg.length_samples);
  if (seg.start_sample % static_cast<std::size_t>(p.hop) != 0)
    return ex(seg.slice(source));
  const int first = static_cast<int>(seg.start_sample / static_cast<std::size_t>(p.hop));
  if (first + frames > source_mel.n_frames) return ex(seg.slice(source));
  MelSegment out;
  out.n_mels = source_mel.n_mels;
  out.n_frames = frames;
  out.data.resize(static_cast<std::size_t>(out.n_mels) * static_cast<std::size_t>(frames));
  for (int m = 0; m < out.n_mels; ++m)
    std::copy_n(&source_mel.data[static_cast<std::size_t>(m) * static_cast<std::size_t>(source_mel.n_frames) +
                                 static_cast<std::size_t>(first)],
                frames, &out.data[static_cast<std::size_t>(m) * static_cast<std::size_t>(frames)]);
  return out;
}

inline MelSegment mel_spectrogram(std::span<const float> segment, const MelParams& p) {
  return MelExtractor(p)(segment);
}

/// Per-segment standardization over all entries; constant input maps to zeros.
inline MelSegment normalize(const MelSegment& mel) {
  MelSegment out = mel;
  const std::size_t n = mel.data.size();
  out.normalized = true;
  if (n == 0) return out;
  double mean = 0.0;
  for (float v : mel.data) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (float v : mel.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  out.norm_mean = mean;
  out.norm_std = sd;
  if (!(sd > 1e-12 * std::max(1.0, std::fabs(mean)))) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    out.norm_std = 0.0;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out.data[i] = static_cast<float>((mel.data[i] - mean) / sd);
  return out;
}

// ---------------------------------------------------------------------------
// Feature cache: 8-byte magic, u64 LE header length, JSON header, then
// row-major float32 LE payload.

inline constexpr char kMelCacheMagic[8] = {'I', 'S', 'M', 'E', 'L', '0', '0', '1'};

inline void write_feature_cache(const std::filesystem::path& path, const std::vector<MelSegment>& mels,
                                const MelParams& params, const nlohmann::json& provenance) {
  nlohmann::json header;
  header["params"] = params;
  header["provenance"] = provenance;
  header["segments"] = nlohmann::json::array();
  for (const auto& m : mels)
    header["segments"].push_back({{"n_mels", m.n_mels}, {"n_frames", m.n_frames},
                                  {"norm_mean", m.norm_mean}, {"norm_std", m.norm_std},
                                  {"normalized", m.normalized}});
  const std::string h = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write feature cache '" + path.string() + "'");
  out.write(kMelCacheMagic, 8);
  std::uint64_t len = h.size();
  unsigned char lenb[8];
  for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(lenb), 8);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& m : mels)
    for (float v : m.data) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      unsigned char b[4] = {static_cast<unsigned char>(u & 0xFF), static_cast<unsigned char>((u >> 8) & 0xFF),
                            static_cast<unsigned char>((u >> 16) & 0xFF), static_cast<unsigned char>(u >> 24)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
}

struct FeatureCache {
  MelParams params;
  nlohmann::json provenance;
  std::vector<MelSegment> mels;
};

inline FeatureCache read_feature_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read feature cache '" + path.string() + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMelCacheMagic, 8) != 0) throw FormatError("bad feature cache magic");
  unsigned char lenb[8];
  in.read(reinterpret_cast<char*>(lenb), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
  std::string h(len, '\0');
  in.read(h.data(), static_cast<std::streamsize>(len));
  auto header = nlohmann::json::parse(h);
  FeatureCache fc;
  fc.params = header.at("params").get<MelParams>();
  fc.provenance = header.value("provenance", nlohmann::json{});
  for (const auto& s : header.at("segments")) {
    MelSegment m;
    m.n_mels = s.at("n_mels");
    m.n_frames = s.at("n_frames");
    m.norm_mean = s.at("norm_mean");
    m.norm_std = s.at("norm_std");
    m.normalized = s.at("normalized");
    m.data.resize(static_cast<std::size_t>(m.n_mels) * static_cast<std::size_t>(m.n_frames));
    for (float& v : m.data) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      std::uint32_t u = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&v, &u, 4);
    }
    if (!in) throw FormatError("truncated feature cache payload");
    fc.mels.push_back(std::move(m));
  }
  return fc;
}

}  // namespace instrsim
