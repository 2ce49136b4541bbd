#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "instrsim/error.hpp"

namespace instrsim {

using MusicId = std::int64_t;

/// Instrument conditions in subspace order.
enum class Condition : int { drums = 0, bass = 1, piano = 2, guitar = 3, others = 4 };

inline constexpr int kNumConditions = 5;
inline constexpr std::array<std::string_view, kNumConditions> kConditionNames{
    "drums", "bass", "piano", "guitar", "others"};

inline std::string_view condition_name(int c) {
  if (c < 0 || c >= kNumConditions) throw ParameterError("condition index out of range");
  return kConditionNames[static_cast<std::size_t>(c)];
}

inline int condition_from_name(std::string_view name) {
  for (int c = 0; c < kNumConditions; ++c)
    if (kConditionNames[static_cast<std::size_t>(c)] == name) return c;
  throw ParameterError("unknown condition name '" + std::string(name) + "'");
}

/// Mono audio with its sample rate.
struct Waveform {
  std::vector<float> samples;
  int sample_rate_hz = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
};

inline double peak(std::span<const float> x) {
  double p = 0.0;
  for (float v : x) p = std::max(p, static_cast<double>(std::fabs(v)));
  return p;
}

inline double rms(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

/// RMS in dBFS; digital silence maps to -inf.
inline double rms_db(std::span<const float> x) {
  double r = rms(x);
  if (r <= 0.0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(r);
}

inline bool is_silent(std::span<const float> x, double threshold_db) {
  return !(rms_db(x) > threshold_db);
}

}  // namespace instrsim
