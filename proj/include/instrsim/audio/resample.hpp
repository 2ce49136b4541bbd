#pragma once

#include <cmath>
#include <numbers>

#include "instrsim/common.hpp"

namespace instrsim::audio {

/// Band-limited resampling with a Hann-windowed sinc kernel.
inline Waveform resample(const Waveform& in, int target_rate_hz, int half_taps = 16) {
  if (target_rate_hz <= 0) throw ParameterError("target sample rate must be positive");
  if (in.sample_rate_hz == target_rate_hz || in.samples.empty()) {
    Waveform out = in;
    out.sample_rate_hz = target_rate_hz;
    return out;
  }
  const double ratio = static_cast<double>(target_rate_hz) / in.sample_rate_hz;
  const double cutoff = std::min(1.0, ratio);
  const auto n_out = static_cast<std::size_t>(
      std::floor(static_cast<double>(in.samples.size()) * ratio));
  const double support = half_taps / cutoff;
  Waveform out;
  out.sample_rate_hz = target_rate_hz;
  out.samples.resize(n_out);
  const auto n_in = static_cast<long>(in.samples.size());
  for (std::size_t i = 0; i < n_out; ++i) {
    const double t = static_cast<double>(i) / ratio;
    const long lo = static_cast<long>(std::ceil(t - support));
    const long hi = static_cast<long>(std::floor(t + support));
    double acc = 0.0;
    for (long j = std::max(0L, lo); j <= std::min(n_in - 1, hi); ++j) {
      const double x = (t - static_cast<double>(j)) * cutoff;
      const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * x / half_taps);
      acc += in.samples[static_cast<std::size_t>(j)] * sinc * win * cutoff;
    }
    out.samples[i] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace instrsim::audio
