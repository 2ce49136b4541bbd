#pragma once

// Procedural multi-stem piece generator. Every stem follows a beat grid at the
// piece tempo; timbre and pattern parameters are drawn per (piece, stem) from a
// seeded generator so two pieces differ in every stem.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "instrsim/common.hpp"

namespace instrsim::synth {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double midi_to_hz(double m) { return 440.0 * std::pow(2.0, (m - 69.0) / 12.0); }

struct Grid {
  double first_onset_s;
  double step_s;  // sixteenth note
  int sample_rate;
  std::size_t length;

  std::size_t steps() const {
    double span = static_cast<double>(length) / sample_rate - first_onset_s;
    return span <= 0 ? 0 : static_cast<std::size_t>(span / step_s) + 1;
  }
  long sample_at(std::size_t step) const {
    return std::lround((first_onset_s + static_cast<double>(step) * step_s) * sample_rate);
  }
};

class StemRng {
 public:
  explicit StemRng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }
  double noise() { return uniform(-1.0, 1.0); }

 private:
  std::mt19937_64 gen_;
};

inline void add_at(std::vector<double>& out, long start, const std::vector<double>& event) {
  for (std::size_t i = 0; i < event.size(); ++i) {
    long n = start + static_cast<long>(i);
    if (n < 0) continue;
    if (static_cast<std::size_t>(n) >= out.size()) break;
    out[static_cast<std::size_t>(n)] += event[i];
  }
}

inline std::vector<double> drums(const Grid& g, StemRng& rng) {
  std::vector<double> out(g.length, 0.0);
  const int sr = g.sample_rate;
  bool kick[16] = {}, snare[16] = {}, hat[16] = {};
  kick[0] = true;
  const double kick_p = rng.uniform(0.15, 0.55);
  for (int s : {3, 6, 8, 10, 11, 14}) kick[s] = rng.chance(kick_p);
  snare[4] = snare[12] = true;
  const double ghost_p = rng.uniform(0.0, 0.3);
  for (int s = 0; s < 16; ++s)
    if (!snare[s] && !kick[s] && (s % 2 == 1)) snare[s] = rng.chance(ghost_p);
  const int hat_every = rng.chance(0.5) ? 1 : 2;
  const double hat_drop = rng.uniform(0.0, 0.35);
  for (int s = 0; s < 16; s += hat_every) hat[s] = !rng.chance(hat_drop);

  const double k_tau = rng.uniform(0.06, 0.3), k_f0 = rng.uniform(90, 190), k_f1 = rng.uniform(38, 70);
  const double s_tau = rng.uniform(0.04, 0.25), s_lp = rng.uniform(0.1, 0.85),
               s_tone = rng.uniform(140, 320), s_mix = rng.uniform(0.1, 0.7);
  const double h_tau = rng.uniform(0.008, 0.08), h_gain = rng.uniform(0.15, 0.5);

  auto make_kick = [&] {
    std::vector<double> e(static_cast<std::size_t>(5 * k_tau * sr));
    double phase = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      double t = static_cast<double>(i) / sr;
      double f = k_f1 + (k_f0 - k_f1) * std::exp(-t / 0.03);
      phase += 2 * std::numbers::pi * f / sr;
      e[i] = std::sin(phase) * std::exp(-t / k_tau);
    }
    return e;
  };
  const auto kick_ev = make_kick();
  for (std::size_t st = 0; st < g.steps(); ++st) {
    const int s = static_cast<int>(st % 16);
    const long at = g.sample_at(st);
    if (kick[s]) add_at(out, at, kick_ev);
    if (snare[s]) {
      std::vector<double> e(static_cast<std::size_t>(5 * s_tau * sr));
      double lp = 0.0;
      for (std::size_t i = 0; i < e.size(); ++i) {
        double t = static_cast<double>(i) / sr;
        lp += s_lp * (rng.noise() - lp);
        e[i] = ((1 - s_mix) * lp + s_mix * std::sin(2 * std::numbers::pi * s_tone * t)) *
               std::exp(-t / s_tau) * 0.8;
      }
      add_at(out, at, e);
    }
    if (hat[s]) {
      std::vector<double> e(static_cast<std::size_t>(5 * h_tau * sr));
      double prev = 0.0;
      for (std::size_t i = 0; i < e.size(); ++i) {
        double t = static_cast<double>(i) / sr;
        double n = rng.noise();
        e[i] = (n - prev) * 0.5 * h_gain * std::exp(-t / h_tau);
        prev = n;
      }
      add_at(out, at, e);
    }
  }
  return out;
}

struct Harmony {
  int root;                 // midi root of the key
  std::vector<int> scale;   // semitone offsets
  std::vector<int> chords;  // scale degree of each bar's chord (4-bar loop)
};

inline Harmony make_harmony(StemRng& rng) {
  Harmony h;
  h.root = rng.integer(0, 11);
  h.scale = rng.chance(0.5) ? std::vector<int>{0, 2, 4, 5, 7, 9, 11}
                            : std::vector<int>{0, 2, 3, 5, 7, 8, 10};
  for (int b = 0; b < 4; ++b) h.chords.push_back(b == 0 ? 0 : rng.integer(0, 6));
  return h;
}

inline int degree_pitch(const Harmony& h, int degree, int base_octave_midi) {
  const int n = static_cast<int>(h.scale.size());
  int oct = degree >= 0 ? degree / n : -((-degree + n - 1) / n);
  int idx = degree - oct * n;
  return base_octave_midi + h.root + 12 * oct + h.scale[static_cast<std::size_t>(idx)];
}

inline std::vector<double> additive_note(double f, double dur_s, int sr, int harmonics,
                                         double rolloff, double tau, double hdecay,
                                         double inharm = 0.0) {
  std::vector<double> e(static_cast<std::size_t>(dur_s * sr), 0.0);
  const double nyq = 0.45 * sr;
  for (int k = 1; k <= harmonics; ++k) {
    double fk = k * f * std::sqrt(1.0 + inharm * k * k);
    if (fk >= nyq) break;
    double a = std::pow(static_cast<double>(k), -rolloff);
    double tk = tau / (1.0 + hdecay * (k - 1));
    // rotating phasor with per-sample decay factor
    const std::complex<double> rot = std::polar(std::exp(-1.0 / (sr * tk)), 2 * std::numbers::pi * fk / sr);
    std::complex<double> z(a, 0.0);
    for (std::size_t i = 0; i < e.size(); ++i) {
      e[i] += z.imag();
      z *= rot;
    }
  }
  const std::size_t fade = std::min<std::size_t>(e.size(), static_cast<std::size_t>(0.01 * sr));
  for (std::size_t i = 0; i < fade; ++i) e[e.size() - 1 - i] *= static_cast<double>(i) / fade;
  return e;
}

inline std::vector<double> bass(const Grid& g, StemRng& rng, const Harmony& h) {
  std::vector<double> out(g.length, 0.0);
  const int sr = g.sample_rate;
  const int octave = rng.chance(0.5) ? 24 : 36;
  const double rolloff = rng.uniform(0.8, 2.4), tau = rng.uniform(0.12, 0.7),
               legato = rng.uniform(0.5, 1.0);
  int pattern[4][8];
  bool rest[4][8];
  const double rest_p = rng.uniform(0.0, 0.35);
  for (int b = 0; b < 4; ++b)
    for (int e = 0; e < 8; ++e) {
      pattern[b][e] = h.chords[static_cast<std::size_t>(b)] +
                      (e == 0 ? 0 : std::vector<int>{0, 0, 2, 4, 7, -3}[static_cast<std::size_t>(rng.integer(0, 5))]);
      rest[b][e] = e != 0 && rng.chance(rest_p);
    }
  const std::size_t steps = g.steps();
  for (std::size_t st = 0; st < steps; st += 2) {
    const int bar = static_cast<int>((st / 16) % 4), e = static_cast<int>((st % 16) / 2);
    if (rest[bar][e]) continue;
    double f = midi_to_hz(degree_pitch(h, pattern[bar][e], octave));
    add_at(out, g.sample_at(st), additive_note(f, 2 * g.step_s * legato, sr, 6, rolloff, tau, 0.3));
  }
  return out;
}

inline std::vector<double> piano(const Grid& g, StemRng& rng, const Harmony& h) {
  std::vector<double> out(g.length, 0.0);
  const int sr = g.sample_rate;
  const double rolloff = rng.uniform(0.9, 2.0), tau = rng.uniform(0.25, 1.1),
               hdecay = rng.uniform(0.1, 0.6), inharm = rng.uniform(0.0, 3e-4);
  bool hit[8];
  hit[0] = true;
  const double hit_p = rng.uniform(0.15, 0.6);
  for (int e = 1; e < 8; ++e) hit[e] = rng.chance(hit_p);
  const int voicing = rng.integer(0, 2);
  const int octave = rng.chance(0.5) ? 48 : 60;
  const std::size_t steps = g.steps();
  for (std::size_t st = 0; st < steps; st += 2) {
    const int bar = static_cast<int>((st / 16) % 4), e = static_cast<int>((st % 16) / 2);
    if (!hit[e]) continue;
    const int deg = h.chords[static_cast<std::size_t>(bar)];
    for (int v = 0; v < 3; ++v) {
      int d = deg + 2 * ((v + voicing) % 3) + (v + voicing >= 3 ? 7 : 0);
      double f = midi_to_hz(degree_pitch(h, d, octave));
      add_at(out, g.sample_at(st),
             additive_note(f, std::min(1.5, 3 * tau), sr, 8, rolloff, tau, hdecay, inharm));
    }
  }
  return out;
}

inline std::vector<double> guitar(const Grid& g, StemRng& rng, const Harmony& h) {
  std::vector<double> out(g.length, 0.0);
  const int sr = g.sample_rate;
  const double damping = rng.uniform(0.985, 0.998), bright = rng.uniform(0.5, 0.95);
  const int stride = rng.chance(0.5) ? 1 : 2;  // sixteenths or eighths
  int arp[8];
  for (int& a : arp) a = rng.integer(0, 5);
  const double skip_p = rng.uniform(0.0, 0.3);
  const int octave = rng.chance(0.5) ? 48 : 60;
  const std::size_t steps = g.steps();
  std::size_t idx = 0;
  for (std::size_t st = 0; st < steps; st += static_cast<std::size_t>(stride), ++idx) {
    if (rng.chance(skip_p)) continue;
    const int bar = static_cast<int>((st / 16) % 4);
    int d = h.chords[static_cast<std::size_t>(bar)] + std::vector<int>{0, 2, 4, 7, 9, 11}[static_cast<std::size_t>(arp[idx % 8])];
    double f = midi_to_hz(degree_pitch(h, d, octave));
    // Karplus-Strong pluck
    const std::size_t period = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(sr / f)));
    std::vector<double> buf(period);
    for (double& b : buf) b = rng.noise();
    std::vector<double> e(static_cast<std::size_t>(std::min(1.2, 4 * g.step_s * stride) * sr));
    for (std::size_t i = 0; i < e.size(); ++i) {
      std::size_t j = i % period, k = (i + 1) % period;
      double y = damping * (bright * buf[j] + (1 - bright) * buf[k]);
      e[i] = buf[j];
      buf[j] = y;
    }
    const std::size_t fade = std::min<std::size_t>(e.size(), static_cast<std::size_t>(0.01 * sr));
    for (std::size_t i = 0; i < fade; ++i) e[e.size() - 1 - i] *= static_cast<double>(i) / fade;
    add_at(out, g.sample_at(st), e);
  }
  return out;
}

inline std::vector<double> others(const Grid& g, StemRng& rng, const Harmony& h) {
  std::vector<double> out(g.length, 0.0);
  const int sr = g.sample_rate;
  const double lfo_rate = rng.uniform(0.2, 3.0), lfo_depth = rng.uniform(0.1, 0.7),
               detune = rng.uniform(2.0, 15.0), h2 = rng.uniform(0.0, 0.6),
               attack = rng.uniform(0.05, 0.6);
  const int octave = rng.chance(0.5) ? 60 : 72;
  const int bars_per_chord = rng.chance(0.5) ? 1 : 2;
  const double bar_s = 16 * g.step_s;
  std::array<std::vector<double>, 4> partials;
  for (std::size_t b = 0; b < 4; ++b)
    for (int v = 0; v < 3; ++v) {
      const double f = midi_to_hz(degree_pitch(h, h.chords[b] + 2 * v, octave));
      for (double cents : {-detune, detune}) partials[b].push_back(f * std::pow(2.0, cents / 1200.0));
    }
  const std::size_t first = static_cast<std::size_t>(std::max(0L, g.sample_at(0)));
  for (std::size_t n = first; n < g.length; ++n) {
    double t = static_cast<double>(n) / sr - g.first_onset_s;
    auto bar_idx = static_cast<std::size_t>(t / bar_s);
    std::size_t chord_bar = (bar_idx / static_cast<std::size_t>(bars_per_chord)) % 4;
    double t_in = t - static_cast<double>(bar_idx - bar_idx % static_cast<std::size_t>(bars_per_chord)) * bar_s;
    double env = std::min(1.0, t_in / attack) *
                 (1.0 - lfo_depth * 0.5 * (1 + std::sin(2 * std::numbers::pi * lfo_rate * t)));
    double acc = 0.0;
    for (double fd : partials[chord_bar]) {
      double ph = 2 * std::numbers::pi * fd * t;
      acc += std::sin(ph) + h2 * std::sin(2 * ph);
    }
    out[n] = acc * env;
  }
  return out;
}

}  // namespace instrsim::synth
