#pragma once

#include <map>
#include <span>
#include <vector>

#include "instrsim/nn/checkpoint.hpp"
#include "instrsim/nn/encoder.hpp"

namespace instrsim {

/// Length C*D vector; subspace c occupies [c*D, (c+1)*D).
struct Embedding {
  std::vector<double> values;
  int C = kNumConditions;
  int D = 0;

  Embedding() = default;
  Embedding(std::vector<double> v, int c, int d) : values(std::move(v)), C(c), D(d) {
    if (static_cast<int>(values.size()) != C * D) throw ShapeError("embedding length must equal C*D");
  }
  template <typename U>
  static Embedding from(std::span<const U> v, int c, int d) {
    return Embedding(std::vector<double>(v.begin(), v.end()), c, d);
  }

  std::size_t size() const { return values.size(); }
  std::span<const double> subspace(int c) const {
    if (c < 0 || c >= C) throw ParameterError("condition out of range");
    return std::span<const double>(values).subspan(static_cast<std::size_t>(c * D), static_cast<std::size_t>(D));
  }
  static Embedding concat(const std::vector<std::vector<double>>& blocks) {
    if (blocks.empty()) throw ShapeError("no blocks");
    Embedding e;
    e.C = static_cast<int>(blocks.size());
    e.D = static_cast<int>(blocks.front().size());
    for (const auto& b : blocks) {
      if (static_cast<int>(b.size()) != e.D) throw ShapeError("blocks differ in width");
      e.values.insert(e.values.end(), b.begin(), b.end());
    }
    return e;
  }
};

/// Main encoder f with its subspace layout.
struct MainModel {
  nn::Encoder<float> encoder;
  int C = kNumConditions;
  int D = 16;

  MainModel() = default;
  MainModel(nn::EncoderConfig cfg, int c, int d, std::uint64_t seed) : C(c), D(d) {
    if (c < 1 || d < 1) throw ParameterError("C and D must be positive");
    cfg.out_dim = c * d;
    encoder = nn::Encoder<float>(cfg, seed);
  }
  Embedding encode(const MelSegment& mel) {
    auto v = encoder.encode(mel);
    return Embedding::from<float>(v, C, D);
  }
};

/// Individual per-instrument encoders g_c, each with output width D.
struct InstrumentEncoders {
  std::map<int, nn::Encoder<float>> by_condition;
  int D = 16;

  bool has(int c) const { return by_condition.count(c) > 0; }
  nn::Encoder<float>& at(int c) {
    auto it = by_condition.find(c);
    if (it == by_condition.end()) throw DependencyError("no individual encoder for condition " + std::to_string(c));
    return it->second;
  }
};

inline nn::EncoderConfig instrument_config(nn::EncoderConfig base, int D) {
  base.out_dim = D;
  return base;
}

inline std::vector<double> encode_instrument(nn::Encoder<float>& g, const MelSegment& mel) {
  auto v = g.encode(mel);
  return {v.begin(), v.end()};
}

}  // namespace instrsim
