#pragma once

// Basic and interchanged triplets over a pseudo-mix corpus.
//
// Basic, condition c:   anchor A^c_B, positive A^c_X (X != B), negative Y^c_B
//                       (Y != A; Y == X is allowed).
// Interchanged, c' != c: same anchor, positive = basic negative, negative =
//                       basic positive. Under c' the anchor and Y^c_B share
//                       the accompaniment piece B.

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "instrsim/mixdata.hpp"
#include "instrsim/synth.hpp"
#include "instrsim/targets.hpp"

namespace instrsim {

enum class TripletKind { basic, interchanged };

struct TripletSpec {
  int condition = 0;
  SegmentRef anchor, positive, negative;
  TripletKind kind = TripletKind::basic;
  int unit = 0;  // basic triplet index; an interchanged twin shares its basic's unit
};

/// Corpus lookup tables used by the samplers.
class TripletSampler {
 public:
  explicit TripletSampler(const MixDataset& data) : data_(data) {
    for (std::size_t i = 0; i < data.num_mixes(); ++i) {
      const auto& m = data.mix(static_cast<int>(i));
      if (m.is_self_mix() || data.num_segments(static_cast<int>(i)) == 0) continue;
      by_focus_[{m.focus_condition, m.focus_piece_id}].push_back(static_cast<int>(i));
      by_accomp_[{m.focus_condition, m.accomp_piece_id}].push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < data.num_mixes(); ++i) {
      const auto& m = data.mix(static_cast<int>(i));
      if (m.is_self_mix() || data.num_segments(static_cast<int>(i)) == 0) continue;
      if (!pairs_for(static_cast<int>(i)).empty()) anchors_[m.focus_condition].push_back(static_cast<int>(i));
    }
  }

  const MixDataset& data() const { return data_; }

  /// Valid (positive mix, negative mix) pairs for an anchor mix.
  std::vector<std::pair<int, int>> pairs_for(int anchor) const {
    const auto& a = data_.mix(anchor);
    std::vector<std::pair<int, int>> out;
    auto pos_it = by_focus_.find({a.focus_condition, a.focus_piece_id});
    auto neg_it = by_accomp_.find({a.focus_condition, a.accomp_piece_id});
    if (pos_it == by_focus_.end() || neg_it == by_accomp_.end()) return out;
    for (int p : pos_it->second) {
      const auto& pm = data_.mix(p);
      if (pm.accomp_piece_id == a.accomp_piece_id) continue;
      for (int n : neg_it->second) {
        const auto& nm = data_.mix(n);
        if (nm.focus_piece_id == a.focus_piece_id) continue;
        out.emplace_back(p, n);
      }
    }
    return out;
  }

  template <typename Rng>
  TripletSpec sample_basic(int c, Rng& rng) const {
    auto it = anchors_.find(c);
    if (it == anchors_.end() || it->second.empty())
      throw SamplingExhaustedError("no basic triplet pattern for condition " + std::string(condition_name(c)));
    const auto& anchors = it->second;
    const int anchor = anchors[pick(anchors.size(), rng)];
    const auto pairs = pairs_for(anchor);
    const auto [pos, neg] = pairs[pick(pairs.size(), rng)];
    TripletSpec t;
    t.condition = c;
    t.kind = TripletKind::basic;
    t.anchor = {anchor, static_cast<int>(pick(static_cast<std::size_t>(data_.num_segments(anchor)), rng))};
    t.positive = {pos, static_cast<int>(pick(static_cast<std::size_t>(data_.num_segments(pos)), rng))};
    t.negative = {neg, static_cast<int>(pick(static_cast<std::size_t>(data_.num_segments(neg)), rng))};
    return t;
  }

  /// Conditions c' usable for an interchanged twin of `basic`.
  std::vector<int> interchange_conditions(const TripletSpec& basic) const {
    std::vector<int> out;
    const auto& a = data_.mix(basic.anchor.mix);
    for (const auto& [c, src] : a.label_vector) {
      if (c == basic.condition) continue;
      if (check_interchange(basic, c).empty()) out.push_back(c);
    }
    return out;
  }

  /// Empty string when the twin under c' is consistent, else the reason.
  std::string check_interchange(const TripletSpec& basic, int c_prime) const {
    const auto& a = data_.mix(basic.anchor.mix);
    const auto& p = data_.mix(basic.positive.mix);
    const auto& n = data_.mix(basic.negative.mix);
    const MusicId sa = a.source_of(c_prime), sp = p.source_of(c_prime), sn = n.source_of(c_prime);
    if (sa < 0 || sp < 0 || sn < 0) return "condition missing from a label vector";
    if (sn != sa) return "interchanged positive does not share the anchor's source";
    if (sp == sa) return "interchanged negative shares the anchor's source";
    if (p.source_of(basic.condition) != a.source_of(basic.condition) ||
        n.source_of(basic.condition) == a.source_of(basic.condition))
      return "basic triplet violates its own condition";
    return {};
  }

  TripletSpec derive_interchanged(const TripletSpec& basic, int c_prime) const {
    if (c_prime == basic.condition) throw ParameterError("interchanged condition equals the basic condition");
    if (basic.kind != TripletKind::basic) throw ParameterError("can only interchange a basic triplet");
    if (auto why = check_interchange(basic, c_prime); !why.empty()) throw ConflictError(why);
    TripletSpec t = basic;
    t.condition = c_prime;
    t.kind = TripletKind::interchanged;
    std::swap(t.positive, t.negative);
    return t;
  }

 private:
  template <typename Rng>
  static std::size_t pick(std::size_t n, Rng& rng) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  }

  const MixDataset& data_;
  std::map<std::pair<int, MusicId>, std::vector<int>> by_focus_, by_accomp_;
  std::map<int, std::vector<int>> anchors_;
};

/// Conditions cycle 0..C-1; each basic triplet gets an interchanged twin
/// with probability `interchange_ratio`, its condition uniform over valid c'.
inline std::vector<TripletSpec> build_triplet_set(const TripletSampler& sampler, int n_triplets,
                                                  double interchange_ratio, std::uint64_t seed, int C,
                                                  const std::vector<int>& conditions = {}) {
  if (n_triplets < 1) throw ParameterError("n_triplets must be >= 1");
  if (interchange_ratio < 0 || interchange_ratio > 1) throw ParameterError("interchange_ratio must lie in [0, 1]");
  std::vector<int> cycle = conditions;
  if (cycle.empty())
    for (int c = 0; c < C; ++c) cycle.push_back(c);
  std::vector<TripletSpec> out;
  out.reserve(static_cast<std::size_t>(n_triplets) * 2);
  for (int i = 0; i < n_triplets; ++i) {
    std::mt19937_64 rng(synth::mix_seed(seed, static_cast<std::uint64_t>(i)));
    TripletSpec basic = sampler.sample_basic(cycle[static_cast<std::size_t>(i) % cycle.size()], rng);
    basic.unit = i;
    out.push_back(basic);
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < interchange_ratio) {
      auto options = sampler.interchange_conditions(basic);
      if (options.empty()) continue;
      int cp = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
      out.push_back(sampler.derive_interchanged(basic, cp));
    }
  }
  return out;
}

inline std::string kind_name(TripletKind k) { return k == TripletKind::basic ? "basic" : "interchanged"; }

inline std::string triplets_to_jsonl(const std::vector<TripletSpec>& triplets, const MixDataset& data) {
  std::ostringstream out;
  for (const auto& t : triplets) {
    nlohmann::json j = {{"unit", t.unit},
                        {"kind", kind_name(t.kind)},
                        {"condition", t.condition},
                        {"anchor", data.segment_id(t.anchor)},
                        {"positive", data.segment_id(t.positive)},
                        {"negative", data.segment_id(t.negative)}};
    out << j.dump() << "\n";
  }
  return out.str();
}

inline std::vector<TripletSpec> triplets_from_jsonl(const std::string& text, const MixDataset& data) {
  std::vector<TripletSpec> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    TripletSpec t;
    t.unit = j.at("unit");
    t.kind = j.at("kind") == "basic" ? TripletKind::basic : TripletKind::interchanged;
    t.condition = j.at("condition");
    t.anchor = data.parse_segment_id(j.at("anchor"));
    t.positive = data.parse_segment_id(j.at("positive"));
    t.negative = data.parse_segment_id(j.at("negative"));
    out.push_back(t);
  }
  return out;
}

/// Label-vector audit of a triplet: under its condition the positive shares
/// the anchor's source and the negative does not.
inline bool triplet_semantics_hold(const TripletSpec& t, const MixDataset& data) {
  const auto& a = data.mix(t.anchor.mix);
  const auto& p = data.mix(t.positive.mix);
  const auto& n = data.mix(t.negative.mix);
  const MusicId sa = a.source_of(t.condition);
  return sa >= 0 && p.source_of(t.condition) == sa && n.source_of(t.condition) >= 0 &&
         n.source_of(t.condition) != sa;
}

/// Auxiliary targets for every segment of every mix, indexed like the dataset.
class TargetTable {
 public:
  TargetTable() = default;
  TargetTable(const MixDataset& data, InstrumentEncoders& g, int C, int D) {
    targets_.resize(data.num_mixes());
    for (std::size_t i = 0; i < data.num_mixes(); ++i) {
      auto stems = data.stem_mels(static_cast<int>(i), C);
      // encode each condition's segments as one batch
      std::vector<std::vector<std::vector<double>>> blocks(stems.size(), std::vector<std::vector<double>>(static_cast<std::size_t>(C)));
      for (int c = 0; c < C; ++c) {
        std::vector<const MelSegment*> mels;
        std::vector<std::size_t> where;
        for (std::size_t k = 0; k < stems.size(); ++k)
          if (stems[k][static_cast<std::size_t>(c)]) {
            mels.push_back(&*stems[k][static_cast<std::size_t>(c)]);
            where.push_back(k);
          }
        if (mels.empty()) continue;
        auto out = g.at(c).encode_all(mels);
        for (std::size_t j = 0; j < where.size(); ++j)
          blocks[where[j]][static_cast<std::size_t>(c)].assign(out[j].begin(), out[j].end());
      }
      for (auto& b : blocks) targets_[i].push_back(normalize_target(b, D));
    }
  }
  const TargetEmbedding& at(SegmentRef r) const {
    return targets_.at(static_cast<std::size_t>(r.mix)).at(static_cast<std::size_t>(r.segment));
  }

 private:
  std::vector<std::vector<TargetEmbedding>> targets_;
};

/// Target for one anchor segment, computed directly from its provenance.
inline TargetEmbedding anchor_target(SegmentRef anchor, const MixDataset& data, InstrumentEncoders& g, int C,
                                     int D) {
  auto stems = data.stem_mels(anchor.mix, C);
  auto& seg = stems.at(static_cast<std::size_t>(anchor.segment));
  std::vector<const MelSegment*> ptrs;
  for (auto& m : seg) ptrs.push_back(m ? &*m : nullptr);
  return target_embedding(ptrs, g, C, D);
}

}  // namespace instrsim
