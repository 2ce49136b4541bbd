#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "instrsim/dataset.hpp"

namespace instrsim {

struct TempoGrouping {
  double bin_width_bpm = 1.0;
  std::map<MusicId, long> group;

  long of(MusicId id) const {
    auto it = group.find(id);
    if (it == group.end()) throw ConstraintError("piece " + std::to_string(id) + " is not grouped");
    return it->second;
  }
  bool same(MusicId a, MusicId b) const { return of(a) == of(b); }

  std::map<long, std::vector<MusicId>> members() const {
    std::map<long, std::vector<MusicId>> out;
    for (const auto& [id, g] : group) out[g].push_back(id);
    return out;
  }
};

inline long tempo_bin(double tempo_bpm, double bin_width_bpm) {
  return static_cast<long>(std::floor(tempo_bpm / bin_width_bpm));
}

template <typename Range, typename Proj>
TempoGrouping tempo_group_by(const Range& items, double bin_width_bpm, Proj proj) {
  if (!(bin_width_bpm > 0)) throw ParameterError("bin_width_bpm must be positive");
  TempoGrouping g;
  g.bin_width_bpm = bin_width_bpm;
  for (const auto& item : items) {
    auto [id, tempo] = proj(item);
    g.group[id] = tempo_bin(tempo, bin_width_bpm);
  }
  return g;
}

inline TempoGrouping tempo_group(const DatasetManifest& m, double bin_width_bpm) {
  return tempo_group_by(m.pieces, bin_width_bpm, [](const PieceEntry& e) {
    return std::pair{e.music_id, e.tempo_bpm};
  });
}

inline TempoGrouping tempo_group(const std::vector<Piece>& pieces, double bin_width_bpm) {
  return tempo_group_by(pieces, bin_width_bpm, [](const Piece& p) {
    return std::pair{p.music_id, p.tempo_bpm};
  });
}

/// Provenance of a pseudo-mixed piece: condition `focus_condition` comes from
/// the focus piece (time-shifted by `shift_samples`), every other present
/// condition from the accompaniment piece.
struct PseudoMixInfo {
  std::string mix_id;
  int focus_condition = 0;
  MusicId focus_piece_id = 0;
  MusicId accomp_piece_id = 0;
  double gain = 1.0;
  long shift_samples = 0;
  std::size_t length = 0;
  std::map<int, MusicId> label_vector;
  std::string path;

  MusicId source_of(int c) const {
    auto it = label_vector.find(c);
    return it == label_vector.end() ? MusicId{-1} : it->second;
  }
  bool is_self_mix() const { return focus_piece_id == accomp_piece_id; }
};

struct PseudoMix {
  PseudoMixInfo info;
  Waveform waveform;
};

inline std::string make_mix_id(MusicId focus, int c, MusicId accomp) {
  return "mix_" + std::to_string(focus) + "_" + std::string(condition_name(c)) + "_" +
         std::to_string(accomp);
}

/// Focus stem of `a` shifted so its first onset lands on `b`'s first onset,
/// truncated or zero-padded to `b`'s length.
inline std::vector<float> shifted_stem(const Piece& a, int c, long shift, std::size_t length) {
  std::vector<float> out(length, 0.0f);
  const auto& src = a.stems[static_cast<std::size_t>(c)];
  for (std::size_t n = 0; n < length; ++n) {
    long k = static_cast<long>(n) - shift;
    if (k >= 0 && static_cast<std::size_t>(k) < src.size()) out[n] = src[static_cast<std::size_t>(k)];
  }
  return out;
}

/// Per-condition stems exactly as they enter the mix (before gain). Conditions
/// missing from the label vector are empty.
inline std::vector<std::vector<float>> aligned_stems(const PseudoMixInfo& info, const Piece& focus,
                                                     const Piece& accomp) {
  if (focus.music_id != info.focus_piece_id || accomp.music_id != info.accomp_piece_id)
    throw ProvenanceError("pieces do not match mix " + info.mix_id);
  std::vector<std::vector<float>> out(static_cast<std::size_t>(accomp.num_conditions()));
  for (const auto& [c, src] : info.label_vector) {
    if (c == info.focus_condition)
      out[static_cast<std::size_t>(c)] = shifted_stem(focus, c, info.shift_samples, info.length);
    else
      out[static_cast<std::size_t>(c)] = accomp.stems[static_cast<std::size_t>(c)];
  }
  return out;
}

/// Rebuilds the waveform from provenance alone.
inline Mix render(const PseudoMixInfo& info, const Piece& focus, const Piece& accomp) {
  auto stems = aligned_stems(info, focus, accomp);
  std::vector<std::span<const float>> parts;
  for (const auto& [c, src] : info.label_vector) parts.emplace_back(stems[static_cast<std::size_t>(c)]);
  return mix_stems(parts, accomp.sample_rate_hz);
}

inline PseudoMixInfo describe_pseudo_mix(const Piece& a, int c, const Piece& b,
                                         const TempoGrouping& grouping, bool allow_self = false) {
  if (c < 0 || c >= a.num_conditions()) throw ParameterError("condition out of range");
  if (a.music_id == b.music_id && !allow_self)
    throw ConstraintError("self-mix of piece " + std::to_string(a.music_id) + " not requested");
  if (!grouping.same(a.music_id, b.music_id))
    throw ConstraintError("pieces " + std::to_string(a.music_id) + " and " +
                          std::to_string(b.music_id) + " are in different tempo groups");
  if (!a.has(c))
    throw MissingStemError("piece " + std::to_string(a.music_id) + " has no " +
                           std::string(condition_name(c)) + " stem");
  if (a.sample_rate_hz != b.sample_rate_hz) throw ConstraintError("sample rates differ");
  PseudoMixInfo info;
  info.focus_condition = c;
  info.focus_piece_id = a.music_id;
  info.accomp_piece_id = b.music_id;
  info.mix_id = make_mix_id(a.music_id, c, b.music_id);
  info.length = b.length();
  info.shift_samples =
      a.music_id == b.music_id ? 0 : std::lround((b.first_onset_s - a.first_onset_s) * b.sample_rate_hz);
  info.label_vector[c] = a.music_id;
  for (int cc : b.present)
    if (cc != c) info.label_vector[cc] = b.music_id;
  if (info.label_vector.size() < 2 && a.music_id != b.music_id)
    throw MissingStemError("piece " + std::to_string(b.music_id) + " has no accompaniment besides " +
                           std::string(condition_name(c)));
  return info;
}

inline PseudoMix make_pseudo_mix(const Piece& a, int c, const Piece& b, const TempoGrouping& grouping,
                                 bool allow_self = false) {
  PseudoMix pm;
  pm.info = describe_pseudo_mix(a, c, b, grouping, allow_self);
  Mix m = render(pm.info, a, b);
  pm.info.gain = m.gain;
  pm.waveform = std::move(m.wave);
  return pm;
}

/// Lookup of pieces by music id.
class PieceIndex {
 public:
  explicit PieceIndex(const std::vector<Piece>& pieces) {
    for (const auto& p : pieces) by_id_[p.music_id] = &p;
  }
  const Piece& at(MusicId id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw ProvenanceError("unknown piece " + std::to_string(id));
    return *it->second;
  }
  bool contains(MusicId id) const { return by_id_.count(id) > 0; }

 private:
  std::map<MusicId, const Piece*> by_id_;
};

inline Mix render(const PseudoMixInfo& info, const PieceIndex& pieces) {
  return render(info, pieces.at(info.focus_piece_id), pieces.at(info.accomp_piece_id));
}

using PseudoMixCorpus = std::vector<PseudoMixInfo>;

/// For every (piece A, condition c present in A) picks `per_focus_count`
/// distinct donors from A's tempo group and records the resulting mixes.
/// Waveforms are not retained; `render` rebuilds them from provenance.
inline PseudoMixCorpus build_pseudomix_corpus(const std::vector<Piece>& pieces,
                                              const TempoGrouping& grouping, int per_focus_count,
                                              std::uint64_t seed,
                                              const std::vector<int>& conditions = {}) {
  if (per_focus_count < 1) throw ParameterError("per_focus_count must be >= 1");
  const auto groups = grouping.members();
  PieceIndex index(pieces);
  std::vector<const Piece*> ordered;
  for (const auto& p : pieces) ordered.push_back(&p);
  std::sort(ordered.begin(), ordered.end(),
            [](const Piece* x, const Piece* y) { return x->music_id < y->music_id; });

  PseudoMixCorpus corpus;
  for (const Piece* a : ordered) {
    const auto& members = groups.at(grouping.of(a->music_id));
    for (int c : a->present) {
      if (!conditions.empty() && std::find(conditions.begin(), conditions.end(), c) == conditions.end())
        continue;
      std::vector<MusicId> donors;
      for (MusicId id : members) {
        if (id == a->music_id || !index.contains(id)) continue;
        const Piece& b = index.at(id);
        bool has_accomp = std::any_of(b.present.begin(), b.present.end(), [c](int x) { return x != c; });
        if (has_accomp) donors.push_back(id);
      }
      if (static_cast<int>(donors.size()) < per_focus_count)
        throw ConstraintError("tempo group " + std::to_string(grouping.of(a->music_id)) + " offers " +
                              std::to_string(donors.size()) + " donors for piece " +
                              std::to_string(a->music_id) + ", need " + std::to_string(per_focus_count));
      std::mt19937_64 rng(synth::mix_seed(synth::mix_seed(seed, static_cast<std::uint64_t>(a->music_id)),
                                          static_cast<std::uint64_t>(c)));
      std::shuffle(donors.begin(), donors.end(), rng);
      donors.resize(static_cast<std::size_t>(per_focus_count));
      std::sort(donors.begin(), donors.end());
      for (MusicId d : donors) {
        PseudoMixInfo info = describe_pseudo_mix(*a, c, index.at(d), grouping);
        info.gain = render(info, *a, index.at(d)).gain;
        corpus.push_back(std::move(info));
      }
    }
  }
  return corpus;
}

inline nlohmann::json to_json(const PseudoMixInfo& m) {
  nlohmann::json lv = nlohmann::json::object();
  for (const auto& [c, id] : m.label_vector) lv[std::string(condition_name(c))] = id;
  return {{"mix_id", m.mix_id},
          {"focus_condition", m.focus_condition},
          {"focus_piece_id", m.focus_piece_id},
          {"accomp_piece_id", m.accomp_piece_id},
          {"gain", m.gain},
          {"shift_samples", m.shift_samples},
          {"length", m.length},
          {"label_vector", lv},
          {"path", m.path}};
}

inline PseudoMixInfo pseudo_mix_from_json(const nlohmann::json& j) {
  PseudoMixInfo m;
  m.mix_id = j.at("mix_id").get<std::string>();
  m.focus_condition = j.at("focus_condition").get<int>();
  m.focus_piece_id = j.at("focus_piece_id").get<MusicId>();
  m.accomp_piece_id = j.at("accomp_piece_id").get<MusicId>();
  m.gain = j.at("gain").get<double>();
  m.shift_samples = j.value("shift_samples", 0L);
  m.length = j.value("length", std::size_t{0});
  if (j.contains("label_vector"))
    for (const auto& [name, id] : j["label_vector"].items())
      m.label_vector[condition_from_name(name)] = id.get<MusicId>();
  m.path = j.value("path", std::string{});
  return m;
}

inline nlohmann::json corpus_to_json(const PseudoMixCorpus& corpus) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : corpus) arr.push_back(to_json(m));
  return arr;
}

inline PseudoMixCorpus corpus_from_json(const nlohmann::json& arr) {
  PseudoMixCorpus out;
  for (const auto& j : arr) out.push_back(pseudo_mix_from_json(j));
  return out;
}

/// Number of mixes whose focus and accompaniment fall in different tempo groups.
inline std::size_t count_tempo_violations(const PseudoMixCorpus& corpus, const TempoGrouping& grouping) {
  std::size_t bad = 0;
  for (const auto& m : corpus)
    if (!grouping.same(m.focus_piece_id, m.accomp_piece_id)) ++bad;
  return bad;
}

}  // namespace instrsim
