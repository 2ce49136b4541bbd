#pragma once

// Segment-level view of a set of mixes (pseudo-mixes or original pieces
// expressed as self-mixes): rendered once, cut into segments, converted to
// normalized mel segments. Stem-level mels for auxiliary targets are
// produced on demand from the same provenance.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "instrsim/features.hpp"
#include "instrsim/pseudomix.hpp"

namespace instrsim {

/// A self-mix standing for the original piece.
inline PseudoMixInfo original_mix(const Piece& p) {
  if (p.present.empty()) throw EmptyMixError("piece " + std::to_string(p.music_id) + " is silent");
  PseudoMixInfo info;
  info.focus_condition = p.present.front();
  info.focus_piece_id = p.music_id;
  info.accomp_piece_id = p.music_id;
  info.mix_id = "piece_" + std::to_string(p.music_id);
  info.length = p.length();
  for (int c : p.present) info.label_vector[c] = p.music_id;
  info.gain = mix_full(p).gain;
  return info;
}

inline std::vector<PseudoMixInfo> original_mixes(const std::vector<Piece>& pieces) {
  std::vector<PseudoMixInfo> out;
  for (const auto& p : pieces) out.push_back(original_mix(p));
  return out;
}

/// One isolated stem of a piece, expressed as a single-entry mix.
inline PseudoMixInfo stem_mix(const Piece& p, int c) {
  if (!p.has(c))
    throw MissingStemError("piece " + std::to_string(p.music_id) + " has no " + std::string(condition_name(c)));
  PseudoMixInfo info;
  info.focus_condition = c;
  info.focus_piece_id = p.music_id;
  info.accomp_piece_id = p.music_id;
  info.mix_id = "stem_" + std::to_string(p.music_id) + "_" + std::string(condition_name(c));
  info.length = p.length();
  info.label_vector[c] = p.music_id;
  info.gain = safe_gain(peak(p.stems[static_cast<std::size_t>(c)]));
  return info;
}

/// Inputs for main-encoder pretraining: every original mix plus every
/// present stem on its own.
inline std::vector<PseudoMixInfo> pretraining_mixes(const std::vector<Piece>& pieces) {
  auto out = original_mixes(pieces);
  for (const auto& p : pieces)
    for (int c : p.present) out.push_back(stem_mix(p, c));
  return out;
}

struct SegmentRef {
  int mix = 0;
  int segment = 0;
  bool operator==(const SegmentRef&) const = default;
  auto operator<=>(const SegmentRef&) const = default;
};

class MixDataset {
 public:
  MixDataset(const std::vector<Piece>& pieces, std::vector<PseudoMixInfo> mixes, const MelParams& mel,
             const SegmentParams& seg, double silence_threshold_db = kDefaultSilenceDb)
      : index_(pieces), mixes_(std::move(mixes)), extractor_(mel), seg_(seg), silence_db_(silence_threshold_db) {
    segments_.resize(mixes_.size());
    mels_.resize(mixes_.size());
    for (std::size_t i = 0; i < mixes_.size(); ++i) {
      by_id_[mixes_[i].mix_id] = static_cast<int>(i);
      Mix m = render(mixes_[i], index_);
      segments_[i] = segment_waveform(m.wave.samples, m.wave.sample_rate_hz, seg_, mixes_[i].mix_id);
      MelSegment full = extractor_(m.wave.samples);
      for (const auto& s : segments_[i])
        mels_[i].push_back(normalize(segment_mel(extractor_, full, m.wave.samples, s)));
    }
  }

  std::size_t num_mixes() const { return mixes_.size(); }
  const PseudoMixInfo& mix(int i) const { return mixes_.at(static_cast<std::size_t>(i)); }
  const std::vector<PseudoMixInfo>& mixes() const { return mixes_; }
  int index_of(const std::string& mix_id) const {
    auto it = by_id_.find(mix_id);
    if (it == by_id_.end()) throw ProvenanceError("unknown mix '" + mix_id + "'");
    return it->second;
  }
  int num_segments(int i) const { return static_cast<int>(segments_.at(static_cast<std::size_t>(i)).size()); }
  const SegmentRecord& segment(SegmentRef r) const {
    return segments_.at(static_cast<std::size_t>(r.mix)).at(static_cast<std::size_t>(r.segment));
  }
  const MelSegment& mel(SegmentRef r) const {
    return mels_.at(static_cast<std::size_t>(r.mix)).at(static_cast<std::size_t>(r.segment));
  }
  std::size_t total_segments() const {
    std::size_t n = 0;
    for (const auto& s : segments_) n += s.size();
    return n;
  }
  std::vector<SegmentRef> all_refs() const {
    std::vector<SegmentRef> out;
    for (std::size_t i = 0; i < segments_.size(); ++i)
      for (std::size_t k = 0; k < segments_[i].size(); ++k) out.push_back({static_cast<int>(i), static_cast<int>(k)});
    return out;
  }
  const PieceIndex& pieces() const { return index_; }
  const MelExtractor& extractor() const { return extractor_; }
  const SegmentParams& segment_params() const { return seg_; }

  std::string segment_id(SegmentRef r) const {
    return mix(r.mix).mix_id + "#" + std::to_string(r.segment);
  }
  SegmentRef parse_segment_id(const std::string& id) const {
    auto hash = id.rfind('#');
    if (hash == std::string::npos) throw FormatError("bad segment id '" + id + "'");
    SegmentRef r{index_of(id.substr(0, hash)), std::stoi(id.substr(hash + 1))};
    if (r.segment < 0 || r.segment >= num_segments(r.mix)) throw ProvenanceError("segment out of range: " + id);
    return r;
  }

  /// Normalized stem mels co-located with every segment of mix `i`: result
  /// [segment][condition], nullopt where the stem is absent or silent in
  /// that window.
  std::vector<std::vector<std::optional<MelSegment>>> stem_mels(int i, int C) const {
    const auto& info = mix(i);
    const auto stems = aligned_stems(info, index_.at(info.focus_piece_id), index_.at(info.accomp_piece_id));
    const auto& segs = segments_.at(static_cast<std::size_t>(i));
    std::vector<std::vector<std::optional<MelSegment>>> out(segs.size(),
                                                            std::vector<std::optional<MelSegment>>(static_cast<std::size_t>(C)));
    for (int c = 0; c < C && c < static_cast<int>(stems.size()); ++c) {
      const auto& s = stems[static_cast<std::size_t>(c)];
      if (s.empty()) continue;
      MelSegment full = extractor_(s);
      for (std::size_t k = 0; k < segs.size(); ++k) {
        auto window = segs[k].slice(s);
        if (is_silent(window, silence_db_)) continue;
        out[k][static_cast<std::size_t>(c)] = normalize(segment_mel(extractor_, full, s, segs[k]));
      }
    }
    return out;
  }

 private:
  PieceIndex index_;
  std::vector<PseudoMixInfo> mixes_;
  MelExtractor extractor_;
  SegmentParams seg_;
  double silence_db_;
  std::map<std::string, int> by_id_;
  std::vector<std::vector<SegmentRecord>> segments_;
  std::vector<std::vector<MelSegment>> mels_;
};

}  // namespace instrsim
