#pragma once

#include <optional>
#include <vector>

#include "instrsim/features.hpp"
#include "instrsim/models.hpp"
#include "instrsim/objective.hpp"

namespace instrsim {

/// Concatenates g_c outputs for the present stems (zero block when absent)
/// and divides by the L2 norm. Zero norm yields a flagged zero vector.
inline TargetEmbedding target_embedding(const std::vector<const MelSegment*>& stem_mels,
                                        InstrumentEncoders& g, int C, int D) {
  if (static_cast<int>(stem_mels.size()) != C) throw ShapeError("need one stem slot per condition");
  std::vector<std::vector<double>> blocks(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    const MelSegment* mel = stem_mels[static_cast<std::size_t>(c)];
    if (mel == nullptr) continue;
    blocks[static_cast<std::size_t>(c)] = encode_instrument(g.at(c), *mel);
  }
  return normalize_target(blocks, D);
}

}  // namespace instrsim
