#pragma once

// Three optimization stages: individual encoders g_c on single stems with
// track-based triplets, main encoder pretraining on the auxiliary loss alone,
// then main training on masked triplet loss plus weighted auxiliary loss.

#include <algorithm>
#include <array>
#include <numeric>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "instrsim/models.hpp"
#include "instrsim/nn/adam.hpp"
#include "instrsim/objective.hpp"
#include "instrsim/sampling.hpp"

namespace instrsim {

struct TrainConfig {
  double margin = 0.2;
  double lambda = 0.1;
  int batch_size = 64;
  int epochs = 50;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::uint64_t seed = 7;
  int n_triplets = 2000;
  double interchange_ratio = 1.0;
  int individual_epochs = 20;
  int individual_triplets = 1000;
  int pretrain_epochs = 20;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"margin", c.margin},
       {"lambda", c.lambda},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"lr", c.lr},
       {"optimizer", c.optimizer},
       {"seed", c.seed},
       {"n_triplets", c.n_triplets},
       {"interchange_ratio", c.interchange_ratio},
       {"individual_epochs", c.individual_epochs},
       {"individual_triplets", c.individual_triplets},
       {"pretrain_epochs", c.pretrain_epochs}};
}

inline void validate(const TrainConfig& c) {
  if (c.margin < 0 || c.lambda < 0) throw ParameterError("margin and lambda must be >= 0");
  if (c.batch_size < 1 || c.epochs < 0 || c.n_triplets < 1 || c.individual_triplets < 1)
    throw ParameterError("batch size, epochs and triplet counts must be positive");
  if (!(c.lr > 0)) throw ParameterError("learning rate must be positive");
  if (c.optimizer != "adam") throw ParameterError("unsupported optimizer '" + c.optimizer + "'");
}

struct EpochLoss {
  int epoch = 0;
  double l_triplet = 0.0;
  double l_aux = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

inline nlohmann::json history_to_json(const std::vector<EpochLoss>& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : h)
    arr.push_back({{"epoch", e.epoch}, {"l_triplet", e.l_triplet}, {"l_aux", e.l_aux},
                   {"lambda", e.lambda}, {"total", e.total}});
  return arr;
}

struct TrainResult {
  nn::Encoder<float> encoder;
  std::vector<EpochLoss> history;
};

using ProgressFn = std::function<void(const std::string& stage, const EpochLoss&)>;

namespace detail {

using Mat = nn::Encoder<float>::Mat;

/// Dedupes the segments of a batch; returns pointers and a slot per key.
template <typename Key>
struct UniqueBatch {
  std::vector<const MelSegment*> mels;
  std::map<Key, int> slot;

  int add(const Key& k, const MelSegment* m) {
    auto [it, inserted] = slot.emplace(k, static_cast<int>(mels.size()));
    if (inserted) mels.push_back(m);
    return it->second;
  }
};

inline std::span<const float> column(const Mat& m, int j, std::vector<float>& buf) {
  buf.resize(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) buf[static_cast<std::size_t>(r)] = m(r, j);
  return buf;
}

/// One optimizer step: forward in train mode, loss gradient w.r.t. the
/// embeddings from `loss`, backward, update.
template <typename LossFn>
std::pair<double, double> step(nn::Encoder<float>& enc, nn::Adam<float>& opt,
                               const std::vector<const MelSegment*>& mels, LossFn&& loss) {
  nn::Encoder<float>::Tape tape;
  Mat emb = enc.forward(std::span<const MelSegment* const>(mels.data(), mels.size()), nn::Mode::train, &tape);
  Mat grad = Mat::Zero(emb.rows(), emb.cols());
  auto [lt, lm] = loss(emb, grad);
  std::vector<float> g(enc.params().size(), 0.0f);
  enc.backward(tape, grad, g);
  opt.step(enc.params().values, g);
  return {lt, lm};
}

inline void add_column_grad(Mat& grad, int j, std::span<const float> g) {
  for (std::size_t r = 0; r < g.size(); ++r) grad(static_cast<Eigen::Index>(r), j) += g[r];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: individual encoders

/// Normalized stem segments of one condition, grouped by piece.
struct StemSegments {
  std::vector<MusicId> piece_ids;
  std::vector<std::vector<MelSegment>> mels;  // [piece][segment]
};

inline StemSegments stem_segments(const std::vector<Piece>& pieces, int c, const MelParams& mel,
                                  const SegmentParams& seg) {
  MelExtractor ex(mel);
  StemSegments out;
  for (const auto& p : pieces) {
    if (!p.has(c)) continue;
    const auto& s = p.stems[static_cast<std::size_t>(c)];
    auto records = segment_waveform(s, p.sample_rate_hz, seg, std::to_string(p.music_id));
    if (records.empty()) continue;
    MelSegment full = ex(s);
    std::vector<MelSegment> mels;
    for (const auto& r : records) mels.push_back(normalize(segment_mel(ex, full, s, r)));
    out.piece_ids.push_back(p.music_id);
    out.mels.push_back(std::move(mels));
  }
  return out;
}

/// (piece, segment) triples: positive from the anchor's piece, negative from
/// another piece.
struct TrackTriplet {
  std::pair<int, int> anchor, positive, negative;
};

inline std::vector<TrackTriplet> sample_track_triplets(const std::vector<int>& segment_counts, int n,
                                                       std::uint64_t seed) {
  std::vector<int> eligible;
  for (std::size_t i = 0; i < segment_counts.size(); ++i)
    if (segment_counts[i] >= 2) eligible.push_back(static_cast<int>(i));
  if (eligible.empty() || segment_counts.size() < 2)
    throw DatasetError("track triplets need >= 2 pieces and one with >= 2 segments");
  std::mt19937_64 rng(seed);
  auto pick = [&](int k) { return std::uniform_int_distribution<int>(0, k - 1)(rng); };
  std::vector<TrackTriplet> out;
  for (int i = 0; i < n; ++i) {
    const int a = eligible[static_cast<std::size_t>(pick(static_cast<int>(eligible.size())))];
    const int cnt = segment_counts[static_cast<std::size_t>(a)];
    const int sa = pick(cnt);
    int sp = pick(cnt - 1);
    if (sp >= sa) ++sp;
    int b = pick(static_cast<int>(segment_counts.size()) - 1);
    if (b >= a) ++b;
    if (segment_counts[static_cast<std::size_t>(b)] == 0) {
      --i;
      continue;
    }
    out.push_back({{a, sa}, {a, sp}, {b, pick(segment_counts[static_cast<std::size_t>(b)])}});
  }
  return out;
}

inline TrainResult pretrain_individual(const StemSegments& data, const nn::EncoderConfig& enc_cfg,
                                       const TrainConfig& cfg, std::uint64_t seed,
                                       const ProgressFn& progress = {}) {
  validate(cfg);
  if (data.mels.size() < 2) throw DatasetError("individual pretraining needs >= 2 pieces with the stem");
  std::vector<int> counts;
  for (const auto& m : data.mels) counts.push_back(static_cast<int>(m.size()));
  const auto triplets = sample_track_triplets(counts, cfg.individual_triplets, synth::mix_seed(seed, 1));
  TrainResult r{nn::Encoder<float>(enc_cfg, synth::mix_seed(seed, 2)), {}};
  nn::Adam<float> opt(r.encoder.params().size(), nn::AdamConfig{cfg.lr});
  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> ba, bp, bn;
  for (int epoch = 0; epoch < cfg.individual_epochs; ++epoch) {
    std::mt19937_64 rng(synth::mix_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      detail::UniqueBatch<std::pair<int, int>> ub;
      std::vector<std::array<int, 3>> slots;
      for (std::size_t k = start; k < end; ++k) {
        const auto& t = triplets[order[k]];
        auto ref = [&](std::pair<int, int> s) {
          return ub.add(s, &data.mels[static_cast<std::size_t>(s.first)][static_cast<std::size_t>(s.second)]);
        };
        slots.push_back({ref(t.anchor), ref(t.positive), ref(t.negative)});
      }
      const double inv = 1.0 / static_cast<double>(slots.size());
      auto [lt, lm] = detail::step(r.encoder, opt, ub.mels, [&](const detail::Mat& emb, detail::Mat& grad) {
        std::vector<float> ga(static_cast<std::size_t>(emb.rows())), gp(ga.size()), gn(ga.size());
        const std::vector<double> ones(ga.size(), 1.0);
        double total = 0.0;
        for (const auto& s : slots) {
          std::fill(ga.begin(), ga.end(), 0.0f);
          std::fill(gp.begin(), gp.end(), 0.0f);
          std::fill(gn.begin(), gn.end(), 0.0f);
          total += masked_triplet_loss_grad<float>(detail::column(emb, s[0], ba), detail::column(emb, s[1], bp),
                                                   detail::column(emb, s[2], bn), ones, cfg.margin, inv, ga, gp, gn);
          detail::add_column_grad(grad, s[0], ga);
          detail::add_column_grad(grad, s[1], gp);
          detail::add_column_grad(grad, s[2], gn);
        }
        return std::pair{total * inv, 0.0};
      });
      (void)lm;
      if (!std::isfinite(lt)) throw TrainingError("non-finite loss in individual pretraining");
      sum += lt * static_cast<double>(slots.size());
    }
    EpochLoss e{epoch, sum / static_cast<double>(order.size()), 0.0, 0.0, 0.0};
    e.total = e.l_triplet;
    r.history.push_back(e);
    if (progress) progress("pretrain-individual", e);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stage 2: main encoder pretraining on the auxiliary loss

/// Mean auxiliary loss of `f` over the given segments (eval mode); flagged
/// targets are skipped.
inline double mean_auxiliary_loss(nn::Encoder<float>& f, const MixDataset& data, const TargetTable& targets,
                                  const std::vector<SegmentRef>& refs) {
  std::vector<const MelSegment*> mels;
  std::vector<SegmentRef> used;
  for (auto r : refs)
    if (!targets.at(r).flagged) {
      mels.push_back(&data.mel(r));
      used.push_back(r);
    }
  if (mels.empty()) throw TrainingError("no unflagged targets");
  auto emb = f.encode_all(mels);
  double sum = 0.0;
  for (std::size_t i = 0; i < used.size(); ++i) {
    const auto& t = targets.at(used[i]).values;
    sum += auxiliary_loss(std::vector<double>(emb[i].begin(), emb[i].end()), t);
  }
  return sum / static_cast<double>(used.size());
}

inline TrainResult pretrain_main(const MixDataset& data, const TargetTable& targets, nn::Encoder<float> f,
                                 const TrainConfig& cfg, std::uint64_t seed, const ProgressFn& progress = {}) {
  validate(cfg);
  TrainResult r{std::move(f), {}};
  std::vector<SegmentRef> refs;
  for (auto ref : data.all_refs())
    if (!targets.at(ref).flagged) refs.push_back(ref);
  if (refs.empty()) throw TrainingError("no usable pretraining segments");
  nn::Adam<float> opt(r.encoder.params().size(), nn::AdamConfig{cfg.lr});
  std::vector<float> buf;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::mt19937_64 rng(synth::mix_seed(seed, 2000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(refs.begin(), refs.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < refs.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(refs.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const MelSegment*> mels;
      for (std::size_t k = start; k < end; ++k) mels.push_back(&data.mel(refs[k]));
      const double inv = 1.0 / static_cast<double>(end - start);
      auto [lt, lm] = detail::step(r.encoder, opt, mels, [&](const detail::Mat& emb, detail::Mat& grad) {
        double total = 0.0;
        std::vector<float> g(static_cast<std::size_t>(emb.rows()));
        for (std::size_t k = start; k < end; ++k) {
          const int j = static_cast<int>(k - start);
          std::fill(g.begin(), g.end(), 0.0f);
          total += auxiliary_loss_grad<float>(detail::column(emb, j, buf), targets.at(refs[k]).values, inv, g);
          detail::add_column_grad(grad, j, g);
        }
        return std::pair{0.0, total * inv};
      });
      (void)lt;
      if (!std::isfinite(lm)) throw TrainingError("non-finite loss in main pretraining");
      sum += lm * static_cast<double>(end - start);
    }
    EpochLoss e{epoch, 0.0, sum / static_cast<double>(refs.size()), 1.0, 0.0};
    e.total = e.l_triplet + e.lambda * e.l_aux;
    r.history.push_back(e);
    if (progress) progress("pretrain-main", e);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Stage 3: main training

struct BatchLoss {
  double l_triplet = 0.0;
  double l_aux = 0.0;
  int aux_count = 0;
};

/// Loss of a triplet batch and its gradient w.r.t. the unique embeddings.
/// `slots[k]` gives the embedding columns of triplet k. Templated on the
/// scalar so the same code serves training and gradient checks.
template <typename T, typename MatT>
BatchLoss triplet_batch_loss(const MatT& emb, const std::vector<std::array<int, 3>>& slots,
                             const std::vector<int>& conditions, const std::vector<const TargetEmbedding*>& anchor_targets,
                             int C, int D, double margin, double lambda, MatT* grad) {
  const std::size_t E = static_cast<std::size_t>(emb.rows());
  std::vector<T> a(E), p(E), n(E), ga(E), gp(E), gn(E);
  auto col = [&](int j, std::vector<T>& out) {
    for (std::size_t r = 0; r < E; ++r) out[r] = emb(static_cast<Eigen::Index>(r), j);
  };
  auto add = [&](int j, const std::vector<T>& g) {
    if (grad)
      for (std::size_t r = 0; r < E; ++r) (*grad)(static_cast<Eigen::Index>(r), j) += g[r];
  };
  BatchLoss out;
  for (const auto* t : anchor_targets)
    if (t && !t->flagged) ++out.aux_count;
  const double inv_t = 1.0 / static_cast<double>(slots.size());
  const double inv_m = out.aux_count > 0 ? 1.0 / out.aux_count : 0.0;
  double lt = 0.0, lm = 0.0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& s = slots[k];
    col(s[0], a);
    col(s[1], p);
    col(s[2], n);
    std::fill(ga.begin(), ga.end(), T(0));
    std::fill(gp.begin(), gp.end(), T(0));
    std::fill(gn.begin(), gn.end(), T(0));
    const auto mask = condition_mask(conditions[k], D, C);
    lt += masked_triplet_loss_grad<T>(a, p, n, mask.m, margin, inv_t, ga, gp, gn);
    const TargetEmbedding* tgt = anchor_targets.empty() ? nullptr : anchor_targets[k];
    if (tgt && !tgt->flagged) lm += auxiliary_loss_grad<T>(a, tgt->values, lambda * inv_m, ga);
    add(s[0], ga);
    add(s[1], gp);
    add(s[2], gn);
  }
  out.l_triplet = lt * inv_t;
  out.l_aux = out.aux_count > 0 ? lm * inv_m : 0.0;
  return out;
}

inline TrainResult train_main(const MixDataset& data, const std::vector<TripletSpec>& triplets,
                              const TargetTable* targets, nn::Encoder<float> f, int C, int D,
                              const TrainConfig& cfg, std::uint64_t seed, const ProgressFn& progress = {}) {
  validate(cfg);
  if (triplets.empty()) throw TrainingError("empty triplet list");
  if (f.out_dim() != C * D) throw ShapeError("encoder output width differs from C*D");
  TrainResult r{std::move(f), {}};
  nn::Adam<float> opt(r.encoder.params().size(), nn::AdamConfig{cfg.lr});

  // shuffle whole units so a basic triplet and its twin stay adjacent
  std::map<int, std::vector<std::size_t>> units;
  for (std::size_t i = 0; i < triplets.size(); ++i) units[triplets[i].unit].push_back(i);
  std::vector<std::vector<std::size_t>> unit_list;
  // within a unit the basic triplet goes first, so file order does not matter
  auto unit_order = [&](std::size_t x, std::size_t y) {
    return std::pair{triplets[x].kind, triplets[x].condition} < std::pair{triplets[y].kind, triplets[y].condition};
  };
  for (auto& [u, idx] : units) {
    std::stable_sort(idx.begin(), idx.end(), unit_order);
    unit_list.push_back(idx);
  }

  const bool use_aux = targets != nullptr && cfg.lambda > 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::mt19937_64 rng(synth::mix_seed(seed, 3000 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(unit_list.begin(), unit_list.end(), rng);
    std::vector<std::size_t> order;
    for (const auto& u : unit_list) order.insert(order.end(), u.begin(), u.end());
    double sum_t = 0.0, sum_m = 0.0;
    int n_t = 0, n_m = 0;
    for (std::size_t start = 0, batch_id = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size), ++batch_id) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      detail::UniqueBatch<SegmentRef> ub;
      std::vector<std::array<int, 3>> slots;
      std::vector<int> conds;
      std::vector<const TargetEmbedding*> tg;
      for (std::size_t k = start; k < end; ++k) {
        const auto& t = triplets[order[k]];
        slots.push_back({ub.add(t.anchor, &data.mel(t.anchor)), ub.add(t.positive, &data.mel(t.positive)),
                         ub.add(t.negative, &data.mel(t.negative))});
        conds.push_back(t.condition);
        tg.push_back(use_aux ? &targets->at(t.anchor) : nullptr);
      }
      BatchLoss bl;
      detail::step(r.encoder, opt, ub.mels, [&](const detail::Mat& emb, detail::Mat& grad) {
        bl = triplet_batch_loss<float>(emb, slots, conds, tg, C, D, cfg.margin, cfg.lambda, &grad);
        return std::pair{bl.l_triplet, bl.l_aux};
      });
      const double total = bl.l_triplet + cfg.lambda * bl.l_aux;
      if (!std::isfinite(total)) {
        std::string ids;
        for (std::size_t k = start; k < end; ++k) ids += (ids.empty() ? "" : ",") + std::to_string(order[k]);
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_id) + " (triplets " + ids + ")");
      }
      sum_t += bl.l_triplet * static_cast<double>(slots.size());
      n_t += static_cast<int>(slots.size());
      sum_m += bl.l_aux * bl.aux_count;
      n_m += bl.aux_count;
    }
    EpochLoss e{epoch, sum_t / n_t, n_m > 0 ? sum_m / n_m : 0.0, cfg.lambda, 0.0};
    e.total = e.l_triplet + e.lambda * e.l_aux;
    r.history.push_back(e);
    if (progress) progress("train", e);
  }
  return r;
}

}  // namespace instrsim
