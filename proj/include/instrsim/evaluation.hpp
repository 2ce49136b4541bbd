#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <limits>
#include <tuple>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "instrsim/audio/wav.hpp"
#include "instrsim/hash.hpp"
#include "instrsim/mixdata.hpp"
#include "instrsim/models.hpp"
#include "instrsim/objective.hpp"

namespace instrsim {

struct StoreRow {
  std::string segment_id;
  MusicId label = 0;  // focus piece id (equals the piece id for original mixes)
  MusicId focus_id = 0;
  MusicId accomp_id = 0;
  std::string mix_id;
  int focus_condition = 0;
};

/// N x E embeddings with per-row provenance.
struct EmbeddingStore {
  std::vector<std::vector<float>> embeddings;
  std::vector<StoreRow> rows;
  int C = kNumConditions;
  int D = 0;

  std::size_t size() const { return rows.size(); }
  void check() const {
    if (embeddings.size() != rows.size()) throw ShapeError("store rows and metadata differ in count");
    for (const auto& e : embeddings)
      if (static_cast<int>(e.size()) != C * D) throw ShapeError("store embedding width differs from C*D");
  }
};

inline EmbeddingStore embed_dataset(nn::Encoder<float>& f, const MixDataset& data, int C, int D) {
  EmbeddingStore s;
  s.C = C;
  s.D = D;
  std::vector<const MelSegment*> mels;
  for (auto r : data.all_refs()) {
    const auto& m = data.mix(r.mix);
    mels.push_back(&data.mel(r));
    s.rows.push_back({data.segment_id(r), m.focus_piece_id, m.focus_piece_id, m.accomp_piece_id, m.mix_id,
                      m.focus_condition});
  }
  s.embeddings = f.encode_all(mels);
  s.check();
  return s;
}

struct Neighbor {
  std::size_t row;
  double distance;
};

/// Majority vote over the k nearest eligible rows. Ties: smaller summed
/// distance among tied ids, then smaller id.
inline MusicId knn_predict(std::span<const float> query, const EmbeddingStore& store,
                           const std::vector<std::size_t>& candidates, int k, const ConditionMask& mask,
                           std::vector<Neighbor>* neighbors_out = nullptr) {
  if (candidates.empty()) throw EvaluationError("empty reference set");
  if (k < 1) throw ParameterError("k must be >= 1");
  if (query.size() != mask.size()) throw ShapeError("query width differs from mask");
  std::vector<Neighbor> nb;
  nb.reserve(candidates.size());
  for (std::size_t r : candidates)
    nb.push_back({r, masked_distance<float>(query, store.embeddings[r], mask.m)});
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), nb.size());
  auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.row < b.row);
  };
  std::partial_sort(nb.begin(), nb.begin() + static_cast<std::ptrdiff_t>(kk), nb.end(), less);
  std::map<MusicId, std::pair<int, double>> votes;
  for (std::size_t i = 0; i < kk; ++i) {
    auto& v = votes[store.rows[nb[i].row].label];
    ++v.first;
    v.second += nb[i].distance;
  }
  MusicId best = 0;
  int best_count = -1;
  double best_sum = 0.0;
  for (const auto& [id, v] : votes) {
    if (v.first > best_count || (v.first == best_count && v.second < best_sum)) {
      best = id;
      best_count = v.first;
      best_sum = v.second;
    }
  }
  if (neighbors_out) neighbors_out->assign(nb.begin(), nb.begin() + static_cast<std::ptrdiff_t>(kk));
  return best;
}

struct ConditionResult {
  int condition = 0;      // query condition
  int mask_condition = 0; // subspace used for distances
  int correct = 0;
  int count = 0;
  double accuracy = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// Wilson score interval at 95%.
inline std::pair<double, double> wilson_interval(int correct, int n) {
  if (n == 0) return {0.0, 1.0};
  const double z = 1.959963984540054, p = static_cast<double>(correct) / n, z2 = z * z / n;
  const double center = (p + z2 / 2) / (1 + z2);
  const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4.0 * n * n)) / (1 + z2);
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct EvalReport {
  std::string name;
  int k = 5;
  double input_length_s = 0.0;
  std::vector<ConditionResult> results;
  std::size_t exclusion_violations = 0;
  std::size_t excluded_rows = 0;
  std::vector<std::string> warnings;

  double mean_accuracy() const {
    if (results.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : results) s += r.accuracy;
    return s / static_cast<double>(results.size());
  }
  const ConditionResult& for_condition(int c) const {
    for (const auto& r : results)
      if (r.condition == c && r.mask_condition == c) return r;
    throw EvaluationError("no result for condition " + std::to_string(c));
  }
};

inline ConditionResult finish(int condition, int mask_condition, int correct, int count) {
  ConditionResult r{condition, mask_condition, correct, count, count ? static_cast<double>(correct) / count : 0.0};
  std::tie(r.ci_low, r.ci_high) = wilson_interval(correct, count);
  return r;
}

/// Leave-one-out kNN music-id accuracy, one row per condition mask.
inline EvalReport eval_embedding_accuracy(const EmbeddingStore& store, const std::vector<int>& conditions, int k = 5,
                                          double input_length_s = 0.0) {
  store.check();
  std::set<MusicId> ids;
  for (const auto& r : store.rows) ids.insert(r.label);
  if (ids.size() < 2) throw EvaluationError("need >= 2 test pieces");
  if (store.size() < 2) throw EvaluationError("need >= 2 segments");
  EvalReport rep;
  rep.name = "knn_music_id";
  rep.input_length_s = input_length_s;
  rep.k = k;
  if (static_cast<std::size_t>(k) > store.size() - 1) {
    rep.k = static_cast<int>(store.size() - 1);
    rep.warnings.push_back("k clipped from " + std::to_string(k) + " to " + std::to_string(rep.k));
  }
  std::vector<std::size_t> cand;
  for (int c : conditions) {
    const auto mask = condition_mask(c, store.D, store.C);
    int correct = 0;
    for (std::size_t q = 0; q < store.size(); ++q) {
      cand.clear();
      for (std::size_t r = 0; r < store.size(); ++r)
        if (r != q) cand.push_back(r);
      if (knn_predict(store.embeddings[q], store, cand, rep.k, mask) == store.rows[q].label) ++correct;
    }
    rep.results.push_back(finish(c, c, correct, static_cast<int>(store.size())));
  }
  return rep;
}

/// Focus-id kNN over pseudo-mix segments of condition `c`, measured with the
/// subspace of `mask_condition`. Each query's own mix is removed from the
/// reference set.
inline ConditionResult eval_subspace_one(const EmbeddingStore& store, int c, int mask_condition, int k,
                                         std::size_t* violations = nullptr, std::size_t* excluded = nullptr) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < store.size(); ++r)
    if (store.rows[r].focus_condition == c && store.rows[r].focus_id != store.rows[r].accomp_id) rows.push_back(r);
  if (rows.empty()) throw EvaluationError("no pseudo-mix segments for condition " + std::string(condition_name(c)));
  const auto mask = condition_mask(mask_condition, store.D, store.C);
  int correct = 0;
  std::vector<std::size_t> cand;
  for (std::size_t q : rows) {
    cand.clear();
    const auto& qr = store.rows[q];
    for (std::size_t r : rows) {
      const auto& rr = store.rows[r];
      if (rr.mix_id == qr.mix_id) {
        if (excluded) ++*excluded;
        continue;
      }
      cand.push_back(r);
    }
    if (cand.empty()) throw EvaluationError("exclusion emptied the reference set for " + qr.segment_id);
    if (violations)
      for (std::size_t r : cand)
        if (store.rows[r].focus_id == qr.focus_id && store.rows[r].accomp_id == qr.accomp_id) ++*violations;
    if (knn_predict(store.embeddings[q], store, cand, k, mask) == qr.focus_id) ++correct;
  }
  return finish(c, mask_condition, correct, static_cast<int>(rows.size()));
}

inline EvalReport eval_subspace(const EmbeddingStore& store, const std::vector<int>& conditions, int k = 5,
                                double segment_length_s = 10.0) {
  store.check();
  EvalReport rep;
  rep.name = "subspace_focus_id";
  rep.k = k;
  rep.input_length_s = segment_length_s;
  for (int c : conditions)
    rep.results.push_back(eval_subspace_one(store, c, c, k, &rep.exclusion_violations, &rep.excluded_rows));
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json res = nlohmann::json::array();
  for (const auto& c : r.results)
    res.push_back({{"condition", condition_name(c.condition)}, {"mask", condition_name(c.mask_condition)},
                   {"accuracy", c.accuracy}, {"correct", c.correct}, {"count", c.count},
                   {"ci95", {c.ci_low, c.ci_high}}});
  return {{"name", r.name},
          {"k", r.k},
          {"input_length_s", r.input_length_s},
          {"results", res},
          {"mean_accuracy", r.mean_accuracy()},
          {"exclusion_violations", r.exclusion_violations},
          {"excluded_rows", r.excluded_rows},
          {"warnings", r.warnings}};
}

inline std::string format_table(const EvalReport& r) {
  std::ostringstream out;
  out << r.name << " (k=" << r.k << ", input " << r.input_length_s << " s)\n";
  out << std::left << std::setw(12) << "condition" << std::setw(12) << "subspace" << std::right << std::setw(10)
      << "acc[%]" << std::setw(10) << "n" << std::setw(20) << "95% CI [%]" << "\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& c : r.results) {
    std::ostringstream ci;
    ci << std::fixed << std::setprecision(1) << 100 * c.ci_low << "-" << 100 * c.ci_high;
    out << std::left << std::setw(12) << condition_name(c.condition) << std::setw(12)
        << condition_name(c.mask_condition) << std::right << std::setw(10) << 100 * c.accuracy << std::setw(10)
        << c.count << std::setw(20) << ci.str() << "\n";
  }
  out << "mean accuracy: " << 100 * r.mean_accuracy() << "%\n";
  if (r.name == "subspace_focus_id") out << "exclusion violations: " << r.exclusion_violations << "\n";
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// 2-D projections

using Points2 = std::vector<std::array<double, 2>>;

inline Eigen::MatrixXd masked_matrix(const EmbeddingStore& store, const ConditionMask& mask) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(store.size()), static_cast<Eigen::Index>(mask.size()));
  for (std::size_t i = 0; i < store.size(); ++i)
    for (std::size_t d = 0; d < mask.size(); ++d)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = store.embeddings[i][d] * mask.m[d];
  return x;
}

/// Projection on the two leading principal axes; axis signs fixed so the
/// largest-magnitude loading is positive.
inline Points2 pca_2d(const Eigen::MatrixXd& x) {
  if (x.rows() < 3) throw ParameterError("PCA needs >= 3 rows");
  Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  Eigen::MatrixXd v = svd.matrixV();
  const Eigen::Index comps = std::min<Eigen::Index>(2, v.cols());
  Points2 out(static_cast<std::size_t>(x.rows()), {0.0, 0.0});
  for (Eigen::Index j = 0; j < comps; ++j) {
    Eigen::Index arg;
    v.col(j).cwiseAbs().maxCoeff(&arg);
    if (v(arg, j) < 0) v.col(j) *= -1.0;
    Eigen::VectorXd proj = centered * v.col(j);
    for (Eigen::Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = proj(i);
  }
  return out;
}

struct TsneParams {
  double perplexity = 10.0;
  int iterations = 500;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iters = 100;
  std::uint64_t seed = 0;
};

/// Exact t-SNE with a binary search on per-point bandwidths.
inline Points2 tsne_2d(const Eigen::MatrixXd& x, const TsneParams& p) {
  const Eigen::Index n = x.rows();
  if (n < 3) throw ParameterError("t-SNE needs >= 3 rows");
  const double perp = std::min(p.perplexity, static_cast<double>(n - 1) / 3.0);
  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  const double target = std::log(perp);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 64; ++it) {
      double sum = 0.0, hsum = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * d2(i, j));
        P(i, j) = w;
        sum += w;
        hsum += w * d2(i, j);
      }
      if (sum <= 0) {
        hi = beta;
        beta = (lo + beta) / 2;
        continue;
      }
      const double h = std::log(sum) + beta * hsum / sum;
      P.row(i) /= sum;
      if (std::fabs(h - target) < 1e-5) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
  }
  P = (P + P.transpose()) / (2.0 * static_cast<double>(n));
  P = P.cwiseMax(1e-12);

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Eigen::MatrixXd y(n, 2), gains = Eigen::MatrixXd::Ones(n, 2), vel = Eigen::MatrixXd::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, 0) = normal(rng);
    y(i, 1) = normal(rng);
  }
  Eigen::MatrixXd num(n, n), grad(n, 2);
  for (int it = 0; it < p.iterations; ++it) {
    const double exag = it < p.exaggeration_iters ? p.early_exaggeration : 1.0;
    const double momentum = it < 250 ? 0.5 : 0.8;
    double qsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        qsum += num(i, j);
      }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / qsum, 1e-12);
        const double m = 4.0 * (exag * P(i, j) - q) * num(i, j);
        grad.row(i) += m * (y.row(i) - y.row(j));
      }
    for (Eigen::Index i = 0; i < n; ++i)
      for (int d = 0; d < 2; ++d) {
        const bool same = (grad(i, d) > 0) == (vel(i, d) > 0);
        gains(i, d) = std::max(0.01, same ? gains(i, d) * 0.8 : gains(i, d) + 0.2);
        vel(i, d) = momentum * vel(i, d) - p.learning_rate * gains(i, d) * grad(i, d);
        y(i, d) += vel(i, d);
      }
    y = y.rowwise() - y.colwise().mean();
  }
  Points2 out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {y(i, 0), y(i, 1)};
  return out;
}

inline std::string scatter_svg(const Points2& pts, const std::vector<MusicId>& labels, const std::string& title) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& p : pts) {
    x0 = std::min(x0, p[0]);
    x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]);
    y1 = std::max(y1, p[1]);
  }
  const double w = 640, h = 640, m = 40;
  const double sx = x1 > x0 ? (w - 2 * m) / (x1 - x0) : 1.0, sy = y1 > y0 ? (h - 2 * m) / (y1 - y0) : 1.0;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << m << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">" << title << "</text>\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double hue = std::fmod(static_cast<double>(labels[i]) * 137.508, 360.0);
    out << "<circle cx=\"" << m + (pts[i][0] - x0) * sx << "\" cy=\"" << h - m - (pts[i][1] - y0) * sy
        << "\" r=\"4\" fill=\"hsl(" << hue << ",70%,45%)\"><title>" << labels[i] << "</title></circle>\n";
  }
  out << "</svg>\n";
  return out.str();
}

/// Writes `<stem>.csv` (segment, x, y, music_id) and `<stem>.svg`.
inline Points2 export_visualization(const EmbeddingStore& store, const ConditionMask& mask, const std::string& method,
                                    const std::filesystem::path& out_stem, std::uint64_t seed = 0,
                                    std::vector<std::filesystem::path>* written = nullptr) {
  if (store.size() < 3) throw ParameterError("visualization needs >= 3 rows");
  const auto x = masked_matrix(store, mask);
  Points2 pts;
  if (method == "pca") {
    pts = pca_2d(x);
  } else if (method == "tsne") {
    TsneParams tp;
    tp.seed = seed;
    pts = tsne_2d(x, tp);
  } else {
    throw ParameterError("unknown projection method '" + method + "'");
  }
  auto csv_path = out_stem;
  csv_path += ".csv";
  auto svg_path = out_stem;
  svg_path += ".svg";
  std::ofstream csv(csv_path);
  csv << "segment,x,y,music_id\n" << std::setprecision(17);
  std::vector<MusicId> labels;
  for (std::size_t i = 0; i < store.size(); ++i) {
    csv << store.rows[i].segment_id << "," << pts[i][0] << "," << pts[i][1] << "," << store.rows[i].label << "\n";
    labels.push_back(store.rows[i].label);
  }
  std::ofstream svg(svg_path);
  svg << scatter_svg(pts, labels, method + " projection");
  if (written) {
    written->push_back(csv_path);
    written->push_back(svg_path);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Listening-test stimuli

struct ListeningSet {
  std::string set_id;
  int instrument = 0;
  std::string type;  // "xab" or "xyc"
  MusicId query_piece = 0;
  MusicId first_piece = 0, second_piece = 0;
  double first_start_s = 0, second_start_s = 0, query_start_s = 0;
  std::string query_clip, first_clip, second_clip;
  double d_first = 0, d_second = 0;
  std::string answer;  // "first" or "second"
};

struct ListeningBundle {
  std::vector<ListeningSet> sets;
  std::string bundle_hash;
};

/// Non-silent windows of `length` samples on a half-window grid.
inline std::vector<std::size_t> clip_candidates(std::span<const float> stem, std::size_t length, double silence_db) {
  std::vector<std::size_t> out;
  if (stem.size() < length) return out;
  const std::size_t hop = std::max<std::size_t>(1, length / 2);
  for (std::size_t s = 0; s + length <= stem.size(); s += hop)
    if (!is_silent(stem.subspan(s, length), silence_db)) out.push_back(s);
  return out;
}

inline ListeningBundle export_listening_sets(const std::vector<Piece>& test_pieces, MainModel& model,
                                             const MelParams& mel_params, int n_query_pieces, std::uint64_t seed,
                                             const std::filesystem::path& out_dir,
                                             const std::vector<int>& instruments = {0, 1, 2, 3},
                                             double clip_s = 10.0, double silence_db = kDefaultSilenceDb,
                                             std::vector<std::filesystem::path>* written = nullptr) {
  if (test_pieces.size() < 4) throw ExportError("need >= 4 test pieces");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "clips");
  MelExtractor ex(mel_params);
  ListeningBundle bundle;
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  std::vector<std::string> files;

  for (int c : instruments) {
    const auto mask = condition_mask(c, model.D, model.C);
    // pieces with usable material for this instrument
    std::vector<const Piece*> usable;
    std::map<MusicId, std::vector<std::size_t>> cands;
    for (const auto& p : test_pieces) {
      if (!p.has(c)) continue;
      const auto len = static_cast<std::size_t>(std::lround(clip_s * p.sample_rate_hz));
      auto cs = clip_candidates(p.stems[static_cast<std::size_t>(c)], len, silence_db);
      if (cs.empty()) continue;
      cands[p.music_id] = cs;
      usable.push_back(&p);
    }
    std::vector<const Piece*> queries;
    for (const Piece* p : usable) {
      const auto& cs = cands[p->music_id];
      const auto len = static_cast<std::size_t>(std::lround(clip_s * p->sample_rate_hz));
      if (cs.size() >= 2 && cs.back() >= cs.front() + len) queries.push_back(p);
    }
    if (static_cast<int>(queries.size()) < n_query_pieces || usable.size() < 4) {
      std::string names;
      for (const auto& p : test_pieces)
        if (std::find(queries.begin(), queries.end(), &p) == queries.end())
          names += (names.empty() ? "" : ", ") + std::to_string(p.music_id);
      throw ExportError("not enough non-silent " + std::string(condition_name(c)) +
                        " material; pieces lacking two separate clips: " + names);
    }
    std::shuffle(queries.begin(), queries.end(), rng);
    queries.resize(static_cast<std::size_t>(n_query_pieces));
    std::sort(queries.begin(), queries.end(), [](auto* a, auto* b) { return a->music_id < b->music_id; });

    for (const Piece* X : queries) {
      const int sr = X->sample_rate_hz;
      const auto len = static_cast<std::size_t>(std::lround(clip_s * sr));
      auto clip = [&](const Piece& p, std::size_t start, const std::string& name) {
        Waveform w{std::vector<float>(p.stems[static_cast<std::size_t>(c)].begin() + static_cast<std::ptrdiff_t>(start),
                                      p.stems[static_cast<std::size_t>(c)].begin() + static_cast<std::ptrdiff_t>(start + len)),
                   sr};
        const auto rel = fs::path("clips") / (name + ".wav");
        audio::write_wav(out_dir / rel, w, audio::WavEncoding::float32);
        files.push_back(rel.generic_string());
        if (written) written->push_back(out_dir / rel);
        auto e = model.encoder.encode(normalize(ex(w.samples)));
        return std::pair{rel.generic_string(), e};
      };
      const auto& xc = cands[X->music_id];
      auto disjoint = [&](std::size_t from) {
        std::vector<std::size_t> out;
        for (std::size_t s : xc)
          if (s + len <= from || s >= from + len) out.push_back(s);
        return out;
      };
      // only query windows that leave room for a separate clip of the same piece
      std::vector<std::size_t> xq;
      for (std::size_t s : xc)
        if (!disjoint(s).empty()) xq.push_back(s);
      const std::size_t xs = xq[pick(xq.size())];
      const auto ys = disjoint(xs);
      const std::size_t ystart = ys[pick(ys.size())];
      std::vector<const Piece*> others;
      for (const Piece* p : usable)
        if (p->music_id != X->music_id) others.push_back(p);
      std::shuffle(others.begin(), others.end(), rng);
      const Piece *A = others[0], *B = others[1], *Cp = others[2];
      auto start_of = [&](const Piece* p) {
        const auto& cs = cands[p->music_id];
        return cs[pick(cs.size())];
      };
      const std::size_t as = start_of(A), bs = start_of(B), cs = start_of(Cp);
      const std::string base = std::string(condition_name(c)) + "_" + std::to_string(X->music_id);
      auto [xp, xe] = clip(*X, xs, base + "_x");
      auto [ap, ae] = clip(*A, as, base + "_a");
      auto [bp, be] = clip(*B, bs, base + "_b");
      auto [yp, ye] = clip(*X, ystart, base + "_y");
      auto [cp, ce] = clip(*Cp, cs, base + "_c");
      auto make = [&](const std::string& type, const Piece* p1, std::size_t s1, const std::string& c1,
                      const std::vector<float>& e1, const Piece* p2, std::size_t s2, const std::string& c2,
                      const std::vector<float>& e2) {
        ListeningSet s;
        s.set_id = base + "_" + type;
        s.instrument = c;
        s.type = type;
        s.query_piece = X->music_id;
        s.query_start_s = static_cast<double>(xs) / sr;
        s.first_piece = p1->music_id;
        s.second_piece = p2->music_id;
        s.first_start_s = static_cast<double>(s1) / sr;
        s.second_start_s = static_cast<double>(s2) / sr;
        s.query_clip = xp;
        s.first_clip = c1;
        s.second_clip = c2;
        s.d_first = masked_distance(xe, e1, mask);
        s.d_second = masked_distance(xe, e2, mask);
        s.answer = s.d_first < s.d_second ? "first" : "second";
        bundle.sets.push_back(s);
      };
      make("xab", A, as, ap, ae, B, bs, bp, be);
      make("xyc", X, ystart, yp, ye, Cp, cs, cp, ce);
    }
  }

  nlohmann::json key = nlohmann::json::array();
  for (const auto& s : bundle.sets)
    key.push_back({{"set_id", s.set_id},
                   {"instrument", condition_name(s.instrument)},
                   {"type", s.type},
                   {"query_piece", s.query_piece},
                   {"first_piece", s.first_piece},
                   {"second_piece", s.second_piece},
                   {"query_clip", s.query_clip},
                   {"first_clip", s.first_clip},
                   {"second_clip", s.second_clip},
                   {"query_start_s", s.query_start_s},
                   {"first_start_s", s.first_start_s},
                   {"second_start_s", s.second_start_s},
                   {"d_first", s.d_first},
                   {"d_second", s.d_second},
                   {"answer", s.answer}});
  {
    std::ofstream out(out_dir / "answer_key.json");
    out << key.dump(2) << "\n";
  }
  if (written) written->push_back(out_dir / "answer_key.json");
  files.push_back("answer_key.json");
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) h.update(f).update(file_sha256(out_dir / f));
  bundle.bundle_hash = h.hex();
  return bundle;
}

}  // namespace instrsim
