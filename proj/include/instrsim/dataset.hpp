#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "instrsim/audio/resample.hpp"
#include "instrsim/audio/wav.hpp"
#include "instrsim/common.hpp"
#include "instrsim/synth.hpp"

namespace instrsim {

/// A multi-stem piece. Stems are indexed by condition; absent stems are
/// zero arrays of the common length and are missing from `present`.
struct Piece {
  MusicId music_id = 0;
  double tempo_bpm = 120.0;
  int sample_rate_hz = 16000;
  double first_onset_s = 0.0;
  std::vector<std::vector<float>> stems;
  std::vector<int> present;
  std::string split = "train";

  int num_conditions() const { return static_cast<int>(stems.size()); }
  std::size_t length() const { return stems.empty() ? 0 : stems.front().size(); }
  double duration_s() const { return static_cast<double>(length()) / sample_rate_hz; }
  bool has(int c) const { return std::find(present.begin(), present.end(), c) != present.end(); }
};

inline constexpr double kDefaultSilenceDb = -60.0;

inline std::vector<int> present_stems(const std::vector<std::vector<float>>& stems,
                                      double silence_threshold_db) {
  std::vector<int> out;
  for (std::size_t c = 0; c < stems.size(); ++c)
    if (!is_silent(stems[c], silence_threshold_db)) out.push_back(static_cast<int>(c));
  return out;
}

/// Deterministic synthetic piece for (music_id, seed).
inline Piece synthesize_piece(MusicId music_id, double tempo_bpm, double duration_s,
                              std::uint64_t seed, int num_conditions = kNumConditions,
                              int sample_rate_hz = 16000,
                              double silence_threshold_db = kDefaultSilenceDb) {
  if (!(tempo_bpm >= 40.0 && tempo_bpm <= 240.0))
    throw ParameterError("tempo_bpm must lie in [40, 240], got " + std::to_string(tempo_bpm));
  if (!(duration_s >= 12.0)) throw ParameterError("duration_s must be >= 12");
  if (num_conditions != kNumConditions) throw ParameterError("synthesis requires C = 5");
  if (sample_rate_hz < 8000) throw ParameterError("sample rate must be >= 8000 Hz");

  const std::uint64_t base = synth::mix_seed(seed, static_cast<std::uint64_t>(music_id));
  synth::StemRng piece_rng(synth::mix_seed(base, 99));
  Piece p;
  p.music_id = music_id;
  p.tempo_bpm = tempo_bpm;
  p.sample_rate_hz = sample_rate_hz;
  p.first_onset_s = piece_rng.uniform(0.05, 0.6);
  const auto length = static_cast<std::size_t>(std::lround(duration_s * sample_rate_hz));
  synth::Grid grid{p.first_onset_s, 60.0 / tempo_bpm / 4.0, sample_rate_hz, length};
  const synth::Harmony harmony = synth::make_harmony(piece_rng);

  p.stems.resize(kNumConditions);
  for (int c = 0; c < kNumConditions; ++c) {
    synth::StemRng rng(synth::mix_seed(base, static_cast<std::uint64_t>(c) + 1));
    std::vector<double> raw;
    switch (static_cast<Condition>(c)) {
      case Condition::drums: raw = synth::drums(grid, rng); break;
      case Condition::bass: raw = synth::bass(grid, rng, harmony); break;
      case Condition::piano: raw = synth::piano(grid, rng, harmony); break;
      case Condition::guitar: raw = synth::guitar(grid, rng, harmony); break;
      case Condition::others: raw = synth::others(grid, rng, harmony); break;
    }
    double pk = 0.0;
    for (double v : raw) pk = std::max(pk, std::fabs(v));
    const double level = 0.5 * rng.uniform(0.6, 1.0);
    const double scale = pk > 0 ? level / pk : 0.0;
    auto& stem = p.stems[static_cast<std::size_t>(c)];
    stem.resize(length);
    for (std::size_t i = 0; i < length; ++i) stem[i] = static_cast<float>(raw[i] * scale);
  }
  p.present = present_stems(p.stems, silence_threshold_db);
  return p;
}

/// A mix with its peak-safe gain: samples == gain * (sum of stems).
struct Mix {
  Waveform wave;
  double gain = 1.0;
};

inline double safe_gain(double sum_peak) { return std::min(1.0, 0.99 / sum_peak); }

/// Sums the given equal-length stems and applies the peak-safe gain.
inline Mix mix_stems(const std::vector<std::span<const float>>& stems, int sample_rate_hz) {
  if (stems.empty()) throw EmptyMixError("no stems to mix");
  const std::size_t n = stems.front().size();
  std::vector<double> sum(n, 0.0);
  for (auto s : stems) {
    if (s.size() != n) throw ShapeError("stems differ in length");
    for (std::size_t i = 0; i < n; ++i) sum[i] += s[i];
  }
  double pk = 0.0;
  for (double v : sum) pk = std::max(pk, std::fabs(v));
  if (pk == 0.0) throw EmptyMixError("all selected stems are silent");
  Mix m;
  m.gain = safe_gain(pk);
  m.wave.sample_rate_hz = sample_rate_hz;
  m.wave.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.wave.samples[i] = static_cast<float>(m.gain * sum[i]);
  return m;
}

inline Mix mix_full(const Piece& piece) {
  if (piece.present.empty())
    throw EmptyMixError("piece " + std::to_string(piece.music_id) + " has no present stems");
  std::vector<std::span<const float>> stems;
  for (int c : piece.present) stems.emplace_back(piece.stems[static_cast<std::size_t>(c)]);
  return mix_stems(stems, piece.sample_rate_hz);
}

// ---------------------------------------------------------------------------
// Manifest

struct PieceEntry {
  MusicId music_id = 0;
  double tempo_bpm = 0.0;
  double first_onset_s = 0.0;
  double duration_s = 0.0;
  std::string split;
  std::vector<int> present;
  std::map<std::string, std::string> stems;  // stem name -> path relative to manifest
};

struct DatasetManifest {
  std::vector<PieceEntry> pieces;
  int sample_rate_hz = 16000;
  std::uint64_t seed = 0;
  double silence_threshold_db = kDefaultSilenceDb;

  std::vector<const PieceEntry*> split(const std::string& tag) const {
    std::vector<const PieceEntry*> out;
    for (const auto& p : pieces)
      if (p.split == tag) out.push_back(&p);
    return out;
  }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["sample_rate_hz"] = m.sample_rate_hz;
  j["seed"] = m.seed;
  j["silence_threshold_db"] = m.silence_threshold_db;
  j["pieces"] = nlohmann::json::array();
  for (const auto& p : m.pieces) {
    j["pieces"].push_back({{"music_id", p.music_id},
                           {"tempo_bpm", p.tempo_bpm},
                           {"first_onset_s", p.first_onset_s},
                           {"duration_s", p.duration_s},
                           {"split", p.split},
                           {"present", p.present},
                           {"stems", p.stems}});
  }
  return j;
}

inline void validate(const DatasetManifest& m, const std::filesystem::path& base) {
  std::set<MusicId> ids;
  for (const auto& p : m.pieces) {
    if (!ids.insert(p.music_id).second)
      throw FormatError("duplicate music_id " + std::to_string(p.music_id));
    if (p.split != "pretrain" && p.split != "train" && p.split != "test")
      throw FormatError("bad split tag '" + p.split + "'");
    for (const auto& [name, rel] : p.stems)
      if (!std::filesystem::exists(base / rel))
        throw FormatError("missing audio file '" + (base / rel).string() + "'");
  }
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.sample_rate_hz = j.at("sample_rate_hz").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.silence_threshold_db = j.at("silence_threshold_db").get<double>();
  for (const auto& e : j.at("pieces")) {
    PieceEntry p;
    p.music_id = e.at("music_id").get<MusicId>();
    p.tempo_bpm = e.at("tempo_bpm").get<double>();
    p.first_onset_s = e.at("first_onset_s").get<double>();
    p.duration_s = e.at("duration_s").get<double>();
    p.split = e.at("split").get<std::string>();
    p.present = e.at("present").get<std::vector<int>>();
    p.stems = e.at("stems").get<std::map<std::string, std::string>>();
    m.pieces.push_back(std::move(p));
  }
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest '" + path.string() + "'");
  out << to_json(m).dump(2) << "\n";
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read manifest '" + path.string() + "'");
  auto m = manifest_from_json(nlohmann::json::parse(in));
  validate(m, path.parent_path());
  return m;
}

/// Loads one piece's audio from a manifest entry; stems are resampled to the
/// manifest rate and zero-padded to a common length.
inline Piece load_piece(const PieceEntry& e, const DatasetManifest& m,
                        const std::filesystem::path& base) {
  Piece p;
  p.music_id = e.music_id;
  p.tempo_bpm = e.tempo_bpm;
  p.first_onset_s = e.first_onset_s;
  p.sample_rate_hz = m.sample_rate_hz;
  p.split = e.split;
  p.stems.assign(kNumConditions, {});
  std::size_t length = static_cast<std::size_t>(std::lround(e.duration_s * m.sample_rate_hz));
  for (const auto& [name, rel] : e.stems) {
    auto w = audio::read_wav(base / rel);
    if (w.sample_rate_hz != m.sample_rate_hz) w = audio::resample(w, m.sample_rate_hz);
    p.stems[static_cast<std::size_t>(condition_from_name(name))] = std::move(w.samples);
  }
  for (auto& s : p.stems) s.resize(length, 0.0f);
  p.present = present_stems(p.stems, m.silence_threshold_db);
  return p;
}

inline std::vector<Piece> load_pieces(const DatasetManifest& m, const std::filesystem::path& base,
                                      const std::string& split = {}) {
  std::vector<Piece> out;
  for (const auto& e : m.pieces)
    if (split.empty() || e.split == split) out.push_back(load_piece(e, m, base));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic dataset generation

struct SynthDatasetConfig {
  int pretrain_pieces = 12;
  int train_pieces = 24;
  int test_pieces = 10;
  std::vector<double> tempos{90.0, 120.0, 150.0};
  double train_duration_s = 30.0;
  double test_duration_s = 40.0;
  int sample_rate_hz = 16000;
  double silence_threshold_db = kDefaultSilenceDb;
  std::uint64_t seed = 7;
};

/// Generates pieces in memory. Music ids run 1..N in split order
/// pretrain, train, test.
inline std::vector<Piece> generate_pieces(const SynthDatasetConfig& cfg) {
  if (cfg.tempos.empty()) throw ParameterError("tempo set is empty");
  std::mt19937_64 rng(synth::mix_seed(cfg.seed, 0xD47A));
  std::vector<Piece> out;
  MusicId next = 1;
  auto emit = [&](int count, double duration, const char* split) {
    for (int i = 0; i < count; ++i) {
      double tempo = cfg.tempos[std::uniform_int_distribution<std::size_t>(0, cfg.tempos.size() - 1)(rng)];
      Piece p = synthesize_piece(next++, tempo, duration, cfg.seed, kNumConditions,
                                 cfg.sample_rate_hz, cfg.silence_threshold_db);
      p.split = split;
      out.push_back(std::move(p));
    }
  };
  emit(cfg.pretrain_pieces, cfg.train_duration_s, "pretrain");
  emit(cfg.train_pieces, cfg.train_duration_s, "train");
  emit(cfg.test_pieces, cfg.test_duration_s, "test");
  return out;
}

/// Writes stems as float32 WAV under `dir/audio/<id>/<stem>.wav` plus
/// `dir/manifest.json`; returns the manifest.
inline DatasetManifest write_dataset(const std::vector<Piece>& pieces,
                                     const std::filesystem::path& dir, std::uint64_t seed,
                                     double silence_threshold_db,
                                     std::vector<std::filesystem::path>* written = nullptr) {
  if (pieces.empty()) throw EmptyDatasetError("no pieces to write");
  DatasetManifest m;
  m.sample_rate_hz = pieces.front().sample_rate_hz;
  m.seed = seed;
  m.silence_threshold_db = silence_threshold_db;
  for (const auto& p : pieces) {
    PieceEntry e;
    e.music_id = p.music_id;
    e.tempo_bpm = p.tempo_bpm;
    e.first_onset_s = p.first_onset_s;
    e.duration_s = p.duration_s();
    e.split = p.split;
    e.present = p.present;
    auto rel_dir = std::filesystem::path("audio") / std::to_string(p.music_id);
    std::filesystem::create_directories(dir / rel_dir);
    for (int c = 0; c < p.num_conditions(); ++c) {
      if (!p.has(c)) continue;
      auto rel = rel_dir / (std::string(condition_name(c)) + ".wav");
      audio::write_wav(dir / rel, Waveform{p.stems[static_cast<std::size_t>(c)], p.sample_rate_hz});
      if (written) written->push_back(dir / rel);
      e.stems[std::string(condition_name(c))] = rel.generic_string();
    }
    m.pieces.push_back(std::move(e));
  }
  write_manifest(m, dir / "manifest.json");
  if (written) written->push_back(dir / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// Ingestion of `<root>/<piece>/<stem>.wav`

/// First time the summed stems rise above the silence threshold, on 10 ms frames.
inline double estimate_first_onset(const std::vector<std::vector<float>>& stems, int sr,
                                   double threshold_db) {
  if (stems.empty()) return 0.0;
  const std::size_t n = stems.front().size();
  const std::size_t frame = std::max(1, sr / 100);
  std::vector<float> buf(frame);
  for (std::size_t start = 0; start + frame <= n; start += frame) {
    for (std::size_t i = 0; i < frame; ++i) {
      float acc = 0.0f;
      for (const auto& s : stems) acc += s[start + i];
      buf[i] = acc;
    }
    if (!is_silent(buf, threshold_db)) return static_cast<double>(start) / sr;
  }
  return 0.0;
}

/// Autocorrelation tempo estimate over an onset-strength envelope, searched
/// over [40, 240] BPM.
inline double estimate_tempo(const std::vector<std::vector<float>>& stems, int sr) {
  if (stems.empty() || stems.front().empty()) return 120.0;
  const std::size_t hop = std::max(1, sr / 100);  // 100 Hz envelope
  const std::size_t n = stems.front().size() / hop;
  std::vector<double> env(n, 0.0), flux(n, 0.0);
  for (std::size_t f = 0; f < n; ++f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hop; ++i) {
      double v = 0.0;
      for (const auto& s : stems) v += s[f * hop + i];
      acc += v * v;
    }
    env[f] = std::log1p(1e3 * acc / static_cast<double>(hop));
    if (f > 0) flux[f] = std::max(0.0, env[f] - env[f - 1]);
  }
  double best = 120.0, best_score = -1.0;
  for (int bpm = 40; bpm <= 240; ++bpm) {
    const double lag = 6000.0 / bpm;
    const auto l = static_cast<std::size_t>(std::lround(lag));
    if (l >= n) continue;
    double score = 0.0;
    for (std::size_t f = l; f < n; ++f) score += flux[f] * flux[f - l];
    score /= static_cast<double>(n - l);
    if (score > best_score) {
      best_score = score;
      best = bpm;
    }
  }
  return best;
}

struct IngestResult {
  DatasetManifest manifest;
  std::vector<Piece> pieces;
};

/// Ingests `<root>/<piece>/<stem>.wav`. Stem files are resampled and downmixed
/// to mono; missing stems become silent. An optional `<piece>/meta.json` may
/// give `tempo_bpm`, `split` and `music_id`; otherwise numeric directory names
/// become music ids and tempo is estimated. Audio is rewritten as float32
/// WAV under `out_dir` and the manifest written to `out_dir/manifest.json`.
inline IngestResult ingest_stem_directory(const std::filesystem::path& root, int sample_rate_hz,
                                          double silence_threshold_db,
                                          const std::filesystem::path& out_dir,
                                          std::vector<std::filesystem::path>* written = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IngestionError("'" + root.string() + "' is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(root))
    if (d.is_directory()) dirs.push_back(d.path());
  std::sort(dirs.begin(), dirs.end());

  IngestResult result;
  std::set<MusicId> used;
  MusicId next_free = 1;
  for (const auto& dir : dirs) {
    std::vector<std::vector<float>> stems(kNumConditions);
    bool any = false;
    for (int c = 0; c < kNumConditions; ++c) {
      auto path = dir / (std::string(condition_name(c)) + ".wav");
      if (!fs::exists(path)) continue;
      Waveform w;
      try {
        w = audio::read_wav(path);
      } catch (const Error& e) {
        throw IngestionError("unreadable stem '" + path.string() + "': " + e.what());
      }
      if (w.sample_rate_hz != sample_rate_hz) w = audio::resample(w, sample_rate_hz);
      stems[static_cast<std::size_t>(c)] = std::move(w.samples);
      any = true;
    }
    if (!any) continue;
    std::size_t length = 0;
    for (const auto& s : stems) length = std::max(length, s.size());
    for (auto& s : stems) s.resize(length, 0.0f);

    Piece p;
    p.sample_rate_hz = sample_rate_hz;
    p.stems = std::move(stems);
    p.present = present_stems(p.stems, silence_threshold_db);
    std::optional<double> tempo;
    std::optional<MusicId> id;
    if (fs::exists(dir / "meta.json")) {
      std::ifstream in(dir / "meta.json");
      auto meta = nlohmann::json::parse(in);
      if (meta.contains("tempo_bpm")) tempo = meta["tempo_bpm"].get<double>();
      if (meta.contains("split")) p.split = meta["split"].get<std::string>();
      if (meta.contains("music_id")) id = meta["music_id"].get<MusicId>();
    }
    if (!id) {
      const auto name = dir.filename().string();
      if (!name.empty() && std::all_of(name.begin(), name.end(), ::isdigit))
        id = std::stoll(name);
    }
    if (!id || used.count(*id)) {
      while (used.count(next_free)) ++next_free;
      id = next_free;
    }
    used.insert(*id);
    p.music_id = *id;
    p.tempo_bpm = tempo ? *tempo : estimate_tempo(p.stems, sample_rate_hz);
    p.first_onset_s = estimate_first_onset(p.stems, sample_rate_hz, silence_threshold_db);
    result.pieces.push_back(std::move(p));
  }
  if (result.pieces.empty())
    throw EmptyDatasetError("no pieces found under '" + root.string() + "'");

  fs::create_directories(out_dir);
  result.manifest = write_dataset(result.pieces, out_dir, 0, silence_threshold_db, written);
  return result;
}

}  // namespace instrsim
