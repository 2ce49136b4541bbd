#pragma once

// Command-line driver. Every subcommand works inside one run directory,
// writes `<stage>.manifest.json` listing its inputs and outputs with hashes,
// and refuses to replace an existing stage without --force.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "instrsim/dataset.hpp"
#include "instrsim/evaluation.hpp"
#include "instrsim/hash.hpp"
#include "instrsim/mixdata.hpp"
#include "instrsim/pseudomix.hpp"
#include "instrsim/sampling.hpp"
#include "instrsim/training.hpp"

namespace instrsim::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kRunRootEnv = "INSTRSIM_RUN_ROOT";

/// Every accepted configuration key with its default value.
inline json default_config() {
  return json{
      {"seed", 7},
      {"data.pretrain_pieces", 12},
      {"data.train_pieces", 24},
      {"data.test_pieces", 10},
      // one 10 BPM bin, so every split forms a single tempo group
      {"data.tempos", {120.0, 124.0, 128.0}},
      {"data.train_duration_s", 30.0},
      {"data.test_duration_s", 40.0},
      {"data.sample_rate_hz", 16000},
      {"data.silence_threshold_db", kDefaultSilenceDb},
      {"pseudomix.tempo_bin_bpm", 10.0},
      {"pseudomix.per_focus_count", 4},
      {"pseudomix.eval_per_focus_count", 4},
      {"features.n_fft", 1024},
      {"features.hop", 400},
      {"features.n_mels", 32},
      {"features.fmin", 30.0},
      {"features.fmax", 8000.0},
      {"features.log_floor", 1e-6},
      {"segments.length_s", 3.0},
      {"segments.overlap", 0.5},
      {"segments.max_segments", 40},
      {"model.C", 5},
      {"model.D", 16},
      {"model.channels", {8, 16, 32, 64}},
      {"model.kernel", 3},
      {"model.stride", 2},
      {"model.batch_norm", true},
      {"model.activation", "relu"},
      {"model.fc_hidden", 128},
      {"train.margin", 0.2},
      {"train.lambda", 0.1},
      {"train.batch_size", 64},
      {"train.epochs", 50},
      {"train.lr", 1e-3},
      {"train.optimizer", "adam"},
      {"train.n_triplets", 2000},
      {"train.interchange_ratio", 1.0},
      {"train.individual_epochs", 20},
      {"train.individual_triplets", 1000},
      {"train.pretrain_epochs", 20},
      {"train.init", "pretrained"},
      {"eval.k", 5},
      {"eval.input_length_s", 10.0},
      {"eval.subspace_length_s", 10.0},
      {"eval.n_query_pieces", 8},
      {"eval.clip_s", 10.0},
      {"eval.viz_length_s", 3.0},
  };
}

/// Checks `value` against the type of the default for `key`.
inline void set_key(json& cfg, const std::string& key, const json& value) {
  if (!cfg.contains(key)) throw ParameterError("unknown config key '" + key + "'");
  const json& def = cfg.at(key);
  bool ok = false;
  if (def.is_boolean()) ok = value.is_boolean();
  else if (def.is_number_integer()) ok = value.is_number_integer();
  else if (def.is_number()) ok = value.is_number();
  else if (def.is_string()) ok = value.is_string();
  else if (def.is_array()) {
    ok = value.is_array() && !value.empty();
    for (const auto& v : value) ok = ok && v.is_number();
  }
  if (!ok) throw ParameterError("config key '" + key + "' expects a value like " + def.dump() + ", got " + value.dump());
  cfg[key] = value;
}

inline void merge_config(json& cfg, const json& overrides) {
  if (!overrides.is_object()) throw ParameterError("config must be a JSON object with flat dotted keys");
  for (const auto& [k, v] : overrides.items()) set_key(cfg, k, v);
}

/// Parses `key=value`; the value is read as JSON, falling back to a string.
inline void apply_assignment(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ParameterError("expected key=value, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  set_key(cfg, key, value);
}

// ---------------------------------------------------------------------------
// typed views of the flat config

inline std::uint64_t seed_of(const json& c) { return c.at("seed").get<std::uint64_t>(); }

inline SynthDatasetConfig dataset_config(const json& c) {
  SynthDatasetConfig d;
  d.pretrain_pieces = c.at("data.pretrain_pieces");
  d.train_pieces = c.at("data.train_pieces");
  d.test_pieces = c.at("data.test_pieces");
  d.tempos = c.at("data.tempos").get<std::vector<double>>();
  d.train_duration_s = c.at("data.train_duration_s");
  d.test_duration_s = c.at("data.test_duration_s");
  d.sample_rate_hz = c.at("data.sample_rate_hz");
  d.silence_threshold_db = c.at("data.silence_threshold_db");
  d.seed = seed_of(c);
  return d;
}

inline MelParams mel_params(const json& c) {
  MelParams p;
  p.sample_rate_hz = c.at("data.sample_rate_hz");
  p.n_fft = c.at("features.n_fft");
  p.hop = c.at("features.hop");
  p.n_mels = c.at("features.n_mels");
  p.fmin = c.at("features.fmin");
  p.fmax = c.at("features.fmax");
  p.log_floor = c.at("features.log_floor");
  return p;
}

inline SegmentParams segment_params(const json& c, std::optional<double> length_s = std::nullopt) {
  SegmentParams s;
  s.length_s = length_s.value_or(c.at("segments.length_s").get<double>());
  s.overlap = c.at("segments.overlap");
  s.max_segments = c.at("segments.max_segments");
  s.silence_threshold_db = c.at("data.silence_threshold_db");
  return s;
}

inline int num_conditions(const json& c) {
  const int C = c.at("model.C");
  if (C != kNumConditions) throw ParameterError("model.C must be " + std::to_string(kNumConditions));
  return C;
}

inline nn::EncoderConfig encoder_config(const json& c) {
  nn::EncoderConfig e;
  e.n_mels = c.at("features.n_mels");
  e.channels = c.at("model.channels").get<std::vector<int>>();
  e.kernel = c.at("model.kernel");
  e.stride = c.at("model.stride");
  e.batch_norm = c.at("model.batch_norm");
  e.activation = c.at("model.activation");
  e.fc_hidden = c.at("model.fc_hidden");
  e.out_dim = num_conditions(c) * c.at("model.D").get<int>();
  e.validate();
  return e;
}

inline TrainConfig train_config(const json& c) {
  TrainConfig t;
  t.margin = c.at("train.margin");
  t.lambda = c.at("train.lambda");
  t.batch_size = c.at("train.batch_size");
  t.epochs = c.at("train.epochs");
  t.lr = c.at("train.lr");
  t.optimizer = c.at("train.optimizer");
  t.seed = seed_of(c);
  t.n_triplets = c.at("train.n_triplets");
  t.interchange_ratio = c.at("train.interchange_ratio");
  t.individual_epochs = c.at("train.individual_epochs");
  t.individual_triplets = c.at("train.individual_triplets");
  t.pretrain_epochs = c.at("train.pretrain_epochs");
  validate(t);
  return t;
}

// ---------------------------------------------------------------------------
// run directory, lock and stage manifests

inline std::string utc_timestamp(const char* fmt) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, fmt);
  return s.str();
}

inline fs::path default_run_dir(std::uint64_t seed) {
  const char* root = std::getenv(kRunRootEnv);
  return fs::path(root && *root ? root : "runs") / (utc_timestamp("%Y%m%d-%H%M%S") + "-s" + std::to_string(seed));
}

/// Exclusive lock file held for the lifetime of the object.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) throw Error("run directory '" + dir.string() + "' is locked by another process (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

inline fs::path manifest_path(const fs::path& run_dir, const std::string& stage) {
  return run_dir / (stage + ".manifest.json");
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot read '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("'" + p.string() + "': " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << j.dump(2) << "\n";
}

/// One stage invocation: tracks written files, removes them on failure and
/// writes the stage manifest on success.
class Stage {
 public:
  Stage(fs::path run_dir, std::string name, json config, bool force)
      : run_dir_(std::move(run_dir)), name_(std::move(name)), config_(std::move(config)) {
    fs::create_directories(run_dir_);
    lock_.emplace(run_dir_);
    const auto mp = manifest_path(run_dir_, name_);
    if (fs::exists(mp)) {
      if (!force)
        throw Error("stage '" + name_ + "' already has outputs in '" + run_dir_.string() + "'; use --force to overwrite");
      // drop the previous outputs so each file belongs to exactly one manifest
      const json old = read_json(mp);
      for (const auto& o : old.value("outputs", json::array())) {
        std::error_code ec;
        fs::remove(run_dir_ / o.at("path").get<std::string>(), ec);
      }
      fs::remove(mp);
    }
  }

  ~Stage() {
    if (committed_) return;
    for (auto it = written_.rbegin(); it != written_.rend(); ++it) {
      std::error_code ec;
      fs::remove(*it, ec);
    }
  }

  const fs::path& run_dir() const { return run_dir_; }
  const json& config() const { return config_; }
  fs::path path(const fs::path& rel) const { return run_dir_ / rel; }

  /// Creates the parent directory of `rel` and returns the absolute path.
  fs::path output(const fs::path& rel) {
    const auto p = run_dir_ / rel;
    fs::create_directories(p.parent_path());
    written_.push_back(p);
    return p;
  }
  void track(const std::vector<fs::path>& files) { written_.insert(written_.end(), files.begin(), files.end()); }

  /// Verifies that `rel` is listed as an output of `producer` and that its
  /// current hash matches the recorded one.
  fs::path input(const std::string& producer, const std::string& rel) {
    const auto mp = manifest_path(run_dir_, producer);
    if (!fs::exists(mp))
      throw DependencyError("missing '" + producer + "' stage in '" + run_dir_.string() + "' (needed for " + rel + ")");
    const json m = read_json(mp);
    for (const auto& o : m.at("outputs")) {
      if (o.at("path") != rel) continue;
      const auto p = run_dir_ / rel;
      if (!fs::exists(p)) throw ProvenanceError("'" + rel + "' listed by " + producer + " is missing");
      if (o.contains("content_sha256")) {
        // line-order independent identity
        const std::string h = lines_sha256(read_file(p));
        if (h != o.at("content_sha256"))
          throw ProvenanceError("content mismatch for '" + rel + "' (recorded by " + producer + ")");
        inputs_.push_back({{"path", rel}, {"content_sha256", h}, {"producer", producer}});
        return p;
      }
      const std::string h = file_sha256(p);
      if (h != o.at("sha256")) throw ProvenanceError("hash mismatch for '" + rel + "' (recorded by " + producer + ")");
      inputs_.push_back({{"path", rel}, {"sha256", h}, {"producer", producer}});
      return p;
    }
    throw ProvenanceError("'" + rel + "' is not an output of stage '" + producer + "'");
  }
  void external_input(const fs::path& p) {
    inputs_.push_back({{"path", fs::absolute(p).string()}, {"external", true}});
  }

  json& extra() { return extra_; }

  void commit() {
    json outputs = json::array();
    std::vector<fs::path> files = written_;
    std::sort(files.begin(), files.end());
    files.erase(std::unique(files.begin(), files.end()), files.end());
    for (const auto& f : files) {
      if (!fs::is_regular_file(f)) continue;
      json o{{"path", fs::relative(f, run_dir_).generic_string()}, {"sha256", file_sha256(f)}};
      if (f.extension() == ".jsonl") o["content_sha256"] = lines_sha256(read_file(f));
      outputs.push_back(std::move(o));
    }
    json m{{"stage", name_},
           {"created_utc", utc_timestamp("%Y-%m-%dT%H:%M:%SZ")},
           {"config", config_},
           {"inputs", inputs_},
           {"outputs", outputs}};
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    // identity of the stage independent of wall-clock time
    json ident = m;
    ident.erase("created_utc");
    m["content_hash"] = sha256_hex(ident.dump());
    const auto mp = manifest_path(run_dir_, name_);
    written_.push_back(mp);
    write_json(mp, m);
    committed_ = true;
  }

 private:
  fs::path run_dir_;
  std::string name_;
  json config_;
  std::optional<RunLock> lock_;
  std::vector<fs::path> written_;
  json inputs_ = json::array();
  json extra_ = json::object();
  bool committed_ = false;
};

// ---------------------------------------------------------------------------
// shared loaders

inline const char* kDataManifest = "data/manifest.json";

inline std::string dataset_stage(const fs::path& run_dir) {
  const bool gen = fs::exists(manifest_path(run_dir, "gen-data"));
  const bool ing = fs::exists(manifest_path(run_dir, "ingest"));
  if (gen && ing) throw ProvenanceError("run has both gen-data and ingest outputs");
  if (!gen && !ing) throw DependencyError("run has no dataset; run gen-data or ingest first");
  return gen ? "gen-data" : "ingest";
}

/// Loads the dataset and verifies every audio file against its producer manifest.
inline std::pair<DatasetManifest, fs::path> load_dataset(Stage& st) {
  const std::string producer = dataset_stage(st.run_dir());
  const auto mpath = st.input(producer, kDataManifest);
  DatasetManifest m = read_manifest(mpath);
  for (const auto& p : m.pieces)
    for (const auto& [name, rel] : p.stems) st.input(producer, (fs::path("data") / rel).generic_string());
  return {m, mpath.parent_path()};
}

inline std::vector<Piece> pieces_for(const DatasetManifest& m, const fs::path& base, const std::string& split,
                                     const std::string& fallback = {}) {
  auto out = load_pieces(m, base, split);
  if (out.empty() && !fallback.empty()) {
    std::cerr << "warning: split '" << split << "' is empty; using '" << fallback << "'\n";
    out = load_pieces(m, base, fallback);
  }
  if (out.empty()) throw EmptyDatasetError("no pieces in split '" + split + "'");
  return out;
}

inline std::string g_path(int c) { return "models/g_" + std::string(condition_name(c)) + ".ckpt"; }

inline InstrumentEncoders load_instrument_encoders(Stage& st, int C, int D) {
  InstrumentEncoders g;
  g.D = D;
  for (int c = 0; c < C; ++c) {
    const auto mp = manifest_path(st.run_dir(), "pretrain-individual");
    if (!fs::exists(mp)) throw DependencyError("missing individual encoders; run pretrain-individual first");
    auto enc = nn::load_checkpoint(st.input("pretrain-individual", g_path(c)));
    if (enc.out_dim() != D) throw ShapeError("individual encoder width differs from model.D");
    g.by_condition.emplace(c, std::move(enc));
  }
  return g;
}

inline void print_progress(const std::string& stage, const EpochLoss& e) {
  std::cerr << stage << " epoch " << e.epoch << ": l_triplet=" << e.l_triplet << " l_aux=" << e.l_aux
            << " total=" << e.total << "\n";
}

inline PseudoMixCorpus load_corpus(Stage& st, const std::string& rel) {
  return corpus_from_json(read_json(st.input("make-pseudomix", rel)).at("mixes"));
}

/// Main-model checkpoint: explicit path, else the trained model of this run.
inline nn::Encoder<float> load_main(Stage& st, const std::string& explicit_path) {
  if (!explicit_path.empty()) {
    st.external_input(explicit_path);
    return nn::load_checkpoint(explicit_path);
  }
  return nn::load_checkpoint(st.input("train", "models/f.ckpt"));
}

// ---------------------------------------------------------------------------
// subcommands

struct Options {
  fs::path run_dir;
  std::string config_file;
  std::vector<std::string> assignments;
  bool force = false;
  std::optional<int> pieces;
  std::optional<std::uint64_t> seed;
  std::string input_dir;
  std::string checkpoint;
  std::string method = "pca";
  std::string condition = "all";
  std::vector<std::string> conditions;
};

inline json effective_config(const Options& o, const fs::path& run_dir) {
  json cfg = default_config();
  // a run directory remembers the configuration it was created with
  const auto saved = run_dir / "config.json";
  if (fs::exists(saved)) merge_config(cfg, read_json(saved));
  if (!o.config_file.empty()) merge_config(cfg, read_json(o.config_file));
  for (const auto& a : o.assignments) apply_assignment(cfg, a);
  if (o.seed) cfg["seed"] = *o.seed;
  return cfg;
}

inline void cmd_gen_data(Stage& st, const Options& o) {
  json cfg = st.config();
  auto dc = dataset_config(cfg);
  if (o.pieces) {
    // split a total count in the default 12:24:10 proportions
    const int n = *o.pieces;
    if (n < 3) throw ParameterError("--pieces must be >= 3");
    dc.test_pieces = std::max(1, static_cast<int>(std::lround(n * 10.0 / 46.0)));
    dc.pretrain_pieces = std::max(1, static_cast<int>(std::lround(n * 12.0 / 46.0)));
    dc.train_pieces = n - dc.test_pieces - dc.pretrain_pieces;
  }
  auto pieces = generate_pieces(dc);
  std::vector<fs::path> written;
  fs::create_directories(st.path("data"));
  try {
    write_dataset(pieces, st.path("data"), dc.seed, dc.silence_threshold_db, &written);
  } catch (...) {
    st.track(written);
    throw;
  }
  st.track(written);
  st.extra()["pieces"] = {{"pretrain", dc.pretrain_pieces}, {"train", dc.train_pieces}, {"test", dc.test_pieces}};
  std::cout << "wrote " << pieces.size() << " pieces to " << st.path(kDataManifest).string() << "\n";
}

inline void cmd_ingest(Stage& st, const Options& o) {
  if (o.input_dir.empty()) throw ParameterError("ingest needs --input DIR");
  st.external_input(o.input_dir);
  const auto& c = st.config();
  std::vector<fs::path> written;
  fs::create_directories(st.path("data"));
  try {
    auto r = ingest_stem_directory(o.input_dir, c.at("data.sample_rate_hz"), c.at("data.silence_threshold_db"),
                                   st.path("data"), &written);
    st.track(written);
    std::cout << "ingested " << r.pieces.size() << " pieces\n";
  } catch (...) {
    st.track(written);
    throw;
  }
}

inline void cmd_make_pseudomix(Stage& st, const Options&) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  const double bin = c.at("pseudomix.tempo_bin_bpm");
  const std::uint64_t seed = seed_of(c);
  json counts;
  auto build = [&](const std::string& split, int per_focus, std::uint64_t s, const std::string& rel) {
    auto pieces = load_pieces(m, base, split);
    if (pieces.empty()) {
      std::cerr << "warning: split '" << split << "' is empty; no corpus written\n";
      return;
    }
    auto grouping = tempo_group(pieces, bin);
    auto corpus = build_pseudomix_corpus(pieces, grouping, per_focus, s);
    if (count_tempo_violations(corpus, grouping) != 0) throw ConstraintError("tempo-group violation in corpus");
    write_json(st.output(rel), {{"split", split}, {"per_focus_count", per_focus}, {"seed", s},
                                {"tempo_bin_bpm", bin}, {"mixes", corpus_to_json(corpus)}});
    counts[split] = corpus.size();
  };
  build("train", c.at("pseudomix.per_focus_count"), synth::mix_seed(seed, 11), "pseudomix/train_corpus.json");
  build("test", c.at("pseudomix.eval_per_focus_count"), synth::mix_seed(seed, 12), "pseudomix/test_corpus.json");
  st.extra()["mix_counts"] = counts;
  std::cout << "pseudo-mixes: " << counts.dump() << "\n";
}

inline void cmd_pretrain_individual(Stage& st, const Options& o) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  auto pieces = pieces_for(m, base, "pretrain", "train");
  const int C = num_conditions(c), D = c.at("model.D");
  const auto enc = instrument_config(encoder_config(c), D);
  const auto tc = train_config(c);
  std::vector<int> conds;
  if (o.conditions.empty())
    for (int k = 0; k < C; ++k) conds.push_back(k);
  for (const auto& name : o.conditions) conds.push_back(static_cast<int>(condition_from_name(name)));
  json hist;
  for (int k : conds) {
    auto data = stem_segments(pieces, k, mel_params(c), segment_params(c));
    auto r = pretrain_individual(data, enc, tc, synth::mix_seed(seed_of(c), 100 + static_cast<std::uint64_t>(k)),
                                 print_progress);
    nn::save_checkpoint(st.output(g_path(k)), r.encoder,
                        {seed_of(c), static_cast<long>(tc.individual_epochs), {{"condition", std::string(condition_name(k))}}});
    hist[std::string(condition_name(k))] = history_to_json(r.history);
  }
  st.extra()["history"] = hist;
}

inline void cmd_pretrain_main(Stage& st, const Options&) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  auto pieces = pieces_for(m, base, "pretrain", "train");
  const int C = num_conditions(c), D = c.at("model.D");
  auto g = load_instrument_encoders(st, C, D);
  MixDataset data(pieces, pretraining_mixes(pieces), mel_params(c), segment_params(c),
                  c.at("data.silence_threshold_db"));
  TargetTable targets(data, g, C, D);
  nn::Encoder<float> f(encoder_config(c), synth::mix_seed(seed_of(c), 200));
  const auto tc = train_config(c);
  const double before = mean_auxiliary_loss(f, data, targets, data.all_refs());
  auto r = pretrain_main(data, targets, std::move(f), tc, synth::mix_seed(seed_of(c), 201), print_progress);
  const double after = mean_auxiliary_loss(r.encoder, data, targets, data.all_refs());
  nn::save_checkpoint(st.output("models/f_pretrained.ckpt"), r.encoder,
                      {seed_of(c), static_cast<long>(tc.pretrain_epochs), {{"stage", "pretrain-main"}}});
  st.extra()["history"] = history_to_json(r.history);
  st.extra()["l_aux_initial"] = before;
  st.extra()["l_aux_final"] = after;
  std::cout << "mean L_M: " << before << " -> " << after << "\n";
}

inline MixDataset train_mix_dataset(Stage& st, const DatasetManifest& m, const fs::path& base,
                                    std::vector<Piece>& pieces) {
  const auto& c = st.config();
  pieces = pieces_for(m, base, "train");
  return MixDataset(pieces, load_corpus(st, "pseudomix/train_corpus.json"), mel_params(c), segment_params(c),
                    c.at("data.silence_threshold_db"));
}

inline void cmd_build_triplets(Stage& st, const Options&) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  std::vector<Piece> pieces;
  auto data = train_mix_dataset(st, m, base, pieces);
  const auto tc = train_config(c);
  TripletSampler sampler(data);
  auto triplets = build_triplet_set(sampler, tc.n_triplets, tc.interchange_ratio, synth::mix_seed(seed_of(c), 300),
                                    num_conditions(c));
  for (const auto& t : triplets)
    if (!triplet_semantics_hold(t, data)) throw ConflictError("sampled triplet violates label semantics");
  const std::string text = triplets_to_jsonl(triplets, data);
  std::ofstream(st.output("triplets/triplets.jsonl")) << text;
  std::size_t inter = 0;
  for (const auto& t : triplets) inter += t.kind == TripletKind::interchanged;
  st.extra()["counts"] = {{"basic", triplets.size() - inter}, {"interchanged", inter}};
  st.extra()["triplet_content_sha256"] = lines_sha256(text);
  std::cout << "triplets: " << triplets.size() - inter << " basic, " << inter << " interchanged\n";
}

inline void cmd_train(Stage& st, const Options&) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  std::vector<Piece> pieces;
  auto data = train_mix_dataset(st, m, base, pieces);
  const std::string text = read_file(st.input("build-triplets", "triplets/triplets.jsonl"));
  auto triplets = triplets_from_jsonl(text, data);
  const int C = num_conditions(c), D = c.at("model.D");
  const auto tc = train_config(c);
  std::optional<TargetTable> targets;
  if (tc.lambda > 0) {
    auto g = load_instrument_encoders(st, C, D);
    targets.emplace(data, g, C, D);
  }
  const std::string init = c.at("train.init");
  nn::Encoder<float> f;
  if (init == "pretrained") {
    f = nn::load_checkpoint(st.input("pretrain-main", "models/f_pretrained.ckpt"));
  } else if (init == "random") {
    f = nn::Encoder<float>(encoder_config(c), synth::mix_seed(seed_of(c), 200));
  } else {
    throw ParameterError("train.init must be 'pretrained' or 'random'");
  }
  auto r = train_main(data, triplets, targets ? &*targets : nullptr, std::move(f), C, D, tc,
                      synth::mix_seed(seed_of(c), 400), print_progress);
  nn::save_checkpoint(st.output("models/f.ckpt"), r.encoder,
                      {seed_of(c), static_cast<long>(tc.epochs), {{"stage", "train"}}});
  st.extra()["history"] = history_to_json(r.history);
  st.extra()["triplet_content_sha256"] = lines_sha256(text);
  const auto& last = r.history.back();
  std::cout << "final epoch: l_triplet=" << last.l_triplet << " l_aux=" << last.l_aux << " total=" << last.total
            << "\n";
}

inline void write_report(Stage& st, const std::string& stem, const EvalReport& rep, const json& extra = {}) {
  json j = to_json(rep);
  j["config"] = st.config();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json(st.output("reports/" + stem + ".json"), j);
  std::ofstream(st.output("reports/" + stem + ".txt")) << format_table(rep);
  std::cout << format_table(rep);
}

inline void cmd_eval_knn(Stage& st, const Options& o) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  auto pieces = pieces_for(m, base, "test");
  const int C = num_conditions(c), D = c.at("model.D");
  auto f = load_main(st, o.checkpoint);
  const double len = c.at("eval.input_length_s");
  MixDataset data(pieces, original_mixes(pieces), mel_params(c), segment_params(c, len),
                  c.at("data.silence_threshold_db"));
  auto store = embed_dataset(f, data, C, D);
  std::vector<int> conds;
  for (int k = 0; k < C; ++k) conds.push_back(k);
  auto rep = eval_embedding_accuracy(store, conds, c.at("eval.k"), len);
  std::ostringstream stem;
  stem << "knn_" << len << "s";
  write_report(st, stem.str(), rep);
}

inline void cmd_eval_subspace(Stage& st, const Options& o) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  auto pieces = pieces_for(m, base, "test");
  const int C = num_conditions(c), D = c.at("model.D");
  auto f = load_main(st, o.checkpoint);
  const double len = c.at("eval.subspace_length_s");
  MixDataset data(pieces, load_corpus(st, "pseudomix/test_corpus.json"), mel_params(c), segment_params(c, len),
                  c.at("data.silence_threshold_db"));
  auto store = embed_dataset(f, data, C, D);
  std::vector<int> conds;
  for (int k = 0; k < C; ++k) conds.push_back(k);
  const int k = c.at("eval.k");
  auto rep = eval_subspace(store, conds, k, len);
  if (rep.exclusion_violations != 0) throw EvaluationError("exclusion rule violated");
  // focus-id accuracy of every query condition under every subspace
  json cross = json::array();
  for (int qc : conds) {
    json row = json::array();
    for (int mc : conds) row.push_back(eval_subspace_one(store, qc, mc, k).accuracy);
    cross.push_back(row);
  }
  write_report(st, "subspace", rep, {{"cross_subspace_accuracy", cross}});
}

inline void cmd_export_viz(Stage& st, const Options& o) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  auto pieces = pieces_for(m, base, "test");
  const int C = num_conditions(c), D = c.at("model.D");
  auto f = load_main(st, o.checkpoint);
  MixDataset data(pieces, original_mixes(pieces), mel_params(c), segment_params(c, c.at("eval.viz_length_s")),
                  c.at("data.silence_threshold_db"));
  auto store = embed_dataset(f, data, C, D);
  std::vector<std::pair<std::string, ConditionMask>> masks;
  if (o.condition == "all" || o.condition == "full") masks.push_back({"full", full_mask(C * D)});
  if (o.condition == "all")
    for (int k = 0; k < C; ++k) masks.push_back({std::string(condition_name(k)), condition_mask(k, D, C)});
  if (o.condition != "all" && o.condition != "full") {
    const int k = static_cast<int>(condition_from_name(o.condition));
    masks.push_back({o.condition, condition_mask(k, D, C)});
  }
  for (const auto& [name, mask] : masks) {
    const auto stem = "viz/" + o.method + "_" + name;
    st.output(stem + ".csv");
    st.output(stem + ".svg");
    export_visualization(store, mask, o.method, st.path(stem), synth::mix_seed(seed_of(c), 500));
  }
  std::cout << "wrote " << masks.size() << " projections under " << st.path("viz").string() << "\n";
}

inline void cmd_export_listening(Stage& st, const Options& o) {
  const auto& c = st.config();
  auto [m, base] = load_dataset(st);
  auto pieces = pieces_for(m, base, "test");
  const int C = num_conditions(c), D = c.at("model.D");
  MainModel model;
  model.encoder = load_main(st, o.checkpoint);
  model.C = C;
  model.D = D;
  std::vector<fs::path> written;
  ListeningBundle bundle;
  try {
    bundle = export_listening_sets(pieces, model, mel_params(c), c.at("eval.n_query_pieces"),
                                   synth::mix_seed(seed_of(c), 600), st.path("listening"), {0, 1, 2, 3},
                                   c.at("eval.clip_s"), c.at("data.silence_threshold_db"), &written);
  } catch (...) {
    st.track(written);
    throw;
  }
  st.track(written);
  st.extra()["sets"] = bundle.sets.size();
  st.extra()["bundle_sha256"] = bundle.bundle_hash;
  std::cout << "wrote " << bundle.sets.size() << " listening sets (bundle " << bundle.bundle_hash << ")\n";
}

// ---------------------------------------------------------------------------

/// Entry point; returns 0 on success, 1 on usage errors, 2 on runtime errors.
inline int run(int argc, char** argv) {
  CLI::App app{"Instrument-focused music similarity: data, training and evaluation pipeline", "instrsim"};
  app.require_subcommand(1);
  Options o;
  std::string run_dir;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--run-dir", run_dir, std::string("run directory (default: $") + kRunRootEnv +
                                              " or ./runs, then <timestamp>-s<seed>)");
    sub->add_option("--config", o.config_file, "JSON config with flat dotted keys")->check(CLI::ExistingFile);
    sub->add_option("--set", o.assignments, "override a config key: key=value (repeatable)");
    sub->add_option("--seed", o.seed, "global seed");
    sub->add_flag("--force", o.force, "overwrite this stage's previous outputs");
  };
  struct Cmd {
    const char* name;
    const char* help;
    void (*fn)(Stage&, const Options&);
  };
  const std::vector<Cmd> cmds{
      {"gen-data", "synthesize a multi-stem dataset", cmd_gen_data},
      {"ingest", "ingest <root>/<piece>/<stem>.wav", cmd_ingest},
      {"make-pseudomix", "build train/test pseudo-mix corpora", cmd_make_pseudomix},
      {"pretrain-individual", "train per-instrument encoders", cmd_pretrain_individual},
      {"pretrain-main", "pretrain the main encoder on the auxiliary loss", cmd_pretrain_main},
      {"build-triplets", "sample basic and interchanged triplets", cmd_build_triplets},
      {"train", "train the main encoder", cmd_train},
      {"eval-knn", "kNN music-id accuracy per subspace", cmd_eval_knn},
      {"eval-subspace", "pseudo-mix focus-id accuracy with exclusion", cmd_eval_subspace},
      {"export-viz", "2-D projections of test embeddings", cmd_export_viz},
      {"export-listening", "listening-test stimuli and answer key", cmd_export_listening},
  };
  std::vector<CLI::App*> subs;
  for (const auto& cmd : cmds) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    common(sub);
    subs.push_back(sub);
  }
  auto* gen = app.get_subcommand("gen-data");
  gen->add_option("--pieces", o.pieces, "total piece count, split 12:24:10 into pretrain/train/test");
  app.get_subcommand("ingest")->add_option("--input", o.input_dir, "stem directory root")->required();
  app.get_subcommand("pretrain-individual")
      ->add_option("--condition", o.conditions, "condition name (repeatable; default all)");
  for (const char* name : {"eval-knn", "eval-subspace", "export-viz", "export-listening"})
    app.get_subcommand(name)->add_option("--checkpoint", o.checkpoint, "main-model checkpoint (default: this run's)");
  auto* viz = app.get_subcommand("export-viz");
  viz->add_option("--method", o.method, "pca or tsne")->check(CLI::IsMember({"pca", "tsne"}));
  viz->add_option("--condition", o.condition, "all, full or a condition name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() == 0) return 0;
    std::cerr << app.help();
    return 1;
  }

  std::size_t which = 0;
  while (which < subs.size() && !subs[which]->parsed()) ++which;
  const Cmd& cmd = cmds[which];
  try {
    json cfg = effective_config(o, run_dir.empty() ? fs::path() : fs::path(run_dir));
    fs::path dir = run_dir.empty() ? default_run_dir(seed_of(cfg)) : fs::path(run_dir);
    if (o.pieces && *o.pieces < 3) throw ParameterError("--pieces must be >= 3");
    Stage st(dir, cmd.name, cfg, o.force);
    if (!fs::exists(dir / "config.json")) {
      // first stage of a run fixes the configuration for the later stages
      write_json(st.output("config.json"), cfg);
    }
    std::cerr << "run directory: " << dir.string() << "\n";
    cmd.fn(st, o);
    st.commit();
    return 0;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace instrsim::cli
