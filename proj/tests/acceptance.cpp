// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Set INSTRSIM_ACCEPT_ONLY=1,3,... to run a subset.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "instrsim/audio/wav.hpp"
#include "instrsim/evaluation.hpp"
#include "instrsim/hash.hpp"
#include "instrsim/training.hpp"

using namespace instrsim;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

// pinned tolerances and budgets
constexpr double kOracleTol = 1e-12;
constexpr double kOracleBudgetS = 10;
constexpr double kGradTol = 1e-3;
constexpr double kGradBudgetS = 60;
constexpr double kRenderTol = 1e-7;
constexpr double kPseudomixBudgetS = 60;
constexpr int kTripletPairs = 1000;
constexpr double kTable1Min = 0.40;
constexpr double kDrumsMin = 0.30;
constexpr double kPipelineBudgetS = 20 * 60;
constexpr double kAblationSlackPts = 2.0;
constexpr int kAblationSeeds = 5;
constexpr double kAblationBudgetS = 2 * 3600;
constexpr int kListeningSets = 64;

double secs(clk::time_point t) { return std::chrono::duration<double>(clk::now() - t).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << id << ": " << (pass ? "PASS" : "FAIL") << "  " << detail << std::endl;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::vector<double> randvec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// ---------------------------------------------------------------------------
// 1. objective oracles

namespace oracle {

// the subspace slice read directly off the index range
double slice_distance(const std::vector<double>& a, const std::vector<double>& b, int c, int D) {
  double s = 0;
  for (int i = c * D; i < (c + 1) * D; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double full_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double hinge(double x) { return x > 0 ? x : 0; }

}  // namespace oracle

void criterion_objective() {
  const auto t0 = clk::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  long cases = 0;
  auto note = [&](double got, double want) {
    worst = std::max(worst, std::fabs(got - want));
    ++cases;
  };
  for (int t = 0; t < 1000; ++t) {
    const int C = 1 + static_cast<int>(rng() % 8), D = 1 + static_cast<int>(rng() % 20), E = C * D;
    const int c = static_cast<int>(rng() % static_cast<unsigned>(C));
    auto a = randvec(rng, E), p = randvec(rng, E), n = randvec(rng, E), y = randvec(rng, E);
    const double delta = std::uniform_real_distribution<double>(0, 1)(rng);
    const double lambda = std::uniform_real_distribution<double>(0, 1)(rng);

    const auto m = condition_mask(c, D, C);
    for (int i = 0; i < E; ++i) note(m.m[i], i / D == c ? 1.0 : 0.0);

    note(masked_distance(a, p, m), oracle::slice_distance(a, p, c, D));
    const double lt = oracle::hinge(oracle::slice_distance(a, p, c, D) - oracle::slice_distance(a, n, c, D) + delta);
    note(masked_triplet_loss(a, p, n, m, delta), lt);
    const double plain = oracle::hinge(oracle::full_distance(a, p) - oracle::full_distance(a, n) + delta);
    note(plain_triplet_loss(a, p, n, delta), plain);

    // auxiliary target: some blocks absent
    std::vector<std::vector<double>> blocks(static_cast<std::size_t>(C));
    std::vector<double> raw(static_cast<std::size_t>(E), 0.0);
    for (int k = 0; k < C; ++k) {
      if (rng() % 3 == 0) continue;
      blocks[k] = randvec(rng, D);
      std::copy(blocks[k].begin(), blocks[k].end(), raw.begin() + k * D);
    }
    const auto target = normalize_target(blocks, D);
    const double norm = oracle::full_distance(raw, std::vector<double>(raw.size(), 0.0));
    double lm = 0;
    if (norm > 0) {
      std::vector<double> unit(raw.size());
      for (std::size_t i = 0; i < raw.size(); ++i) unit[i] = raw[i] / norm;
      for (std::size_t i = 0; i < raw.size(); ++i) note(target.values[i], unit[i]);
      lm = oracle::full_distance(a, unit);
      note(auxiliary_loss(a, target.values), lm);
    } else {
      note(target.flagged ? 0.0 : 1.0, 0.0);
    }
    note(combined_loss(lt, lm, lambda).total, lt + lambda * lm);
    note(auxiliary_loss(a, y), oracle::full_distance(a, y));
  }
  const double s = secs(t0);
  report(1, worst <= kOracleTol && s < kOracleBudgetS,
         std::to_string(cases) + " comparisons over 1000 random inputs, max |err| " + fmt(worst) + " (tol " +
             fmt(kOracleTol) + "), " + fmt(s, 3) + " s");
}

// ---------------------------------------------------------------------------
// 2. gradient check on a tiny encoder

MelSegment random_mel(int n_mels, int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  MelSegment m;
  m.n_mels = n_mels;
  m.n_frames = frames;
  m.data.resize(static_cast<std::size_t>(n_mels * frames));
  for (auto& v : m.data) v = d(rng);
  return m;
}

void criterion_gradient() {
  const auto t0 = clk::now();
  const int C = 5, D = 2, E = C * D;
  nn::EncoderConfig cfg;
  cfg.n_mels = 12;
  cfg.channels = {3, 4};
  cfg.fc_hidden = 8;
  cfg.out_dim = E;
  double worst = 0;
  int used = 0, skipped = 0;
  for (int seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    nn::Encoder<float> f(cfg, static_cast<std::uint64_t>(seed));
    std::vector<MelSegment> mels;
    for (int i = 0; i < 6; ++i) mels.push_back(random_mel(cfg.n_mels, 16, static_cast<std::uint64_t>(seed * 100 + i)));
    std::vector<const MelSegment*> ptrs;
    for (auto& m : mels) ptrs.push_back(&m);
    const std::vector<std::array<int, 3>> slots{{0, 1, 2}, {3, 4, 5}, {1, 3, 5}};
    std::vector<int> conds{seed % C, (seed + 2) % C, (seed + 4) % C};
    std::vector<TargetEmbedding> targets(3);
    for (auto& t : targets) {
      std::vector<std::vector<double>> blocks;
      for (int c = 0; c < C; ++c) blocks.push_back(randvec(rng, D));
      t = normalize_target(blocks, D);
    }
    std::vector<const TargetEmbedding*> tptr{&targets[0], &targets[1], &targets[2]};

    // analytic gradient along the single-precision training path
    using MatF = nn::Encoder<float>::Mat;
    nn::Encoder<float>::Tape tape;
    MatF emb = f.forward(ptrs, nn::Mode::train, &tape);
    MatF gemb = MatF::Zero(emb.rows(), emb.cols());
    triplet_batch_loss<float>(emb, slots, conds, tptr, C, D, 0.2, 0.1, &gemb);
    std::vector<float> grad;
    f.backward(tape, gemb, grad);

    // reference: central differences of the same weights evaluated in double
    auto fd = f.cast<double>();
    using MatD = nn::Encoder<double>::Mat;
    auto loss = [&](nn::Encoder<double>& e) {
      MatD x = e.forward(ptrs, nn::Mode::train);
      auto b = triplet_batch_loss<double>(x, slots, conds, tptr, C, D, 0.2, 0.1, static_cast<MatD*>(nullptr));
      return b.l_triplet + 0.1 * b.l_aux;
    };
    // hinge-boundary cases are excluded
    MatD x = fd.forward(ptrs, nn::Mode::train);
    bool boundary = false;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      const auto m = condition_mask(conds[k], D, C);
      std::vector<double> a(E), p(E), n(E);
      for (int r = 0; r < E; ++r) {
        a[r] = x(r, slots[k][0]);
        p[r] = x(r, slots[k][1]);
        n[r] = x(r, slots[k][2]);
      }
      if (std::fabs(masked_distance(a, p, m) - masked_distance(a, n, m) + 0.2) < 1e-4) boundary = true;
    }
    if (boundary) {
      ++skipped;
      continue;
    }
    const double h = 1e-6;
    double num = 0, den = 0;
    for (std::size_t i = 0; i < fd.params().size(); ++i) {
      const double keep = fd.params().values[i];
      fd.params().values[i] = keep + h;
      const double lp = loss(fd);
      fd.params().values[i] = keep - h;
      const double lm = loss(fd);
      fd.params().values[i] = keep;
      const double g = (lp - lm) / (2 * h);
      num += (g - grad[i]) * (g - grad[i]);
      den += g * g;
    }
    worst = std::max(worst, std::sqrt(num / std::max(den, 1e-30)));
    ++used;
  }
  const double s = secs(t0);
  report(2, used > 0 && worst < kGradTol && s < kGradBudgetS,
         std::to_string(used) + " seeds checked (" + std::to_string(skipped) +
             " at a hinge boundary), max relative error " + fmt(worst) + " (tol " + fmt(kGradTol) + "), " +
             fmt(s, 3) + " s");
}

// ---------------------------------------------------------------------------
// shared toy setup

struct Toy {
  std::vector<Piece> train, test;
  MelParams mel;
  SegmentParams seg;      // training segments
  SegmentParams eval_seg; // 10 s evaluation inputs
  nn::EncoderConfig enc;
  int C = 5, D = 16;
  int per_focus = 4;
  TrainConfig tc;
};

Toy make_toy() {
  Toy t;
  SynthDatasetConfig dc;
  dc.pretrain_pieces = 0;
  dc.train_pieces = 12;
  dc.test_pieces = 10;
  // one tempo bin so every piece can donate to every other
  dc.tempos = {120, 124, 128};
  dc.seed = 7;
  auto pieces = generate_pieces(dc);
  t.train.assign(pieces.begin(), pieces.begin() + 12);
  t.test.assign(pieces.begin() + 12, pieces.end());
  t.mel.n_mels = 32;
  t.mel.hop = 400;
  t.mel.fmin = 30;
  t.eval_seg.length_s = 10;
  t.eval_seg.overlap = 0.5;
  t.enc.n_mels = t.mel.n_mels;
  t.enc.channels = {8, 16, 32, 64};
  t.enc.fc_hidden = 128;
  t.tc.epochs = 30;
  t.tc.individual_epochs = 20;
  t.tc.pretrain_epochs = 20;
  return t;
}

// ---------------------------------------------------------------------------
// 3. pseudo-mix structure

void criterion_pseudomix(const Toy& toy) {
  const auto t0 = clk::now();
  auto grouping = tempo_group(toy.train, 10);
  auto corpus = build_pseudomix_corpus(toy.train, grouping, toy.per_focus, 3);
  const std::size_t violations = count_tempo_violations(corpus, grouping);
  // independent check of the grouping: same bin for focus and accompaniment
  std::map<MusicId, double> tempo;
  for (const auto& p : toy.train) tempo[p.music_id] = p.tempo_bpm;
  std::size_t bin_mismatch = 0;
  for (const auto& m : corpus)
    bin_mismatch += std::floor(tempo[m.focus_piece_id] / 10) != std::floor(tempo[m.accomp_piece_id] / 10);

  // rebuild each mix from its serialized provenance only
  std::map<MusicId, const Piece*> by_id;
  for (const auto& p : toy.train) by_id[p.music_id] = &p;
  double worst = 0;
  for (const auto& info : corpus) {
    const Mix direct = render(info, *by_id[info.focus_piece_id], *by_id[info.accomp_piece_id]);
    const auto j = nlohmann::json::parse(to_json(info).dump());
    const auto back = pseudo_mix_from_json(j);
    const Piece& a = *by_id.at(back.focus_piece_id);
    const Piece& b = *by_id.at(back.accomp_piece_id);
    std::vector<double> sum(back.length, 0.0);
    for (const auto& [c, src] : back.label_vector) {
      const auto& stem = (c == back.focus_condition ? a : b).stems[static_cast<std::size_t>(c)];
      const long shift = c == back.focus_condition ? back.shift_samples : 0;
      for (std::size_t n = 0; n < back.length; ++n) {
        const long k = static_cast<long>(n) - shift;
        if (k >= 0 && static_cast<std::size_t>(k) < stem.size()) sum[n] += stem[static_cast<std::size_t>(k)];
      }
    }
    if (direct.wave.samples.size() != sum.size()) {
      worst = 1;
      continue;
    }
    for (std::size_t n = 0; n < sum.size(); ++n)
      worst = std::max(worst, std::fabs(back.gain * sum[n] - direct.wave.samples[n]));
  }
  const std::string h1 = sha256_hex(corpus_to_json(corpus).dump());
  const std::string h2 = sha256_hex(corpus_to_json(build_pseudomix_corpus(toy.train, grouping, toy.per_focus, 3)).dump());
  const double s = secs(t0);
  report(3, violations == 0 && bin_mismatch == 0 && worst <= kRenderTol && h1 == h2 && s < kPseudomixBudgetS,
         std::to_string(corpus.size()) + " mixes, " + std::to_string(violations + bin_mismatch) +
             " tempo-group violations, max reconstruction error " + fmt(worst) + " (tol " + fmt(kRenderTol) +
             "), corpus hash " + (h1 == h2 ? "identical" : "DIFFERS") + " across runs, " + fmt(s, 3) + " s");
}

// ---------------------------------------------------------------------------
// 4. triplet semantics

void criterion_triplets(const Toy& toy, const MixDataset& data) {
  TripletSampler sampler(data);
  auto set = build_triplet_set(sampler, 2 * kTripletPairs, 1.0, 41, toy.C);
  int pairs = 0, violations = 0;
  auto src = [&](const SegmentRef& r, int c) { return data.mix(r.mix).source_of(c); };
  for (std::size_t i = 0; i + 1 < set.size() && pairs < kTripletPairs; ++i) {
    const auto& b = set[i];
    const auto& t = set[i + 1];
    if (b.kind != TripletKind::basic || t.kind != TripletKind::interchanged) continue;
    ++pairs;
    const int c = b.condition, cp = t.condition;
    bool ok = cp != c && t.unit == b.unit && t.anchor == b.anchor && t.positive == b.negative &&
              t.negative == b.positive;
    // basic: positive shares the anchor's c source, negative does not, negative shares its accompaniment
    ok = ok && src(b.anchor, c) >= 0 && src(b.positive, c) == src(b.anchor, c) &&
         src(b.negative, c) >= 0 && src(b.negative, c) != src(b.anchor, c);
    ok = ok && data.mix(b.positive.mix).accomp_piece_id != data.mix(b.anchor.mix).accomp_piece_id;
    ok = ok && data.mix(b.negative.mix).accomp_piece_id == data.mix(b.anchor.mix).accomp_piece_id;
    // interchanged: under c' the roles flip
    ok = ok && src(t.anchor, cp) >= 0 && src(t.positive, cp) == src(t.anchor, cp) &&
         src(t.negative, cp) >= 0 && src(t.negative, cp) != src(t.anchor, cp);
    ok = ok && triplet_semantics_hold(b, data) && triplet_semantics_hold(t, data);
    violations += !ok;
  }
  report(4, pairs == kTripletPairs && violations == 0,
         std::to_string(pairs) + " basic/interchanged pairs, " + std::to_string(violations) + " violations");
}

// ---------------------------------------------------------------------------
// 5-8. training pipeline

struct Variant {
  std::string name;
  double lambda;
  double interchange_ratio;
  bool pretrained_init;
};

struct Pretrained {
  InstrumentEncoders g;
  nn::Encoder<float> f0;
};

Pretrained pretrain(const Toy& toy, std::uint64_t seed) {
  Pretrained out;
  out.g.D = toy.D;
  for (int c = 0; c < toy.C; ++c) {
    auto ss = stem_segments(toy.train, c, toy.mel, toy.seg);
    auto r = pretrain_individual(ss, instrument_config(toy.enc, toy.D), toy.tc, synth::mix_seed(seed, 10 + c));
    out.g.by_condition.emplace(c, std::move(r.encoder));
  }
  MixDataset orig(toy.train, pretraining_mixes(toy.train), toy.mel, toy.seg);
  TargetTable targets(orig, out.g, toy.C, toy.D);
  auto cfg = toy.enc;
  cfg.out_dim = toy.C * toy.D;
  auto r = pretrain_main(orig, targets, nn::Encoder<float>(cfg, synth::mix_seed(seed, 20)), toy.tc,
                         synth::mix_seed(seed, 21));
  out.f0 = std::move(r.encoder);
  return out;
}

nn::Encoder<float> train_variant(const Toy& toy, const MixDataset& data, const TargetTable& targets,
                                 const Pretrained& pre, const Variant& v, std::uint64_t seed) {
  TripletSampler sampler(data);
  auto triplets = build_triplet_set(sampler, 2000, v.interchange_ratio, synth::mix_seed(seed, 30), toy.C);
  auto cfg = toy.enc;
  cfg.out_dim = toy.C * toy.D;
  nn::Encoder<float> f = v.pretrained_init ? pre.f0 : nn::Encoder<float>(cfg, synth::mix_seed(seed, 20));
  auto tc = toy.tc;
  tc.lambda = v.lambda;
  auto r = train_main(data, triplets, v.lambda > 0 ? &targets : nullptr, std::move(f), toy.C, toy.D, tc,
                      synth::mix_seed(seed, 40));
  return std::move(r.encoder);
}

struct EvalData {
  MixDataset originals;  // test pieces, 10 s inputs
  MixDataset mixes;      // test pseudo-mixes, 10 s inputs
};

EvalData make_eval_data(const Toy& toy) {
  auto grouping = tempo_group(toy.test, 10);
  return {MixDataset(toy.test, original_mixes(toy.test), toy.mel, toy.eval_seg),
          MixDataset(toy.test, build_pseudomix_corpus(toy.test, grouping, 4, 5), toy.mel, toy.eval_seg)};
}

std::vector<int> all_conditions(int C) {
  std::vector<int> v(static_cast<std::size_t>(C));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::string pct_list(const EvalReport& r) {
  std::string s;
  for (const auto& x : r.results)
    s += std::string(s.empty() ? "" : " ") + std::string(condition_name(x.condition)) + "=" +
         fmt(100 * x.accuracy, 3) + "%";
  return s;
}

void criterion_pipeline(const Toy& toy, const MixDataset& data, const EvalData& ev, const fs::path& work,
                        std::map<std::string, std::vector<double>>& ablation, double& ablation_seconds,
                        bool run_5, bool run_6, bool run_7, bool run_8) {
  const Variant full{"aux+basic+add", 0.1, 1.0, true};
  const std::vector<Variant> variants{{"basic", 0.0, 0.0, false}, {"aux+basic", 0.1, 0.0, true}, full};
  const auto conds = all_conditions(toy.C);

  // criterion 5 runs the complete pipeline once; its model is also seed 1 of the ablation
  const auto t5 = clk::now();
  Pretrained pre = pretrain(toy, 1);
  TargetTable targets(data, pre.g, toy.C, toy.D);
  nn::Encoder<float> f = train_variant(toy, data, targets, pre, full, 1);
  const double pipeline_s = secs(t5);

  if (run_5) {
    auto t1 = eval_embedding_accuracy(embed_dataset(f, ev.originals, toy.C, toy.D), conds, 5, 10.0);
    auto mixes = embed_dataset(f, ev.mixes, toy.C, toy.D);
    auto t2 = eval_subspace(mixes, conds, 5);
    bool a_ok = true;
    for (const auto& r : t1.results) a_ok = a_ok && r.accuracy >= kTable1Min;
    const double drums = t2.for_condition(0).accuracy;
    double own = 0, other = 0;
    for (int c = 0; c < toy.C; ++c) {
      own += t2.for_condition(c).accuracy / toy.C;
      double o = 0;
      for (int m = 0; m < toy.C; ++m)
        if (m != c) o += eval_subspace_one(mixes, c, m, 5).accuracy / (toy.C - 1);
      other += o / toy.C;
    }
    const bool ok = a_ok && drums >= kDrumsMin && own > other && pipeline_s < kPipelineBudgetS;
    report(5, ok,
           "(a) kNN id accuracy at 10 s [" + pct_list(t1) + "] min " + fmt(100 * kTable1Min, 3) +
               "%; (b) drums subspace " + fmt(100 * drums, 3) + "% (min " + fmt(100 * kDrumsMin, 3) +
               "%), all [" + pct_list(t2) + "]; (c) own subspace " + fmt(100 * own, 3) + "% vs other " +
               fmt(100 * other, 3) + "%; pipeline " + fmt(pipeline_s, 4) + " s");
  }

  if (run_7) {
    const auto ck = work / "frozen.ckpt";
    nn::save_checkpoint(ck, f, {});
    auto run_eval = [&] {
      auto g = nn::load_checkpoint(ck);
      return eval_subspace(embed_dataset(g, ev.mixes, toy.C, toy.D), conds, 5);
    };
    auto r1 = run_eval(), r2 = run_eval();
    const std::string j1 = to_json(r1).dump(), j2 = to_json(r2).dump();
    // audit: the excluded count must equal an independent count of same-mix rows (self included)
    std::size_t audit = r1.exclusion_violations + r2.exclusion_violations;
    auto store = embed_dataset(f, ev.mixes, toy.C, toy.D);
    for (int c : conds) {
      std::size_t v = 0, x = 0, expect = 0;
      eval_subspace_one(store, c, c, 5, &v, &x);
      for (const auto& q : store.rows)
        for (const auto& r : store.rows)
          expect += q.focus_condition == c && r.focus_condition == c && q.focus_id != q.accomp_id &&
                    r.focus_id != r.accomp_id && r.mix_id == q.mix_id;
      audit += v + (x != expect);
    }
    report(7, audit == 0 && j1 == j2,
           std::to_string(audit) + " exclusion violations; repeated evaluation of the frozen checkpoint " +
               (j1 == j2 ? "bit-identical" : "DIFFERS"));
  }

  if (run_8) {
    MainModel model;
    model.encoder = f;
    model.C = toy.C;
    model.D = toy.D;
    const auto dir = work / "listening";
    bool ok = true;
    std::string detail;
    try {
      auto bundle = export_listening_sets(toy.test, model, toy.mel, 8, 77, dir);
      std::size_t bad_len = 0, bad_answer = 0;
      MelExtractor ex(toy.mel);
      std::map<std::string, std::vector<float>> cache;
      auto embed = [&](const std::string& rel) -> const std::vector<float>& {
        auto it = cache.find(rel);
        if (it != cache.end()) return it->second;
        auto w = audio::read_wav(dir / rel);
        if (w.samples.size() != static_cast<std::size_t>(10 * w.sample_rate_hz)) ++bad_len;
        return cache[rel] = model.encoder.encode(normalize(ex(w.samples)));
      };
      std::ifstream kin(dir / "answer_key.json");
      auto key = nlohmann::json::parse(kin);
      const auto& entries = key.is_array() ? key : key.at("sets");
      std::size_t i = 0;
      for (const auto& e : entries) {
        const auto mask = condition_mask(static_cast<int>(condition_from_name(e.at("instrument").get<std::string>())), toy.D, toy.C);
        const auto& x = embed(e.at("query_clip"));
        const double d1 = masked_distance(x, embed(e.at("first_clip")), mask);
        const double d2 = masked_distance(x, embed(e.at("second_clip")), mask);
        const std::string want = d1 < d2 ? "first" : "second";
        bad_answer += e.at("answer") != want || (i < bundle.sets.size() && bundle.sets[i].answer != want);
        ++i;
      }
      ok = bundle.sets.size() == static_cast<std::size_t>(kListeningSets) && entries.size() == bundle.sets.size() &&
           bad_len == 0 && bad_answer == 0;
      detail = std::to_string(bundle.sets.size()) + " sets (want " + std::to_string(kListeningSets) + "), " +
               std::to_string(cache.size()) + " clips, " + std::to_string(bad_len) + " not 10 s, " +
               std::to_string(bad_answer) + " answer mismatches";
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("export failed: ") + e.what();
    }
    report(8, ok, detail);
  }

  if (run_6) {
    const auto t6 = clk::now();
    auto score = [&](nn::Encoder<float>& enc) {
      return eval_subspace(embed_dataset(enc, ev.mixes, toy.C, toy.D), conds, 5);
    };
    for (int s = 1; s <= kAblationSeeds; ++s) {
      Pretrained ps = s == 1 ? std::move(pre) : pretrain(toy, static_cast<std::uint64_t>(s));
      TargetTable ts(data, ps.g, toy.C, toy.D);
      for (const auto& v : variants) {
        nn::Encoder<float> enc = (s == 1 && v.name == full.name)
                                     ? f
                                     : train_variant(toy, data, ts, ps, v, static_cast<std::uint64_t>(s));
        const auto rep = score(enc);
        ablation[v.name].push_back(100 * rep.mean_accuracy());
        std::cout << "  ablation seed " << s << " " << v.name << ": mean " << fmt(ablation[v.name].back(), 4)
                  << "% [" << pct_list(rep) << "]" << std::endl;
      }
    }
    ablation_seconds = secs(t6) + pipeline_s;
  }
}

}  // namespace

int main() {
  std::set<int> only;
  if (const char* e = std::getenv("INSTRSIM_ACCEPT_ONLY")) {
    std::stringstream s(e);
    for (std::string tok; std::getline(s, tok, ',');) only.insert(std::stoi(tok));
  }
  auto want = [&](int id) { return only.empty() || only.count(id); };
  const auto work = fs::temp_directory_path() / ("instrsim_accept_" + std::to_string(::getpid()));
  fs::create_directories(work);

  if (want(1)) criterion_objective();
  if (want(2)) criterion_gradient();
  Toy toy = make_toy();
  if (want(3)) criterion_pseudomix(toy);
  if (want(4) || want(5) || want(6) || want(7) || want(8)) {
    auto grouping = tempo_group(toy.train, 10);
    MixDataset data(toy.train, build_pseudomix_corpus(toy.train, grouping, toy.per_focus, 3), toy.mel, toy.seg);
    if (want(4)) criterion_triplets(toy, data);
    if (want(5) || want(6) || want(7) || want(8)) {
      EvalData ev = make_eval_data(toy);
      std::map<std::string, std::vector<double>> ablation;
      double seconds = 0;
      criterion_pipeline(toy, data, ev, work, ablation, seconds, want(5), want(6), want(7), want(8));
      if (want(6)) {
        auto mean = [&](const std::string& k) {
          double s = 0;
          for (double v : ablation[k]) s += v;
          return s / static_cast<double>(ablation[k].size());
        };
        const double b = mean("basic"), ab = mean("aux+basic"), full = mean("aux+basic+add");
        report(6, full >= b - kAblationSlackPts && full >= ab && full >= b && seconds < kAblationBudgetS,
               "mean subspace accuracy over " + std::to_string(kAblationSeeds) + " seeds: basic " + fmt(b, 4) +
                   "%, aux+basic " + fmt(ab, 4) + "%, aux+basic+add " + fmt(full, 4) + "%; " + fmt(seconds, 5) +
                   " s");
      }
    }
  }
  std::error_code ec;
  fs::remove_all(work, ec);
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
