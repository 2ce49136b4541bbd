#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "instrsim/audio/resample.hpp"
#include "instrsim/audio/wav.hpp"
#include "instrsim/dataset.hpp"
#include "instrsim/hash.hpp"
#include "test_util.hpp"

using namespace instrsim;
using testutil::TempDir;

TEST(Synthesis, SameIdAndSeedIsBitIdentical) {
  auto a = synthesize_piece(1, 120, 30, 7);
  auto b = synthesize_piece(1, 120, 30, 7);
  ASSERT_EQ(a.stems.size(), 5u);
  for (int c = 0; c < 5; ++c) EXPECT_EQ(a.stems[c], b.stems[c]) << condition_name(c);
  EXPECT_EQ(a.present, b.present);
  EXPECT_EQ(a.first_onset_s, b.first_onset_s);
}

TEST(Synthesis, DifferentIdsDifferInEveryStem) {
  auto a = synthesize_piece(1, 120, 30, 7);
  auto b = synthesize_piece(2, 120, 30, 7);
  for (int c = 0; c < 5; ++c) EXPECT_NE(a.stems[c], b.stems[c]) << condition_name(c);
}

TEST(Synthesis, RejectsBadParameters) {
  EXPECT_THROW(synthesize_piece(3, 30, 30, 7), ParameterError);
  EXPECT_THROW(synthesize_piece(3, 241, 30, 7), ParameterError);
  EXPECT_THROW(synthesize_piece(3, 120, 11.9, 7), ParameterError);
  EXPECT_THROW(synthesize_piece(3, 120, 30, 7, 4), ParameterError);
  EXPECT_NO_THROW(synthesize_piece(3, 40, 12, 7));
  EXPECT_NO_THROW(synthesize_piece(3, 240, 12, 7));
}

TEST(Synthesis, StemShapeAndPeakInvariants) {
  for (MusicId id : {1, 2, 3, 4}) {
    auto p = synthesize_piece(id, 90 + 30 * (id % 3), 14, 11);
    const std::size_t n = p.length();
    EXPECT_EQ(n, static_cast<std::size_t>(14 * 16000));
    for (int c = 0; c < 5; ++c) {
      EXPECT_EQ(p.stems[c].size(), n);
      EXPECT_LE(peak(p.stems[c]), 0.5 + 1e-7);
    }
    EXPECT_GE(p.first_onset_s, 0.0);
  }
}

TEST(Synthesis, PresentMatchesRmsRule) {
  auto p = synthesize_piece(5, 150, 12, 3);
  for (int c = 0; c < 5; ++c) {
    const bool loud = rms_db(p.stems[c]) > kDefaultSilenceDb;
    EXPECT_EQ(p.has(c), loud);
  }
  EXPECT_EQ(p.present.size(), 5u);
}

TEST(MixFull, SingleStemIsProportional) {
  Piece p = synthesize_piece(1, 120, 12, 7);
  for (int c = 1; c < 5; ++c) std::fill(p.stems[c].begin(), p.stems[c].end(), 0.0f);
  p.present = present_stems(p.stems, kDefaultSilenceDb);
  ASSERT_EQ(p.present, std::vector<int>{0});
  auto m = mix_full(p);
  for (std::size_t i = 0; i < p.length(); i += 97)
    EXPECT_FLOAT_EQ(m.wave.samples[i], static_cast<float>(m.gain * p.stems[0][i]));
}

TEST(MixFull, NoClippingBranchKeepsExactSum) {
  Piece p;
  p.stems = {{0.1f, 0.3f, -0.2f}, {0.2f, 0.3f, 0.1f}};
  p.present = {0, 1};
  auto m = mix_full(p);
  EXPECT_EQ(m.gain, 1.0);
  EXPECT_FLOAT_EQ(m.wave.samples[1], 0.6f);
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(m.wave.samples[i], static_cast<float>(double(p.stems[0][i]) + double(p.stems[1][i])));
}

TEST(MixFull, ClippingBranchAppliesRecordedGain) {
  Piece p;
  p.stems = {{1.0f, 0.5f, -0.25f}, {1.0f, -0.5f, 0.75f}};
  p.present = {0, 1};
  auto m = mix_full(p);
  EXPECT_DOUBLE_EQ(m.gain, 0.495);
  for (std::size_t i = 0; i < 3; ++i) {
    const double sum = double(p.stems[0][i]) + double(p.stems[1][i]);
    EXPECT_LE(std::fabs(m.wave.samples[i] - 0.495 * sum), 1e-7);
  }
}

TEST(MixFull, SilentPieceIsAnError) {
  Piece p;
  p.stems = {std::vector<float>(100, 0.0f)};
  EXPECT_THROW(mix_full(p), EmptyMixError);
  p.present = {0};
  EXPECT_THROW(mix_full(p), EmptyMixError);
}

TEST(MixFull, StemSumConsistencyOnSynthPieces) {
  for (MusicId id = 1; id <= 3; ++id) {
    auto p = synthesize_piece(id, 120, 12, 5);
    auto m = mix_full(p);
    double worst = 0.0;
    for (std::size_t i = 0; i < p.length(); ++i) {
      double s = 0.0;
      for (int c : p.present) s += p.stems[c][i];
      worst = std::max(worst, std::fabs(m.wave.samples[i] - m.gain * s));
    }
    EXPECT_LE(worst, 1e-7);
  }
}

TEST(Wav, Float32RoundTripIsExact) {
  TempDir d("wav");
  Waveform w{{0.0f, 0.25f, -1.0f, 0.123456789f}, 22050};
  audio::write_wav(d / "a.wav", w, audio::WavEncoding::float32);
  auto r = audio::read_wav(d / "a.wav");
  EXPECT_EQ(r.sample_rate_hz, 22050);
  EXPECT_EQ(r.samples, w.samples);
}

TEST(Wav, Pcm16RoundTripWithinQuantization) {
  TempDir d("wav");
  Waveform w{{0.0f, 0.5f, -0.5f, 0.999f}, 16000};
  audio::write_wav(d / "a.wav", w, audio::WavEncoding::pcm16);
  auto r = audio::read_wav(d / "a.wav");
  ASSERT_EQ(r.samples.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 2.0 / 32767);
}

TEST(Wav, StereoIsDownmixed) {
  TempDir d("wav");
  // hand-written 16-bit stereo file with two frames
  std::string bytes = "RIFF";
  auto u32 = [&](std::uint32_t v) { for (int i = 0; i < 4; ++i) bytes.push_back(char((v >> (8 * i)) & 0xFF)); };
  auto u16 = [&](std::uint16_t v) { for (int i = 0; i < 2; ++i) bytes.push_back(char((v >> (8 * i)) & 0xFF)); };
  u32(36 + 8);
  bytes += "WAVEfmt ";
  u32(16); u16(1); u16(2); u32(8000); u32(8000 * 4); u16(4); u16(16);
  bytes += "data";
  u32(8);
  u16(16384); u16(0); u16(static_cast<std::uint16_t>(-16384)); u16(static_cast<std::uint16_t>(-16384));
  std::ofstream(d / "s.wav", std::ios::binary) << bytes;
  auto r = audio::read_wav(d / "s.wav");
  ASSERT_EQ(r.samples.size(), 2u);
  EXPECT_NEAR(r.samples[0], 0.25, 1e-4);
  EXPECT_NEAR(r.samples[1], -0.5, 1e-4);
}

TEST(Wav, GarbageIsAnIngestionError) {
  TempDir d("wav");
  std::ofstream(d / "bad.wav") << "not a wav file at all";
  EXPECT_THROW(audio::read_wav(d / "bad.wav"), IngestionError);
  EXPECT_THROW(audio::read_wav(d / "missing.wav"), IngestionError);
}

TEST(Resample, PreservesDurationAndLowFrequencyTone) {
  const int sr = 22050;
  Waveform w;
  w.sample_rate_hz = sr;
  for (int i = 0; i < sr; ++i) w.samples.push_back(static_cast<float>(0.5 * std::sin(2 * M_PI * 440.0 * i / sr)));
  auto r = audio::resample(w, 16000);
  EXPECT_EQ(r.sample_rate_hz, 16000);
  EXPECT_NEAR(static_cast<double>(r.samples.size()), 16000.0, 1.0);
  // compare against the analytic tone away from the edges
  double worst = 0.0;
  for (std::size_t i = 200; i + 200 < r.samples.size(); ++i)
    worst = std::max(worst, std::fabs(r.samples[i] - 0.5 * std::sin(2 * M_PI * 440.0 * i / 16000.0)));
  EXPECT_LT(worst, 5e-3);
}

TEST(Manifest, WriteReadRoundTripAndValidation) {
  TempDir d("man");
  auto pieces = testutil::toy_pieces(3);
  pieces[2].split = "test";
  auto m = write_dataset(pieces, d.path(), 7, -60);
  auto r = read_manifest(d / "manifest.json");
  ASSERT_EQ(r.pieces.size(), 3u);
  EXPECT_EQ(r.sample_rate_hz, 16000);
  EXPECT_EQ(r.seed, 7u);
  EXPECT_EQ(r.split("test").size(), 1u);
  EXPECT_NO_THROW(validate(r, d.path()));
  auto loaded = load_pieces(r, d.path(), "train");
  ASSERT_EQ(loaded.size(), 2u);
  for (int c = 0; c < 5; ++c) EXPECT_EQ(loaded[0].stems[c], pieces[0].stems[c]);
  EXPECT_EQ(loaded[0].present, pieces[0].present);

  auto dup = r;
  dup.pieces[1].music_id = dup.pieces[0].music_id;
  EXPECT_THROW(validate(dup, d.path()), FormatError);
  auto bad_split = r;
  bad_split.pieces[0].split = "dev";
  EXPECT_THROW(validate(bad_split, d.path()), FormatError);
  std::filesystem::remove(d / r.pieces[0].stems.begin()->second);
  EXPECT_THROW(validate(r, d.path()), FormatError);
}

TEST(Manifest, SeededGenerationIsByteIdentical) {
  TempDir a("gen"), b("gen");
  SynthDatasetConfig cfg;
  cfg.pretrain_pieces = 1;
  cfg.train_pieces = 2;
  cfg.test_pieces = 1;
  cfg.train_duration_s = cfg.test_duration_s = 12;
  write_dataset(generate_pieces(cfg), a.path(), cfg.seed, cfg.silence_threshold_db);
  write_dataset(generate_pieces(cfg), b.path(), cfg.seed, cfg.silence_threshold_db);
  EXPECT_EQ(file_sha256(a / "manifest.json"), file_sha256(b / "manifest.json"));
  auto m = read_manifest(a / "manifest.json");
  for (const auto& p : m.pieces)
    for (const auto& [name, rel] : p.stems) EXPECT_EQ(file_sha256(a / rel), file_sha256(b / rel)) << rel;
  EXPECT_EQ(m.split("pretrain").size(), 1u);
  EXPECT_EQ(m.split("train").size(), 2u);
  EXPECT_EQ(m.split("test").size(), 1u);
}

TEST(Manifest, TemposComeFromConfiguredSet) {
  SynthDatasetConfig cfg;
  cfg.pretrain_pieces = 0;
  cfg.train_pieces = 6;
  cfg.test_pieces = 0;
  cfg.train_duration_s = 12;
  for (const auto& p : generate_pieces(cfg))
    EXPECT_TRUE(p.tempo_bpm == 90 || p.tempo_bpm == 120 || p.tempo_bpm == 150) << p.tempo_bpm;
}

namespace {
void write_piece_dir(const std::filesystem::path& dir, const Piece& p, const std::vector<int>& conds,
                     int sr = 16000) {
  std::filesystem::create_directories(dir);
  for (int c : conds) {
    Waveform w{p.stems[c], p.sample_rate_hz};
    if (sr != p.sample_rate_hz) w = audio::resample(w, sr);
    audio::write_wav(dir / (std::string(condition_name(c)) + ".wav"), w, audio::WavEncoding::pcm16);
  }
}
}  // namespace

TEST(Ingest, FullAndPartialPieces) {
  TempDir src("src"), out("out");
  auto pieces = testutil::toy_pieces(3);
  write_piece_dir(src / "1", pieces[0], {0, 1, 2, 3, 4});
  write_piece_dir(src / "2", pieces[1], {0, 1, 2, 3, 4});
  write_piece_dir(src / "3", pieces[2], {0, 1, 2, 4});
  std::ofstream(src / "3" / "meta.json") << R"({"tempo_bpm": 120, "split": "test"})";
  auto r = ingest_stem_directory(src.path(), 16000, -60, out.path());
  ASSERT_EQ(r.manifest.pieces.size(), 3u);
  EXPECT_EQ(r.pieces[0].present.size(), 5u);
  EXPECT_EQ(r.pieces[1].present.size(), 5u);
  EXPECT_EQ(r.pieces[2].present, (std::vector<int>{0, 1, 2, 4}));
  EXPECT_EQ(r.pieces[2].split, "test");
  EXPECT_EQ(r.pieces[2].tempo_bpm, 120);
  EXPECT_EQ(r.pieces[0].music_id, 1);
  EXPECT_TRUE(std::filesystem::exists(out / "manifest.json"));
  EXPECT_NO_THROW(validate(read_manifest(out / "manifest.json"), out.path()));
}

TEST(Ingest, DigitalSilenceIsNotPresent) {
  TempDir src("src"), out("out");
  auto p = testutil::toy_pieces(1)[0];
  std::fill(p.stems[3].begin(), p.stems[3].end(), 0.0f);
  write_piece_dir(src / "1", p, {0, 1, 2, 3, 4});
  auto r = ingest_stem_directory(src.path(), 16000, -60, out.path());
  EXPECT_EQ(r.pieces[0].present, (std::vector<int>{0, 1, 2, 4}));
}

TEST(Ingest, ResamplesToTargetRate) {
  TempDir src("src"), out("out");
  auto p = testutil::toy_pieces(1)[0];
  write_piece_dir(src / "1", p, {0, 1}, 22050);
  auto r = ingest_stem_directory(src.path(), 16000, -60, out.path());
  EXPECT_NEAR(static_cast<double>(r.pieces[0].length()), static_cast<double>(p.length()), 2.0);
  EXPECT_EQ(r.pieces[0].sample_rate_hz, 16000);
}

TEST(Ingest, Errors) {
  TempDir src("src"), out("out");
  EXPECT_THROW(ingest_stem_directory(src.path(), 16000, -60, out.path()), EmptyDatasetError);
  std::filesystem::create_directories(src / "1");
  std::ofstream(src / "1" / "drums.wav") << "garbage";
  try {
    ingest_stem_directory(src.path(), 16000, -60, out.path());
    FAIL() << "expected ingestion error";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("drums.wav"), std::string::npos);
  }
  EXPECT_THROW(ingest_stem_directory(src / "nope", 16000, -60, out.path()), IngestionError);
}

TEST(Ingest, TempoEstimateOnSynthDrums) {
  auto p = synthesize_piece(4, 120, 20, 9);
  const double t = estimate_tempo(p.stems, p.sample_rate_hz);
  // a beat-synchronous estimate may land on the double or half tempo
  const bool ok = std::fabs(t - 120) < 3 || std::fabs(t - 60) < 2 || std::fabs(t - 240) < 5;
  EXPECT_TRUE(ok) << t;
  EXPECT_NEAR(estimate_first_onset(p.stems, p.sample_rate_hz, -60), p.first_onset_s, 0.03);
}
