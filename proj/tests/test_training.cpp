#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "instrsim/training.hpp"
#include "test_util.hpp"

using namespace instrsim;

namespace {

MelParams small_mel() {
  MelParams p;
  p.n_mels = 16;
  p.hop = 400;
  return p;
}

nn::EncoderConfig small_encoder(int out) {
  nn::EncoderConfig c;
  c.n_mels = 16;
  c.channels = {4, 8, 8};
  c.fc_hidden = 16;
  c.out_dim = out;
  return c;
}

struct Fixture {
  std::vector<Piece> pieces = testutil::toy_pieces(5, 12.0);
  PseudoMixCorpus corpus = build_pseudomix_corpus(pieces, tempo_group(pieces, 1), 3, 5);
  MixDataset data{pieces, corpus, small_mel(), SegmentParams{}};
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

InstrumentEncoders random_g(int C, int D) {
  InstrumentEncoders g;
  g.D = D;
  for (int c = 0; c < C; ++c) g.by_condition.emplace(c, nn::Encoder<float>(small_encoder(D), 50 + c));
  return g;
}

}  // namespace

TEST(TrackTriplets, TwoPiecesForceIntraAndCross) {
  auto t = sample_track_triplets({4, 3}, 300, 1);
  ASSERT_EQ(t.size(), 300u);
  for (const auto& x : t) {
    EXPECT_EQ(x.anchor.first, x.positive.first);
    EXPECT_NE(x.anchor.second, x.positive.second);
    EXPECT_NE(x.negative.first, x.anchor.first);
  }
  EXPECT_THROW(sample_track_triplets({5}, 10, 1), DatasetError);
  EXPECT_THROW(sample_track_triplets({1, 1}, 10, 1), DatasetError);
}

TEST(PretrainIndividual, LossDecreasesAndIsDeterministic) {
  auto& fx = fixture();
  auto segs = stem_segments(fx.pieces, 0, small_mel(), SegmentParams{});
  ASSERT_EQ(segs.mels.size(), 5u);
  TrainConfig cfg;
  cfg.individual_epochs = 20;
  cfg.individual_triplets = 128;
  cfg.batch_size = 32;
  auto a = pretrain_individual(segs, small_encoder(4), cfg, 3);
  auto b = pretrain_individual(segs, small_encoder(4), cfg, 3);
  EXPECT_EQ(a.encoder.params().values, b.encoder.params().values);
  ASSERT_EQ(a.history.size(), 20u);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += a.history[i].l_triplet;
    last += a.history[10 + i].l_triplet;
  }
  EXPECT_LT(last, first);
  StemSegments one;
  one.piece_ids = {1};
  one.mels = {segs.mels[0]};
  EXPECT_THROW(pretrain_individual(one, small_encoder(4), cfg, 3), DatasetError);
}

TEST(PretrainMain, BeatsRandomInitOnHeldOutSegments) {
  auto& fx = fixture();
  const int C = 5, D = 2;
  auto g = random_g(C, D);
  TargetTable targets(fx.data, g, C, D);
  std::vector<SegmentRef> train_refs, held;
  for (auto r : fx.data.all_refs()) (r.mix % 4 == 0 ? held : train_refs).push_back(r);
  std::vector<PseudoMixInfo> train_mixes;
  // pretraining runs on a dataset without the held-out mixes
  for (std::size_t i = 0; i < fx.corpus.size(); ++i)
    if (i % 4 != 0) train_mixes.push_back(fx.corpus[i]);
  MixDataset train_data(fx.pieces, train_mixes, small_mel(), SegmentParams{});
  TargetTable train_targets(train_data, g, C, D);
  TrainConfig cfg;
  cfg.pretrain_epochs = 6;
  cfg.batch_size = 32;
  nn::Encoder<float> init(small_encoder(C * D), 8);
  auto r = pretrain_main(train_data, train_targets, init, cfg, 4);
  auto r2 = pretrain_main(train_data, train_targets, init, cfg, 4);
  EXPECT_EQ(r.encoder.params().values, r2.encoder.params().values);
  for (const auto& e : r.history) {
    EXPECT_EQ(e.l_triplet, 0.0);
    EXPECT_EQ(e.total, e.l_aux);
  }
  const double before = mean_auxiliary_loss(init, fx.data, targets, held);
  const double after = mean_auxiliary_loss(r.encoder, fx.data, targets, held);
  EXPECT_LT(after, before);
}

TEST(PretrainMain, MissingInstrumentEncoderIsDependencyError) {
  auto& fx = fixture();
  InstrumentEncoders g;
  g.D = 2;
  EXPECT_THROW(TargetTable(fx.data, g, 5, 2), DependencyError);
}

TEST(TrainMain, OverfitsEightTriplets) {
  auto& fx = fixture();
  TripletSampler s(fx.data);
  auto triplets = build_triplet_set(s, 8, 0.0, 1, 5);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 8;
  cfg.lambda = 0.0;
  auto r = train_main(fx.data, triplets, nullptr, nn::Encoder<float>(small_encoder(10), 2), 5, 2, cfg, 1);
  EXPECT_LT(r.history.back().l_triplet, 0.01);
  EXPECT_GT(r.history.front().l_triplet, r.history.back().l_triplet);
}

TEST(TrainMain, DecompositionIdentityAndOrderInsensitivity) {
  auto& fx = fixture();
  const int C = 5, D = 2;
  auto g = random_g(C, D);
  TargetTable targets(fx.data, g, C, D);
  TripletSampler s(fx.data);
  auto triplets = build_triplet_set(s, 40, 1.0, 2, C);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  nn::Encoder<float> init(small_encoder(C * D), 3);
  auto a = train_main(fx.data, triplets, &targets, init, C, D, cfg, 9);
  for (const auto& e : a.history) {
    EXPECT_EQ(e.total, e.l_triplet + e.lambda * e.l_aux);
    EXPECT_EQ(e.lambda, 0.1);
    EXPECT_GT(e.l_aux, 0.0);
  }
  auto shuffled = triplets;
  std::mt19937_64 rng(5);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto b = train_main(fx.data, shuffled, &targets, init, C, D, cfg, 9);
  EXPECT_EQ(a.encoder.params().values, b.encoder.params().values);
  auto c = train_main(fx.data, triplets, &targets, init, C, D, cfg, 10);
  EXPECT_NE(a.encoder.params().values, c.encoder.params().values);
}

TEST(TrainMain, RejectsBadInputs) {
  auto& fx = fixture();
  TrainConfig cfg;
  EXPECT_THROW(train_main(fx.data, {}, nullptr, nn::Encoder<float>(small_encoder(10), 2), 5, 2, cfg, 1),
               TrainingError);
  TripletSampler s(fx.data);
  auto t = build_triplet_set(s, 2, 0.0, 1, 5);
  EXPECT_THROW(train_main(fx.data, t, nullptr, nn::Encoder<float>(small_encoder(12), 2), 5, 2, cfg, 1), ShapeError);
  cfg.lr = 0;
  EXPECT_THROW(train_main(fx.data, t, nullptr, nn::Encoder<float>(small_encoder(10), 2), 5, 2, cfg, 1),
               ParameterError);
}

TEST(BatchLoss, MatchesPerTripletDefinitions) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d;
  const int C = 5, D = 2, E = 10;
  Eigen::MatrixXd emb(E, 9);
  for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = d(rng);
  std::vector<std::array<int, 3>> slots{{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  std::vector<int> conds{0, 3, 4};
  std::vector<TargetEmbedding> tg(3);
  for (auto& t : tg) {
    t.values.resize(E);
    for (auto& v : t.values) v = d(rng);
  }
  tg[1].flagged = true;
  std::vector<const TargetEmbedding*> ptrs{&tg[0], &tg[1], &tg[2]};
  auto bl = triplet_batch_loss<double>(emb, slots, conds, ptrs, C, D, 0.2, 0.1, static_cast<Eigen::MatrixXd*>(nullptr));
  auto colv = [&](int j) { return std::vector<double>(emb.col(j).data(), emb.col(j).data() + E); };
  double lt = 0, lm = 0;
  for (int k = 0; k < 3; ++k) {
    lt += masked_triplet_loss(colv(slots[k][0]), colv(slots[k][1]), colv(slots[k][2]), condition_mask(conds[k], D, C), 0.2);
    if (k != 1) lm += auxiliary_loss(colv(slots[k][0]), tg[k].values);
  }
  EXPECT_NEAR(bl.l_triplet, lt / 3, 1e-12);
  EXPECT_NEAR(bl.l_aux, lm / 2, 1e-12);
  EXPECT_EQ(bl.aux_count, 2);
}
