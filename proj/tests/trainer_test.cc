// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/trainer.h"

#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "nidss/scene_oracle.h"

namespace nidss {
namespace {

using V3 = Vector3<double>;

TEST(SamplePixelsTest, FullImageIsAPermutation) {
  auto pixels = SamplePixels(64, 64, 5);
  std::sort(pixels.begin(), pixels.end());
  std::vector<int> expected(64);
  std::iota(expected.begin(), expected.end(), 0);
  EXPECT_EQ(pixels, expected);
  EXPECT_EQ(SamplePixels(4096, 100, 9), SamplePixels(4096, 100, 9));
  EXPECT_THROW(SamplePixels(10, 11, 0), std::invalid_argument);
}

TEST(SamplePixelsTest, DistinctAndUniformOverTiles) {
  constexpr int kSide = 64, kTile = 16, kTiles = 16, kDraws = 100;
  std::vector<double> counts(kTiles, 0);
  for (int d = 0; d < kDraws; ++d) {
    const auto pixels = SamplePixels(kSide * kSide, 1000, DeriveSeed(77, d));
    std::set<int> unique(pixels.begin(), pixels.end());
    ASSERT_EQ(unique.size(), 1000u);
    for (int p : pixels) {
      const int tx = (p % kSide) / kTile, ty = (p / kSide) / kTile;
      counts[ty * (kSide / kTile) + tx] += 1;
    }
  }
  const double expected = 1000.0 * kDraws / kTiles;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(kTiles - 1);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.001);
}

TEST(LossTest, PhotometricHandValues) {
  const std::vector<V3> gt = {V3(0.5, 0.5, 0.5), V3(0.1, 0.2, 0.3)};
  EXPECT_EQ(PhotometricLoss<double>(gt, gt), 0.0);
  std::vector<V3> pred = {V3(0.6, 0.3, 0.8), V3(0.2, 0.0, 0.6)};
  EXPECT_NEAR(PhotometricLoss<double>(std::span(pred).first(1),
                                      std::span(gt).first(1)),
              0.6, 1e-12);
  EXPECT_NEAR(PhotometricLoss<double>(pred, gt), 1.2, 1e-12);
  std::vector<V3> short_gt(1);
  EXPECT_THROW(PhotometricLoss<double>(pred, short_gt), std::invalid_argument);
}

TEST(LossTest, GeometricHandValuesAndMask) {
  int valid = -1;
  const std::vector<double> zeros(3, 0.0), pred = {1.0, 2.0, 3.0};
  EXPECT_EQ(GeometricLoss<double>(pred, zeros, {}, &valid), 0.0);
  EXPECT_EQ(valid, 0);
  const std::vector<double> gt = {2.0}, one = {1.5};
  EXPECT_NEAR(GeometricLoss<double>(one, gt), 0.5, 1e-15);
}

TEST(LossTest, SemanticHandValuesAndPaletteCheck) {
  const Palette palette(std::vector<PaletteEntry>{{0, "red", {255, 0, 0}}});
  const std::vector<V3> black(2, V3::Zero()), pred(2, V3(0.3, 0.3, 0.3));
  EXPECT_EQ(SemanticLoss<double>(pred, black, &palette), 0.0);
  const std::vector<V3> red = {V3(1, 0, 0)}, zero = {V3::Zero()};
  EXPECT_NEAR(SemanticLoss<double>(zero, red, &palette), 1.0, 1e-15);
  EXPECT_EQ(SemanticLoss<double>(red, red, &palette), 0.0);
  const std::vector<V3> foreign = {V3(0.5, 0.5, 0.5)};
  EXPECT_THROW(SemanticLoss<double>(zero, foreign, &palette),
               std::runtime_error);
}

// Perturbing predictions at masked pixels changes neither the value nor the
// gradient; checked by central differences on every prediction entry.
TEST(LossTest, MaskedPixelsHaveZeroGradient) {
  const Palette palette = BuildPalette(3);
  const std::vector<double> gt_depth = {2.0, 0.0, 1.0, 0.0};
  std::vector<double> pred_depth = {1.7, 0.4, 1.3, 2.2};
  const std::vector<V3> gt_sem = {palette.ColorOf(0).cast<double>(), V3::Zero(),
                                  palette.ColorOf(2).cast<double>(), V3::Zero()};
  std::vector<V3> pred_sem = {V3(0.2, 0.4, 0.1), V3(0.9, 0.1, 0.3),
                              V3(0.3, 0.3, 0.6), V3(0.5, 0.8, 0.2)};
  std::vector<double> g_depth(4);
  std::vector<V3> g_sem(4);
  GeometricLoss<double>(pred_depth, gt_depth, g_depth);
  SemanticLoss<double>(pred_sem, gt_sem, &palette, g_sem);
  const double h = 1e-6;
  for (int i = 0; i < 4; ++i) {
    auto loss_at = [&](double delta) {
      std::vector<double> p = pred_depth;
      p[i] += delta;
      return GeometricLoss<double>(p, gt_depth);
    };
    const double fd = (loss_at(h) - loss_at(-h)) / (2 * h);
    EXPECT_NEAR(fd, g_depth[i], 1e-8);
    if (gt_depth[i] == 0) {
      EXPECT_EQ(g_depth[i], 0.0);
    }
    for (int c = 0; c < 3; ++c) {
      auto sem_at = [&](double delta) {
        std::vector<V3> p = pred_sem;
        p[i][c] += delta;
        return SemanticLoss<double>(p, gt_sem, &palette);
      };
      EXPECT_NEAR((sem_at(h) - sem_at(-h)) / (2 * h), g_sem[i][c], 1e-7);
      if (gt_sem[i].isZero()) {
        EXPECT_EQ(g_sem[i][c], 0.0);
      }
    }
  }
}

TEST(SelectKeyframeTest, SingleKeyframeAlwaysChosen) {
  const std::vector<int> ids = {4};
  for (uint64_t s = 0; s < 50; ++s) EXPECT_EQ(SelectKeyframe(ids, {}, s), 4);
  EXPECT_THROW(SelectKeyframe(std::vector<int>{}, {}, 0), std::invalid_argument);
}

TEST(SelectKeyframeTest, NoRecencyWindowIsUniform) {
  TrainConfig config;
  config.recency_window = 0;
  std::vector<int> ids(10);
  std::iota(ids.begin(), ids.end(), 100);
  constexpr int kDraws = 100000;
  std::vector<int> counts(10, 0);
  for (int d = 0; d < kDraws; ++d) ++counts[SelectKeyframe(ids, config, d) - 100];
  const double p = 0.1, sigma = std::sqrt(kDraws * p * (1 - p));
  for (int c : counts) EXPECT_LT(std::abs(c - kDraws * p), 3 * sigma);
}

TEST(SelectKeyframeTest, RecentKeyframeGetsFiveSevenths) {
  TrainConfig config;
  config.recency_window = 1;
  config.recency_boost = 5;
  const std::vector<int> ids = {0, 1, 2};
  constexpr int kDraws = 100000;
  int recent = 0;
  for (int d = 0; d < kDraws; ++d) recent += SelectKeyframe(ids, config, d) == 2;
  const double p = 5.0 / 7.0, sigma = std::sqrt(kDraws * p * (1 - p));
  EXPECT_LT(std::abs(recent - kDraws * p), 3 * sigma);
}

TEST(LrTest, WarmupAndDecay) {
  TrainConfig config;
  EXPECT_EQ(config.lr_base, 1e-2);
  EXPECT_DOUBLE_EQ(LrAt(999, config), 5e-3);
  EXPECT_DOUBLE_EQ(LrAt(config.warmup_iters - 1, config), config.lr_base);
  EXPECT_DOUBLE_EQ(LrAt(config.warmup_iters, config), config.lr_base);
  EXPECT_DOUBLE_EQ(LrAt(config.warmup_iters + 499, config), config.lr_base);
  EXPECT_DOUBLE_EQ(LrAt(config.warmup_iters + 500, config), 0.95e-2);
  EXPECT_DOUBLE_EQ(LrAt(config.warmup_iters + 1000, config), 0.95 * 0.95e-2);
}

FieldConfig SmallField() {
  FieldConfig config;
  config.grid.num_levels = 3;
  config.grid.table_size = 1 << 8;
  config.grid.base_resolution = 4;
  config.grid.domain_min = Vec3::Constant(-2.5);
  config.grid.domain_max = Vec3::Constant(2.5);
  config.hidden_width = 8;
  config.geometry_feature_dim = 5;
  return config;
}

TEST(AdamTest, ZeroGradientLeavesParams) {
  auto params = InitializeFieldParams<double>(SmallField(), 1);
  const std::vector<double> before(params.values().begin(), params.values().end());
  GradientBuffer<double> grads(SmallField());
  OptimizerState<double> state;
  AdamStep(&params, grads, &state, 0.01);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), params.values().begin()));
  EXPECT_EQ(state.step, 1);
}

TEST(AdamTest, FirstStepClosedForm) {
  FieldParams<double> params(SmallField());
  GradientBuffer<double> grads(SmallField());
  for (double& g : grads.values()) g = 1.0;
  OptimizerState<double> state;
  AdamStep(&params, grads, &state, 0.01);
  for (double v : params.values()) EXPECT_NEAR(v, -0.01 / (1 + 1e-8), 1e-15);
}

TEST(AdamTest, DescendsQuadratic) {
  FieldParams<double> params(SmallField());
  for (double& v : params.values()) v = 1.0;
  GradientBuffer<double> grads(SmallField());
  OptimizerState<double> state;
  for (int step = 0; step < 100; ++step) {
    for (size_t i = 0; i < grads.values().size(); ++i) {
      grads.values()[i] = 2 * params.values()[i];
    }
    AdamStep(&params, grads, &state, 0.01);
  }
  for (double v : params.values()) EXPECT_LT(std::abs(v), 0.5);
}

TEST(AdamTest, NonFiniteGradientNamesTensorAndChangesNothing) {
  auto params = InitializeFieldParams<double>(SmallField(), 1);
  const std::vector<double> before(params.values().begin(), params.values().end());
  GradientBuffer<double> grads(SmallField());
  const auto& spec = params.layout().tensors()[params.layout().mlp_layers(MlpId::kColor)[1].weight];
  grads.values()[spec.offset + 3] = std::nan("");
  OptimizerState<double> state;
  try {
    AdamStep(&params, grads, &state, 0.01);
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(spec.name), std::string::npos);
  }
  EXPECT_TRUE(std::equal(before.begin(), before.end(), params.values().begin()));
  EXPECT_EQ(state.step, 0);
}

struct RoomFixture {
  SyntheticDataset dataset;
  std::unique_ptr<KeyframeAtlas> atlas;

  explicit RoomFixture(const FieldConfig& field, int frames = 300) {
    SceneSpec spec = MakeRoomScene();
    spec.trajectory.num_frames = frames;
    dataset = GenerateDataset(spec);
    AtlasConfig config;
    config.bounds_min = Vec3(-2.5, -2.5, -1.25);
    config.bounds_max = Vec3(2.5, 2.5, 3.75);
    config.field = field;
    atlas = std::make_unique<KeyframeAtlas>(config, dataset.intrinsics);
    for (size_t i = 0; i < dataset.frames.size(); ++i) {
      const Frame& f = dataset.frames[i];
      atlas->MaybeInsertKeyframe(static_cast<int>(i), f.timestamp, f.rgb,
                                 f.depth, f.semantic, f.pose);
    }
  }
};

// Full-batch check of EvaluateBatch gradients (compositing, all three
// losses, every parameter class and s_log) against central differences.
TEST(EvaluateBatchTest, GradientMatchesFiniteDifferences) {
  const RoomFixture room(SmallField(), 2);
  const Keyframe& kf = room.atlas->keyframe(0);
  RaySamplingConfig sampling;
  sampling.num_samples = 24;
  const auto pixels = SamplePixels(64 * 64, 12, 3);
  const RayBatch batch = BuildRayBatch(kf, room.dataset.intrinsics, pixels,
                                       Vec3(0, 0, 1.25), 5.0, sampling, 11);
  ASSERT_GT(batch.size(), 6);

  auto params = InitializeFieldParams<double>(SmallField(), 5);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> hash_value(-0.3, 0.3);
  for (int l = 0; l < 3; ++l) {
    for (double& v : params.tensor(params.layout().hash_level(l))) v = hash_value(rng);
  }
  TrainConfig config;
  config.head_skip_weight = 0;
  GradientBuffer<double> grads(SmallField());
  const LossBreakdown loss =
      EvaluateBatch<double>(params, batch, config, &room.dataset.palette, &grads);
  EXPECT_GT(loss.photometric, 0);
  EXPECT_GT(loss.geometric, 0);
  EXPECT_GT(loss.semantic, 0);
  EXPECT_DOUBLE_EQ(loss.total, loss.photometric + loss.geometric + loss.semantic);

  std::vector<size_t> indices;
  for (const auto& spec : params.layout().tensors()) {
    std::vector<size_t> candidates;
    for (size_t k = spec.offset; k < spec.offset + spec.size(); ++k) {
      if (spec.name.rfind("hash", 0) != 0 || grads.values()[k] != 0) {
        candidates.push_back(k);
      }
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(std::min<size_t>(candidates.size(), 8));
    indices.insert(indices.end(), candidates.begin(), candidates.end());
  }
  ASSERT_GE(indices.size(), 100u);
  const double h = 1e-4;
  for (size_t k : indices) {
    auto loss_at = [&](double delta) {
      FieldParams<double> p = params;
      p.values()[k] += delta;
      return EvaluateBatch<double>(p, batch, config, &room.dataset.palette,
                                   nullptr)
          .total;
    };
    const double fd = (loss_at(h) - loss_at(-h)) / (2 * h);
    const double an = grads.values()[k];
    const double rel = std::abs(fd - an) /
                       std::max({std::abs(fd), std::abs(an), 1e-6});
    EXPECT_LT(rel, 1e-5) << params.layout().TensorAt(k).name << " fd " << fd
                         << " analytic " << an;
  }
}

TEST(EvaluateBatchTest, ModeMatrix) {
  const RoomFixture room(SmallField(), 2);
  RaySamplingConfig sampling;
  sampling.num_samples = 16;
  const RayBatch batch = BuildRayBatch(
      room.atlas->keyframe(0), room.dataset.intrinsics, SamplePixels(4096, 64, 1),
      Vec3(0, 0, 1.25), 5.0, sampling, 2);
  const auto params = InitializeFieldParams<float>(SmallField(), 3);
  for (TrainMode mode : {TrainMode::kRgbd, TrainMode::kRgbdSemantic,
                         TrainMode::kRgb, TrainMode::kRgbSemantic}) {
    TrainConfig config;
    config.mode = mode;
    const LossBreakdown loss =
        EvaluateBatch<float>(params, batch, config, &room.dataset.palette, nullptr);
    EXPECT_GT(loss.photometric, 0) << TrainModeName(mode);
    EXPECT_EQ(loss.geometric > 0, UsesDepth(mode)) << TrainModeName(mode);
    EXPECT_EQ(loss.semantic > 0, UsesSemantics(mode)) << TrainModeName(mode);
    EXPECT_EQ(loss.n_pixels, batch.size());
    EXPECT_LE(loss.n_depth_valid, loss.n_pixels);
    EXPECT_LE(loss.n_sem_valid, loss.n_pixels);
  }
}

FieldConfig TrainingField() {
  FieldConfig config;
  config.grid.table_size = 1 << 12;
  return config;
}

TEST(TrainerTest, RgbModeNeverReportsGeometricLoss) {
  RoomFixture room(TrainingField(), 60);
  TrainConfig config;
  config.mode = TrainMode::kRgb;
  config.pixels_per_iter = 64;
  RaySamplingConfig sampling;
  sampling.num_samples = 32;
  Trainer trainer(room.atlas.get(), config, sampling, &room.dataset.palette);
  for (int it = 0; it < 20; ++it) {
    EXPECT_EQ(trainer.TrainIteration(it).geometric, 0.0);
  }
}

TEST(TrainerTest, FixedSeedRunsAreIdentical) {
  TrainConfig config;
  config.pixels_per_iter = 64;
  config.seed = 42;
  RaySamplingConfig sampling;
  sampling.num_samples = 32;
  std::vector<std::vector<double>> runs;
  for (int run = 0; run < 2; ++run) {
    RoomFixture room(TrainingField(), 60);
    Trainer trainer(room.atlas.get(), config, sampling, &room.dataset.palette);
    std::vector<double> losses;
    for (int it = 0; it < 100; ++it) losses.push_back(trainer.TrainIteration(it).total);
    runs.push_back(losses);
  }
  for (int it = 0; it < 100; ++it) {
    ASSERT_EQ(runs[0][it], runs[1][it]) << "iteration " << it;
  }
}

double WindowMean(const std::vector<TrainLogRow>& log, int begin, int end) {
  double sum = 0;
  for (int i = begin; i < end; ++i) sum += log[i].loss.total;
  return sum / (end - begin);
}

TEST(TrainerTest, LossDecreasesOnSyntheticRoom) {
  RoomFixture room(TrainingField());
  TrainConfig config;
  config.pixels_per_iter = 128;
  RaySamplingConfig sampling;
  sampling.num_samples = 64;
  Trainer trainer(room.atlas.get(), config, sampling, &room.dataset.palette);
  for (int it = 0; it < 2000; ++it) trainer.TrainIteration(it);
  const auto& log = trainer.log();
  ASSERT_EQ(log.size(), 2000u);
  EXPECT_LT(log[1999].loss.total, log[99].loss.total);
  EXPECT_LT(WindowMean(log, 1950, 2000), WindowMean(log, 75, 125));
}

TEST(TrainerTest, LoopClosureCorrectionRecovers) {
  RoomFixture room(TrainingField());
  // The tracker initially reports half of the keyframes 0.1 m off; a loop
  // closure later moves them back.
  std::map<int, Pose> drifted, corrected;
  for (int id = 0; id < room.atlas->num_keyframes(); id += 2) {
    Pose p = room.atlas->keyframe(id).pose;
    corrected[id] = p;
    p.translation += Vec3(0.1, 0, 0);
    drifted[id] = p;
  }
  room.atlas->UpdatePoses(drifted);
  TrainConfig config;
  config.pixels_per_iter = 128;
  config.warmup_iters = 200;
  RaySamplingConfig sampling;
  sampling.num_samples = 64;
  Trainer trainer(room.atlas.get(), config, sampling, &room.dataset.palette);
  for (int it = 0; it < 1000; ++it) trainer.TrainIteration(it);
  const double before = WindowMean(trainer.log(), 800, 1000);
  room.atlas->UpdatePoses(corrected);
  for (int it = 1000; it < 3000; ++it) trainer.TrainIteration(it);
  EXPECT_LT(WindowMean(trainer.log(), 2800, 3000), before);
}

TEST(TrainerTest, ArchivedMapIsUntouchedByLaterTraining) {
  RoomFixture room(TrainingField(), 90);
  TrainConfig config;
  config.pixels_per_iter = 32;
  RaySamplingConfig sampling;
  sampling.num_samples = 32;
  Trainer trainer(room.atlas.get(), config, sampling, &room.dataset.palette);
  for (int it = 0; it < 1000; ++it) trainer.TrainIteration(it);
  const int snap = room.atlas->FreezeAndReset();
  trainer.ResetOptimizer(room.atlas->active_subspace());
  const auto& archived = room.atlas->archive()[snap]->params.values();
  const std::vector<float> frozen(archived.begin(), archived.end());
  // The fresh map needs keyframes of its own.
  for (int i = 0; i < 90; i += 30) {
    const Frame& f = room.dataset.frames[i];
    room.atlas->InsertKeyframe(i, f.timestamp, f.rgb, f.depth, f.semantic, f.pose);
  }
  for (int it = 0; it < 1000; ++it) trainer.TrainIteration(it);
  EXPECT_TRUE(std::equal(frozen.begin(), frozen.end(),
                         room.atlas->archive()[snap]->params.values().begin()));
}

TEST(TrainerTest, EmptyActiveSubspaceIsAnError) {
  RoomFixture room(TrainingField(), 2);
  room.atlas->FreezeAndReset();
  Trainer trainer(room.atlas.get(), TrainConfig{}, RaySamplingConfig{},
                  &room.dataset.palette);
  EXPECT_THROW(trainer.TrainIteration(0), std::logic_error);
}

}  // namespace
}  // namespace nidss
