// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/renderer.h"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

namespace nidss {
namespace {

CameraIntrinsics TestIntrinsics() {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 50;
  intr.cx = intr.cy = 31.5;
  intr.width = intr.height = 64;
  return intr;
}

double Logit(double p) { return std::log(p / (1 - p)); }

TEST(PixelToRayTest, PrincipalPointLooksForward) {
  const auto intr = TestIntrinsics();
  const Ray ray = PixelToRay(intr.cx, intr.cy, intr, Pose());
  EXPECT_LT((ray.direction - Vec3(0, 0, 1)).norm(), 1e-15);
  EXPECT_EQ(ray.origin, Vec3::Zero());
}

TEST(PixelToRayTest, UnitOffsetGivesDiagonal) {
  auto intr = TestIntrinsics();
  intr.cx = 10;
  const Ray ray = PixelToRay(intr.cx + intr.fx, intr.cy, intr, Pose());
  EXPECT_LT((ray.direction - Vec3(1, 0, 1).normalized()).norm(), 1e-15);
}

TEST(PixelToRayTest, YawRotatesDirection) {
  const auto intr = TestIntrinsics();
  Pose pose;
  pose.rotation = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitY());
  pose.translation = Vec3(1, 2, 3);
  const Ray ray = PixelToRay(intr.cx, intr.cy, intr, pose);
  EXPECT_LT((ray.direction - Vec3(1, 0, 0)).norm(), 1e-15);
  EXPECT_EQ(ray.origin, Vec3(1, 2, 3));
}

TEST(PixelToRayTest, OutOfBoundsThrows) {
  const auto intr = TestIntrinsics();
  EXPECT_THROW(PixelToRay(-1, 0, intr, Pose()), std::out_of_range);
  EXPECT_THROW(PixelToRay(0, 64, intr, Pose()), std::out_of_range);
}

TEST(SampleAlongRayTest, Midpoints) {
  const auto t = SampleAlongRay(1.0, 2.0, 2, false, 0);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_DOUBLE_EQ(t[0], 1.25);
  EXPECT_DOUBLE_EQ(t[1], 1.75);
}

TEST(SampleAlongRayTest, StratifiedStaysInBins) {
  const double near = 0.3, far = 4.1;
  const int n = 128;
  const auto t = SampleAlongRay(near, far, n, true, 42);
  const double bin = (far - near) / n;
  for (int i = 0; i < n; ++i) {
    EXPECT_GE(t[i], near + i * bin);
    EXPECT_LE(t[i], near + (i + 1) * bin);
    if (i > 0) {
      EXPECT_GT(t[i], t[i - 1]);
      EXPECT_LE(t[i] - t[i - 1], 2 * (far - near) / n);
    }
  }
  EXPECT_EQ(t, SampleAlongRay(near, far, n, true, 42));
  EXPECT_NE(t, SampleAlongRay(near, far, n, true, 43));
}

TEST(SampleAlongRayTest, InvalidIntervalThrows) {
  EXPECT_THROW(SampleAlongRay(2.0, 1.0, 8, false, 0), std::invalid_argument);
  EXPECT_THROW(SampleAlongRay(0.0, 1.0, 8, false, 0), std::invalid_argument);
  EXPECT_THROW(SampleAlongRay(0.1, 1.0, 1, false, 0), std::invalid_argument);
}

TEST(AlphaFromSdfTest, HandCases) {
  EXPECT_EQ(AlphaFromSdf(0.3, 0.3, 50.0), 0.0);
  EXPECT_NEAR(AlphaFromSdf(10.0, -10.0, 10.0), 1.0, 1e-8);
  const double s = 7.0;
  EXPECT_NEAR(AlphaFromSdf(Logit(0.8) / s, Logit(0.4) / s, s), 0.5, 1e-12);
}

TEST(AlphaFromSdfTest, SignOfSlopeDecidesOpacity) {
  EXPECT_GT(AlphaFromSdf(0.2, 0.1, 30.0), 0.0);
  EXPECT_EQ(AlphaFromSdf(0.1, 0.2, 30.0), 0.0);
}

TEST(AlphaFromSdfTest, DeepInsideDoesNotDivideByZero) {
  const double alpha = AlphaFromSdf(-100.0, -101.0, 1000.0);
  EXPECT_TRUE(std::isfinite(alpha));
  EXPECT_GE(alpha, 0.0);
  EXPECT_LE(alpha, 1.0);
}

TEST(AlphaFromSdfTest, PartialsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> sdf(-0.2, 0.2), sharp(5, 60);
  int checked = 0;
  while (checked < 200) {
    const double a = sdf(rng), b = sdf(rng), s = sharp(rng);
    if (AlphaFromSdf(a, b, s) < 1e-6) continue;
    const auto p = AlphaFromSdfPartials(a, b, s);
    const double h = 1e-6;
    const double da = (AlphaFromSdf(a + h, b, s) - AlphaFromSdf(a - h, b, s)) / (2 * h);
    const double db = (AlphaFromSdf(a, b + h, s) - AlphaFromSdf(a, b - h, s)) / (2 * h);
    const double ds = (AlphaFromSdf(a, b, s + h) - AlphaFromSdf(a, b, s - h)) / (2 * h);
    EXPECT_NEAR(p.d_sdf, da, 1e-6 * (1 + std::abs(da)));
    EXPECT_NEAR(p.d_sdf_next, db, 1e-6 * (1 + std::abs(db)));
    EXPECT_NEAR(p.d_sharpness, ds, 1e-6 * (1 + std::abs(ds)));
    ++checked;
  }
}

TEST(AccumulateTest, SingleOpaqueSample) {
  const std::vector<double> alpha = {1.0}, t = {2.0};
  const std::vector<Vector3<double>> rgb = {Vec3(0.3, 0.4, 0.5)};
  const auto acc = Accumulate<double>(alpha, rgb, rgb, t);
  EXPECT_EQ(acc.depth, 2.0);
  EXPECT_EQ(acc.rgb, Vec3(0.3, 0.4, 0.5));
  EXPECT_EQ(acc.weights.transmittance, std::vector<double>{1.0});
  EXPECT_EQ(acc.weights.weight, std::vector<double>{1.0});
}

TEST(AccumulateTest, TwoHalfSamples) {
  const std::vector<double> alpha = {0.5, 0.5};
  const auto w = WeightsFromAlpha<double>(alpha);
  EXPECT_EQ(w.transmittance, (std::vector<double>{1.0, 0.5}));
  EXPECT_EQ(w.weight, (std::vector<double>{0.5, 0.25}));
}

TEST(AccumulateTest, EmptySpace) {
  const std::vector<double> alpha(5, 0.0), t = {1, 2, 3, 4, 5};
  const std::vector<Vector3<double>> rgb(5, Vec3(1, 1, 1));
  const auto acc = Accumulate<double>(alpha, rgb, rgb, t);
  EXPECT_EQ(acc.depth, 0.0);
  EXPECT_EQ(acc.rgb, Vec3::Zero());
  EXPECT_EQ(acc.sem, Vec3::Zero());
}

TEST(AccumulateTest, RandomSequencesConserveWeight) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> len(1, 64);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> alpha(len(rng));
    for (double& a : alpha) a = u(rng) < 0.1 ? 0.0 : u(rng);
    const auto w = WeightsFromAlpha<double>(alpha);
    double sum = 0, survive = 1;
    for (size_t i = 0; i < alpha.size(); ++i) {
      if (i > 0) EXPECT_LE(w.transmittance[i], w.transmittance[i - 1]);
      EXPECT_GE(w.weight[i], 0.0);
      sum += w.weight[i];
      survive *= 1 - alpha[i];
    }
    EXPECT_NEAR(sum, 1 - survive, 1e-12);
  }
}

TEST(WeightsFromSdfTest, LastSampleIsTransparent) {
  const std::vector<double> sdf = {0.3, 0.1, -0.1};
  const auto w = WeightsFromSdf<double>(sdf, 20.0);
  EXPECT_EQ(w.alpha.back(), 0.0);
  EXPECT_GT(w.alpha[0], 0.0);
}

// Scalar loss of a single ray as a function of its SDF samples and s.
double CompositeLoss(const std::vector<double>& sdf, double s,
                     const std::vector<double>& t,
                     const std::vector<Vector3<double>>& rgb,
                     const std::vector<Vector3<double>>& sem, const Vec3& gc,
                     double gd, const Vec3& gm) {
  const auto w = WeightsFromSdf<double>(sdf, s);
  const auto acc = Accumulate<double>(w.alpha, rgb, sem, t);
  return gc.dot(acc.rgb) + gd * acc.depth + gm.dot(acc.sem);
}

TEST(CompositeBackwardTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1), g(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 24;
    std::vector<double> t(n), sdf(n);
    std::vector<Vector3<double>> rgb(n), sem(n);
    const double surface = 0.5 + u(rng), slope = 0.5 + u(rng);
    for (int i = 0; i < n; ++i) {
      t[i] = 0.2 + 0.1 * i;
      sdf[i] = slope * (surface - t[i]) + 0.05 * g(rng);
      rgb[i] = Vec3(u(rng), u(rng), u(rng));
      sem[i] = Vec3(u(rng), u(rng), u(rng));
    }
    const double s = 5 + 20 * u(rng);
    const Vec3 gc(g(rng), g(rng), g(rng)), gm(g(rng), g(rng), g(rng));
    const double gd = g(rng);
    const auto w = WeightsFromSdf<double>(sdf, s);
    std::vector<double> grad(n, 0.0);
    const double grad_s =
        CompositeBackward<double>(sdf, s, t, w, rgb, sem, gc, gd, gm, grad);
    const double h = 1e-6;
    for (int i = 0; i < n; ++i) {
      auto plus = sdf, minus = sdf;
      plus[i] += h;
      minus[i] -= h;
      const double fd = (CompositeLoss(plus, s, t, rgb, sem, gc, gd, gm) -
                         CompositeLoss(minus, s, t, rgb, sem, gc, gd, gm)) /
                        (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-6 * (1 + std::abs(fd))) << "sample " << i;
    }
    const double fd_s = (CompositeLoss(sdf, s + h, t, rgb, sem, gc, gd, gm) -
                         CompositeLoss(sdf, s - h, t, rgb, sem, gc, gd, gm)) /
                        (2 * h);
    EXPECT_NEAR(grad_s, fd_s, 1e-6 * (1 + std::abs(fd_s)));
  }
}

TEST(RenderRayTest, PlaneDepthWithinOnePercent) {
  FunctionScene plane([](const Vec3& p) { return 1.0 - p.z(); }, 100.0);
  const Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  const auto sample = RenderRay(ray, plane, 0.05, 3.0, 256, false, 0);
  EXPECT_NEAR(sample.depth_out, 1.0, 0.01);
  // Invariant bound: (far - near) / N + 3 / s.
  EXPECT_LT(std::abs(sample.depth_out - 1.0), 2.95 / 256 + 3.0 / 100);
}

TEST(RenderRayTest, RefiningSamplesDoesNotHurt) {
  FunctionScene plane([](const Vec3& p) { return 1.0 - p.z(); }, 100.0);
  const Ray ray{Vec3::Zero(), Vec3::UnitZ()};
  double previous = INFINITY;
  for (int n : {32, 64, 128, 256, 512}) {
    const double err =
        std::abs(RenderRay(ray, plane, 0.05, 3.0, n, false, 0).depth_out - 1.0);
    EXPECT_LE(err, previous + 1e-12) << "N = " << n;
    previous = err;
  }
}

TEST(RenderRayTest, EmptySpaceIsTransparent) {
  FunctionScene empty([](const Vec3& p) { return 0.5 + p.squaredNorm(); },
                      100.0);
  const Ray ray{Vec3(0, 0, -1), Vec3::UnitZ()};
  EXPECT_LT(RenderRay(ray, empty, 0.05, 3.0, 128, false, 0).opacity(), 0.01);
}

TEST(RenderRayTest, RaySampleInvariants) {
  FunctionScene sphere([](const Vec3& p) { return p.norm() - 0.5; }, 40.0);
  const Ray ray{Vec3(0.1, 0, -2), Vec3::UnitZ()};
  const auto r = RenderRay(ray, sphere, 0.1, 4.0, 64, true, 9);
  double sum = 0;
  for (size_t i = 0; i < r.t.size(); ++i) {
    EXPECT_GE(r.alpha[i], 0.0);
    EXPECT_LE(r.alpha[i], 1.0);
    EXPECT_GE(r.t[i], 0.1);
    EXPECT_LE(r.t[i], 4.0);
    if (i > 0) {
      EXPECT_GT(r.t[i], r.t[i - 1]);
      EXPECT_LE(r.transmittance[i], r.transmittance[i - 1]);
    }
    EXPECT_DOUBLE_EQ(r.weight[i], r.transmittance[i] * r.alpha[i]);
    sum += r.weight[i];
  }
  EXPECT_EQ(r.transmittance[0], 1.0);
  EXPECT_LE(sum, 1.0);
}

TEST(RenderImageTest, MatchesPerPixelRays) {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 2;
  intr.cx = intr.cy = 0.5;
  intr.width = intr.height = 2;
  FunctionScene sphere([](const Vec3& p) { return p.norm() - 0.5; }, 40.0,
                       [](const Vec3& p) { return (p.cwiseAbs()).eval(); });
  const Pose pose = Pose::LookAt(Vec3(0, -2, 0.2), Vec3::Zero());
  RenderConfig config;
  config.far = 4.0;
  config.num_samples = 64;
  config.stratified = true;
  config.seed = 5;
  const auto images = RenderImage(pose, intr, sphere, config);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) {
      const size_t index = y * 2 + x;
      const auto ray = RenderRay(PixelToRay(x, y, intr, pose), sphere, config,
                                 DeriveSeed(config.seed, index));
      EXPECT_EQ(ColorAt(images.rgb, index), ray.rgb_out.cast<float>());
      EXPECT_EQ(images.depth.at(x, y),
                static_cast<float>(ray.depth_out /
                                   RayDistancePerDepth(x, y, intr)));
    }
  }
  EXPECT_TRUE(images.rgb == RenderImage(pose, intr, sphere, config).rgb);
}

TEST(RenderImageTest, NormalsFaceTheCamera) {
  const auto intr = TestIntrinsics();
  FunctionScene wall([](const Vec3& p) { return 2.0 - p.y(); }, 100.0);
  const Pose pose = Pose::LookAt(Vec3::Zero(), Vec3(0, 1, 0));
  RenderConfig config;
  config.far = 6.0;
  const auto images = RenderImage(pose, intr, wall, config);
  for (size_t i = 0; i < images.normal.num_pixels(); i += 97) {
    EXPECT_LT((ColorAt(images.normal, i) - Vec3f(0, -1, 0)).norm(), 1e-4);
    EXPECT_NEAR(images.depth.data()[i], 2.0, 5.95 / 128 + 3.0 / 100);
  }
}

}  // namespace
}  // namespace nidss
