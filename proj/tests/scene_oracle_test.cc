// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/scene_oracle.h"

#include <cmath>

#include <gtest/gtest.h>

namespace nidss {
namespace {

AnalyticScene SingleSphere(double radius, const Vec3& center) {
  AnalyticScene scene;
  scene.palette = BuildPalette(2);
  Primitive prim;
  prim.shape = PrimitiveShape::kSphere;
  prim.pose.translation = center;
  prim.size = Vec3::Constant(radius);
  prim.class_id = 1;
  scene.primitives.push_back(prim);
  scene.bounds_min = Vec3::Constant(-3);
  scene.bounds_max = Vec3::Constant(3);
  return scene;
}

CameraIntrinsics SmallIntrinsics() {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 40;
  intr.cx = intr.cy = 15.5;
  intr.width = intr.height = 32;
  return intr;
}

TEST(SceneSdfTest, SphereClosedForm) {
  const auto scene = SingleSphere(1.0, Vec3::Zero());
  const SceneHit hit = SceneSdf(scene, Vec3(2, 0, 0));
  EXPECT_DOUBLE_EQ(hit.sdf, 1.0);
  EXPECT_EQ(hit.class_id, 1);
}

TEST(SceneSdfTest, InsideBoxIsNegativeDistanceToNearestFace) {
  Primitive box;
  box.shape = PrimitiveShape::kBox;
  box.size = Vec3(2, 4, 6);
  EXPECT_DOUBLE_EQ(box.Sdf(Vec3(0.7, 0, 0)), -0.3);
  EXPECT_DOUBLE_EQ(box.Sdf(Vec3(0, 0, 2.5)), -0.5);
  EXPECT_DOUBLE_EQ(box.Sdf(Vec3(2, 0, 0)), 1.0);
  EXPECT_DOUBLE_EQ(box.Sdf(Vec3(2, 3, 0)), std::sqrt(2.0));
}

TEST(SceneSdfTest, UnionIsMinimum) {
  auto scene = SingleSphere(1.0, Vec3::Zero());
  Primitive second = scene.primitives[0];
  second.pose.translation = Vec3(1.5, 0, 0);
  second.class_id = 0;
  scene.primitives.push_back(second);
  for (const Vec3& p : {Vec3(3, 0, 0), Vec3(-2, 0.5, 0), Vec3(0.7, 0, 0)}) {
    const double expected =
        std::min(scene.primitives[0].Sdf(p), scene.primitives[1].Sdf(p));
    EXPECT_DOUBLE_EQ(SceneSdf(scene, p).sdf, expected);
  }
  EXPECT_EQ(SceneSdf(scene, Vec3(3, 0, 0)).class_id, 0);
}

TEST(SceneSdfTest, PlaneSolidSideOppositeNormal) {
  Primitive plane;
  plane.shape = PrimitiveShape::kPlane;
  plane.pose.translation = Vec3(0, 0, 1);
  EXPECT_DOUBLE_EQ(plane.Sdf(Vec3(5, 5, 3)), 2.0);
  EXPECT_DOUBLE_EQ(plane.Sdf(Vec3(0, 0, 0)), -1.0);
}

TEST(SceneValidateTest, RejectsUnknownClass) {
  auto scene = SingleSphere(1.0, Vec3::Zero());
  scene.primitives[0].class_id = 7;
  EXPECT_THROW(scene.Validate(), std::invalid_argument);
  scene.primitives.clear();
  EXPECT_THROW(scene.Validate(), std::invalid_argument);
}

TEST(OracleRenderTest, WallAtTwoMeters) {
  AnalyticScene scene;
  scene.palette = BuildPalette(1);
  Primitive wall;
  wall.shape = PrimitiveShape::kPlane;
  wall.pose.translation = Vec3(0, 2, 0);
  wall.pose.rotation = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(),
                                                          -Vec3::UnitY());
  scene.primitives.push_back(wall);
  scene.bounds_min = Vec3::Constant(-3);
  scene.bounds_max = Vec3::Constant(3);
  const auto images = OracleRender(scene, Pose::LookAt(Vec3::Zero(), Vec3(0, 1, 0)),
                                   SmallIntrinsics());
  for (float d : images.depth.data()) EXPECT_NEAR(d, 2.0, 1e-4);
  for (size_t i = 0; i < images.normal.num_pixels(); ++i) {
    EXPECT_LT((ColorAt(images.normal, i) - Vec3f(0, -1, 0)).norm(), 1e-5);
    EXPECT_EQ(ColorAt(images.semantic, i), scene.palette.ColorOf(0));
  }
}

TEST(OracleRenderTest, MissIsZeroDepthAndBlack) {
  const auto scene = SingleSphere(0.5, Vec3(0, 0, 0));
  const auto images = OracleRender(
      scene, Pose::LookAt(Vec3(0, -2, 0), Vec3(0, -3, 0)), SmallIntrinsics());
  for (size_t i = 0; i < images.depth.num_pixels(); ++i) {
    EXPECT_EQ(images.depth.data()[i], 0.0f);
    EXPECT_EQ(ColorAt(images.semantic, i), Vec3f::Zero());
    EXPECT_EQ(images.labels.data()[i], kUnknownLabel);
  }
}

TEST(OracleRenderTest, BackProjectedHitsLieOnSurface) {
  const SceneSpec spec = MakeRoomScene();
  const auto poses = GenerateTrajectory(spec.trajectory, spec.scene);
  for (size_t k = 0; k < poses.size(); k += 60) {
    const Pose& pose = poses[k].pose;
    const auto images = OracleRender(spec.scene, pose, spec.intrinsics);
    int hits = 0;
    for (int y = 0; y < spec.intrinsics.height; ++y) {
      for (int x = 0; x < spec.intrinsics.width; ++x) {
        const float z = images.depth.at(x, y);
        if (z == 0) continue;
        ++hits;
        const Vec3 cam((x - spec.intrinsics.cx) / spec.intrinsics.fx * z,
                       (y - spec.intrinsics.cy) / spec.intrinsics.fy * z, z);
        // Depth is stored in float; allow its rounding on top of 1e-3.
        EXPECT_LT(std::abs(SceneSdf(spec.scene, pose * cam).sdf), 1e-3);
      }
    }
    EXPECT_EQ(hits, spec.intrinsics.width * spec.intrinsics.height);
  }
}

TEST(GenerateTrajectoryTest, OrbitKeepsRadius) {
  const SceneSpec spec = MakeRoomScene();
  TrajectorySpec traj = spec.trajectory;
  traj.num_frames = 100;
  const auto poses = GenerateTrajectory(traj, spec.scene);
  ASSERT_EQ(poses.size(), 100u);
  for (const auto& tp : poses) {
    EXPECT_NEAR((tp.pose.translation - traj.center).norm(), traj.radius, 1e-9);
    EXPECT_NEAR(tp.pose.rotation.norm(), 1.0, 1e-12);
  }
  for (size_t i = 1; i < poses.size(); ++i) {
    EXPECT_GT(poses[i].timestamp, poses[i - 1].timestamp);
  }
}

TEST(GenerateTrajectoryTest, LissajousStaysInFreeSpace) {
  const SceneSpec spec = MakeRoomScene();
  TrajectorySpec traj = spec.trajectory;
  traj.kind = TrajectoryKind::kLissajous;
  traj.num_frames = 120;
  const auto poses = GenerateTrajectory(traj, spec.scene);
  for (const auto& tp : poses) {
    EXPECT_GT(SceneSdf(spec.scene, tp.pose.translation).sdf, 0.2);
  }
}

TEST(GenerateTrajectoryTest, TwoRoomWalkCrossesPartition) {
  const SceneSpec spec = MakeApartmentScene();
  const auto poses = GenerateTrajectory(spec.trajectory, spec.scene);
  bool left = false, right = false;
  for (const auto& tp : poses) {
    left |= tp.pose.translation.x() < 0;
    right |= tp.pose.translation.x() > 0;
  }
  EXPECT_TRUE(left && right);
}

TEST(GenerateTrajectoryTest, CollisionIsAnError) {
  const SceneSpec spec = MakeRoomScene();
  TrajectorySpec traj = spec.trajectory;
  traj.center = Vec3(0, 0, 0.1);
  EXPECT_THROW(GenerateTrajectory(traj, spec.scene), std::runtime_error);
  traj.num_frames = 1;
  EXPECT_THROW(GenerateTrajectory(traj, spec.scene), std::invalid_argument);
}

DepthImage Ramp(int w, int h) {
  DepthImage depth(w, h, 1);
  for (size_t i = 0; i < depth.num_pixels(); ++i) {
    depth.data()[i] = 1.0f + 0.001f * i;
  }
  return depth;
}

int CountZeros(const DepthImage& depth) {
  return static_cast<int>(
      std::count(depth.data().begin(), depth.data().end(), 0.0f));
}

TEST(SparsifyDepthTest, ExactCounts) {
  const auto depth = Ramp(100, 100);
  EXPECT_EQ(SparsifyDepth(depth, 0, 1), depth);
  EXPECT_EQ(CountZeros(SparsifyDepth(depth, 100, 1)), 10000);
  const auto sparse = SparsifyDepth(depth, 30, 1);
  EXPECT_EQ(CountZeros(sparse), 3000);
  EXPECT_EQ(sparse, SparsifyDepth(depth, 30, 1));
  EXPECT_NE(sparse, SparsifyDepth(depth, 30, 2));
  for (size_t i = 0; i < depth.num_pixels(); ++i) {
    if (sparse.data()[i] != 0) EXPECT_EQ(sparse.data()[i], depth.data()[i]);
  }
  EXPECT_THROW(SparsifyDepth(depth, 101, 1), std::invalid_argument);
}

ColorImage LabeledImage(const Palette& palette, int w, int h) {
  LabelImage labels(w, h, 1);
  for (size_t i = 0; i < labels.num_pixels(); ++i) {
    labels.data()[i] = static_cast<int32_t>(i % palette.size());
  }
  return LabelsToColors(labels, palette);
}

TEST(JitterSemanticsTest, RateExtremes) {
  const Palette palette = BuildPalette(5);
  const auto image = LabeledImage(palette, 64, 64);
  EXPECT_EQ(JitterSemantics(image, palette, 0.0, 3), image);
  const auto flipped = JitterSemantics(image, palette, 1.0, 3);
  const auto before = ExactColorsToLabels(image, palette);
  const auto after = ExactColorsToLabels(flipped, palette);
  for (size_t i = 0; i < before.num_pixels(); ++i) {
    EXPECT_NE(before.data()[i], after.data()[i]);
  }
}

TEST(JitterSemanticsTest, FlipFractionMatchesRate) {
  const Palette palette = BuildPalette(5);
  const auto image = LabeledImage(palette, 64, 64);
  const auto before = ExactColorsToLabels(image, palette);
  double total = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const auto after =
        ExactColorsToLabels(JitterSemantics(image, palette, 0.2, seed), palette);
    int flipped = 0;
    for (size_t i = 0; i < before.num_pixels(); ++i) {
      flipped += before.data()[i] != after.data()[i];
    }
    total += static_cast<double>(flipped) / before.num_pixels();
  }
  const double mean = total / 10;
  EXPECT_GE(mean, 0.17);
  EXPECT_LE(mean, 0.23);
}

TEST(JitterSemanticsTest, UnknownStaysBlack) {
  const Palette palette = BuildPalette(3);
  const ColorImage black(8, 8, 3);
  EXPECT_EQ(JitterSemantics(black, palette, 1.0, 4), black);
}

TEST(PerturbTrajectoryTest, ZeroSigmaIsIdentity) {
  const std::vector<Pose> poses = {Pose::LookAt(Vec3(1, 2, 3), Vec3::Zero()),
                                   Pose()};
  const auto out = PerturbTrajectory(poses, 0, 0, 1);
  for (size_t i = 0; i < poses.size(); ++i) {
    EXPECT_EQ(out[i].translation, poses[i].translation);
    EXPECT_EQ(out[i].rotation.coeffs(), poses[i].rotation.coeffs());
  }
}

TEST(PerturbTrajectoryTest, RotationNoiseKeepsUnitQuaternions) {
  std::vector<Pose> poses(200, Pose::LookAt(Vec3(1, 2, 3), Vec3::Zero()));
  for (const Pose& p : PerturbTrajectory(poses, 0.01, 2.0, 5)) {
    EXPECT_NEAR(p.rotation.norm(), 1.0, 1e-12);
    EXPECT_NO_THROW(p.Validate());
  }
}

TEST(GenerateDatasetTest, DeterministicAndQuantized) {
  SceneSpec spec = MakeRoomScene();
  spec.trajectory.num_frames = 4;
  const auto a = GenerateDataset(spec);
  const auto b = GenerateDataset(spec);
  ASSERT_EQ(a.frames.size(), 4u);
  EXPECT_NO_THROW(a.Validate());
  for (size_t i = 0; i < a.frames.size(); ++i) {
    EXPECT_EQ(a.frames[i].rgb, b.frames[i].rgb);
    EXPECT_EQ(a.frames[i].depth, b.frames[i].depth);
    for (float v : a.frames[i].rgb.data()) EXPECT_EQ(v, QuantizeUnit8(v));
    for (float v : a.frames[i].depth.data()) {
      EXPECT_EQ(v, QuantizeDepth(v, spec.depth_scale));
    }
    EXPECT_NO_THROW(ExactColorsToLabels(a.frames[i].semantic, a.palette));
  }
}

}  // namespace
}  // namespace nidss
