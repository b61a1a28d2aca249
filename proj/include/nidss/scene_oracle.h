// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "nidss/common.h"
#include "nidss/renderer.h"
#include "nidss/semantics.h"

namespace nidss {

enum class PrimitiveShape { kSphere, kBox, kPlane };
const char* PrimitiveShapeName(PrimitiveShape shape);
PrimitiveShape ParsePrimitiveShape(const std::string& name);

// Sphere: center = pose.translation, radius = size.x.
// Box: centered at pose.translation, rotated by pose.rotation, full extents
// `size`.
// Plane: half-space through pose.translation; the solid side is opposite
// the normal pose.rotation * +z. Six planes facing inward make a room.
struct Primitive {
  PrimitiveShape shape = PrimitiveShape::kSphere;
  Pose pose;
  Vec3 size = Vec3::Ones();
  int32_t class_id = 0;
  Vec3 albedo = Vec3::Constant(0.5);

  double Sdf(const Vec3& p) const;
};

struct AnalyticScene {
  std::vector<Primitive> primitives;
  Palette palette;
  Vec3 bounds_min = Vec3::Zero();
  Vec3 bounds_max = Vec3::Zero();
  // Fixed world-frame light direction (toward the light) and ambient term.
  Vec3 light_direction = Vec3(0.3, 0.5, 1.0).normalized();
  double ambient = 0.35;

  // Throws std::invalid_argument when empty, when a class is missing from
  // the palette or when the bounds are inverted.
  void Validate() const;
  double diagonal() const { return (bounds_max - bounds_min).norm(); }
};

struct SceneHit {
  double sdf = 0;
  int32_t class_id = kUnknownLabel;
  Vec3 albedo = Vec3::Zero();
  int primitive = -1;
};

// Min-union over primitives; attributes come from the argmin primitive.
SceneHit SceneSdf(const AnalyticScene& scene, const Vec3& p);

// Exposes an analytic scene through the renderer interface, with albedo as
// color and the palette color as semantics.
class AnalyticSceneAdapter : public ImplicitScene {
 public:
  AnalyticSceneAdapter(const AnalyticScene& scene, double sharpness)
      : scene_(scene), sharpness_(sharpness) {}
  double sharpness() const override { return sharpness_; }
  void Evaluate(std::span<const Vec3> points, std::span<double> sdf,
                std::span<Vec3> rgb, std::span<Vec3> sem) const override;
  void EvaluateSdf(std::span<const Vec3> points,
                   std::span<double> sdf) const override;

 private:
  const AnalyticScene& scene_;
  double sharpness_;
};

struct OracleImages {
  ColorImage rgb;
  DepthImage depth;  // Camera z-depth; 0 on miss.
  ColorImage semantic;
  ColorImage normal;
  LabelImage labels;
};

struct TraceResult {
  bool hit = false;
  double distance = 0;  // Along the unit ray.
  SceneHit surface;
};

// Sphere tracing until |sdf| < 1e-5 or 256 steps; a final |sdf| < 1e-3 is
// still accepted as a hit.
TraceResult SphereTrace(const AnalyticScene& scene, const Ray& ray,
                        double max_distance);

Vec3 SceneNormal(const AnalyticScene& scene, const Vec3& p);

// Lambert shading with the scene's fixed light.
Vec3 ShadeLambert(const AnalyticScene& scene, const Vec3& albedo,
                  const Vec3& normal);

OracleImages OracleRender(const AnalyticScene& scene, const Pose& pose,
                          const CameraIntrinsics& intrinsics);

enum class TrajectoryKind { kOrbit, kLissajous, kTwoRoomWalk };
const char* TrajectoryKindName(TrajectoryKind kind);
TrajectoryKind ParseTrajectoryKind(const std::string& name);

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::kOrbit;
  int num_frames = 300;
  double frame_rate = 30.0;
  // Orbit: circle of `radius` around `center` in the horizontal plane.
  // Lissajous: figure around `center` with amplitude `radius`.
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  double revolutions = 1.0;
  Vec3 look_at = Vec3::Zero();
  // Two-room walk: straight line from start to end with a lateral sway.
  Vec3 start = Vec3::Zero();
  Vec3 end = Vec3::Zero();
  // Minimum clearance between any camera center and scene geometry.
  double clearance = 0.2;
};

// Throws std::invalid_argument for fewer than two frames and
// std::runtime_error if any camera center is within `clearance` of geometry.
std::vector<TimedPose> GenerateTrajectory(const TrajectorySpec& spec,
                                          const AnalyticScene& scene);

// Zeroes exactly round(percent / 100 * n) distinct pixels.
DepthImage SparsifyDepth(const DepthImage& depth, double percent,
                         uint64_t seed);

// Reassigns each labeled pixel to a different palette class with
// probability `flip_rate`. Black stays black.
ColorImage JitterSemantics(const ColorImage& semantic, const Palette& palette,
                           double flip_rate, uint64_t seed);

// Gaussian translation noise (per axis, meters) and a rotation about a
// uniformly random axis with Gaussian angle (degrees).
std::vector<Pose> PerturbTrajectory(const std::vector<Pose>& poses,
                                    double sigma_translation,
                                    double sigma_rotation_deg, uint64_t seed);

struct Frame {
  double timestamp = 0;
  ColorImage rgb;
  DepthImage depth;
  ColorImage semantic;
  Pose pose;  // Ground truth, camera-to-world.
};

struct SceneSpec {
  std::string name = "room";
  AnalyticScene scene;
  CameraIntrinsics intrinsics;
  TrajectorySpec trajectory;
  int depth_scale = 5000;
  uint64_t seed = 0;
};

struct SyntheticDataset {
  std::string name;
  CameraIntrinsics intrinsics;
  Palette palette;
  std::vector<Frame> frames;
  int depth_scale = 5000;
  AnalyticScene scene;

  // Throws std::invalid_argument on non-monotone timestamps or mismatched
  // image sizes.
  void Validate() const;
};

// Renders every frame of the trajectory with the oracle. Colors are
// quantized to 8 bits and depth to 1 / depth_scale so that the dataset is
// exactly representable on disk.
SyntheticDataset GenerateDataset(const SceneSpec& spec);

// Single room, 4 x 3.5 x 2.5 m, with a table, a ball and a cabinet; six
// classes. Orbit trajectory of 300 frames.
SceneSpec MakeRoomScene();

// Two 4.8 x 4.6 m rooms joined by a doorway, spanning x in [-5, 5]; split
// at x = 0. Two-room walk trajectory.
SceneSpec MakeApartmentScene();

}  // namespace nidss
