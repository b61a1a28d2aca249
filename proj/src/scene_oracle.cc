// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/scene_oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nidss {

const char* PrimitiveShapeName(PrimitiveShape shape) {
  switch (shape) {
    case PrimitiveShape::kSphere:
      return "sphere";
    case PrimitiveShape::kBox:
      return "box";
    case PrimitiveShape::kPlane:
      return "plane";
  }
  return "?";
}

PrimitiveShape ParsePrimitiveShape(const std::string& name) {
  if (name == "sphere") return PrimitiveShape::kSphere;
  if (name == "box") return PrimitiveShape::kBox;
  if (name == "plane") return PrimitiveShape::kPlane;
  throw std::invalid_argument("unknown primitive shape '" + name + "'");
}

double Primitive::Sdf(const Vec3& p) const {
  switch (shape) {
    case PrimitiveShape::kSphere:
      return (p - pose.translation).norm() - size.x();
    case PrimitiveShape::kBox: {
      const Vec3 local = pose.rotation.conjugate() * (p - pose.translation);
      const Vec3 q = local.cwiseAbs() - 0.5 * size;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case PrimitiveShape::kPlane:
      return (pose.rotation * Vec3::UnitZ()).dot(p - pose.translation);
  }
  return std::numeric_limits<double>::infinity();
}

void AnalyticScene::Validate() const {
  if (primitives.empty()) {
    throw std::invalid_argument("scene: at least one primitive is required");
  }
  for (const auto& prim : primitives) {
    if (!palette.Contains(prim.class_id)) {
      throw std::invalid_argument("scene: class " +
                                  std::to_string(prim.class_id) +
                                  " missing from palette");
    }
    prim.pose.Validate();
  }
  if (!(bounds_min.array() < bounds_max.array()).all()) {
    throw std::invalid_argument("scene: bounds_min must be below bounds_max");
  }
}

SceneHit SceneSdf(const AnalyticScene& scene, const Vec3& p) {
  SceneHit hit;
  hit.sdf = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    const double d = scene.primitives[i].Sdf(p);
    if (d < hit.sdf) {
      hit.sdf = d;
      hit.primitive = static_cast<int>(i);
    }
  }
  if (hit.primitive >= 0) {
    const auto& prim = scene.primitives[hit.primitive];
    hit.class_id = prim.class_id;
    hit.albedo = prim.albedo;
  }
  return hit;
}

void AnalyticSceneAdapter::Evaluate(std::span<const Vec3> points,
                                    std::span<double> sdf, std::span<Vec3> rgb,
                                    std::span<Vec3> sem) const {
  for (size_t i = 0; i < points.size(); ++i) {
    const SceneHit hit = SceneSdf(scene_, points[i]);
    sdf[i] = hit.sdf;
    rgb[i] = hit.albedo;
    sem[i] = scene_.palette.ColorOf(hit.class_id).cast<double>();
  }
}

void AnalyticSceneAdapter::EvaluateSdf(std::span<const Vec3> points,
                                       std::span<double> sdf) const {
  for (size_t i = 0; i < points.size(); ++i) {
    sdf[i] = SceneSdf(scene_, points[i]).sdf;
  }
}

TraceResult SphereTrace(const AnalyticScene& scene, const Ray& ray,
                        double max_distance) {
  TraceResult result;
  double t = 0.0;
  SceneHit hit;
  for (int step = 0; step < 256; ++step) {
    hit = SceneSdf(scene, ray.origin + t * ray.direction);
    if (std::abs(hit.sdf) < 1e-5) break;
    t += hit.sdf;
    if (t > max_distance || t < 0) return result;
  }
  hit = SceneSdf(scene, ray.origin + t * ray.direction);
  if (std::abs(hit.sdf) < 1e-3) {
    result.hit = true;
    result.distance = t;
    result.surface = hit;
  }
  return result;
}

Vec3 SceneNormal(const AnalyticScene& scene, const Vec3& p) {
  const int index = SceneSdf(scene, p).primitive;
  if (index < 0) return Vec3::Zero();
  const auto& prim = scene.primitives[index];
  const double h = 1e-6;
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 dp = Vec3::Zero();
    dp[a] = h;
    g[a] = (prim.Sdf(p + dp) - prim.Sdf(p - dp)) / (2 * h);
  }
  const double n = g.norm();
  return n > 0 ? Vec3(g / n) : Vec3::Zero();
}

Vec3 ShadeLambert(const AnalyticScene& scene, const Vec3& albedo,
                  const Vec3& normal) {
  const double diffuse = std::max(0.0, normal.dot(scene.light_direction));
  return albedo * (scene.ambient + (1.0 - scene.ambient) * diffuse);
}

OracleImages OracleRender(const AnalyticScene& scene, const Pose& pose,
                          const CameraIntrinsics& intrinsics) {
  intrinsics.Validate();
  const int w = intrinsics.width, h = intrinsics.height;
  OracleImages out{ColorImage(w, h, 3), DepthImage(w, h, 1),
                   ColorImage(w, h, 3), ColorImage(w, h, 3),
                   LabelImage(w, h, 1, kUnknownLabel)};
  const double max_distance = 2.0 * scene.diagonal() + 1.0;
  const Vec3 forward = pose.rotation * Vec3::UnitZ();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t index = static_cast<size_t>(y) * w + x;
      const Ray ray = PixelToRay(x, y, intrinsics, pose);
      const TraceResult trace = SphereTrace(scene, ray, max_distance);
      if (!trace.hit) continue;
      const Vec3 point = ray.origin + trace.distance * ray.direction;
      const Vec3 normal = SceneNormal(scene, point);
      out.depth.at(x, y) =
          static_cast<float>(trace.distance * ray.direction.dot(forward));
      SetColor(out.rgb, index,
               ShadeLambert(scene, trace.surface.albedo, normal)
                   .cwiseMax(0.0)
                   .cwiseMin(1.0)
                   .cast<float>());
      SetColor(out.semantic, index,
               scene.palette.ColorOf(trace.surface.class_id));
      SetColor(out.normal, index, normal.cast<float>());
      out.labels.at(x, y) = trace.surface.class_id;
    }
  }
  return out;
}

const char* TrajectoryKindName(TrajectoryKind kind) {
  switch (kind) {
    case TrajectoryKind::kOrbit:
      return "orbit";
    case TrajectoryKind::kLissajous:
      return "lissajous";
    case TrajectoryKind::kTwoRoomWalk:
      return "two-room-walk";
  }
  return "?";
}

TrajectoryKind ParseTrajectoryKind(const std::string& name) {
  if (name == "orbit") return TrajectoryKind::kOrbit;
  if (name == "lissajous") return TrajectoryKind::kLissajous;
  if (name == "two-room-walk") return TrajectoryKind::kTwoRoomWalk;
  throw std::invalid_argument("unknown trajectory kind '" + name + "'");
}

std::vector<TimedPose> GenerateTrajectory(const TrajectorySpec& spec,
                                          const AnalyticScene& scene) {
  if (spec.num_frames < 2) {
    throw std::invalid_argument("trajectory: need at least two frames");
  }
  if (!(spec.frame_rate > 0)) {
    throw std::invalid_argument("trajectory: frame rate must be positive");
  }
  constexpr double kTau = 2.0 * std::numbers::pi;
  std::vector<TimedPose> out;
  out.reserve(spec.num_frames);
  for (int k = 0; k < spec.num_frames; ++k) {
    const double u = static_cast<double>(k) / (spec.num_frames - 1);
    Vec3 position, target;
    switch (spec.kind) {
      case TrajectoryKind::kOrbit: {
        const double theta = kTau * spec.revolutions * k / spec.num_frames;
        position = spec.center +
                   spec.radius * Vec3(std::cos(theta), std::sin(theta), 0.0);
        target = spec.look_at;
        break;
      }
      case TrajectoryKind::kLissajous: {
        position = spec.center +
                   spec.radius * Vec3(std::sin(kTau * u),
                                      0.7 * std::sin(2 * kTau * u + 1.0),
                                      0.15 * std::sin(3 * kTau * u));
        const double yaw = kTau * spec.revolutions * u + 0.25 * kTau;
        target = position + Vec3(std::cos(yaw), std::sin(yaw), -0.5);
        break;
      }
      case TrajectoryKind::kTwoRoomWalk: {
        const Vec3 along = spec.end - spec.start;
        Vec3 lateral = Vec3::UnitZ().cross(along);
        if (lateral.norm() < 1e-12) {
          throw std::invalid_argument("trajectory: walk must not be vertical");
        }
        lateral.normalize();
        position = spec.start + u * along +
                   0.4 * std::sin(kTau * u) * lateral;
        const double heading = std::atan2(along.y(), along.x());
        const double yaw = heading + 0.9 * std::sin(2 * kTau * u);
        target = position + Vec3(std::cos(yaw), std::sin(yaw), -0.35);
        break;
      }
    }
    const double clearance = SceneSdf(scene, position).sdf;
    if (!(clearance > spec.clearance)) {
      throw std::runtime_error(
          "trajectory: frame " + std::to_string(k) + " is " +
          std::to_string(clearance) + " m from geometry (minimum " +
          std::to_string(spec.clearance) + ")");
    }
    out.push_back({k / spec.frame_rate, Pose::LookAt(position, target)});
  }
  return out;
}

DepthImage SparsifyDepth(const DepthImage& depth, double percent,
                         uint64_t seed) {
  if (!(percent >= 0 && percent <= 100)) {
    throw std::invalid_argument("SparsifyDepth: percent must be in [0, 100]");
  }
  DepthImage out = depth;
  const size_t n = depth.num_pixels();
  const auto count = static_cast<size_t>(std::llround(percent / 100.0 * n));
  std::vector<size_t> all(n), chosen;
  std::iota(all.begin(), all.end(), size_t{0});
  chosen.reserve(count);
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), count, rng);
  for (size_t i : chosen) out.data()[i] = 0.0f;
  return out;
}

ColorImage JitterSemantics(const ColorImage& semantic, const Palette& palette,
                           double flip_rate, uint64_t seed) {
  if (!(flip_rate >= 0 && flip_rate <= 1)) {
    throw std::invalid_argument("JitterSemantics: flip rate must be in [0, 1]");
  }
  ColorImage out = semantic;
  if (palette.size() < 2) return out;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(flip_rate);
  std::uniform_int_distribution<size_t> other(0, palette.size() - 2);
  const auto& entries = palette.entries();
  for (size_t i = 0; i < semantic.num_pixels(); ++i) {
    const auto label = palette.LabelOfExactColor(ColorAt(semantic, i));
    if (!label) {
      throw std::runtime_error("JitterSemantics: pixel " + std::to_string(i) +
                               " is not a palette color");
    }
    if (*label == kUnknownLabel || !flip(rng)) continue;
    size_t pick = other(rng);
    // Skip the current class so the new label always differs.
    size_t current = 0;
    while (entries[current].id != *label) ++current;
    if (pick >= current) ++pick;
    SetColor(out, i, entries[pick].color());
  }
  return out;
}

std::vector<Pose> PerturbTrajectory(const std::vector<Pose>& poses,
                                    double sigma_translation,
                                    double sigma_rotation_deg, uint64_t seed) {
  if (!(sigma_translation >= 0) || !(sigma_rotation_deg >= 0)) {
    throw std::invalid_argument("PerturbTrajectory: sigmas must be >= 0");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Pose> out;
  out.reserve(poses.size());
  for (const Pose& pose : poses) {
    Pose p = pose;
    if (sigma_translation > 0) {
      p.translation += sigma_translation *
                       Vec3(normal(rng), normal(rng), normal(rng));
    }
    if (sigma_rotation_deg > 0) {
      Vec3 axis(normal(rng), normal(rng), normal(rng));
      axis.normalize();
      const double angle =
          sigma_rotation_deg * normal(rng) * std::numbers::pi / 180.0;
      p.rotation = (Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis)) *
                    p.rotation)
                       .normalized();
    }
    out.push_back(p);
  }
  return out;
}

void SyntheticDataset::Validate() const {
  intrinsics.Validate();
  for (size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = frames[i];
    if (i > 0 && !(f.timestamp > frames[i - 1].timestamp)) {
      throw std::invalid_argument("dataset: timestamps must increase (frame " +
                                  std::to_string(i) + ")");
    }
    for (const auto* img : {&f.rgb, &f.depth, &f.semantic}) {
      if (img->width() != intrinsics.width ||
          img->height() != intrinsics.height) {
        throw std::invalid_argument("dataset: frame " + std::to_string(i) +
                                    " image size does not match intrinsics");
      }
    }
  }
}

SyntheticDataset GenerateDataset(const SceneSpec& spec) {
  spec.scene.Validate();
  SyntheticDataset out;
  out.name = spec.name;
  out.intrinsics = spec.intrinsics;
  out.palette = spec.scene.palette;
  out.depth_scale = spec.depth_scale;
  out.scene = spec.scene;
  for (const TimedPose& tp : GenerateTrajectory(spec.trajectory, spec.scene)) {
    OracleImages images = OracleRender(spec.scene, tp.pose, spec.intrinsics);
    Frame frame;
    frame.timestamp = tp.timestamp;
    frame.pose = tp.pose;
    for (float& v : images.rgb.data()) v = QuantizeUnit8(v);
    for (float& v : images.depth.data()) v = QuantizeDepth(v, spec.depth_scale);
    frame.rgb = std::move(images.rgb);
    frame.depth = std::move(images.depth);
    frame.semantic = std::move(images.semantic);
    out.frames.push_back(std::move(frame));
  }
  return out;
}

namespace {

Primitive MakePlane(const Vec3& point, const Vec3& normal, int32_t class_id,
                    const Vec3& albedo) {
  Primitive prim;
  prim.shape = PrimitiveShape::kPlane;
  prim.pose.translation = point;
  prim.pose.rotation =
      Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), normal.normalized());
  prim.class_id = class_id;
  prim.albedo = albedo;
  return prim;
}

Primitive MakeBox(const Vec3& center, const Vec3& size, double yaw_deg,
                  int32_t class_id, const Vec3& albedo) {
  Primitive prim;
  prim.shape = PrimitiveShape::kBox;
  prim.pose.translation = center;
  prim.pose.rotation = Eigen::AngleAxisd(yaw_deg * std::numbers::pi / 180.0,
                                         Vec3::UnitZ());
  prim.size = size;
  prim.class_id = class_id;
  prim.albedo = albedo;
  return prim;
}

Primitive MakeSphere(const Vec3& center, double radius, int32_t class_id,
                     const Vec3& albedo) {
  Primitive prim;
  prim.shape = PrimitiveShape::kSphere;
  prim.pose.translation = center;
  prim.size = Vec3(radius, radius, radius);
  prim.class_id = class_id;
  prim.albedo = albedo;
  return prim;
}

Palette NamedPalette(const std::vector<std::string>& names) {
  auto entries = BuildPalette(static_cast<int>(names.size())).entries();
  for (size_t i = 0; i < names.size(); ++i) entries[i].name = names[i];
  return Palette(entries);
}

CameraIntrinsics DefaultIntrinsics() {
  CameraIntrinsics intr;
  intr.fx = intr.fy = 50.0;
  intr.cx = intr.cy = 31.5;
  intr.width = intr.height = 64;
  return intr;
}

}  // namespace

SceneSpec MakeRoomScene() {
  enum { kFloor, kWall, kCeiling, kTable, kBall, kCabinet };
  SceneSpec spec;
  spec.name = "room";
  auto& scene = spec.scene;
  scene.palette =
      NamedPalette({"floor", "wall", "ceiling", "table", "ball", "cabinet"});
  scene.bounds_min = Vec3(-2.0, -1.75, 0.0);
  scene.bounds_max = Vec3(2.0, 1.75, 2.5);
  auto& prims = scene.primitives;
  prims.push_back(MakePlane({0, 0, 0}, Vec3::UnitZ(), kFloor, {0.55, 0.4, 0.3}));
  prims.push_back(
      MakePlane({0, 0, 2.5}, -Vec3::UnitZ(), kCeiling, {0.9, 0.9, 0.88}));
  prims.push_back(MakePlane({-2, 0, 0}, Vec3::UnitX(), kWall, {0.8, 0.78, 0.7}));
  prims.push_back(MakePlane({2, 0, 0}, -Vec3::UnitX(), kWall, {0.6, 0.7, 0.8}));
  prims.push_back(
      MakePlane({0, -1.75, 0}, Vec3::UnitY(), kWall, {0.75, 0.8, 0.6}));
  prims.push_back(
      MakePlane({0, 1.75, 0}, -Vec3::UnitY(), kWall, {0.8, 0.65, 0.65}));
  prims.push_back(
      MakeBox({0.3, 0.25, 0.4}, {1.0, 0.7, 0.8}, 0.0, kTable, {0.45, 0.3, 0.15}));
  prims.push_back(MakeSphere({-0.8, -0.6, 0.45}, 0.45, kBall, {0.8, 0.2, 0.2}));
  prims.push_back(MakeBox({1.4, -1.1, 0.6}, {0.6, 0.6, 1.2}, 20.0, kCabinet,
                          {0.2, 0.4, 0.7}));
  spec.intrinsics = DefaultIntrinsics();
  auto& traj = spec.trajectory;
  traj.kind = TrajectoryKind::kOrbit;
  traj.num_frames = 300;
  traj.center = Vec3(0, 0, 1.5);
  traj.radius = 0.8;
  traj.look_at = Vec3(0, 0, 0.8);
  return spec;
}

SceneSpec MakeApartmentScene() {
  enum { kFloor, kWall, kCeiling, kSofa, kBall, kShelf, kTable };
  SceneSpec spec;
  spec.name = "apartment";
  auto& scene = spec.scene;
  scene.palette = NamedPalette(
      {"floor", "wall", "ceiling", "sofa", "ball", "shelf", "table"});
  scene.bounds_min = Vec3(-4.8, -2.3, 0.0);
  scene.bounds_max = Vec3(4.8, 2.3, 2.5);
  auto& prims = scene.primitives;
  prims.push_back(MakePlane({0, 0, 0}, Vec3::UnitZ(), kFloor, {0.55, 0.4, 0.3}));
  prims.push_back(
      MakePlane({0, 0, 2.5}, -Vec3::UnitZ(), kCeiling, {0.9, 0.9, 0.88}));
  prims.push_back(
      MakePlane({-4.8, 0, 0}, Vec3::UnitX(), kWall, {0.8, 0.78, 0.7}));
  prims.push_back(
      MakePlane({4.8, 0, 0}, -Vec3::UnitX(), kWall, {0.6, 0.7, 0.8}));
  prims.push_back(
      MakePlane({0, -2.3, 0}, Vec3::UnitY(), kWall, {0.75, 0.8, 0.6}));
  prims.push_back(
      MakePlane({0, 2.3, 0}, -Vec3::UnitY(), kWall, {0.8, 0.65, 0.65}));
  // Dividing wall with a 1 m wide, 2 m high doorway.
  const Vec3 partition(0.7, 0.7, 0.68);
  prims.push_back(MakeBox({0, -1.5, 1.25}, {0.2, 2.0, 2.6}, 0, kWall, partition));
  prims.push_back(MakeBox({0, 1.5, 1.25}, {0.2, 2.0, 2.6}, 0, kWall, partition));
  prims.push_back(MakeBox({0, 0, 2.3}, {0.2, 1.2, 0.6}, 0, kWall, partition));
  prims.push_back(
      MakeBox({-3.0, 1.3, 0.4}, {1.4, 0.8, 0.8}, 0, kSofa, {0.3, 0.5, 0.3}));
  prims.push_back(MakeSphere({-2.2, -1.2, 0.4}, 0.4, kBall, {0.8, 0.2, 0.2}));
  prims.push_back(
      MakeBox({3.5, -1.5, 0.9}, {0.8, 0.5, 1.8}, 0, kShelf, {0.5, 0.35, 0.6}));
  prims.push_back(
      MakeBox({2.5, 1.0, 0.4}, {1.0, 1.0, 0.8}, 15, kTable, {0.45, 0.3, 0.15}));
  spec.intrinsics = DefaultIntrinsics();
  auto& traj = spec.trajectory;
  traj.kind = TrajectoryKind::kTwoRoomWalk;
  traj.num_frames = 300;
  traj.start = Vec3(-3.2, 0, 1.4);
  traj.end = Vec3(3.2, 0, 1.4);
  return spec;
}

}  // namespace nidss
