// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/keyframe_atlas.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nidss {

void Keyframe::Validate() const {
  if (!rgb.SameShape(depth) || !rgb.SameShape(semantic)) {
    throw std::invalid_argument("keyframe: image sizes differ");
  }
  for (float d : depth.data()) {
    if (!(d >= 0.0f)) throw std::invalid_argument("keyframe: negative depth");
  }
  pose.Validate();
}

bool KeyframeSelector::Observe(const Pose& pose) {
  bool insert = !last_.has_value();
  if (!insert) {
    ++since_last_;
    const double moved = (pose.translation - last_->translation).norm();
    const double turned = RotationAngle(*last_, pose) * 180.0 / std::numbers::pi;
    insert = moved > policy_.translation_threshold ||
             turned > policy_.rotation_threshold_deg ||
             since_last_ >= policy_.frame_threshold;
  }
  if (insert) {
    last_ = pose;
    since_last_ = 0;
  }
  return insert;
}

void AtlasConfig::Validate() const {
  if (!(edge > 0)) throw std::invalid_argument("atlas: edge must be positive");
  if (!(bounds_min.array() < bounds_max.array()).all()) {
    throw std::invalid_argument("atlas: bounds_min must be below bounds_max");
  }
  if (!(near > 0) || !(far > near)) {
    throw std::invalid_argument("atlas: need 0 < near < far");
  }
  field.Validate();
}

Vec3 GlobalToLocal(const Vec3& global, const Vec3& center) {
  return global - center;
}

Vec3 LocalToGlobal(const Vec3& local, const Vec3& center) {
  return local + center;
}

KeyframeAtlas::KeyframeAtlas(const AtlasConfig& config,
                             const CameraIntrinsics& intrinsics)
    : config_(config), intrinsics_(intrinsics), selector_(config.policy) {
  config_.Validate();
  intrinsics_.Validate();
  field_config_ = config_.field;
  field_config_.grid.domain_min = Vec3::Constant(-config_.edge / 2);
  field_config_.grid.domain_max = Vec3::Constant(config_.edge / 2);
  field_config_.Validate();
  const Vec3 extent = config_.bounds_max - config_.bounds_min;
  for (int a = 0; a < 3; ++a) {
    dims_[a] = std::max(1, static_cast<int>(std::ceil(extent[a] / config_.edge - 1e-9)));
  }
  for (int k = 0; k < dims_[2]; ++k) {
    for (int j = 0; j < dims_[1]; ++j) {
      for (int i = 0; i < dims_[0]; ++i) {
        Subspace sub;
        sub.id = static_cast<int>(subspaces_.size());
        sub.edge = config_.edge;
        sub.center = config_.bounds_min + config_.edge * Vec3(i + 0.5, j + 0.5, k + 0.5);
        sub.field = std::make_unique<FieldParams<float>>(InitializeFieldParams<float>(
            field_config_, DeriveSeed(config_.seed, sub.id)));
        subspaces_.push_back(std::move(sub));
      }
    }
  }
  generation_.assign(subspaces_.size(), 0);
  subspaces_[0].active = true;
}

FieldParams<float>& KeyframeAtlas::mutable_field(int subspace_id) {
  return *subspaces_.at(subspace_id).field;
}

std::optional<int> KeyframeAtlas::SubspaceOf(const Vec3& global) const {
  int index[3];
  for (int a = 0; a < 3; ++a) {
    const double p = global[a];
    if (!(p >= config_.bounds_min[a] && p <= config_.bounds_max[a])) {
      return std::nullopt;
    }
    // Upper faces belong to the lower cube.
    const int i = static_cast<int>(std::ceil((p - config_.bounds_min[a]) / config_.edge)) - 1;
    index[a] = std::clamp(i, 0, dims_[a] - 1);
  }
  return index[0] + dims_[0] * (index[1] + dims_[1] * index[2]);
}

std::optional<int> KeyframeAtlas::MaybeInsertKeyframe(
    int frame_index, double timestamp, const ColorImage& rgb,
    const DepthImage& depth, const ColorImage& semantic, const Pose& pose) {
  if (!selector_.Observe(pose)) return std::nullopt;
  return InsertKeyframe(frame_index, timestamp, rgb, depth, semantic, pose);
}

int KeyframeAtlas::InsertKeyframe(int frame_index, double timestamp,
                                  const ColorImage& rgb,
                                  const DepthImage& depth,
                                  const ColorImage& semantic,
                                  const Pose& pose) {
  Keyframe kf;
  kf.id = static_cast<int>(keyframes_.size());
  kf.frame_index = frame_index;
  kf.timestamp = timestamp;
  kf.rgb = rgb;
  kf.depth = depth;
  kf.semantic = semantic;
  kf.pose = pose;
  kf.Validate();
  if (rgb.width() != intrinsics_.width || rgb.height() != intrinsics_.height) {
    throw std::invalid_argument("keyframe: image size differs from intrinsics");
  }
  kf.subspace_ids = FrustumSubspaces(pose);
  for (int s : kf.subspace_ids) subspaces_[s].keyframe_ids.push_back(kf.id);
  keyframes_.push_back(std::move(kf));
  return keyframes_.back().id;
}

namespace {

// Separating-axis test between the convex hull of `hull` (a pyramid given by
// its apex and four far corners) and an axis-aligned box. Contact of zero
// volume does not count as overlap.
bool PyramidOverlapsBox(const std::array<Vec3, 5>& hull, const Vec3& box_min,
                        const Vec3& box_max) {
  const Vec3 center = (box_min + box_max) / 2;
  const Vec3 half = (box_max - box_min) / 2;
  std::vector<Vec3> axes = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  std::vector<Vec3> edges;
  for (int i = 0; i < 4; ++i) {
    const Vec3& a = hull[1 + i];
    const Vec3& b = hull[1 + (i + 1) % 4];
    edges.push_back(a - hull[0]);
    edges.push_back(b - a);
    axes.push_back((a - hull[0]).cross(b - hull[0]));
  }
  axes.push_back((hull[2] - hull[1]).cross(hull[3] - hull[1]));
  for (const Vec3& e : edges) {
    for (int k = 0; k < 3; ++k) axes.push_back(e.cross(Vec3::Unit(k)));
  }
  for (const Vec3& axis : axes) {
    const double norm = axis.norm();
    if (norm < 1e-12) continue;
    const Vec3 n = axis / norm;
    double lo = n.dot(hull[0]), hi = lo;
    for (const Vec3& v : hull) {
      lo = std::min(lo, n.dot(v));
      hi = std::max(hi, n.dot(v));
    }
    const double c = n.dot(center);
    const double r = half.dot(n.cwiseAbs());
    if (hi <= c - r + 1e-9 || lo >= c + r - 1e-9) return false;
  }
  return true;
}

}  // namespace

std::set<int> KeyframeAtlas::FrustumSubspaces(const Pose& pose) const {
  // The hull of the camera origin and the corners and center at the near
  // and far depths is the pyramid spanned by the origin and far corners.
  const double w = intrinsics_.width - 1.0, h = intrinsics_.height - 1.0;
  const double corners[4][2] = {{0, 0}, {w, 0}, {w, h}, {0, h}};
  std::array<Vec3, 5> hull;
  hull[0] = pose.translation;
  for (int i = 0; i < 4; ++i) {
    const Vec3 dir((corners[i][0] - intrinsics_.cx) / intrinsics_.fx,
                   (corners[i][1] - intrinsics_.cy) / intrinsics_.fy, 1.0);
    hull[1 + i] = pose * (config_.far * dir);
  }
  std::set<int> ids;
  for (const Subspace& sub : subspaces_) {
    if (PyramidOverlapsBox(hull, sub.min(), sub.max())) ids.insert(sub.id);
  }
  if (ids.empty()) {
    throw std::runtime_error("keyframe frustum lies entirely outside the atlas bounds");
  }
  return ids;
}

const Keyframe& KeyframeAtlas::keyframe(int id) const {
  if (id < 0 || id >= num_keyframes()) {
    throw std::out_of_range("unknown keyframe id " + std::to_string(id));
  }
  return keyframes_[id];
}

void KeyframeAtlas::UpdatePoses(const std::map<int, Pose>& corrections) {
  for (const auto& [id, pose] : corrections) {
    if (id < 0 || id >= num_keyframes()) {
      throw std::out_of_range("update_poses: unknown keyframe id " + std::to_string(id));
    }
    pose.Validate();
  }
  for (const auto& [id, pose] : corrections) keyframes_[id].pose = pose;
}

void KeyframeAtlas::SetActiveSubspace(int id) {
  if (id < 0 || id >= num_subspaces()) {
    throw std::out_of_range("unknown subspace id " + std::to_string(id));
  }
  subspaces_[active_].active = false;
  active_ = id;
  subspaces_[active_].active = true;
}

int KeyframeAtlas::FreezeAndReset() {
  Subspace& sub = subspaces_[active_];
  auto snapshot = std::make_shared<MapSnapshot>(MapSnapshot{
      static_cast<int>(archive_.size()), sub.id, generation_[sub.id],
      static_cast<int>(sub.keyframe_ids.size()), *sub.field});
  archive_.push_back(std::move(snapshot));
  const int generation = ++generation_[sub.id];
  *sub.field = InitializeFieldParams<float>(
      field_config_, DeriveSeed(DeriveSeed(config_.seed, sub.id), generation));
  sub.keyframe_ids.clear();
  return archive_.back()->id;
}

}  // namespace nidss
