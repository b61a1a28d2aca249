// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "nidss/common.h"
#include "nidss/field.h"
#include "nidss/renderer.h"

namespace nidss {

struct Keyframe {
  int id = -1;
  int frame_index = -1;  // Position in the input stream.
  double timestamp = 0;
  ColorImage rgb;
  DepthImage depth;  // Camera z-depth in meters; 0 = invalid.
  ColorImage semantic;
  Pose pose;
  std::set<int> subspace_ids;

  // Throws std::invalid_argument on mismatched sizes, negative depth or a
  // non-unit quaternion.
  void Validate() const;
};

struct KeyframePolicy {
  double translation_threshold = 0.1;  // Meters.
  double rotation_threshold_deg = 10.0;
  int frame_threshold = 30;
};

// Stateful keyframe decision over a frame stream: the first frame is
// always selected; afterwards a frame is selected when it moved more than
// the translation or rotation threshold from the last keyframe, or when
// frame_threshold frames have elapsed since it.
class KeyframeSelector {
 public:
  explicit KeyframeSelector(KeyframePolicy policy = {}) : policy_(policy) {}
  bool Observe(const Pose& pose);
  const KeyframePolicy& policy() const { return policy_; }

 private:
  KeyframePolicy policy_;
  std::optional<Pose> last_;
  int since_last_ = 0;
};

// Axis-aligned cube; membership is (lo, hi] per axis, except that the
// global minimum face belongs to the first cube.
struct Subspace {
  int id = 0;
  Vec3 center = Vec3::Zero();
  double edge = 5.0;
  std::unique_ptr<FieldParams<float>> field;
  std::vector<int> keyframe_ids;  // Insertion order.
  bool active = false;

  Vec3 min() const { return center - Vec3::Constant(edge / 2); }
  Vec3 max() const { return center + Vec3::Constant(edge / 2); }
};

struct MapSnapshot {
  int id = 0;
  int subspace_id = 0;
  int generation = 0;
  int num_keyframes = 0;
  FieldParams<float> params;
};

struct AtlasConfig {
  Vec3 bounds_min = Vec3::Constant(-2.5);
  Vec3 bounds_max = Vec3::Constant(2.5);
  double edge = 5.0;
  FieldConfig field;  // Grid domain is overwritten per cube.
  KeyframePolicy policy;
  // Depth range used for frustum assignment.
  double near = 0.05;
  double far = 5.0;
  uint64_t seed = 0;

  void Validate() const;
};

Vec3 GlobalToLocal(const Vec3& global, const Vec3& center);
Vec3 LocalToGlobal(const Vec3& local, const Vec3& center);

// The dynamic keyframe set plus the cube decomposition. Every cube owns a
// field in its local frame (origin at the cube center). Single writer.
class KeyframeAtlas {
 public:
  KeyframeAtlas(const AtlasConfig& config, const CameraIntrinsics& intrinsics);

  const AtlasConfig& config() const { return config_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  // Field config of every cube (local domain [-edge/2, edge/2]^3).
  const FieldConfig& field_config() const { return field_config_; }

  int num_subspaces() const { return static_cast<int>(subspaces_.size()); }
  const Subspace& subspace(int id) const { return subspaces_.at(id); }
  FieldParams<float>& mutable_field(int subspace_id);
  std::array<int, 3> grid_dims() const { return dims_; }

  // Cube containing a global point, or nullopt outside the bounds.
  std::optional<int> SubspaceOf(const Vec3& global) const;

  // Runs the keyframe policy on the next frame of the stream and inserts
  // it when selected. Returns the new keyframe id.
  std::optional<int> MaybeInsertKeyframe(int frame_index, double timestamp,
                                         const ColorImage& rgb,
                                         const DepthImage& depth,
                                         const ColorImage& semantic,
                                         const Pose& pose);
  // Unconditional insertion.
  int InsertKeyframe(int frame_index, double timestamp, const ColorImage& rgb,
                     const DepthImage& depth, const ColorImage& semantic,
                     const Pose& pose);

  // Cubes sharing volume with the pyramid spanned by the camera origin and
  // the four image corners back-projected to the far depth. Throws
  // std::runtime_error when there is none.
  std::set<int> FrustumSubspaces(const Pose& pose) const;

  int num_keyframes() const { return static_cast<int>(keyframes_.size()); }
  const Keyframe& keyframe(int id) const;
  const std::vector<Keyframe>& keyframes() const { return keyframes_; }

  // All ids must exist; otherwise nothing changes and std::out_of_range is
  // thrown. Set membership is never altered.
  void UpdatePoses(const std::map<int, Pose>& corrections);

  int active_subspace() const { return active_; }
  void SetActiveSubspace(int id);

  // Archives the active cube's field, reinitializes it and clears its
  // keyframe list. Returns the snapshot id.
  int FreezeAndReset();
  const std::vector<std::shared_ptr<const MapSnapshot>>& archive() const {
    return archive_;
  }

 private:
  AtlasConfig config_;
  CameraIntrinsics intrinsics_;
  FieldConfig field_config_;
  std::array<int, 3> dims_{};
  std::vector<Subspace> subspaces_;
  std::vector<Keyframe> keyframes_;
  KeyframeSelector selector_;
  std::vector<std::shared_ptr<const MapSnapshot>> archive_;
  std::vector<int> generation_;
  int active_ = 0;
};

}  // namespace nidss
