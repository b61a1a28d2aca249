// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nidss/eval.h"
#include "nidss/field.h"
#include "nidss/keyframe_atlas.h"
#include "nidss/mesher.h"
#include "nidss/renderer.h"
#include "nidss/scene_oracle.h"
#include "nidss/semantics.h"
#include "nidss/trainer.h"

namespace nidss {

using Json = nlohmann::json;

// Every file format carries this version.
inline constexpr int kFormatVersion = 1;

// ---- PNG ----

// Samples are row-major interleaved; 8-bit rasters use 0..255.
struct PngRaster {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 (gray) or 3 (RGB).
  int bit_depth = 8;  // 8 or 16.
  std::vector<uint16_t> samples;
};

// Gray, RGB, gray+alpha and RGBA (alpha dropped), palette and low bit
// depths are expanded. Throws std::runtime_error naming the path.
PngRaster ReadPng(const std::string& path);
void WritePng(const std::string& path, const PngRaster& raster);

void WriteColorPng(const std::string& path, const ColorImage& image);
ColorImage ReadColorPng(const std::string& path);
// 16-bit gray, `depth_scale` units per meter, 0 = invalid.
void WriteDepthPng(const std::string& path, const DepthImage& depth,
                   int depth_scale);
DepthImage ReadDepthPng(const std::string& path, int depth_scale);

// ---- Trajectories ----

// Lines `timestamp tx ty tz qx qy qz qw`; `#` starts a comment. Numbers
// are written in shortest round-trip form.
Trajectory ReadTumTrajectory(const std::string& path);
void WriteTumTrajectory(const std::string& path, const Trajectory& trajectory);

// ---- JSON conversions ----
// Parsing rejects unknown keys and wrong types with std::invalid_argument;
// missing keys keep their defaults.

Json ToJson(const Vec3& v);
Vec3 Vec3FromJson(const Json& j);
Json ToJson(const Pose& pose);  // [tx, ty, tz, qx, qy, qz, qw]
Pose PoseFromJson(const Json& j);
Json ToJson(const CameraIntrinsics& intrinsics);
CameraIntrinsics IntrinsicsFromJson(const Json& j);
Json ToJson(const Palette& palette);
Palette PaletteFromJson(const Json& j);
Json ToJson(const HashGridConfig& config);
HashGridConfig HashGridConfigFromJson(const Json& j);
Json ToJson(const FieldConfig& config);
FieldConfig FieldConfigFromJson(const Json& j);
Json ToJson(const TrainConfig& config);
TrainConfig TrainConfigFromJson(const Json& j);
Json ToJson(const RaySamplingConfig& config);
RaySamplingConfig RaySamplingConfigFromJson(const Json& j);
Json ToJson(const RenderConfig& config);
RenderConfig RenderConfigFromJson(const Json& j);
Json ToJson(const KeyframePolicy& policy);
KeyframePolicy KeyframePolicyFromJson(const Json& j);
Json ToJson(const AtlasConfig& config);
AtlasConfig AtlasConfigFromJson(const Json& j);
Json ToJson(const AnalyticScene& scene);
AnalyticScene AnalyticSceneFromJson(const Json& j);
Json ToJson(const TrajectorySpec& spec);
TrajectorySpec TrajectorySpecFromJson(const Json& j);
// A scene spec names a built-in scene ("room" or "apartment") and may
// override its trajectory, image size, depth scale and seed.
Json ToJson(const SceneSpec& spec);
SceneSpec SceneSpecFromJson(const Json& j);
Json ToJson(const SegmentationReport& report);

// Rejects keys outside `allowed`; `what` prefixes the error.
void CheckKeys(const Json& j, std::initializer_list<const char*> allowed,
               const std::string& what);

Json ReadJsonFile(const std::string& path);
// Two-space indented, trailing newline.
void WriteJsonFile(const std::string& path, const Json& j);

// ---- Datasets ----

struct FrameRecord {
  double timestamp = 0;
  std::string rgb;       // Paths as written in the manifest, relative to
  std::string depth;     // its directory.
  std::string semantic;
  Pose pose;
};

struct DatasetManifest {
  int version = kFormatVersion;
  std::string name;
  CameraIntrinsics intrinsics;
  std::string palette;
  std::string scene;  // Optional analytic scene description.
  int depth_scale = 5000;
  std::string gt_trajectory;
  std::string estimated_trajectory;  // Optional.
  std::vector<FrameRecord> frames;
};

Json ToJson(const DatasetManifest& manifest);
DatasetManifest ManifestFromJson(const Json& j);

// Writes manifest.json, palette.json, scene.json, groundtruth.txt and the
// rgb/, depth/ and semantic/ PNGs into `dir` (created if needed).
void SaveDataset(const std::string& dir, const SyntheticDataset& dataset);

// Throws std::runtime_error naming the first missing file, on semantic
// colors outside the palette and on non-monotone timestamps. The analytic
// scene is loaded when the manifest names one.
SyntheticDataset LoadDataset(const std::string& manifest_path);

// The estimated trajectory named by a manifest, if any.
std::optional<Trajectory> LoadEstimatedTrajectory(const std::string& manifest_path);

// ---- Checkpoints ----
// Layout: 8-byte magic "NIDSS1\0\0", uint64 little-endian header length, a
// JSON header, then every field's parameters as little-endian float32.

struct CheckpointField {
  int subspace_id = 0;
  Vec3 center = Vec3::Zero();
  double edge = 5.0;
  std::vector<int> keyframe_ids;
  FieldParams<float> params;
};

struct Checkpoint {
  AtlasConfig atlas;
  CameraIntrinsics intrinsics;
  std::vector<CheckpointField> fields;
  std::vector<TimedPose> keyframe_poses;  // Indexed by keyframe id.
  Json metadata = Json::object();
};

Checkpoint CheckpointFromAtlas(const KeyframeAtlas& atlas, Json metadata = Json::object());
void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint LoadCheckpoint(const std::string& path);

// ---- Other outputs ----

// ASCII PLY with float vertices, optional uchar colors and int faces.
void WritePly(const std::string& path, const TriangleMesh& mesh);
TriangleMesh ReadPly(const std::string& path);

// wall_ms is written as 0 unless `wall_time` is set, so that reruns are
// byte-identical.
void WriteTrainingCsv(const std::string& path, const std::vector<TrainLogRow>& log,
                      bool wall_time);

// Cube layout and keyframe assignment.
Json AtlasToJson(const KeyframeAtlas& atlas);

// Comma-separated, header first.
void WriteCsv(const std::string& path, const std::vector<std::string>& header,
              const std::vector<std::vector<std::string>>& rows);

// Shortest decimal form that parses back to the same double.
std::string FormatDouble(double value);

}  // namespace nidss
