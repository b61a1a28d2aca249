// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

// End-to-end mapping runs on a dataset: keyframe insertion, training,
// rendering of held-out views and their evaluation, plus the ablations built
// from them.

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nidss/eval.h"
#include "nidss/io.h"
#include "nidss/keyframe_atlas.h"
#include "nidss/renderer.h"
#include "nidss/scene_oracle.h"
#include "nidss/trainer.h"

namespace nidss {

struct RunConfig {
  int iterations = 10000;
  TrainConfig train;
  RaySamplingConfig sampling{128, 0.05, 8.0, true};
  AtlasConfig atlas;
  // Replace the atlas bounds by the scene bounds grown to whole cubes.
  bool auto_bounds = true;
  // Train on every frame instead of the selected keyframes.
  bool all_frames = false;
  // Corruptions applied to the keyframe copies only.
  double depth_sparsity = 0;   // Percent of pixels zeroed.
  double semantic_jitter = 0;  // Label flip probability.
  uint64_t corruption_seed = 0;

  void Validate() const;
};

Json ToJson(const RunConfig& config);
RunConfig RunConfigFromJson(const Json& j);

struct EvalConfig {
  RenderConfig render{128, 0.05, 8.0, false, 0};
  int num_views = 10;
  SegmentationOptions segmentation;
};

Json ToJson(const EvalConfig& config);
EvalConfig EvalConfigFromJson(const Json& j);

// Smallest box of whole cubes of edge `edge` that is centered on the scene
// bounds and contains them.
std::pair<Vec3, Vec3> CubeAlignedBounds(const Vec3& scene_min, const Vec3& scene_max,
                                        double edge);

// `config.atlas` with the bounds resolved against `scene` when auto_bounds
// is set.
AtlasConfig ResolveAtlasConfig(const RunConfig& config, const AnalyticScene& scene);

// Frames chosen by the keyframe policy over the whole stream.
std::vector<int> KeyframeFrames(const SyntheticDataset& dataset, const KeyframePolicy& policy);

struct TrainedMap {
  std::unique_ptr<KeyframeAtlas> atlas;
  std::vector<TrainLogRow> log;
  std::vector<int> keyframe_frames;  // Dataset frame index per keyframe.
};

// Inserts the keyframes of the whole stream (every frame with all_frames),
// then runs `iterations` optimization steps split evenly over the cubes that
// hold keyframes.
TrainedMap TrainMap(const SyntheticDataset& dataset, const RunConfig& config);

// Frames spread evenly over the sequence, each moved forward to the next
// frame that is not in `excluded` (when possible).
std::vector<int> HeldOutViews(int num_frames, const std::vector<int>& excluded,
                              int num_views);

// One trained cube as seen by the renderer.
struct CubeField {
  const FieldParams<float>* params = nullptr;
  Vec3 center = Vec3::Zero();
  double edge = 5.0;
};

std::vector<CubeField> TrainedCubes(const KeyframeAtlas& atlas);
std::vector<CubeField> TrainedCubes(const Checkpoint& checkpoint);

// Several cube fields behind the renderer interface. Every cube's SDF is
// rescaled by its sharpness over the common one, which leaves the opacity
// of samples inside one cube unchanged. Space outside the cubes is empty.
class AtlasScene : public ImplicitScene {
 public:
  explicit AtlasScene(std::vector<CubeField> cubes);

  double sharpness() const override { return sharpness_; }
  void Evaluate(std::span<const Vec3> points, std::span<double> sdf,
                std::span<Vec3> rgb, std::span<Vec3> sem) const override;
  void EvaluateSdf(std::span<const Vec3> points,
                   std::span<double> sdf) const override;

  // Union of the cube boxes.
  std::pair<Vec3, Vec3> bounds() const { return bounds_; }

 private:
  // Index of the cube containing `p`, or -1.
  int CubeOf(const Vec3& p) const;
  template <typename F>
  void Dispatch(std::span<const Vec3> points, F&& per_cube) const;

  std::vector<CubeField> cubes_;
  std::vector<std::unique_ptr<FieldScene<float>>> scenes_;
  std::vector<double> sdf_scale_;
  double sharpness_ = 1.0;
  std::pair<Vec3, Vec3> bounds_;
};

RenderedImages RenderView(const AtlasScene& scene, const Pose& pose,
                          const CameraIntrinsics& intrinsics,
                          const RenderConfig& config);

struct ViewImages {
  ColorImage rgb;
  DepthImage depth;
  ColorImage semantic;
};

struct MapMetrics {
  // Depth L1 in cm after scale correction when it is enabled, otherwise
  // equal to raw_depth_l1_cm.
  double depth_l1_cm = 0;
  double raw_depth_l1_cm = 0;
  double depth_scale = 1.0;
  double psnr = 0;  // Mean over views.
  double ssim = 0;  // Mean over views.
  SegmentationReport segmentation;
  int num_views = 0;
};

Json ToJson(const MapMetrics& metrics);

// Depth errors are pooled over every valid pixel of every view. With
// `scale_correct`, one least-squares scale is fitted over all views.
MapMetrics EvaluateViews(std::span<const ViewImages> predicted,
                         std::span<const ViewImages> ground_truth,
                         const Palette& palette, bool scale_correct,
                         const SegmentationOptions& options = {});

struct ExperimentResult {
  MapMetrics metrics;
  int num_keyframes = 0;
  std::vector<int> views;
  std::vector<TrainLogRow> log;
};

// Trains on `dataset` and evaluates views that the keyframe policy does not
// select against the clean frames. Depth is scale-corrected in the
// depth-free modes.
ExperimentResult RunExperiment(const SyntheticDataset& dataset, const RunConfig& config,
                               const EvalConfig& eval);

struct AblationRow {
  std::string label;
  ExperimentResult result;
};

// Every level is validated before the first run starts.
std::vector<AblationRow> AblateSparsity(const SyntheticDataset& dataset,
                                        const RunConfig& base, const EvalConfig& eval,
                                        const std::vector<double>& percents);
// Rows "keyframes" and "all_frames".
std::vector<AblationRow> AblateKeyframes(const SyntheticDataset& dataset,
                                         const RunConfig& base, const EvalConfig& eval);
// One row per seed; the seed drives field initialization and training.
std::vector<AblationRow> AblateRobustness(const SyntheticDataset& dataset,
                                          const RunConfig& base, const EvalConfig& eval,
                                          const std::vector<uint64_t>& seeds);
// Rows "rgb" and "rgb+semantic".
std::vector<AblationRow> AblateRgbMode(const SyntheticDataset& dataset,
                                       const RunConfig& base, const EvalConfig& eval);
std::vector<AblationRow> AblateJitter(const SyntheticDataset& dataset,
                                      const RunConfig& base, const EvalConfig& eval,
                                      const std::vector<double>& flip_rates);

std::vector<std::string> AblationCsvHeader(const std::string& label_column);
std::vector<std::string> AblationCsvRow(const AblationRow& row);

}  // namespace nidss
