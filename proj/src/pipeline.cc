// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/pipeline.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>

#include "nidss/semantics.h"

namespace nidss {

void RunConfig::Validate() const {
  if (iterations < 0) throw std::invalid_argument("run: iterations must be >= 0");
  train.Validate();
  atlas.Validate();
  if (!(depth_sparsity >= 0 && depth_sparsity <= 100)) {
    throw std::invalid_argument("run: depth_sparsity must be a percentage");
  }
  if (!(semantic_jitter >= 0 && semantic_jitter <= 1)) {
    throw std::invalid_argument("run: semantic_jitter must be in [0, 1]");
  }
}

Json ToJson(const RunConfig& c) {
  return {{"iterations", c.iterations},
          {"train", ToJson(c.train)},
          {"sampling", ToJson(c.sampling)},
          {"atlas", ToJson(c.atlas)},
          {"auto_bounds", c.auto_bounds},
          {"all_frames", c.all_frames},
          {"depth_sparsity", c.depth_sparsity},
          {"semantic_jitter", c.semantic_jitter},
          {"corruption_seed", c.corruption_seed}};
}

RunConfig RunConfigFromJson(const Json& j) {
  CheckKeys(j, {"iterations", "train", "sampling", "atlas", "auto_bounds", "all_frames",
                "depth_sparsity", "semantic_jitter", "corruption_seed"},
            "run");
  RunConfig c;
  auto read = [&j](const char* key, auto* out) {
    if (!j.contains(key)) return;
    const Json& v = j[key];
    using T = std::remove_pointer_t<decltype(out)>;
    const bool ok = std::is_same_v<T, bool> ? v.is_boolean()
                    : std::is_integral_v<T> ? v.is_number_integer()
                                            : v.is_number();
    if (!ok) throw std::invalid_argument(std::string("run.") + key + ": wrong type");
    *out = v.get<T>();
  };
  read("iterations", &c.iterations);
  if (j.contains("train")) c.train = TrainConfigFromJson(j["train"]);
  if (j.contains("sampling")) c.sampling = RaySamplingConfigFromJson(j["sampling"]);
  if (j.contains("atlas")) c.atlas = AtlasConfigFromJson(j["atlas"]);
  read("auto_bounds", &c.auto_bounds);
  read("all_frames", &c.all_frames);
  read("depth_sparsity", &c.depth_sparsity);
  read("semantic_jitter", &c.semantic_jitter);
  read("corruption_seed", &c.corruption_seed);
  c.Validate();
  return c;
}

Json ToJson(const EvalConfig& c) {
  return {{"render", ToJson(c.render)},
          {"num_views", c.num_views},
          {"miou_over_all_classes", c.segmentation.miou_over_all_classes}};
}

EvalConfig EvalConfigFromJson(const Json& j) {
  CheckKeys(j, {"render", "num_views", "miou_over_all_classes"}, "eval");
  EvalConfig c;
  if (j.contains("render")) c.render = RenderConfigFromJson(j["render"]);
  if (j.contains("num_views")) {
    if (!j["num_views"].is_number_integer()) {
      throw std::invalid_argument("eval.num_views: not an integer");
    }
    c.num_views = j["num_views"].get<int>();
  }
  if (j.contains("miou_over_all_classes")) {
    if (!j["miou_over_all_classes"].is_boolean()) {
      throw std::invalid_argument("eval.miou_over_all_classes: not a boolean");
    }
    c.segmentation.miou_over_all_classes = j["miou_over_all_classes"].get<bool>();
  }
  if (c.num_views < 1) throw std::invalid_argument("eval: num_views must be >= 1");
  return c;
}

std::pair<Vec3, Vec3> CubeAlignedBounds(const Vec3& scene_min, const Vec3& scene_max,
                                        double edge) {
  if (!(edge > 0)) throw std::invalid_argument("cube bounds: edge must be positive");
  const Vec3 center = (scene_min + scene_max) / 2;
  Vec3 half;
  for (int a = 0; a < 3; ++a) {
    const double cubes = std::max(1.0, std::ceil((scene_max[a] - scene_min[a]) / edge - 1e-9));
    half[a] = cubes * edge / 2;
  }
  return {center - half, center + half};
}

AtlasConfig ResolveAtlasConfig(const RunConfig& config, const AnalyticScene& scene) {
  AtlasConfig atlas = config.atlas;
  if (config.auto_bounds) {
    if (scene.primitives.empty()) {
      throw std::invalid_argument("run: auto_bounds needs the dataset's scene description");
    }
    std::tie(atlas.bounds_min, atlas.bounds_max) =
        CubeAlignedBounds(scene.bounds_min, scene.bounds_max, atlas.edge);
  }
  atlas.Validate();
  return atlas;
}

std::vector<int> KeyframeFrames(const SyntheticDataset& dataset,
                                const KeyframePolicy& policy) {
  KeyframeSelector selector(policy);
  std::vector<int> frames;
  for (size_t i = 0; i < dataset.frames.size(); ++i) {
    if (selector.Observe(dataset.frames[i].pose)) frames.push_back(static_cast<int>(i));
  }
  return frames;
}

TrainedMap TrainMap(const SyntheticDataset& dataset, const RunConfig& config) {
  config.Validate();
  dataset.Validate();
  TrainedMap out;
  out.atlas = std::make_unique<KeyframeAtlas>(ResolveAtlasConfig(config, dataset.scene),
                                              dataset.intrinsics);
  std::vector<int> frames(dataset.frames.size());
  std::iota(frames.begin(), frames.end(), 0);
  if (!config.all_frames) frames = KeyframeFrames(dataset, config.atlas.policy);
  for (int i : frames) {
    const Frame& f = dataset.frames[i];
    const uint64_t seed = DeriveSeed(config.corruption_seed, i);
    const DepthImage depth = config.depth_sparsity > 0
                                 ? SparsifyDepth(f.depth, config.depth_sparsity, seed)
                                 : f.depth;
    const ColorImage semantic =
        config.semantic_jitter > 0
            ? JitterSemantics(f.semantic, dataset.palette, config.semantic_jitter,
                              DeriveSeed(seed, 1))
            : f.semantic;
    out.atlas->InsertKeyframe(i, f.timestamp, f.rgb, depth, semantic, f.pose);
    out.keyframe_frames.push_back(i);
  }
  std::vector<int> cubes;
  for (int s = 0; s < out.atlas->num_subspaces(); ++s) {
    if (!out.atlas->subspace(s).keyframe_ids.empty()) cubes.push_back(s);
  }
  if (cubes.empty()) throw std::runtime_error("train: no keyframe sees the mapped volume");
  const int n = static_cast<int>(cubes.size());
  for (int k = 0; k < n; ++k) {
    TrainConfig train = config.train;
    if (k > 0) train.seed = DeriveSeed(config.train.seed, k);
    out.atlas->SetActiveSubspace(cubes[k]);
    Trainer trainer(out.atlas.get(), train, config.sampling, &dataset.palette);
    const int iters = config.iterations / n + (k < config.iterations % n ? 1 : 0);
    for (int it = 0; it < iters; ++it) trainer.TrainIteration(it);
    out.log.insert(out.log.end(), trainer.log().begin(), trainer.log().end());
  }
  out.atlas->SetActiveSubspace(cubes.front());
  return out;
}

std::vector<int> HeldOutViews(int num_frames, const std::vector<int>& excluded,
                              int num_views) {
  if (num_frames < 1 || num_views < 1) {
    throw std::invalid_argument("held-out views: need frames and views");
  }
  const std::set<int> skip(excluded.begin(), excluded.end());
  std::vector<int> views;
  std::set<int> used;
  for (int j = 0; j < num_views; ++j) {
    int frame = static_cast<int>(std::floor((j + 0.1) * num_frames / num_views));
    frame = std::min(frame, num_frames - 1);
    int candidate = frame;
    while (candidate < num_frames && (skip.count(candidate) || used.count(candidate))) {
      ++candidate;
    }
    if (candidate == num_frames) {
      candidate = frame;
      while (candidate < num_frames && used.count(candidate)) ++candidate;
      if (candidate == num_frames) break;
    }
    used.insert(candidate);
    views.push_back(candidate);
  }
  std::sort(views.begin(), views.end());
  return views;
}

std::vector<CubeField> TrainedCubes(const KeyframeAtlas& atlas) {
  std::vector<CubeField> cubes;
  for (int s = 0; s < atlas.num_subspaces(); ++s) {
    const Subspace& sub = atlas.subspace(s);
    if (!sub.keyframe_ids.empty()) cubes.push_back({sub.field.get(), sub.center, sub.edge});
  }
  return cubes;
}

std::vector<CubeField> TrainedCubes(const Checkpoint& checkpoint) {
  std::vector<CubeField> cubes;
  for (const auto& f : checkpoint.fields) {
    if (!f.keyframe_ids.empty()) cubes.push_back({&f.params, f.center, f.edge});
  }
  return cubes;
}

AtlasScene::AtlasScene(std::vector<CubeField> cubes) : cubes_(std::move(cubes)) {
  if (cubes_.empty()) throw std::invalid_argument("atlas scene: no trained cube");
  sharpness_ = cubes_.front().params->sharpness();
  bounds_ = {cubes_.front().center, cubes_.front().center};
  for (const CubeField& c : cubes_) {
    scenes_.push_back(std::make_unique<FieldScene<float>>(*c.params, c.center));
    sdf_scale_.push_back(c.params->sharpness() / sharpness_);
    const Vec3 half = Vec3::Constant(c.edge / 2);
    bounds_.first = bounds_.first.cwiseMin(c.center - half);
    bounds_.second = bounds_.second.cwiseMax(c.center + half);
  }
}

int AtlasScene::CubeOf(const Vec3& p) const {
  for (size_t c = 0; c < cubes_.size(); ++c) {
    const Vec3 d = (p - cubes_[c].center).cwiseAbs();
    if ((d.array() <= cubes_[c].edge / 2).all()) return static_cast<int>(c);
  }
  return -1;
}

template <typename F>
void AtlasScene::Dispatch(std::span<const Vec3> points, F&& per_cube) const {
  std::vector<std::vector<size_t>> members(cubes_.size());
  for (size_t i = 0; i < points.size(); ++i) {
    const int c = CubeOf(points[i]);
    if (c >= 0) members[c].push_back(i);
  }
  std::vector<Vec3> subset;
  for (size_t c = 0; c < cubes_.size(); ++c) {
    if (members[c].empty()) continue;
    subset.clear();
    for (size_t i : members[c]) subset.push_back(points[i]);
    per_cube(c, members[c], subset);
  }
}

void AtlasScene::Evaluate(std::span<const Vec3> points, std::span<double> sdf,
                          std::span<Vec3> rgb, std::span<Vec3> sem) const {
  // Empty space: one cube edge of clearance, no color.
  std::fill(sdf.begin(), sdf.end(), cubes_.front().edge);
  std::fill(rgb.begin(), rgb.end(), Vec3::Zero());
  std::fill(sem.begin(), sem.end(), Vec3::Zero());
  std::vector<double> s;
  std::vector<Vec3> c_rgb, c_sem;
  Dispatch(points, [&](size_t c, const std::vector<size_t>& idx, std::span<const Vec3> sub) {
    s.resize(sub.size());
    c_rgb.resize(sub.size());
    c_sem.resize(sub.size());
    scenes_[c]->Evaluate(sub, s, c_rgb, c_sem);
    for (size_t k = 0; k < idx.size(); ++k) {
      sdf[idx[k]] = s[k] * sdf_scale_[c];
      rgb[idx[k]] = c_rgb[k];
      sem[idx[k]] = c_sem[k];
    }
  });
}

void AtlasScene::EvaluateSdf(std::span<const Vec3> points, std::span<double> sdf) const {
  std::fill(sdf.begin(), sdf.end(), cubes_.front().edge);
  std::vector<double> s;
  Dispatch(points, [&](size_t c, const std::vector<size_t>& idx, std::span<const Vec3> sub) {
    s.resize(sub.size());
    scenes_[c]->EvaluateSdf(sub, s);
    for (size_t k = 0; k < idx.size(); ++k) sdf[idx[k]] = s[k] * sdf_scale_[c];
  });
}

RenderedImages RenderView(const AtlasScene& scene, const Pose& pose,
                          const CameraIntrinsics& intrinsics, const RenderConfig& config) {
  RenderConfig resolved = config;
  const auto box = scene.bounds();
  resolved.far = config.ResolveFar((box.second - box.first).norm());
  return RenderImage(pose, intrinsics, scene, resolved, box);
}

Json ToJson(const MapMetrics& m) {
  return {{"depth_l1_cm", m.depth_l1_cm},
          {"raw_depth_l1_cm", m.raw_depth_l1_cm},
          {"depth_scale", m.depth_scale},
          {"psnr", m.psnr},
          {"ssim", m.ssim},
          {"segmentation", ToJson(m.segmentation)},
          {"num_views", m.num_views}};
}

MapMetrics EvaluateViews(std::span<const ViewImages> predicted,
                         std::span<const ViewImages> ground_truth, const Palette& palette,
                         bool scale_correct, const SegmentationOptions& options) {
  if (predicted.size() != ground_truth.size() || predicted.empty()) {
    throw std::invalid_argument("evaluate views: need matching, non-empty view lists");
  }
  MapMetrics m;
  m.num_views = static_cast<int>(predicted.size());
  double sum_pg = 0, sum_pp = 0;
  for (size_t v = 0; v < predicted.size(); ++v) {
    const auto& p = predicted[v].depth.data();
    const auto& g = ground_truth[v].depth.data();
    if (p.size() != g.size()) throw std::invalid_argument("evaluate views: depth size mismatch");
    for (size_t i = 0; i < g.size(); ++i) {
      if (g[i] == 0) continue;
      sum_pg += static_cast<double>(p[i]) * g[i];
      sum_pp += static_cast<double>(p[i]) * p[i];
    }
  }
  if (scale_correct) {
    if (!(sum_pp > 0)) throw std::runtime_error("evaluate views: rendered depth is all zero");
    m.depth_scale = sum_pg / sum_pp;
  }
  double raw = 0, scaled = 0;
  int64_t count = 0;
  for (size_t v = 0; v < predicted.size(); ++v) {
    const auto& p = predicted[v].depth.data();
    const auto& g = ground_truth[v].depth.data();
    for (size_t i = 0; i < g.size(); ++i) {
      if (g[i] == 0) continue;
      raw += std::abs(static_cast<double>(p[i]) - g[i]);
      scaled += std::abs(m.depth_scale * p[i] - g[i]);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("evaluate views: no valid ground-truth depth");
  m.raw_depth_l1_cm = 100 * raw / count;
  m.depth_l1_cm = 100 * scaled / count;

  Eigen::MatrixX<int64_t> confusion;
  std::vector<int> class_ids;
  for (size_t v = 0; v < predicted.size(); ++v) {
    m.psnr += Psnr(predicted[v].rgb, ground_truth[v].rgb) / m.num_views;
    m.ssim += Ssim(predicted[v].rgb, ground_truth[v].rgb) / m.num_views;
    const LabelImage pred = ColorsToLabels(predicted[v].semantic, palette).labels;
    const LabelImage gt = ExactColorsToLabels(ground_truth[v].semantic, palette);
    const SegmentationReport r = EvaluateSegmentation(pred, gt, palette, options);
    if (v == 0) {
      confusion = r.confusion;
      class_ids = r.class_ids;
    } else {
      confusion += r.confusion;
    }
  }
  m.segmentation = ReportFromConfusion(confusion, class_ids, options);
  return m;
}

namespace {

bool ScaleCorrected(TrainMode mode) { return !UsesDepth(mode); }

}  // namespace

ExperimentResult RunExperiment(const SyntheticDataset& dataset, const RunConfig& config,
                               const EvalConfig& eval) {
  TrainedMap map = TrainMap(dataset, config);
  ExperimentResult result;
  result.num_keyframes = map.atlas->num_keyframes();
  result.log = std::move(map.log);
  result.views = HeldOutViews(static_cast<int>(dataset.frames.size()),
                              KeyframeFrames(dataset, config.atlas.policy), eval.num_views);
  const AtlasScene scene(TrainedCubes(*map.atlas));
  std::vector<ViewImages> predicted, truth;
  for (int v : result.views) {
    const Frame& f = dataset.frames[v];
    RenderedImages r = RenderView(scene, f.pose, dataset.intrinsics, eval.render);
    predicted.push_back({std::move(r.rgb), std::move(r.depth), std::move(r.semantic)});
    truth.push_back({f.rgb, f.depth, f.semantic});
  }
  result.metrics = EvaluateViews(predicted, truth, dataset.palette,
                                 ScaleCorrected(config.train.mode), eval.segmentation);
  return result;
}

std::vector<AblationRow> AblateSparsity(const SyntheticDataset& dataset,
                                        const RunConfig& base, const EvalConfig& eval,
                                        const std::vector<double>& percents) {
  std::vector<RunConfig> configs(percents.size(), base);
  for (size_t i = 0; i < percents.size(); ++i) {
    configs[i].depth_sparsity = percents[i];
    configs[i].Validate();
  }
  std::vector<AblationRow> rows;
  for (size_t i = 0; i < percents.size(); ++i) {
    rows.push_back({FormatDouble(percents[i]), RunExperiment(dataset, configs[i], eval)});
  }
  return rows;
}

std::vector<AblationRow> AblateKeyframes(const SyntheticDataset& dataset,
                                         const RunConfig& base, const EvalConfig& eval) {
  std::vector<AblationRow> rows;
  for (bool all : {false, true}) {
    RunConfig config = base;
    config.all_frames = all;
    rows.push_back({all ? "all_frames" : "keyframes", RunExperiment(dataset, config, eval)});
  }
  return rows;
}

std::vector<AblationRow> AblateRobustness(const SyntheticDataset& dataset,
                                          const RunConfig& base, const EvalConfig& eval,
                                          const std::vector<uint64_t>& seeds) {
  std::vector<AblationRow> rows;
  for (uint64_t seed : seeds) {
    RunConfig config = base;
    config.train.seed = seed;
    config.atlas.seed = seed;
    config.corruption_seed = seed;
    rows.push_back({std::to_string(seed), RunExperiment(dataset, config, eval)});
  }
  return rows;
}

std::vector<AblationRow> AblateRgbMode(const SyntheticDataset& dataset,
                                       const RunConfig& base, const EvalConfig& eval) {
  std::vector<AblationRow> rows;
  for (TrainMode mode : {TrainMode::kRgb, TrainMode::kRgbSemantic}) {
    RunConfig config = base;
    config.train.mode = mode;
    rows.push_back({TrainModeName(mode), RunExperiment(dataset, config, eval)});
  }
  return rows;
}

std::vector<AblationRow> AblateJitter(const SyntheticDataset& dataset,
                                      const RunConfig& base, const EvalConfig& eval,
                                      const std::vector<double>& flip_rates) {
  std::vector<RunConfig> configs(flip_rates.size(), base);
  for (size_t i = 0; i < flip_rates.size(); ++i) {
    configs[i].semantic_jitter = flip_rates[i];
    configs[i].Validate();
  }
  std::vector<AblationRow> rows;
  for (size_t i = 0; i < flip_rates.size(); ++i) {
    rows.push_back({FormatDouble(flip_rates[i]), RunExperiment(dataset, configs[i], eval)});
  }
  return rows;
}

std::vector<std::string> AblationCsvHeader(const std::string& label_column) {
  return {label_column, "num_keyframes", "depth_l1_cm", "raw_depth_l1_cm", "depth_scale",
          "psnr",       "ssim",          "total_accuracy", "class_avg_accuracy", "miou",
          "fwiou"};
}

std::vector<std::string> AblationCsvRow(const AblationRow& row) {
  const MapMetrics& m = row.result.metrics;
  return {row.label,
          std::to_string(row.result.num_keyframes),
          FormatDouble(m.depth_l1_cm),
          FormatDouble(m.raw_depth_l1_cm),
          FormatDouble(m.depth_scale),
          FormatDouble(m.psnr),
          FormatDouble(m.ssim),
          FormatDouble(m.segmentation.total_accuracy),
          FormatDouble(m.segmentation.class_avg_accuracy),
          FormatDouble(m.segmentation.miou),
          FormatDouble(m.segmentation.fwiou)};
}

}  // namespace nidss
