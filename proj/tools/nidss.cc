// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Every subcommand first resolves its options into a
// JSON object, writes it to <out>/run.json and then runs from that object
// alone, so `nidss run <out>/run.json` repeats the run exactly.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "nidss/eval.h"
#include "nidss/io.h"
#include "nidss/mesher.h"
#include "nidss/pipeline.h"

namespace nidss {
namespace {

namespace fs = std::filesystem;

template <typename T>
T Get(const Json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("run.json: missing '") + key + "'");
  return j[key].get<T>();
}

// Output directory of the current command. Kept out of run.json so that
// identical runs write identical trees.
fs::path g_out;

std::string OutPath(const std::string& name) { return (g_out / name).string(); }

void PrintTable(const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> width(header.size());
  for (size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    for (size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    for (size_t c = 0; c < cells.size(); ++c) {
      std::printf("%s%-*s", c ? " | " : "", static_cast<int>(width[c]), cells[c].c_str());
    }
    std::printf("\n");
  };
  line(header);
  for (const auto& r : rows) line(r);
}

std::string Fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---- synth ----

void RunSynth(const Json& run) {
  CheckKeys(run, {"version", "command", "scene"}, "synth");
  const SceneSpec spec = SceneSpecFromJson(run.at("scene"));
  const SyntheticDataset dataset = GenerateDataset(spec);
  SaveDataset(g_out.string(), dataset);
  std::printf("wrote %zu frames to %s\n", dataset.frames.size(), g_out.string().c_str());
}

// ---- train ----

Json CheckpointMetadata(const SyntheticDataset& dataset, const RunConfig& config,
                        const TrainedMap& map) {
  return {{"dataset", dataset.name},
          {"mode", TrainModeName(config.train.mode)},
          {"iterations", config.iterations},
          {"keyframe_frames", map.keyframe_frames},
          {"policy_keyframe_frames", KeyframeFrames(dataset, config.atlas.policy)},
          {"num_frames", dataset.frames.size()}};
}

void RunTrain(const Json& run) {
  CheckKeys(run, {"version", "command", "dataset", "run", "record_wall_time"}, "train");
  const SyntheticDataset dataset = LoadDataset(Get<std::string>(run, "dataset"));
  const RunConfig config = RunConfigFromJson(run.at("run"));
  const TrainedMap map = TrainMap(dataset, config);
  SaveCheckpoint(OutPath("checkpoint.bin"),
                 CheckpointFromAtlas(*map.atlas, CheckpointMetadata(dataset, config, map)));
  WriteTrainingCsv(OutPath("training.csv"), map.log, Get<bool>(run, "record_wall_time"));
  WriteJsonFile(OutPath("atlas.json"), AtlasToJson(*map.atlas));
  const LossBreakdown& last = map.log.empty() ? LossBreakdown{} : map.log.back().loss;
  std::printf("trained %d iterations on %d keyframes; final loss %.6f\n", config.iterations,
              map.atlas->num_keyframes(), last.total);
}

// ---- render ----

void RunRender(const Json& run) {
  CheckKeys(run, {"version", "command", "checkpoint", "dataset", "frames", "poses", "render"},
            "render");
  const Checkpoint checkpoint = LoadCheckpoint(Get<std::string>(run, "checkpoint"));
  const RenderConfig render = RenderConfigFromJson(run.at("render"));
  const std::string dataset_path = Get<std::string>(run, "dataset");
  const std::string poses_path = Get<std::string>(run, "poses");
  std::vector<int> frames = Get<std::vector<int>>(run, "frames");

  Trajectory poses;
  std::vector<int> indices;
  Palette palette;
  int depth_scale = 5000;
  if (!poses_path.empty()) {
    poses = ReadTumTrajectory(poses_path);
    for (size_t i = 0; i < poses.size(); ++i) indices.push_back(static_cast<int>(i));
  }
  if (!dataset_path.empty()) {
    const SyntheticDataset dataset = LoadDataset(dataset_path);
    palette = dataset.palette;
    depth_scale = dataset.depth_scale;
    if (poses_path.empty()) {
      if (frames.empty()) {
        const Json& meta = checkpoint.metadata;
        const auto excluded = meta.value("policy_keyframe_frames", std::vector<int>{});
        frames = HeldOutViews(static_cast<int>(dataset.frames.size()), excluded, 10);
      }
      for (int f : frames) {
        if (f < 0 || f >= static_cast<int>(dataset.frames.size())) {
          throw std::invalid_argument("render: frame " + std::to_string(f) + " out of range");
        }
        poses.push_back({dataset.frames[f].timestamp, dataset.frames[f].pose});
        indices.push_back(f);
      }
    }
  }
  if (poses.empty()) throw std::invalid_argument("render: need --poses or --dataset");

  const AtlasScene scene(TrainedCubes(checkpoint));
  const fs::path& out = g_out;
  for (const char* sub : {"rgb", "depth", "semantic"}) fs::create_directories(out / sub);
  DatasetManifest manifest;
  manifest.name = "render";
  manifest.intrinsics = checkpoint.intrinsics;
  manifest.depth_scale = depth_scale;
  if (!palette.entries().empty()) {
    manifest.palette = "palette.json";
    WriteJsonFile((out / "palette.json").string(), ToJson(palette));
  }
  for (size_t i = 0; i < poses.size(); ++i) {
    const RenderedImages images = RenderView(scene, poses[i].pose, checkpoint.intrinsics, render);
    char name[32];
    std::snprintf(name, sizeof(name), "%06d.png", indices[i]);
    FrameRecord record{poses[i].timestamp, std::string("rgb/") + name,
                       std::string("depth/") + name, std::string("semantic/") + name,
                       poses[i].pose};
    WriteColorPng((out / record.rgb).string(), images.rgb);
    WriteDepthPng((out / record.depth).string(), images.depth, depth_scale);
    WriteColorPng((out / record.semantic).string(), images.semantic);
    manifest.frames.push_back(record);
  }
  Json manifest_json = ToJson(manifest);
  manifest_json["mode"] = checkpoint.metadata.value("mode", "");
  WriteJsonFile((out / "manifest.json").string(), manifest_json);
  std::printf("rendered %zu views to %s\n", poses.size(), out.string().c_str());
}

// ---- eval ----

struct Predictions {
  std::string mode;
  std::vector<FrameRecord> frames;
  fs::path base;
  int depth_scale = 5000;
};

Predictions LoadPredictions(const std::string& manifest_path) {
  Json j = ReadJsonFile(manifest_path);
  Predictions p;
  if (j.contains("mode")) {
    p.mode = j["mode"].get<std::string>();
    j.erase("mode");
  }
  // Rendered palettes are optional; the dataset's palette is authoritative.
  if (!j.contains("palette")) j["palette"] = "-";
  const DatasetManifest m = ManifestFromJson(j);
  p.frames = m.frames;
  p.base = fs::path(manifest_path).parent_path();
  p.depth_scale = m.depth_scale;
  return p;
}

void RunEval(const Json& run) {
  CheckKeys(run, {"version", "command", "dataset", "predictions", "trajectory", "scale_correct",
                  "ate_with_scale", "miou_over_all_classes"},
            "eval");
  const std::string pred_path = Get<std::string>(run, "predictions");
  const std::string traj_path = Get<std::string>(run, "trajectory");
  if (pred_path.empty() && traj_path.empty()) {
    throw std::invalid_argument("eval: need --predictions and/or --trajectory");
  }
  const std::string dataset_path = Get<std::string>(run, "dataset");
  const SyntheticDataset dataset = LoadDataset(dataset_path);
  Json report = {{"version", kFormatVersion}, {"dataset", dataset.name}};
  std::vector<std::string> header;
  std::vector<std::string> row;

  if (!pred_path.empty()) {
    const Predictions pred = LoadPredictions(pred_path);
    const std::string scale_flag = Get<std::string>(run, "scale_correct");
    bool scale_correct = false;
    if (scale_flag == "on") {
      scale_correct = true;
    } else if (scale_flag == "auto") {
      scale_correct = !pred.mode.empty() && !UsesDepth(ParseTrainMode(pred.mode));
    } else if (scale_flag != "off") {
      throw std::invalid_argument("eval: scale_correct must be auto, on or off");
    }
    Trajectory pred_times, gt_times;
    for (const auto& f : pred.frames) pred_times.push_back({f.timestamp, f.pose});
    for (const auto& f : dataset.frames) gt_times.push_back({f.timestamp, f.pose});
    const auto pairs = AssociateTimestamps(pred_times, gt_times);
    if (pairs.size() != pred.frames.size()) {
      throw std::runtime_error("eval: " + std::to_string(pred.frames.size() - pairs.size()) +
                               " predicted views have no dataset frame");
    }
    std::vector<ViewImages> predicted, truth;
    for (const auto& [pi, gi] : pairs) {
      const FrameRecord& r = pred.frames[pi];
      predicted.push_back({ReadColorPng((pred.base / r.rgb).string()),
                           ReadDepthPng((pred.base / r.depth).string(), pred.depth_scale),
                           ReadColorPng((pred.base / r.semantic).string())});
      const Frame& f = dataset.frames[gi];
      truth.push_back({f.rgb, f.depth, f.semantic});
    }
    SegmentationOptions options;
    options.miou_over_all_classes = Get<bool>(run, "miou_over_all_classes");
    const MapMetrics m = EvaluateViews(predicted, truth, dataset.palette, scale_correct, options);
    report["mode"] = pred.mode;
    report["scale_corrected"] = scale_correct;
    report["maps"] = ToJson(m);
    header = {"Depth L1 [cm]", "PSNR [dB]", "SSIM", "Acc [%]", "Class Acc [%]", "mIoU [%]",
              "FWIoU [%]"};
    row = {Fixed(m.depth_l1_cm, 3), Fixed(m.psnr, 2), Fixed(m.ssim, 3),
           Fixed(m.segmentation.total_accuracy, 2), Fixed(m.segmentation.class_avg_accuracy, 2),
           Fixed(m.segmentation.miou, 2), Fixed(m.segmentation.fwiou, 2)};
  }
  if (!traj_path.empty()) {
    Trajectory gt;
    for (const auto& f : dataset.frames) gt.push_back({f.timestamp, f.pose});
    const AteResult ate =
        ComputeAte(ReadTumTrajectory(traj_path), gt, Get<bool>(run, "ate_with_scale"));
    report["ate"] = {{"rmse_cm", 100 * ate.rmse},
                     {"mean_cm", 100 * ate.mean},
                     {"num_pairs", ate.num_pairs},
                     {"scale", ate.alignment.scale}};
    header.insert(header.begin(), "ATE RMSE [cm]");
    row.insert(row.begin(), Fixed(100 * ate.rmse, 3));
  }
  WriteJsonFile(OutPath("metrics.json"), report);
  std::vector<std::string> csv_header, csv_row;
  if (report.contains("ate")) {
    csv_header.push_back("ate_rmse_cm");
    csv_row.push_back(FormatDouble(report["ate"]["rmse_cm"].get<double>()));
  }
  if (report.contains("maps")) {
    const Json& m = report["maps"];
    for (const char* k : {"depth_l1_cm", "raw_depth_l1_cm", "depth_scale", "psnr", "ssim"}) {
      csv_header.push_back(k);
      csv_row.push_back(FormatDouble(m[k].get<double>()));
    }
    for (const char* k : {"total_accuracy", "class_avg_accuracy", "miou", "fwiou"}) {
      csv_header.push_back(k);
      csv_row.push_back(FormatDouble(m["segmentation"][k].get<double>()));
    }
  }
  WriteCsv(OutPath("metrics.csv"), csv_header, {csv_row});
  PrintTable(header, {row});
}

// ---- mesh ----

void RunMesh(const Json& run) {
  CheckKeys(run, {"version", "command", "checkpoint", "cells", "color"}, "mesh");
  const Checkpoint checkpoint = LoadCheckpoint(Get<std::string>(run, "checkpoint"));
  const std::string color = Get<std::string>(run, "color");
  if (color != "none" && color != "rgb" && color != "semantic") {
    throw std::invalid_argument("mesh: color must be none, rgb or semantic");
  }
  std::vector<MeshSource> sources;
  for (const CubeField& c : TrainedCubes(checkpoint)) {
    sources.push_back({c.params, c.center, c.edge});
  }
  const TriangleMesh mesh =
      MeshFields(sources, Get<int>(run, "cells"), color != "none", color == "semantic");
  WritePly(OutPath("mesh.ply"), mesh);
  std::printf("mesh: %zu vertices, %zu triangles\n", mesh.vertices.size(),
              mesh.triangles.size());
}

// ---- ablate ----

void RunAblate(const Json& run) {
  CheckKeys(run, {"version", "command", "kind", "dataset", "run", "eval", "levels", "seeds"},
            "ablate");
  const std::string kind = Get<std::string>(run, "kind");
  const SyntheticDataset dataset = LoadDataset(Get<std::string>(run, "dataset"));
  const RunConfig base = RunConfigFromJson(run.at("run"));
  const EvalConfig eval = EvalConfigFromJson(run.at("eval"));
  std::vector<AblationRow> rows;
  std::string label;
  if (kind == "sparsity") {
    label = "sparsity_percent";
    rows = AblateSparsity(dataset, base, eval, Get<std::vector<double>>(run, "levels"));
  } else if (kind == "jitter") {
    label = "flip_rate";
    rows = AblateJitter(dataset, base, eval, Get<std::vector<double>>(run, "levels"));
  } else if (kind == "keyframes") {
    label = "training_frames";
    rows = AblateKeyframes(dataset, base, eval);
  } else if (kind == "robustness") {
    label = "seed";
    rows = AblateRobustness(dataset, base, eval, Get<std::vector<uint64_t>>(run, "seeds"));
  } else if (kind == "rgb-mode") {
    label = "mode";
    rows = AblateRgbMode(dataset, base, eval);
  } else {
    throw std::invalid_argument("ablate: unknown kind '" + kind + "'");
  }
  std::vector<std::vector<std::string>> csv;
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows) {
    csv.push_back(AblationCsvRow(r));
    const MapMetrics& m = r.result.metrics;
    table.push_back({r.label, Fixed(m.depth_l1_cm, 3), Fixed(m.psnr, 2), Fixed(m.ssim, 3),
                     Fixed(m.segmentation.miou, 2)});
  }
  if (kind == "robustness" && rows.size() > 1) {
    // Sample mean and standard deviation over the trials.
    const auto header = AblationCsvHeader(label);
    std::vector<std::string> mean_row{"mean"}, std_row{"std"};
    for (size_t c = 1; c < header.size(); ++c) {
      double sum = 0, sq = 0;
      for (const auto& r : csv) sum += std::stod(r[c]);
      const double mean = sum / csv.size();
      for (const auto& r : csv) sq += (std::stod(r[c]) - mean) * (std::stod(r[c]) - mean);
      mean_row.push_back(FormatDouble(mean));
      std_row.push_back(FormatDouble(std::sqrt(sq / (csv.size() - 1))));
    }
    const size_t n = csv.size();
    csv.push_back(mean_row);
    csv.push_back(std_row);
    for (size_t k : {n, n + 1}) {
      table.push_back({csv[k][0], Fixed(std::stod(csv[k][2]), 3), Fixed(std::stod(csv[k][5]), 2),
                       Fixed(std::stod(csv[k][6]), 3), Fixed(std::stod(csv[k][9]), 2)});
    }
  }
  WriteCsv(OutPath(kind + ".csv"), AblationCsvHeader(label), csv);
  PrintTable({label, "Depth L1 [cm]", "PSNR [dB]", "SSIM", "mIoU [%]"}, table);
}

// ---- dispatch ----

void Execute(const Json& run, const fs::path& out) {
  if (run.value("version", 0) != kFormatVersion) {
    throw std::invalid_argument("run.json: unsupported version");
  }
  const std::string command = Get<std::string>(run, "command");
  g_out = out;
  fs::create_directories(g_out);
  WriteJsonFile(OutPath("run.json"), run);
  if (command == "synth") return RunSynth(run);
  if (command == "train") return RunTrain(run);
  if (command == "render") return RunRender(run);
  if (command == "eval") return RunEval(run);
  if (command == "mesh") return RunMesh(run);
  if (command == "ablate") return RunAblate(run);
  throw std::invalid_argument("run.json: unknown command '" + command + "'");
}

// Inputs are recorded as absolute paths so that run.json replays from any
// working directory.
std::string Absolute(const std::string& path) {
  return path.empty() ? path : fs::absolute(path).lexically_normal().string();
}

template <typename T>
std::vector<T> ParseList(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t used = 0;
    T v;
    if constexpr (std::is_floating_point_v<T>) {
      v = std::stod(item, &used);
    } else {
      v = static_cast<T>(std::stoull(item, &used));
    }
    if (used != item.size()) throw std::invalid_argument("bad list item '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

// Options shared by train and ablate that edit a RunConfig.
struct RunOverrides {
  std::string config_file;
  int iterations = 0;
  std::string mode;
  int pixels = 0;
  int samples = 0;
  uint64_t seed = 0;
  bool all_frames = false;
  double depth_sparsity = 0;
  double semantic_jitter = 0;
  double edge = 0;
  std::vector<CLI::Option*> options;

  void Add(CLI::App* app) {
    options = {
        app->add_option("--run-config", config_file, "Run configuration JSON")
            ->check(CLI::ExistingFile),
        app->add_option("--iterations", iterations, "Optimization steps")
            ->check(CLI::NonNegativeNumber),
        app->add_option("--mode", mode, "rgbd, rgbd+semantic, rgb or rgb+semantic"),
        app->add_option("--pixels", pixels, "Pixels per iteration")->check(CLI::PositiveNumber),
        app->add_option("--samples", samples, "Samples per ray")->check(CLI::Range(2, 4096)),
        app->add_option("--seed", seed, "Training and initialization seed"),
        app->add_flag("--all-frames", all_frames, "Train on every frame"),
        app->add_option("--depth-sparsity", depth_sparsity, "Percent of depth pixels dropped")
            ->check(CLI::Range(0.0, 100.0)),
        app->add_option("--semantic-jitter", semantic_jitter, "Semantic label flip rate")
            ->check(CLI::Range(0.0, 1.0)),
        app->add_option("--edge", edge, "Cube edge in meters")->check(CLI::PositiveNumber),
    };
  }

  RunConfig Resolve() const {
    RunConfig c = config_file.empty() ? RunConfig{} : RunConfigFromJson(ReadJsonFile(config_file));
    auto set = [this](int k) { return options[k]->count() > 0; };
    if (set(1)) c.iterations = iterations;
    if (set(2)) c.train.mode = ParseTrainMode(mode);
    if (set(3)) c.train.pixels_per_iter = pixels;
    if (set(4)) c.sampling.num_samples = samples;
    if (set(5)) {
      c.train.seed = seed;
      c.atlas.seed = seed;
      c.corruption_seed = seed;
    }
    if (set(6)) c.all_frames = all_frames;
    if (set(7)) c.depth_sparsity = depth_sparsity;
    if (set(8)) c.semantic_jitter = semantic_jitter;
    if (set(9)) c.atlas.edge = edge;
    c.Validate();
    return c;
  }
};

int Main(int argc, char** argv) {
  CLI::App app{"Dense neural implicit semantic mapping from RGB-D keyframes."};
  app.require_subcommand(1);
  std::string out;

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset from a scene spec");
  std::string scene_file, base = "room";
  int num_frames = 0;
  uint64_t synth_seed = 0;
  synth->add_option("--scene", scene_file, "Scene spec JSON")->check(CLI::ExistingFile);
  auto* base_opt = synth->add_option("--base", base, "Built-in scene")
                       ->check(CLI::IsMember({"room", "apartment"}));
  auto* frames_opt = synth->add_option("--frames", num_frames, "Number of frames")
                         ->check(CLI::Range(2, 100000));
  auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "Scene seed");
  synth->add_option("--out", out, "Dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a map on a dataset");
  std::string dataset;
  bool wall_time = false;
  RunOverrides train_overrides;
  train->add_option("--dataset", dataset, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Output directory")->required();
  train->add_flag("--wall-time", wall_time, "Record per-iteration wall time in the CSV");
  train_overrides.Add(train);

  // render
  auto* render = app.add_subcommand("render", "Render views of a trained map");
  std::string checkpoint, poses, frames;
  int render_samples = 128;
  render->add_option("--checkpoint", checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  render->add_option("--dataset", dataset, "Dataset manifest (poses by frame)")
      ->check(CLI::ExistingFile);
  render->add_option("--frames", frames, "Comma-separated frame indices");
  render->add_option("--poses", poses, "Trajectory file of poses to render")
      ->check(CLI::ExistingFile);
  render->add_option("--samples", render_samples, "Samples per ray")->check(CLI::Range(2, 4096));
  render->add_option("--out", out, "Output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate rendered views and trajectories");
  std::string predictions, trajectory, scale_correct = "auto";
  bool ate_scale = false, miou_all = false;
  eval->add_option("--dataset", dataset, "Ground-truth dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--predictions", predictions, "Manifest written by render")
      ->check(CLI::ExistingFile);
  eval->add_option("--trajectory", trajectory, "Estimated trajectory file")
      ->check(CLI::ExistingFile);
  eval->add_option("--scale-correct", scale_correct, "Depth scale correction")
      ->check(CLI::IsMember({"auto", "on", "off"}));
  eval->add_flag("--ate-with-scale", ate_scale, "Similarity instead of rigid alignment");
  eval->add_flag("--miou-all-classes", miou_all, "Average IoU over all palette classes");
  eval->add_option("--out", out, "Output directory")->required();

  // mesh
  auto* mesh = app.add_subcommand("mesh", "Extract a mesh from a trained map");
  int cells = 128;
  std::string color = "rgb";
  mesh->add_option("--checkpoint", checkpoint, "Checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);
  mesh->add_option("--cells", cells, "Marching-cubes cells per cube edge")
      ->check(CLI::Range(1, 1024));
  mesh->add_option("--color", color, "Vertex colors")
      ->check(CLI::IsMember({"none", "rgb", "semantic"}));
  mesh->add_option("--out", out, "Output directory")->required();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run an ablation and write a CSV table");
  std::string kind, levels, seeds = "0,1,2,3,4";
  int views = 10;
  RunOverrides ablate_overrides;
  ablate->add_option("kind", kind, "sparsity, keyframes, robustness, rgb-mode or jitter")
      ->required()
      ->check(CLI::IsMember({"sparsity", "keyframes", "robustness", "rgb-mode", "jitter"}));
  ablate->add_option("--dataset", dataset, "Dataset manifest")
      ->required()
      ->check(CLI::ExistingFile);
  auto* levels_opt = ablate->add_option(
      "--levels", levels, "Sparsity percents or flip rates (default 0,10,30,50,70 / 0,0.2)");
  ablate->add_option("--seeds", seeds, "Seeds for robustness trials");
  ablate->add_option("--views", views, "Held-out views")->check(CLI::PositiveNumber);
  ablate->add_option("--out", out, "Output directory")->required();
  ablate_overrides.Add(ablate);

  // run
  auto* rerun = app.add_subcommand("run", "Repeat a run from its run.json");
  std::string run_file;
  rerun->add_option("run_json", run_file, "run.json of an earlier run")
      ->required()
      ->check(CLI::ExistingFile);
  rerun->add_option("--out", out, "Output directory (default: next to run.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    Json run = {{"version", kFormatVersion}};
    if (*rerun) {
      run = ReadJsonFile(run_file);
    } else if (*synth) {
      Json j = scene_file.empty() ? Json::object() : ReadJsonFile(scene_file);
      if (base_opt->count()) j["base"] = base;
      SceneSpec spec = SceneSpecFromJson(j);
      if (frames_opt->count()) spec.trajectory.num_frames = num_frames;
      if (synth_seed_opt->count()) spec.seed = synth_seed;
      run["command"] = "synth";
      run["scene"] = ToJson(spec);
    } else if (*train) {
      run["command"] = "train";
      run["dataset"] = Absolute(dataset);
      run["run"] = ToJson(train_overrides.Resolve());
      run["record_wall_time"] = wall_time;
    } else if (*render) {
      run["command"] = "render";
      run["checkpoint"] = Absolute(checkpoint);
      run["dataset"] = Absolute(dataset);
      run["frames"] = frames.empty() ? std::vector<int>{} : ParseList<int>(frames);
      run["poses"] = Absolute(poses);
      RenderConfig rc{render_samples, 0.05, 8.0, false, 0};
      run["render"] = ToJson(rc);
    } else if (*eval) {
      run["command"] = "eval";
      run["dataset"] = Absolute(dataset);
      run["predictions"] = Absolute(predictions);
      run["trajectory"] = Absolute(trajectory);
      run["scale_correct"] = scale_correct;
      run["ate_with_scale"] = ate_scale;
      run["miou_over_all_classes"] = miou_all;
    } else if (*mesh) {
      run["command"] = "mesh";
      run["checkpoint"] = Absolute(checkpoint);
      run["cells"] = cells;
      run["color"] = color;
    } else if (*ablate) {
      run["command"] = "ablate";
      run["kind"] = kind;
      run["dataset"] = Absolute(dataset);
      run["run"] = ToJson(ablate_overrides.Resolve());
      EvalConfig ec;
      ec.num_views = views;
      run["eval"] = ToJson(ec);
      if (!levels_opt->count()) levels = kind == "jitter" ? "0,0.2" : "0,10,30,50,70";
      run["levels"] = ParseList<double>(levels);
      run["seeds"] = ParseList<uint64_t>(seeds);
    }
    if (*rerun && out.empty()) out = fs::path(run_file).parent_path().string();
    Execute(run, out.empty() ? fs::path(".") : fs::path(out));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace
}  // namespace nidss

int main(int argc, char** argv) { return nidss::Main(argc, argv); }
