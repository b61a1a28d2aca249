// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/io.h"

#include <png.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace nidss {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little,
              "checkpoint and PNG code assume a little-endian host");

std::string FormatDouble(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

std::string FormatFloat(float value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

// ---- PNG ----

struct PngError {
  std::string message;
};

void OnPngError(png_structp png, png_const_charp message) {
  auto* err = static_cast<PngError*>(png_get_error_ptr(png));
  err->message = message;
  longjmp(png_jmpbuf(png), 1);
}

void OnPngWarning(png_structp, png_const_charp) {}

struct FileCloser {
  void operator()(FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

FilePtr OpenFile(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw std::runtime_error("cannot open " + path + ": " + std::strerror(errno));
  }
  return f;
}

}  // namespace

PngRaster ReadPng(const std::string& path) {
  FilePtr file = OpenFile(path, "rb");
  PngError err;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, OnPngError, OnPngWarning);
  if (!png) throw std::runtime_error("png: out of memory reading " + path);
  png_infop info = png_create_info_struct(png);
  PngRaster raster;
  std::vector<png_bytep> rows;
  std::vector<uint8_t> bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: " + path + ": " + err.message);
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  raster.width = static_cast<int>(png_get_image_width(png, info));
  raster.height = static_cast<int>(png_get_image_height(png, info));
  raster.channels = png_get_channels(png, info);
  raster.bit_depth = png_get_bit_depth(png, info);
  const size_t row_bytes = png_get_rowbytes(png, info);
  bytes.resize(row_bytes * raster.height);
  rows.resize(raster.height);
  for (int y = 0; y < raster.height; ++y) rows[y] = bytes.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const size_t n = static_cast<size_t>(raster.width) * raster.height * raster.channels;
  raster.samples.resize(n);
  if (raster.bit_depth == 16) {
    for (size_t i = 0; i < n; ++i) {
      raster.samples[i] = static_cast<uint16_t>(bytes[2 * i] | (bytes[2 * i + 1] << 8));
    }
  } else {
    for (size_t i = 0; i < n; ++i) raster.samples[i] = bytes[i];
  }
  return raster;
}

void WritePng(const std::string& path, const PngRaster& raster) {
  if (raster.channels != 1 && raster.channels != 3) {
    throw std::invalid_argument("png: only gray or RGB can be written");
  }
  if (raster.bit_depth != 8 && raster.bit_depth != 16) {
    throw std::invalid_argument("png: bit depth must be 8 or 16");
  }
  const size_t n = static_cast<size_t>(raster.width) * raster.height * raster.channels;
  if (raster.samples.size() != n || raster.width <= 0 || raster.height <= 0) {
    throw std::invalid_argument("png: sample count does not match the size");
  }
  const int bytes_per = raster.bit_depth / 8;
  std::vector<uint8_t> bytes(n * bytes_per);
  for (size_t i = 0; i < n; ++i) {
    const uint16_t v = raster.samples[i];
    if (bytes_per == 1) {
      if (v > 255) throw std::invalid_argument("png: 8-bit sample out of range");
      bytes[i] = static_cast<uint8_t>(v);
    } else {
      // PNG stores 16-bit samples big-endian.
      bytes[2 * i] = static_cast<uint8_t>(v >> 8);
      bytes[2 * i + 1] = static_cast<uint8_t>(v & 0xff);
    }
  }
  FilePtr file = OpenFile(path, "wb");
  PngError err;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, OnPngError, OnPngWarning);
  if (!png) throw std::runtime_error("png: out of memory writing " + path);
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(raster.height);
  const size_t row_bytes = static_cast<size_t>(raster.width) * raster.channels * bytes_per;
  for (int y = 0; y < raster.height; ++y) rows[y] = bytes.data() + y * row_bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: " + path + ": " + err.message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, raster.width, raster.height, raster.bit_depth,
               raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void WriteColorPng(const std::string& path, const ColorImage& image) {
  if (image.channels() != 3) throw std::invalid_argument("color png: need 3 channels");
  PngRaster raster{image.width(), image.height(), 3, 8, {}};
  raster.samples.reserve(image.data().size());
  for (float v : image.data()) raster.samples.push_back(EncodeUnit8(v));
  WritePng(path, raster);
}

ColorImage ReadColorPng(const std::string& path) {
  const PngRaster raster = ReadPng(path);
  if (raster.channels != 3 || raster.bit_depth != 8) {
    throw std::runtime_error("color png: " + path + " is not 8-bit RGB");
  }
  ColorImage image(raster.width, raster.height, 3);
  for (size_t i = 0; i < raster.samples.size(); ++i) {
    image.data()[i] = DecodeUnit8(static_cast<uint8_t>(raster.samples[i]));
  }
  return image;
}

void WriteDepthPng(const std::string& path, const DepthImage& depth,
                   int depth_scale) {
  if (depth.channels() != 1) throw std::invalid_argument("depth png: need 1 channel");
  PngRaster raster{depth.width(), depth.height(), 1, 16, {}};
  raster.samples.reserve(depth.data().size());
  for (float v : depth.data()) raster.samples.push_back(EncodeDepth(v, depth_scale));
  WritePng(path, raster);
}

DepthImage ReadDepthPng(const std::string& path, int depth_scale) {
  const PngRaster raster = ReadPng(path);
  if (raster.channels != 1 || raster.bit_depth != 16) {
    throw std::runtime_error("depth png: " + path + " is not 16-bit gray");
  }
  DepthImage depth(raster.width, raster.height, 1);
  for (size_t i = 0; i < raster.samples.size(); ++i) {
    depth.data()[i] = DecodeDepth(raster.samples[i], depth_scale);
  }
  return depth;
}

// ---- Trajectories ----

Trajectory ReadTumTrajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("trajectory: cannot open " + path);
  Trajectory out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (!ss.eof()) {
      throw std::runtime_error("trajectory: " + path + ":" + std::to_string(line_no) +
                               ": not a number");
    }
    if (v.empty()) continue;
    if (v.size() != 8) {
      throw std::runtime_error("trajectory: " + path + ":" + std::to_string(line_no) +
                               ": expected 8 values, got " + std::to_string(v.size()));
    }
    TimedPose tp;
    tp.timestamp = v[0];
    tp.pose.translation = Vec3(v[1], v[2], v[3]);
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    // Files written with few digits are not unit to 1e-9; renormalize small
    // deviations only.
    if (!(std::abs(q.norm() - 1.0) < 1e-3)) {
      throw std::runtime_error("trajectory: " + path + ":" + std::to_string(line_no) +
                               ": quaternion is not unit length");
    }
    if (std::abs(q.norm() - 1.0) > 1e-12) q.normalize();
    tp.pose.rotation = q;
    out.push_back(tp);
  }
  try {
    ValidateTrajectory(out);
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("trajectory: " + path + ": " + e.what());
  }
  return out;
}

void WriteTumTrajectory(const std::string& path, const Trajectory& trajectory) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("trajectory: cannot write " + path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& tp : trajectory) {
    const auto& t = tp.pose.translation;
    const auto& q = tp.pose.rotation;
    out << FormatDouble(tp.timestamp);
    for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) {
      out << ' ' << FormatDouble(v);
    }
    out << '\n';
  }
}

// ---- JSON ----

void CheckKeys(const Json& j, std::initializer_list<const char*> allowed,
               const std::string& what) {
  if (!j.is_object()) throw std::invalid_argument(what + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(what + ": unknown key '" + key + "'");
  }
}

namespace {

template <typename T>
void Read(const Json& j, const char* key, T* out, const std::string& what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw std::invalid_argument("not a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw std::invalid_argument("not an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw std::invalid_argument("not a number");
    }
    *out = it->get<T>();
  } catch (const std::exception& e) {
    throw std::invalid_argument(what + "." + key + ": " + e.what());
  }
}

void ReadVec3(const Json& j, const char* key, Vec3* out, const std::string& what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    *out = Vec3FromJson(*it);
  } catch (const std::exception& e) {
    throw std::invalid_argument(what + "." + key + ": " + e.what());
  }
}

}  // namespace

Json ToJson(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 Vec3FromJson(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected 3 numbers");
  Vec3 v;
  for (int a = 0; a < 3; ++a) {
    if (!j[a].is_number()) throw std::invalid_argument("expected 3 numbers");
    v[a] = j[a].get<double>();
  }
  return v;
}

Json ToJson(const Pose& pose) {
  const auto& t = pose.translation;
  const auto& q = pose.rotation;
  return Json::array({t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()});
}

Pose PoseFromJson(const Json& j) {
  if (!j.is_array() || j.size() != 7) {
    throw std::invalid_argument("pose: expected [tx, ty, tz, qx, qy, qz, qw]");
  }
  double v[7];
  for (int i = 0; i < 7; ++i) {
    if (!j[i].is_number()) throw std::invalid_argument("pose: expected numbers");
    v[i] = j[i].get<double>();
  }
  Pose pose;
  pose.translation = Vec3(v[0], v[1], v[2]);
  pose.rotation = Eigen::Quaterniond(v[6], v[3], v[4], v[5]);
  pose.Validate();
  return pose;
}

Json ToJson(const CameraIntrinsics& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy},
          {"width", c.width}, {"height", c.height}};
}

CameraIntrinsics IntrinsicsFromJson(const Json& j) {
  const std::string what = "intrinsics";
  CheckKeys(j, {"fx", "fy", "cx", "cy", "width", "height"}, what);
  CameraIntrinsics c;
  Read(j, "fx", &c.fx, what);
  Read(j, "fy", &c.fy, what);
  Read(j, "cx", &c.cx, what);
  Read(j, "cy", &c.cy, what);
  Read(j, "width", &c.width, what);
  Read(j, "height", &c.height, what);
  c.Validate();
  return c;
}

Json ToJson(const Palette& palette) {
  Json classes = Json::array();
  for (const auto& e : palette.entries()) {
    classes.push_back({{"id", e.id},
                       {"name", e.name},
                       {"color", {e.rgb8[0], e.rgb8[1], e.rgb8[2]}}});
  }
  return {{"version", kFormatVersion}, {"classes", classes}};
}

Palette PaletteFromJson(const Json& j) {
  CheckKeys(j, {"version", "classes"}, "palette");
  if (j.value("version", kFormatVersion) != kFormatVersion) {
    throw std::invalid_argument("palette: unsupported version");
  }
  if (!j.contains("classes") || !j["classes"].is_array()) {
    throw std::invalid_argument("palette: missing class list");
  }
  std::vector<PaletteEntry> entries;
  for (const auto& c : j["classes"]) {
    CheckKeys(c, {"id", "name", "color"}, "palette class");
    PaletteEntry e;
    Read(c, "id", &e.id, "palette class");
    Read(c, "name", &e.name, "palette class");
    const Json& color = c.at("color");
    if (!color.is_array() || color.size() != 3) {
      throw std::invalid_argument("palette class: color must be 3 integers");
    }
    for (int k = 0; k < 3; ++k) {
      if (!color[k].is_number_integer() || color[k].get<int>() < 0 ||
          color[k].get<int>() > 255) {
        throw std::invalid_argument("palette class: color must be 3 integers in [0, 255]");
      }
      e.rgb8[k] = static_cast<uint8_t>(color[k].get<int>());
    }
    entries.push_back(e);
  }
  return Palette(std::move(entries));
}

Json ToJson(const HashGridConfig& c) {
  return {{"num_levels", c.num_levels},
          {"table_size", c.table_size},
          {"features_per_level", c.features_per_level},
          {"base_resolution", c.base_resolution},
          {"growth_factor", c.growth_factor},
          {"domain_min", ToJson(c.domain_min)},
          {"domain_max", ToJson(c.domain_max)}};
}

HashGridConfig HashGridConfigFromJson(const Json& j) {
  const std::string what = "hash grid";
  CheckKeys(j, {"num_levels", "table_size", "features_per_level", "base_resolution",
                "growth_factor", "domain_min", "domain_max"},
            what);
  HashGridConfig c;
  Read(j, "num_levels", &c.num_levels, what);
  Read(j, "table_size", &c.table_size, what);
  Read(j, "features_per_level", &c.features_per_level, what);
  Read(j, "base_resolution", &c.base_resolution, what);
  Read(j, "growth_factor", &c.growth_factor, what);
  ReadVec3(j, "domain_min", &c.domain_min, what);
  ReadVec3(j, "domain_max", &c.domain_max, what);
  c.Validate();
  return c;
}

Json ToJson(const FieldConfig& c) {
  return {{"grid", ToJson(c.grid)},
          {"hidden_width", c.hidden_width},
          {"geometry_feature_dim", c.geometry_feature_dim},
          {"sdf_hidden_layers", c.sdf_hidden_layers},
          {"color_hidden_layers", c.color_hidden_layers},
          {"semantic_hidden_layers", c.semantic_hidden_layers},
          {"softplus_beta", c.softplus_beta},
          {"initial_sharpness", c.initial_sharpness},
          {"sdf_init_bias", c.sdf_init_bias},
          {"hash_init_range", c.hash_init_range}};
}

FieldConfig FieldConfigFromJson(const Json& j) {
  const std::string what = "field";
  CheckKeys(j, {"grid", "hidden_width", "geometry_feature_dim", "sdf_hidden_layers",
                "color_hidden_layers", "semantic_hidden_layers", "softplus_beta",
                "initial_sharpness", "sdf_init_bias", "hash_init_range"},
            what);
  FieldConfig c;
  if (j.contains("grid")) c.grid = HashGridConfigFromJson(j["grid"]);
  Read(j, "hidden_width", &c.hidden_width, what);
  Read(j, "geometry_feature_dim", &c.geometry_feature_dim, what);
  Read(j, "sdf_hidden_layers", &c.sdf_hidden_layers, what);
  Read(j, "color_hidden_layers", &c.color_hidden_layers, what);
  Read(j, "semantic_hidden_layers", &c.semantic_hidden_layers, what);
  Read(j, "softplus_beta", &c.softplus_beta, what);
  Read(j, "initial_sharpness", &c.initial_sharpness, what);
  Read(j, "sdf_init_bias", &c.sdf_init_bias, what);
  Read(j, "hash_init_range", &c.hash_init_range, what);
  c.Validate();
  return c;
}

Json ToJson(const TrainConfig& c) {
  return {{"pixels_per_iter", c.pixels_per_iter},
          {"lr_base", c.lr_base},
          {"warmup_iters", c.warmup_iters},
          {"decay_gamma", c.decay_gamma},
          {"decay_every", c.decay_every},
          {"mode", TrainModeName(c.mode)},
          {"recency_window", c.recency_window},
          {"recency_boost", c.recency_boost},
          {"seed", c.seed},
          {"photometric_weight", c.photometric_weight},
          {"geometric_weight", c.geometric_weight},
          {"semantic_weight", c.semantic_weight},
          {"sum_losses", c.sum_losses},
          {"head_skip_weight", c.head_skip_weight}};
}

TrainConfig TrainConfigFromJson(const Json& j) {
  const std::string what = "train";
  CheckKeys(j, {"pixels_per_iter", "lr_base", "warmup_iters", "decay_gamma",
                "decay_every", "mode", "recency_window", "recency_boost", "seed",
                "photometric_weight", "geometric_weight", "semantic_weight",
                "sum_losses", "head_skip_weight"},
            what);
  TrainConfig c;
  Read(j, "pixels_per_iter", &c.pixels_per_iter, what);
  Read(j, "lr_base", &c.lr_base, what);
  Read(j, "warmup_iters", &c.warmup_iters, what);
  Read(j, "decay_gamma", &c.decay_gamma, what);
  Read(j, "decay_every", &c.decay_every, what);
  std::string mode = TrainModeName(c.mode);
  Read(j, "mode", &mode, what);
  c.mode = ParseTrainMode(mode);
  Read(j, "recency_window", &c.recency_window, what);
  Read(j, "recency_boost", &c.recency_boost, what);
  Read(j, "seed", &c.seed, what);
  Read(j, "photometric_weight", &c.photometric_weight, what);
  Read(j, "geometric_weight", &c.geometric_weight, what);
  Read(j, "semantic_weight", &c.semantic_weight, what);
  Read(j, "sum_losses", &c.sum_losses, what);
  Read(j, "head_skip_weight", &c.head_skip_weight, what);
  c.Validate();
  return c;
}

Json ToJson(const RaySamplingConfig& c) {
  return {{"num_samples", c.num_samples},
          {"near", c.near},
          {"far", c.far},
          {"stratified", c.stratified}};
}

RaySamplingConfig RaySamplingConfigFromJson(const Json& j) {
  const std::string what = "sampling";
  CheckKeys(j, {"num_samples", "near", "far", "stratified"}, what);
  RaySamplingConfig c;
  Read(j, "num_samples", &c.num_samples, what);
  Read(j, "near", &c.near, what);
  Read(j, "far", &c.far, what);
  Read(j, "stratified", &c.stratified, what);
  if (c.num_samples < 2 || !(c.near >= 0) || !(c.far > c.near)) {
    throw std::invalid_argument("sampling: need num_samples >= 2 and 0 <= near < far");
  }
  return c;
}

Json ToJson(const RenderConfig& c) {
  return {{"num_samples", c.num_samples},
          {"near", c.near},
          {"far", c.far},
          {"stratified", c.stratified},
          {"seed", c.seed}};
}

RenderConfig RenderConfigFromJson(const Json& j) {
  const std::string what = "render";
  CheckKeys(j, {"num_samples", "near", "far", "stratified", "seed"}, what);
  RenderConfig c;
  Read(j, "num_samples", &c.num_samples, what);
  Read(j, "near", &c.near, what);
  Read(j, "far", &c.far, what);
  Read(j, "stratified", &c.stratified, what);
  Read(j, "seed", &c.seed, what);
  c.Validate();
  return c;
}

Json ToJson(const KeyframePolicy& p) {
  return {{"translation_threshold", p.translation_threshold},
          {"rotation_threshold_deg", p.rotation_threshold_deg},
          {"frame_threshold", p.frame_threshold}};
}

KeyframePolicy KeyframePolicyFromJson(const Json& j) {
  const std::string what = "keyframe policy";
  CheckKeys(j, {"translation_threshold", "rotation_threshold_deg", "frame_threshold"},
            what);
  KeyframePolicy p;
  Read(j, "translation_threshold", &p.translation_threshold, what);
  Read(j, "rotation_threshold_deg", &p.rotation_threshold_deg, what);
  Read(j, "frame_threshold", &p.frame_threshold, what);
  return p;
}

Json ToJson(const AtlasConfig& c) {
  return {{"bounds_min", ToJson(c.bounds_min)},
          {"bounds_max", ToJson(c.bounds_max)},
          {"edge", c.edge},
          {"field", ToJson(c.field)},
          {"policy", ToJson(c.policy)},
          {"near", c.near},
          {"far", c.far},
          {"seed", c.seed}};
}

AtlasConfig AtlasConfigFromJson(const Json& j) {
  const std::string what = "atlas";
  CheckKeys(j, {"bounds_min", "bounds_max", "edge", "field", "policy", "near", "far",
                "seed"},
            what);
  AtlasConfig c;
  ReadVec3(j, "bounds_min", &c.bounds_min, what);
  ReadVec3(j, "bounds_max", &c.bounds_max, what);
  Read(j, "edge", &c.edge, what);
  if (j.contains("field")) c.field = FieldConfigFromJson(j["field"]);
  if (j.contains("policy")) c.policy = KeyframePolicyFromJson(j["policy"]);
  Read(j, "near", &c.near, what);
  Read(j, "far", &c.far, what);
  Read(j, "seed", &c.seed, what);
  c.Validate();
  return c;
}

Json ToJson(const AnalyticScene& scene) {
  Json prims = Json::array();
  for (const auto& p : scene.primitives) {
    prims.push_back({{"shape", PrimitiveShapeName(p.shape)},
                     {"pose", ToJson(p.pose)},
                     {"size", ToJson(p.size)},
                     {"class_id", p.class_id},
                     {"albedo", ToJson(p.albedo)}});
  }
  return {{"primitives", prims},
          {"palette", ToJson(scene.palette)},
          {"bounds_min", ToJson(scene.bounds_min)},
          {"bounds_max", ToJson(scene.bounds_max)},
          {"light_direction", ToJson(scene.light_direction)},
          {"ambient", scene.ambient}};
}

AnalyticScene AnalyticSceneFromJson(const Json& j) {
  const std::string what = "scene";
  CheckKeys(j, {"primitives", "palette", "bounds_min", "bounds_max", "light_direction",
                "ambient"},
            what);
  AnalyticScene scene;
  if (j.contains("primitives")) {
    for (const auto& pj : j["primitives"]) {
      CheckKeys(pj, {"shape", "pose", "size", "class_id", "albedo"}, "primitive");
      Primitive p;
      std::string shape = PrimitiveShapeName(p.shape);
      Read(pj, "shape", &shape, "primitive");
      p.shape = ParsePrimitiveShape(shape);
      if (pj.contains("pose")) p.pose = PoseFromJson(pj["pose"]);
      ReadVec3(pj, "size", &p.size, "primitive");
      Read(pj, "class_id", &p.class_id, "primitive");
      ReadVec3(pj, "albedo", &p.albedo, "primitive");
      scene.primitives.push_back(p);
    }
  }
  if (j.contains("palette")) scene.palette = PaletteFromJson(j["palette"]);
  ReadVec3(j, "bounds_min", &scene.bounds_min, what);
  ReadVec3(j, "bounds_max", &scene.bounds_max, what);
  ReadVec3(j, "light_direction", &scene.light_direction, what);
  Read(j, "ambient", &scene.ambient, what);
  scene.Validate();
  return scene;
}

namespace {

void ApplyTrajectory(const Json& j, TrajectorySpec* s) {
  const std::string what = "trajectory";
  CheckKeys(j, {"kind", "num_frames", "frame_rate", "center", "radius", "revolutions",
                "look_at", "start", "end", "clearance"},
            what);
  std::string kind = TrajectoryKindName(s->kind);
  Read(j, "kind", &kind, what);
  s->kind = ParseTrajectoryKind(kind);
  Read(j, "num_frames", &s->num_frames, what);
  Read(j, "frame_rate", &s->frame_rate, what);
  ReadVec3(j, "center", &s->center, what);
  Read(j, "radius", &s->radius, what);
  Read(j, "revolutions", &s->revolutions, what);
  ReadVec3(j, "look_at", &s->look_at, what);
  ReadVec3(j, "start", &s->start, what);
  ReadVec3(j, "end", &s->end, what);
  Read(j, "clearance", &s->clearance, what);
}

}  // namespace

Json ToJson(const TrajectorySpec& s) {
  return {{"kind", TrajectoryKindName(s.kind)},
          {"num_frames", s.num_frames},
          {"frame_rate", s.frame_rate},
          {"center", ToJson(s.center)},
          {"radius", s.radius},
          {"revolutions", s.revolutions},
          {"look_at", ToJson(s.look_at)},
          {"start", ToJson(s.start)},
          {"end", ToJson(s.end)},
          {"clearance", s.clearance}};
}

TrajectorySpec TrajectorySpecFromJson(const Json& j) {
  TrajectorySpec s;
  ApplyTrajectory(j, &s);
  return s;
}

Json ToJson(const SceneSpec& spec) {
  return {{"version", kFormatVersion},
          {"name", spec.name},
          {"scene", ToJson(spec.scene)},
          {"intrinsics", ToJson(spec.intrinsics)},
          {"trajectory", ToJson(spec.trajectory)},
          {"depth_scale", spec.depth_scale},
          {"seed", spec.seed}};
}

SceneSpec SceneSpecFromJson(const Json& j) {
  const std::string what = "scene spec";
  CheckKeys(j, {"version", "base", "name", "scene", "intrinsics", "trajectory",
                "depth_scale", "seed"},
            what);
  if (j.value("version", kFormatVersion) != kFormatVersion) {
    throw std::invalid_argument("scene spec: unsupported version");
  }
  std::string base = "room";
  Read(j, "base", &base, what);
  SceneSpec spec;
  if (base == "room") {
    spec = MakeRoomScene();
  } else if (base == "apartment") {
    spec = MakeApartmentScene();
  } else {
    throw std::invalid_argument("scene spec: unknown base scene '" + base + "'");
  }
  Read(j, "name", &spec.name, what);
  if (j.contains("scene")) spec.scene = AnalyticSceneFromJson(j["scene"]);
  if (j.contains("intrinsics")) spec.intrinsics = IntrinsicsFromJson(j["intrinsics"]);
  if (j.contains("trajectory")) ApplyTrajectory(j["trajectory"], &spec.trajectory);
  Read(j, "depth_scale", &spec.depth_scale, what);
  Read(j, "seed", &spec.seed, what);
  if (spec.depth_scale <= 0) throw std::invalid_argument("scene spec: depth_scale must be positive");
  return spec;
}

Json ToJson(const SegmentationReport& r) {
  Json per_class = Json::object();
  for (const auto& [id, iou] : r.per_class_iou) per_class[std::to_string(id)] = iou;
  Json confusion = Json::array();
  for (Eigen::Index row = 0; row < r.confusion.rows(); ++row) {
    Json cells = Json::array();
    for (Eigen::Index col = 0; col < r.confusion.cols(); ++col) {
      cells.push_back(r.confusion(row, col));
    }
    confusion.push_back(cells);
  }
  return {{"total_accuracy", r.total_accuracy},
          {"class_avg_accuracy", r.class_avg_accuracy},
          {"miou", r.miou},
          {"fwiou", r.fwiou},
          {"per_class_iou", per_class},
          {"class_ids", r.class_ids},
          {"confusion", confusion}};
}

Json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void WriteJsonFile(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

// ---- Datasets ----

Json ToJson(const DatasetManifest& m) {
  Json frames = Json::array();
  for (const auto& f : m.frames) {
    frames.push_back({{"timestamp", f.timestamp},
                      {"rgb", f.rgb},
                      {"depth", f.depth},
                      {"semantic", f.semantic},
                      {"pose", ToJson(f.pose)}});
  }
  Json j = {{"version", m.version},
            {"name", m.name},
            {"intrinsics", ToJson(m.intrinsics)},
            {"palette", m.palette},
            {"depth_scale", m.depth_scale},
            {"trajectories", {{"gt", m.gt_trajectory}, {"estimated", m.estimated_trajectory}}},
            {"frames", frames}};
  if (!m.scene.empty()) j["scene"] = m.scene;
  return j;
}

DatasetManifest ManifestFromJson(const Json& j) {
  const std::string what = "manifest";
  CheckKeys(j, {"version", "name", "intrinsics", "palette", "scene", "depth_scale",
                "trajectories", "frames"},
            what);
  DatasetManifest m;
  Read(j, "version", &m.version, what);
  if (m.version != kFormatVersion) {
    throw std::invalid_argument("manifest: unsupported version " + std::to_string(m.version));
  }
  Read(j, "name", &m.name, what);
  if (!j.contains("intrinsics")) throw std::invalid_argument("manifest: missing intrinsics");
  m.intrinsics = IntrinsicsFromJson(j["intrinsics"]);
  Read(j, "palette", &m.palette, what);
  if (m.palette.empty()) throw std::invalid_argument("manifest: missing palette");
  Read(j, "scene", &m.scene, what);
  Read(j, "depth_scale", &m.depth_scale, what);
  if (m.depth_scale <= 0) throw std::invalid_argument("manifest: depth_scale must be positive");
  if (j.contains("trajectories")) {
    const Json& t = j["trajectories"];
    CheckKeys(t, {"gt", "estimated"}, "manifest trajectories");
    Read(t, "gt", &m.gt_trajectory, what);
    Read(t, "estimated", &m.estimated_trajectory, what);
  }
  if (!j.contains("frames") || !j["frames"].is_array()) {
    throw std::invalid_argument("manifest: missing frame list");
  }
  for (const auto& fj : j["frames"]) {
    CheckKeys(fj, {"timestamp", "rgb", "depth", "semantic", "pose"}, "manifest frame");
    FrameRecord f;
    Read(fj, "timestamp", &f.timestamp, what);
    Read(fj, "rgb", &f.rgb, what);
    Read(fj, "depth", &f.depth, what);
    Read(fj, "semantic", &f.semantic, what);
    if (!fj.contains("pose")) throw std::invalid_argument("manifest frame: missing pose");
    f.pose = PoseFromJson(fj["pose"]);
    m.frames.push_back(f);
  }
  return m;
}

namespace {

std::string FramePath(const char* kind, size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s/%06zu.png", kind, index);
  return buf;
}

std::string Resolve(const fs::path& base, const std::string& relative) {
  return (base / relative).lexically_normal().string();
}

std::string RequireFile(const fs::path& base, const std::string& relative) {
  const std::string path = Resolve(base, relative);
  if (!fs::is_regular_file(path)) {
    throw std::runtime_error("dataset: missing file " + path);
  }
  return path;
}

}  // namespace

void SaveDataset(const std::string& dir, const SyntheticDataset& dataset) {
  dataset.Validate();
  const fs::path root(dir);
  for (const char* sub : {"rgb", "depth", "semantic"}) fs::create_directories(root / sub);
  DatasetManifest m;
  m.name = dataset.name;
  m.intrinsics = dataset.intrinsics;
  m.palette = "palette.json";
  m.depth_scale = dataset.depth_scale;
  m.gt_trajectory = "groundtruth.txt";
  if (!dataset.scene.primitives.empty()) {
    m.scene = "scene.json";
    WriteJsonFile((root / m.scene).string(), ToJson(dataset.scene));
  }
  WriteJsonFile((root / m.palette).string(), ToJson(dataset.palette));
  Trajectory gt;
  for (size_t i = 0; i < dataset.frames.size(); ++i) {
    const Frame& f = dataset.frames[i];
    FrameRecord r{f.timestamp, FramePath("rgb", i), FramePath("depth", i),
                  FramePath("semantic", i), f.pose};
    WriteColorPng((root / r.rgb).string(), f.rgb);
    WriteDepthPng((root / r.depth).string(), f.depth, dataset.depth_scale);
    WriteColorPng((root / r.semantic).string(), f.semantic);
    m.frames.push_back(r);
    gt.push_back({f.timestamp, f.pose});
  }
  WriteTumTrajectory((root / m.gt_trajectory).string(), gt);
  WriteJsonFile((root / "manifest.json").string(), ToJson(m));
}

SyntheticDataset LoadDataset(const std::string& manifest_path) {
  if (!fs::is_regular_file(manifest_path)) {
    throw std::runtime_error("dataset: missing file " + manifest_path);
  }
  const DatasetManifest m = ManifestFromJson(ReadJsonFile(manifest_path));
  const fs::path base = fs::path(manifest_path).parent_path();
  // Check every reference up front so the error names the first missing one.
  const std::string palette_path = RequireFile(base, m.palette);
  const std::string scene_path = m.scene.empty() ? "" : RequireFile(base, m.scene);
  if (!m.gt_trajectory.empty()) RequireFile(base, m.gt_trajectory);
  if (!m.estimated_trajectory.empty()) RequireFile(base, m.estimated_trajectory);
  for (const auto& f : m.frames) {
    for (const std::string* p : {&f.rgb, &f.depth, &f.semantic}) RequireFile(base, *p);
  }
  SyntheticDataset d;
  d.name = m.name;
  d.intrinsics = m.intrinsics;
  d.depth_scale = m.depth_scale;
  d.palette = PaletteFromJson(ReadJsonFile(palette_path));
  if (!scene_path.empty()) d.scene = AnalyticSceneFromJson(ReadJsonFile(scene_path));
  for (const auto& r : m.frames) {
    Frame f;
    f.timestamp = r.timestamp;
    f.pose = r.pose;
    f.rgb = ReadColorPng(Resolve(base, r.rgb));
    f.depth = ReadDepthPng(Resolve(base, r.depth), m.depth_scale);
    f.semantic = ReadColorPng(Resolve(base, r.semantic));
    try {
      ExactColorsToLabels(f.semantic, d.palette);
    } catch (const std::exception& e) {
      throw std::runtime_error("dataset: " + Resolve(base, r.semantic) +
                               ": palette mismatch: " + e.what());
    }
    if (f.rgb.width() != m.intrinsics.width || f.rgb.height() != m.intrinsics.height) {
      throw std::runtime_error("dataset: " + Resolve(base, r.rgb) +
                               " does not match the intrinsics size");
    }
    d.frames.push_back(std::move(f));
  }
  try {
    d.Validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("dataset: " + manifest_path + ": " + e.what());
  }
  return d;
}

std::optional<Trajectory> LoadEstimatedTrajectory(const std::string& manifest_path) {
  const DatasetManifest m = ManifestFromJson(ReadJsonFile(manifest_path));
  if (m.estimated_trajectory.empty()) return std::nullopt;
  const fs::path base = fs::path(manifest_path).parent_path();
  return ReadTumTrajectory(RequireFile(base, m.estimated_trajectory));
}

// ---- Checkpoints ----

namespace {

constexpr char kMagic[8] = {'N', 'I', 'D', 'S', 'S', '1', '\0', '\0'};

FieldConfig CubeFieldConfig(const AtlasConfig& atlas) {
  FieldConfig field = atlas.field;
  field.grid.domain_min = Vec3::Constant(-atlas.edge / 2);
  field.grid.domain_max = Vec3::Constant(atlas.edge / 2);
  return field;
}

}  // namespace

Checkpoint CheckpointFromAtlas(const KeyframeAtlas& atlas, Json metadata) {
  Checkpoint c;
  c.atlas = atlas.config();
  c.intrinsics = atlas.intrinsics();
  c.metadata = std::move(metadata);
  for (int s = 0; s < atlas.num_subspaces(); ++s) {
    const Subspace& sub = atlas.subspace(s);
    c.fields.push_back({sub.id, sub.center, sub.edge, sub.keyframe_ids, *sub.field});
  }
  for (const Keyframe& kf : atlas.keyframes()) c.keyframe_poses.push_back({kf.timestamp, kf.pose});
  return c;
}

void SaveCheckpoint(const std::string& path, const Checkpoint& c) {
  Json fields = Json::array();
  uint64_t offset = 0;
  for (const auto& f : c.fields) {
    fields.push_back({{"subspace", f.subspace_id},
                      {"center", ToJson(f.center)},
                      {"edge", f.edge},
                      {"keyframes", f.keyframe_ids},
                      {"offset", offset},
                      {"count", f.params.values().size()}});
    offset += f.params.values().size();
  }
  Json keyframes = Json::array();
  for (const auto& kf : c.keyframe_poses) {
    keyframes.push_back({{"timestamp", kf.timestamp}, {"pose", ToJson(kf.pose)}});
  }
  const Json header = {{"version", kFormatVersion},
                       {"atlas", ToJson(c.atlas)},
                       {"field", ToJson(CubeFieldConfig(c.atlas))},
                       {"intrinsics", ToJson(c.intrinsics)},
                       {"fields", fields},
                       {"keyframes", keyframes},
                       {"metadata", c.metadata}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  const uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& f : c.fields) {
    out.write(reinterpret_cast<const char*>(f.params.values().data()),
              static_cast<std::streamsize>(f.params.values().size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint LoadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  uint64_t length = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint");
  }
  if (length > (uint64_t{1} << 32)) throw std::runtime_error("checkpoint: header too large");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("checkpoint: bad header in " + path + ": " + e.what());
  }
  CheckKeys(header, {"version", "atlas", "field", "intrinsics", "fields", "keyframes",
                     "metadata"},
            "checkpoint");
  if (header.value("version", 0) != kFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  }
  Checkpoint c;
  c.atlas = AtlasConfigFromJson(header.at("atlas"));
  c.intrinsics = IntrinsicsFromJson(header.at("intrinsics"));
  c.metadata = header.value("metadata", Json::object());
  const FieldConfig field = FieldConfigFromJson(header.at("field"));
  for (const auto& fj : header.at("fields")) {
    CheckpointField f{fj.at("subspace").get<int>(), Vec3FromJson(fj.at("center")),
                      fj.at("edge").get<double>(),
                      fj.at("keyframes").get<std::vector<int>>(), FieldParams<float>(field)};
    const uint64_t count = fj.at("count").get<uint64_t>();
    if (count != f.params.values().size()) {
      throw std::runtime_error("checkpoint: field size does not match its configuration");
    }
    in.read(reinterpret_cast<char*>(f.params.values().data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw std::runtime_error("checkpoint: truncated data in " + path);
    c.fields.push_back(std::move(f));
  }
  for (const auto& kj : header.at("keyframes")) {
    c.keyframe_poses.push_back({kj.at("timestamp").get<double>(), PoseFromJson(kj.at("pose"))});
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
  }
  return c;
}

// ---- Other outputs ----

void WritePly(const std::string& path, const TriangleMesh& mesh) {
  mesh.Validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("ply: cannot write " + path);
  const bool colored = !mesh.colors.empty();
  out << "ply\nformat ascii 1.0\ncomment nidss mesh version " << kFormatVersion << "\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n";
  if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (size_t v = 0; v < mesh.vertices.size(); ++v) {
    const Vec3& p = mesh.vertices[v];
    out << FormatFloat(static_cast<float>(p.x())) << ' '
        << FormatFloat(static_cast<float>(p.y())) << ' '
        << FormatFloat(static_cast<float>(p.z()));
    if (colored) {
      for (int c = 0; c < 3; ++c) out << ' ' << int{EncodeUnit8(mesh.colors[v][c])};
    }
    out << '\n';
  }
  for (const auto& t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

TriangleMesh ReadPly(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ply: cannot open " + path);
  std::string line;
  size_t num_vertices = 0, num_faces = 0;
  bool colored = false, ascii = false;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      ss >> word;
      ascii = word == "ascii";
    } else if (word == "element") {
      std::string kind;
      size_t count;
      ss >> kind >> count;
      (kind == "vertex" ? num_vertices : num_faces) = count;
    } else if (word == "property") {
      std::string type, name;
      ss >> type >> name;
      colored = colored || name == "red";
    }
  }
  if (!ascii) throw std::runtime_error("ply: " + path + " is not ASCII");
  TriangleMesh mesh;
  mesh.vertices.resize(num_vertices);
  if (colored) mesh.colors.resize(num_vertices);
  for (size_t v = 0; v < num_vertices; ++v) {
    float x, y, z;
    in >> x >> y >> z;
    mesh.vertices[v] = Vec3(x, y, z);
    if (colored) {
      int r, g, b;
      in >> r >> g >> b;
      mesh.colors[v] = Vec3f(DecodeUnit8(r), DecodeUnit8(g), DecodeUnit8(b));
    }
  }
  for (size_t f = 0; f < num_faces; ++f) {
    int n;
    std::array<int, 3> t;
    in >> n >> t[0] >> t[1] >> t[2];
    if (n != 3) throw std::runtime_error("ply: only triangles are supported");
    mesh.triangles.push_back(t);
  }
  if (!in) throw std::runtime_error("ply: truncated file " + path);
  mesh.Validate();
  return mesh;
}

void WriteCsv(const std::string& path, const std::vector<std::string>& header,
              const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("csv: cannot write " + path);
  auto write_row = [&out](const std::vector<std::string>& cells) {
    for (size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  write_row(header);
  for (const auto& row : rows) write_row(row);
}

void WriteTrainingCsv(const std::string& path, const std::vector<TrainLogRow>& log,
                      bool wall_time) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(log.size());
  for (const auto& r : log) {
    rows.push_back({std::to_string(r.iter), FormatDouble(r.lr),
                    FormatDouble(r.loss.total), FormatDouble(r.loss.photometric),
                    FormatDouble(r.loss.geometric), FormatDouble(r.loss.semantic),
                    std::to_string(r.loss.n_pixels), std::to_string(r.loss.n_depth_valid),
                    std::to_string(r.loss.n_sem_valid), std::to_string(r.keyframe_id),
                    FormatDouble(wall_time ? r.wall_ms : 0.0)});
  }
  WriteCsv(path,
           {"iter", "lr", "loss_total", "photometric", "geometric", "semantic", "n_pixels",
            "n_depth_valid", "n_sem_valid", "keyframe_id", "wall_ms"},
           rows);
}

Json AtlasToJson(const KeyframeAtlas& atlas) {
  Json subspaces = Json::array();
  for (int s = 0; s < atlas.num_subspaces(); ++s) {
    const Subspace& sub = atlas.subspace(s);
    subspaces.push_back({{"id", sub.id},
                         {"center", ToJson(sub.center)},
                         {"min", ToJson(sub.min())},
                         {"max", ToJson(sub.max())},
                         {"keyframes", sub.keyframe_ids},
                         {"active", sub.id == atlas.active_subspace()}});
  }
  Json keyframes = Json::array();
  for (const Keyframe& kf : atlas.keyframes()) {
    keyframes.push_back({{"id", kf.id},
                         {"frame_index", kf.frame_index},
                         {"timestamp", kf.timestamp},
                         {"pose", ToJson(kf.pose)},
                         {"subspaces", std::vector<int>(kf.subspace_ids.begin(),
                                                        kf.subspace_ids.end())}});
  }
  Json archive = Json::array();
  for (const auto& snap : atlas.archive()) {
    archive.push_back({{"id", snap->id},
                       {"subspace", snap->subspace_id},
                       {"generation", snap->generation},
                       {"num_keyframes", snap->num_keyframes}});
  }
  const auto dims = atlas.grid_dims();
  return {{"version", kFormatVersion},
          {"bounds_min", ToJson(atlas.config().bounds_min)},
          {"bounds_max", ToJson(atlas.config().bounds_max)},
          {"edge", atlas.config().edge},
          {"grid_dims", {dims[0], dims[1], dims[2]}},
          {"subspaces", subspaces},
          {"keyframes", keyframes},
          {"archive", archive}};
}

}  // namespace nidss
