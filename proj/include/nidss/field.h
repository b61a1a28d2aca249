// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nidss/common.h"

namespace nidss {

// Multi-resolution hash encoding hyperparameters. The domain is the
// axis-aligned box of the (sub)space the field represents, in meters.
struct HashGridConfig {
  int num_levels = 8;
  int table_size = 1 << 15;
  int features_per_level = 2;
  int base_resolution = 16;
  double growth_factor = 1.5;
  Vec3 domain_min = Vec3::Constant(-2.5);
  Vec3 domain_max = Vec3::Constant(2.5);

  void Validate() const;
  // Cells per axis at `level`: floor(base_resolution * growth_factor^level).
  int LevelResolution(int level) const;
  int encoded_dim() const { return num_levels * features_per_level; }
};

struct FieldConfig {
  HashGridConfig grid;
  int hidden_width = 64;
  int geometry_feature_dim = 15;
  int sdf_hidden_layers = 1;
  int color_hidden_layers = 3;
  int semantic_hidden_layers = 2;
  // Hidden activation is softplus with this sharpness in every MLP.
  double softplus_beta = 10.0;
  double initial_sharpness = 30.0;
  double sdf_init_bias = 0.3;
  double hash_init_range = 1e-4;

  void Validate() const;
};

enum class MlpId { kSdf = 0, kColor = 1, kSemantic = 2 };
const char* MlpName(MlpId id);

// A named tensor inside the flat parameter vector. Matrices are stored
// column-major with shape rows x cols; biases are rows x 1.
struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
  size_t offset = 0;
  size_t size() const { return static_cast<size_t>(rows) * cols; }
};

class ParamLayout {
 public:
  struct Layer {
    int weight = -1;  // Index into tensors().
    int bias = -1;
  };

  explicit ParamLayout(const FieldConfig& config);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  size_t total_size() const { return total_size_; }
  const TensorSpec& hash_level(int level) const {
    return tensors_[hash_levels_[level]];
  }
  const std::vector<Layer>& mlp_layers(MlpId id) const {
    return mlps_[static_cast<int>(id)];
  }
  const TensorSpec& s_log() const { return tensors_[s_log_]; }
  // Tensor owning a flat parameter index.
  const TensorSpec& TensorAt(size_t flat_index) const;

 private:
  int Add(std::string name, int rows, int cols);

  std::vector<TensorSpec> tensors_;
  std::vector<int> hash_levels_;
  std::array<std::vector<Layer>, 3> mlps_;
  int s_log_ = -1;
  size_t total_size_ = 0;
};

// All learnable parameters of one field: hash tables, the three MLPs and
// the log of the sigmoid sharpness s used by the renderer.
template <typename T>
class FieldParams {
 public:
  explicit FieldParams(const FieldConfig& config);

  const FieldConfig& config() const { return config_; }
  const ParamLayout& layout() const { return *layout_; }
  // True when every tensor has the same name and shape.
  bool SameLayout(const FieldParams& other) const;

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  std::span<T> tensor(const TensorSpec& spec) {
    return {values_.data() + spec.offset, spec.size()};
  }
  std::span<const T> tensor(const TensorSpec& spec) const {
    return {values_.data() + spec.offset, spec.size()};
  }

  T s_log() const { return values_[layout_->s_log().offset]; }
  void set_s_log(T value) { values_[layout_->s_log().offset] = value; }
  T sharpness() const;

  void SetZero();
  // Throws std::runtime_error naming the first tensor holding a non-finite
  // value.
  void CheckFinite() const;

  bool operator==(const FieldParams& other) const {
    return values_ == other.values_;
  }

 private:
  FieldConfig config_;
  std::shared_ptr<const ParamLayout> layout_;
  // Aligned so Eigen's vectorized reductions over mapped weights split the
  // same way on every allocation; otherwise results drift between runs.
  std::vector<T, Eigen::aligned_allocator<T>> values_;
};

// Same shapes as FieldParams; holds dLoss/dparameter.
template <typename T>
using GradientBuffer = FieldParams<T>;

template <typename T>
FieldParams<T> InitializeFieldParams(const FieldConfig& config, uint64_t seed);

template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using Vector3 = Eigen::Matrix<T, 3, 1>;

template <typename T>
struct FieldOutput {
  T sdf{};
  VectorX<T> geometry_feature;
  Vector3<T> rgb = Vector3<T>::Zero();
  Vector3<T> sem_rgb = Vector3<T>::Zero();
};

// Spatial hash of integer grid coordinates, modulo a power-of-two size.
uint32_t GridHash(uint32_t x, uint32_t y, uint32_t z, uint32_t table_size);

// Encodes one point. Points outside the domain are clamped onto it and
// `clamped` (when given) is set. Throws on a non-finite point.
template <typename T>
VectorX<T> HashEncode(const Vec3& point, const FieldParams<T>& params,
                      bool* clamped = nullptr);

// Records a batched forward pass so that Backward can produce exact
// gradients. Geometry runs on every point; the color and semantic heads run
// on a caller-chosen subset, which lets the renderer skip samples whose
// compositing weight is negligible.
template <typename T>
class FieldTape {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

  struct MlpTape {
    std::vector<Matrix> inputs;          // Input to each layer.
    std::vector<Matrix> activation_grad; // d act / d preact, hidden layers.
    Matrix output;
    Matrix scratch;
  };

  void ForwardGeometry(const FieldParams<T>& params,
                       std::span<const Vec3> points);
  void ForwardHeads(const FieldParams<T>& params,
                    std::span<const int> point_indices);
  void Forward(const FieldParams<T>& params, std::span<const Vec3> points);

  int num_points() const { return static_cast<int>(clamped_.size()); }
  int num_head_points() const { return static_cast<int>(head_points_.size()); }
  int head_point(int head) const { return head_points_[head]; }
  bool clamped(int point) const { return clamped_[point] != 0; }

  T sdf(int point) const { return geometry_.output(0, point); }
  VectorX<T> geometry_feature(int point) const;
  Vector3<T> rgb(int head) const { return color_.output.col(head); }
  Vector3<T> sem_rgb(int head) const { return semantic_.output.col(head); }

  // Accumulates dLoss/dparams into `grads` (which is not cleared).
  // grad_sdf has one entry per point; grad_rgb and grad_sem have three per
  // head point (and may be empty when no heads were run).
  void Backward(const FieldParams<T>& params, std::span<const T> grad_sdf,
                std::span<const T> grad_rgb, std::span<const T> grad_sem,
                GradientBuffer<T>* grads) const;

 private:
  int encoded_dim_ = 0;
  int levels_ = 0;
  std::vector<uint32_t> corner_index_;  // point-major: [point][level][8]
  std::vector<T> corner_weight_;
  std::vector<uint8_t> clamped_;
  MlpTape geometry_;
  bool has_geometry_ = false;
  std::vector<int> head_points_;
  MlpTape color_;
  MlpTape semantic_;
  bool has_heads_ = false;
  // Backward work space, reused between calls to avoid page faults on
  // large batches.
  mutable Matrix grad_geometry_;
  mutable Matrix grad_features_;
  mutable Matrix grad_a_;
  mutable Matrix grad_b_;
};

template <typename T>
FieldOutput<T> FieldForward(const Vec3& point, const FieldParams<T>& params);

// SDF only, evaluated in chunks through the geometry head.
template <typename T>
std::vector<double> FieldSdf(std::span<const Vec3> points,
                             const FieldParams<T>& params);

// dsdf/dp by central differences with step `step` meters.
template <typename T>
Vec3 SdfSpatialGradient(const Vec3& point, const FieldParams<T>& params,
                        double step = 1e-3);

}  // namespace nidss
