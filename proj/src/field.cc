// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/field.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace nidss {

void HashGridConfig::Validate() const {
  if (num_levels < 1) throw std::invalid_argument("hash grid: num_levels < 1");
  if (table_size < 1 || (table_size & (table_size - 1)) != 0) {
    throw std::invalid_argument("hash grid: table_size must be a power of two");
  }
  if (features_per_level < 1) {
    throw std::invalid_argument("hash grid: features_per_level < 1");
  }
  if (base_resolution < 2) {
    throw std::invalid_argument("hash grid: base_resolution < 2");
  }
  if (!(growth_factor > 1.0)) {
    throw std::invalid_argument("hash grid: growth_factor must exceed 1");
  }
  if (!domain_min.allFinite() || !domain_max.allFinite() ||
      !(domain_min.array() < domain_max.array()).all()) {
    throw std::invalid_argument("hash grid: domain_min must be < domain_max");
  }
}

int HashGridConfig::LevelResolution(int level) const {
  return static_cast<int>(
      std::floor(base_resolution * std::pow(growth_factor, level)));
}

void FieldConfig::Validate() const {
  grid.Validate();
  if (hidden_width < 1 || geometry_feature_dim < 1 || sdf_hidden_layers < 0 ||
      color_hidden_layers < 0 || semantic_hidden_layers < 0) {
    throw std::invalid_argument("field: invalid MLP shape");
  }
  if (!(softplus_beta > 0) || !(initial_sharpness > 0)) {
    throw std::invalid_argument("field: softplus_beta and sharpness must be > 0");
  }
}

const char* MlpName(MlpId id) {
  switch (id) {
    case MlpId::kSdf:
      return "sdf";
    case MlpId::kColor:
      return "color";
    case MlpId::kSemantic:
      return "semantic";
  }
  return "?";
}

ParamLayout::ParamLayout(const FieldConfig& config) {
  config.Validate();
  const auto& grid = config.grid;
  for (int l = 0; l < grid.num_levels; ++l) {
    hash_levels_.push_back(Add("hash_level_" + std::to_string(l),
                               grid.features_per_level, grid.table_size));
  }
  auto add_mlp = [&](MlpId id, int in, int hidden_layers, int out) {
    int width = in;
    for (int k = 0; k <= hidden_layers; ++k) {
      const int next = k == hidden_layers ? out : config.hidden_width;
      const std::string prefix =
          std::string(MlpName(id)) + "_mlp_" + std::to_string(k);
      Layer layer;
      layer.weight = Add(prefix + "_weight", next, width);
      layer.bias = Add(prefix + "_bias", next, 1);
      mlps_[static_cast<int>(id)].push_back(layer);
      width = next;
    }
  };
  add_mlp(MlpId::kSdf, grid.encoded_dim(), config.sdf_hidden_layers,
          1 + config.geometry_feature_dim);
  add_mlp(MlpId::kColor, config.geometry_feature_dim,
          config.color_hidden_layers, 3);
  add_mlp(MlpId::kSemantic, config.geometry_feature_dim,
          config.semantic_hidden_layers, 3);
  s_log_ = Add("s_log", 1, 1);
}

int ParamLayout::Add(std::string name, int rows, int cols) {
  TensorSpec spec;
  spec.name = std::move(name);
  spec.rows = rows;
  spec.cols = cols;
  spec.offset = total_size_;
  total_size_ += spec.size();
  tensors_.push_back(std::move(spec));
  return static_cast<int>(tensors_.size()) - 1;
}

const TensorSpec& ParamLayout::TensorAt(size_t flat_index) const {
  auto it = std::upper_bound(
      tensors_.begin(), tensors_.end(), flat_index,
      [](size_t idx, const TensorSpec& t) { return idx < t.offset; });
  if (it == tensors_.begin() || flat_index >= total_size_) {
    throw std::out_of_range("ParamLayout::TensorAt");
  }
  return *std::prev(it);
}

template <typename T>
FieldParams<T>::FieldParams(const FieldConfig& config)
    : config_(config),
      layout_(std::make_shared<const ParamLayout>(config)),
      values_(layout_->total_size(), T(0)) {}

template <typename T>
bool FieldParams<T>::SameLayout(const FieldParams& other) const {
  if (layout_ == other.layout_) return true;
  const auto& a = layout_->tensors();
  const auto& b = other.layout_->tensors();
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].rows != b[i].rows ||
        a[i].cols != b[i].cols) {
      return false;
    }
  }
  return true;
}

template <typename T>
T FieldParams<T>::sharpness() const {
  return std::exp(s_log());
}

template <typename T>
void FieldParams<T>::SetZero() {
  std::fill(values_.begin(), values_.end(), T(0));
}

template <typename T>
void FieldParams<T>::CheckFinite() const {
  for (const auto& spec : layout_->tensors()) {
    for (T v : tensor(spec)) {
      if (!std::isfinite(v)) {
        throw std::runtime_error("non-finite value in tensor " + spec.name);
      }
    }
  }
}

template <typename T>
FieldParams<T> InitializeFieldParams(const FieldConfig& config, uint64_t seed) {
  FieldParams<T> params(config);
  std::mt19937_64 rng(seed);
  const auto& layout = params.layout();
  std::uniform_real_distribution<double> hash_dist(-config.hash_init_range,
                                                   config.hash_init_range);
  for (int l = 0; l < config.grid.num_levels; ++l) {
    for (T& v : params.tensor(layout.hash_level(l))) v = T(hash_dist(rng));
  }
  for (MlpId id : {MlpId::kSdf, MlpId::kColor, MlpId::kSemantic}) {
    for (const auto& layer : layout.mlp_layers(id)) {
      const auto& w = layout.tensors()[layer.weight];
      const double bound = std::sqrt(6.0 / w.cols);
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (T& v : params.tensor(w)) v = T(dist(rng));
    }
  }
  const auto& sdf_out = layout.tensors()[layout.mlp_layers(MlpId::kSdf).back().bias];
  params.tensor(sdf_out)[0] = T(config.sdf_init_bias);
  params.set_s_log(T(std::log(config.initial_sharpness)));
  return params;
}

uint32_t GridHash(uint32_t x, uint32_t y, uint32_t z, uint32_t table_size) {
  return (x * 1u ^ y * 2654435761u ^ z * 805459861u) & (table_size - 1u);
}

namespace {

// Per-call constants of the grid lookup.
struct GridFrame {
  Vec3 origin;
  Vec3 inv_extent;
  std::vector<double> resolution;

  explicit GridFrame(const HashGridConfig& grid)
      : origin(grid.domain_min),
        inv_extent((grid.domain_max - grid.domain_min).cwiseInverse()) {
    for (int l = 0; l < grid.num_levels; ++l) {
      resolution.push_back(grid.LevelResolution(l));
    }
  }

  // Normalized position in [0,1]^3; returns true when clamping was needed.
  bool Unit(const Vec3& point, Vec3* unit) const {
    bool clamped = false;
    for (int a = 0; a < 3; ++a) {
      double u = (point[a] - origin[a]) * inv_extent[a];
      if (u < 0.0 || u > 1.0) {
        clamped = true;
        u = std::clamp(u, 0.0, 1.0);
      }
      (*unit)[a] = u;
    }
    return clamped;
  }
};

// Corner indices and trilinear weights for one normalized point at one level.
template <typename T>
void LevelCorners(const Vec3& unit, double res, uint32_t table_size,
                  uint32_t* index, T* weight) {
  uint32_t base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double x = unit[a] * res;
    const double fl = std::floor(x);
    base[a] = static_cast<uint32_t>(fl);
    frac[a] = x - fl;
  }
  const uint32_t mask = table_size - 1u;
  const uint32_t hx[2] = {base[0], base[0] + 1u};
  const uint32_t hy[2] = {base[1] * 2654435761u, (base[1] + 1u) * 2654435761u};
  const uint32_t hz[2] = {base[2] * 805459861u, (base[2] + 1u) * 805459861u};
  const double wx[2] = {1.0 - frac[0], frac[0]};
  const double wy[2] = {1.0 - frac[1], frac[1]};
  const double wz[2] = {1.0 - frac[2], frac[2]};
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    index[c] = (hx[dx] ^ hy[dy] ^ hz[dz]) & mask;
    weight[c] = T(wx[dx] * wy[dy] * wz[dz]);
  }
}

void CheckPoint(const Vec3& point) {
  if (!point.allFinite()) {
    throw std::invalid_argument("field: non-finite input point");
  }
}

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
Eigen::Map<const MatrixX<T>> WeightMap(const FieldParams<T>& params,
                                       int tensor) {
  const auto& spec = params.layout().tensors()[tensor];
  return {params.values().data() + spec.offset, spec.rows, spec.cols};
}

template <typename T>
Eigen::Map<MatrixX<T>> GradMap(GradientBuffer<T>* grads, int tensor) {
  const auto& spec = grads->layout().tensors()[tensor];
  return {grads->values().data() + spec.offset, spec.rows, spec.cols};
}

template <typename T>
void CheckLayerFinite(const MatrixX<T>& m, MlpId id, size_t layer) {
  if (!m.allFinite()) {
    throw std::runtime_error("field: non-finite value in " +
                             std::string(MlpName(id)) + " layer " +
                             std::to_string(layer));
  }
}

// Runs an MLP on tape->inputs[0] (filled by the caller), reusing the tape's
// buffers.
template <typename T>
void MlpForward(const FieldParams<T>& params, MlpId id, bool sigmoid_output,
                typename FieldTape<T>::MlpTape* tape) {
  const auto& layers = params.layout().mlp_layers(id);
  const T beta = T(params.config().softplus_beta);
  tape->inputs.resize(layers.size());
  tape->activation_grad.resize(layers.size() - 1);
  const Eigen::Index n = tape->inputs[0].cols();
  for (size_t k = 0; k < layers.size(); ++k) {
    const auto w = WeightMap(params, layers[k].weight);
    const auto b = WeightMap(params, layers[k].bias);
    const bool last = k + 1 == layers.size();
    MatrixX<T>& z = last ? tape->output : tape->inputs[k + 1];
    z.resize(w.rows(), n);
    z.noalias() = w * tape->inputs[k];
    z.colwise() += b.col(0);
    if (!last) {
      // Softplus max(z,0) + log(1 + exp(-beta|z|)) / beta with derivative
      // sigmoid(beta z). The exponent clamp only avoids inf.
      MatrixX<T>& e = tape->scratch;
      MatrixX<T>& grad = tape->activation_grad[k];
      e.resize(z.rows(), n);
      grad.resize(z.rows(), n);
      grad.array() =
          T(1) / (T(1) + (-beta * z.array()).min(T(80)).exp());
      e.array() = (T(1) + (-beta * z.array().abs()).exp()).log();
      z.array() = z.array().max(T(0)) + e.array() / beta;
    } else if (sigmoid_output) {
      z.array() = T(1) / (T(1) + (-z.array()).exp());
    }
    CheckLayerFinite(z, id, k);
  }
}

// Returns dLoss/dinput in `*grad_input`. `g` holds dLoss/doutput after the
// output nonlinearity and is used as work space.
template <typename T>
void MlpBackward(const FieldParams<T>& params, MlpId id,
                 const typename FieldTape<T>::MlpTape& tape, MatrixX<T>* g,
                 bool sigmoid_output, GradientBuffer<T>* grads,
                 MatrixX<T>* grad_input) {
  const auto& layers = params.layout().mlp_layers(id);
  if (sigmoid_output) {
    g->array() *= tape.output.array() * (T(1) - tape.output.array());
  }
  MatrixX<T>* cur = g;
  MatrixX<T>* next = grad_input;
  for (size_t k = layers.size(); k-- > 0;) {
    auto dw = GradMap(grads, layers[k].weight);
    auto db = GradMap(grads, layers[k].bias);
    dw.noalias() += *cur * tape.inputs[k].transpose();
    db.col(0) += cur->rowwise().sum();
    const auto w = WeightMap(params, layers[k].weight);
    next->resize(w.cols(), cur->cols());
    next->noalias() = w.transpose() * *cur;
    if (k > 0) next->array() *= tape.activation_grad[k - 1].array();
    std::swap(cur, next);
  }
  if (cur != grad_input) grad_input->swap(*cur);
}

// Gathers level features for one point. kF > 0 fixes the feature count at
// compile time; 0 reads it from `feats`.
template <typename T, int kF>
void GatherLevel(const T* table, const uint32_t* index, const T* weight,
                 int feats, T* out) {
  const int nf = kF > 0 ? kF : feats;
  for (int c = 0; c < 8; ++c) {
    const T* entry = table + static_cast<size_t>(index[c]) * nf;
    for (int f = 0; f < nf; ++f) out[f] += weight[c] * entry[f];
  }
}

template <typename T, int kF>
void ScatterLevel(T* table, const uint32_t* index, const T* weight, int feats,
                  const T* grad) {
  const int nf = kF > 0 ? kF : feats;
  for (int c = 0; c < 8; ++c) {
    T* entry = table + static_cast<size_t>(index[c]) * nf;
    for (int f = 0; f < nf; ++f) entry[f] += weight[c] * grad[f];
  }
}

}  // namespace

template <typename T>
VectorX<T> HashEncode(const Vec3& point, const FieldParams<T>& params,
                      bool* clamped) {
  CheckPoint(point);
  const auto& grid = params.config().grid;
  const int feats = grid.features_per_level;
  VectorX<T> out = VectorX<T>::Zero(grid.encoded_dim());
  const GridFrame frame(grid);
  Vec3 unit;
  const bool any_clamped = frame.Unit(point, &unit);
  uint32_t index[8];
  T weight[8];
  for (int l = 0; l < grid.num_levels; ++l) {
    LevelCorners(unit, frame.resolution[l], grid.table_size, index, weight);
    const T* table = params.tensor(params.layout().hash_level(l)).data();
    for (int c = 0; c < 8; ++c) {
      for (int f = 0; f < feats; ++f) {
        out[l * feats + f] += weight[c] * table[index[c] * feats + f];
      }
    }
  }
  if (clamped != nullptr) *clamped = any_clamped;
  return out;
}

template <typename T>
void FieldTape<T>::ForwardGeometry(const FieldParams<T>& params,
                                   std::span<const Vec3> points) {
  const auto& grid = params.config().grid;
  const int n = static_cast<int>(points.size());
  const int feats = grid.features_per_level;
  levels_ = grid.num_levels;
  encoded_dim_ = grid.encoded_dim();
  corner_index_.resize(static_cast<size_t>(n) * levels_ * 8);
  corner_weight_.resize(corner_index_.size());
  clamped_.assign(n, 0);
  geometry_.inputs.resize(1 + params.config().sdf_hidden_layers);
  MatrixX<T>& encoded = geometry_.inputs[0];
  encoded.setZero(encoded_dim_, n);
  const GridFrame frame(grid);
  std::vector<const T*> tables(levels_);
  for (int l = 0; l < levels_; ++l) {
    tables[l] = params.tensor(params.layout().hash_level(l)).data();
  }
  Vec3 unit;
  for (int i = 0; i < n; ++i) {
    CheckPoint(points[i]);
    clamped_[i] = frame.Unit(points[i], &unit);
    T* column = encoded.col(i).data();
    for (int l = 0; l < levels_; ++l) {
      const size_t base = (static_cast<size_t>(i) * levels_ + l) * 8;
      uint32_t* index = &corner_index_[base];
      T* weight = &corner_weight_[base];
      LevelCorners(unit, frame.resolution[l], grid.table_size, index, weight);
      if (feats == 2) {
        GatherLevel<T, 2>(tables[l], index, weight, feats, column + l * 2);
      } else {
        GatherLevel<T, 0>(tables[l], index, weight, feats, column + l * feats);
      }
    }
  }
  MlpForward(params, MlpId::kSdf, false, &geometry_);
  has_geometry_ = true;
  has_heads_ = false;
  head_points_.clear();
}

template <typename T>
void FieldTape<T>::ForwardHeads(const FieldParams<T>& params,
                                std::span<const int> point_indices) {
  if (!has_geometry_) {
    throw std::logic_error("FieldTape: heads requested before geometry");
  }
  const int m = static_cast<int>(point_indices.size());
  const int feat_dim = static_cast<int>(geometry_.output.rows()) - 1;
  head_points_.assign(point_indices.begin(), point_indices.end());
  color_.inputs.resize(1);
  MatrixX<T>& features = color_.inputs[0];
  features.resize(feat_dim, m);
  for (int j = 0; j < m; ++j) {
    features.col(j) = geometry_.output.col(point_indices[j]).tail(feat_dim);
  }
  semantic_.inputs.resize(1);
  semantic_.inputs[0] = features;
  MlpForward(params, MlpId::kColor, true, &color_);
  MlpForward(params, MlpId::kSemantic, true, &semantic_);
  has_heads_ = true;
}

template <typename T>
void FieldTape<T>::Forward(const FieldParams<T>& params,
                           std::span<const Vec3> points) {
  ForwardGeometry(params, points);
  std::vector<int> all(points.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  ForwardHeads(params, all);
}

template <typename T>
VectorX<T> FieldTape<T>::geometry_feature(int point) const {
  return geometry_.output.col(point).tail(geometry_.output.rows() - 1);
}

template <typename T>
void FieldTape<T>::Backward(const FieldParams<T>& params,
                            std::span<const T> grad_sdf,
                            std::span<const T> grad_rgb,
                            std::span<const T> grad_sem,
                            GradientBuffer<T>* grads) const {
  if (!has_geometry_) {
    throw std::logic_error("FieldTape: backward without a recorded forward");
  }
  if (!grads->SameLayout(params)) {
    throw std::invalid_argument("FieldTape: gradient buffer layout mismatch");
  }
  const int n = num_points();
  const int m = num_head_points();
  if (static_cast<int>(grad_sdf.size()) != n) {
    throw std::invalid_argument("FieldTape: grad_sdf size mismatch");
  }
  const bool use_heads = has_heads_ && m > 0 &&
                         (!grad_rgb.empty() || !grad_sem.empty());
  if (!grad_rgb.empty() && static_cast<int>(grad_rgb.size()) != 3 * m) {
    throw std::invalid_argument("FieldTape: grad_rgb size mismatch");
  }
  if (!grad_sem.empty() && static_cast<int>(grad_sem.size()) != 3 * m) {
    throw std::invalid_argument("FieldTape: grad_sem size mismatch");
  }

  const int out_dim = static_cast<int>(geometry_.output.rows());
  MatrixX<T>& grad_geometry = grad_geometry_;
  grad_geometry.setZero(out_dim, n);
  grad_geometry.row(0) =
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad_sdf.data(), n);

  if (use_heads) {
    const int feat_dim = out_dim - 1;
    for (int head = 0; head < 2; ++head) {
      const auto& grad_out = head == 0 ? grad_rgb : grad_sem;
      if (grad_out.empty()) continue;
      grad_a_ = Eigen::Map<const MatrixX<T>>(grad_out.data(), 3, m);
      MlpBackward(params, head == 0 ? MlpId::kColor : MlpId::kSemantic,
                  head == 0 ? color_ : semantic_, &grad_a_, true, grads,
                  &grad_features_);
      for (int j = 0; j < m; ++j) {
        grad_geometry.col(head_points_[j]).tail(feat_dim) +=
            grad_features_.col(j);
      }
    }
  }

  MlpBackward(params, MlpId::kSdf, geometry_, &grad_geometry, false, grads,
              &grad_a_);
  const MatrixX<T>& grad_encoded = grad_a_;

  const int feats = encoded_dim_ / levels_;
  std::vector<T*> tables(levels_);
  for (int l = 0; l < levels_; ++l) {
    tables[l] = grads->tensor(grads->layout().hash_level(l)).data();
  }
  for (int i = 0; i < n; ++i) {
    const T* column = grad_encoded.col(i).data();
    for (int l = 0; l < levels_; ++l) {
      const size_t base = (static_cast<size_t>(i) * levels_ + l) * 8;
      if (feats == 2) {
        ScatterLevel<T, 2>(tables[l], &corner_index_[base],
                           &corner_weight_[base], feats, column + l * 2);
      } else {
        ScatterLevel<T, 0>(tables[l], &corner_index_[base],
                           &corner_weight_[base], feats, column + l * feats);
      }
    }
  }
}

template <typename T>
FieldOutput<T> FieldForward(const Vec3& point, const FieldParams<T>& params) {
  FieldTape<T> tape;
  tape.Forward(params, std::span<const Vec3>(&point, 1));
  FieldOutput<T> out;
  out.sdf = tape.sdf(0);
  out.geometry_feature = tape.geometry_feature(0);
  out.rgb = tape.rgb(0);
  out.sem_rgb = tape.sem_rgb(0);
  return out;
}

template <typename T>
std::vector<double> FieldSdf(std::span<const Vec3> points,
                             const FieldParams<T>& params) {
  constexpr size_t kChunk = 4096;
  std::vector<double> out(points.size());
  FieldTape<T> tape;
  for (size_t begin = 0; begin < points.size(); begin += kChunk) {
    const size_t count = std::min(kChunk, points.size() - begin);
    tape.ForwardGeometry(params, points.subspan(begin, count));
    for (size_t i = 0; i < count; ++i) {
      out[begin + i] = static_cast<double>(tape.sdf(static_cast<int>(i)));
    }
  }
  return out;
}

template <typename T>
Vec3 SdfSpatialGradient(const Vec3& point, const FieldParams<T>& params,
                        double step) {
  std::array<Vec3, 6> probes;
  for (int a = 0; a < 3; ++a) {
    probes[2 * a] = point + step * Vec3::Unit(a);
    probes[2 * a + 1] = point - step * Vec3::Unit(a);
  }
  const auto sdf = FieldSdf<T>(probes, params);
  Vec3 grad;
  for (int a = 0; a < 3; ++a) {
    grad[a] = (sdf[2 * a] - sdf[2 * a + 1]) / (2.0 * step);
  }
  return grad;
}

#define NIDSS_INSTANTIATE_FIELD(T)                                           \
  template class FieldParams<T>;                                             \
  template class FieldTape<T>;                                               \
  template FieldParams<T> InitializeFieldParams<T>(const FieldConfig&,       \
                                                   uint64_t);                \
  template VectorX<T> HashEncode<T>(const Vec3&, const FieldParams<T>&,      \
                                    bool*);                                  \
  template FieldOutput<T> FieldForward<T>(const Vec3&, const FieldParams<T>&); \
  template std::vector<double> FieldSdf<T>(std::span<const Vec3>,            \
                                           const FieldParams<T>&);           \
  template Vec3 SdfSpatialGradient<T>(const Vec3&, const FieldParams<T>&,    \
                                      double);

NIDSS_INSTANTIATE_FIELD(float)
NIDSS_INSTANTIATE_FIELD(double)

#undef NIDSS_INSTANTIATE_FIELD

}  // namespace nidss
