// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/renderer.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace nidss {

void CameraIntrinsics::Validate() const {
  if (!(fx > 0) || !(fy > 0)) {
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw std::invalid_argument("intrinsics: empty image");
  }
  if (cx < 0 || cx >= width || cy < 0 || cy >= height) {
    throw std::invalid_argument("intrinsics: principal point outside image");
  }
}

Ray PixelToRay(double u, double v, const CameraIntrinsics& intrinsics,
               const Pose& pose) {
  if (!(u >= 0 && u < intrinsics.width && v >= 0 && v < intrinsics.height)) {
    throw std::out_of_range("PixelToRay: pixel outside image");
  }
  const Vec3 camera_dir((u - intrinsics.cx) / intrinsics.fx,
                        (v - intrinsics.cy) / intrinsics.fy, 1.0);
  return {pose.translation, (pose.rotation * camera_dir).normalized()};
}

double RayDistancePerDepth(double u, double v,
                           const CameraIntrinsics& intrinsics) {
  return Vec3((u - intrinsics.cx) / intrinsics.fx,
              (v - intrinsics.cy) / intrinsics.fy, 1.0)
      .norm();
}

std::optional<std::pair<double, double>> IntersectBox(const Ray& ray,
                                                      const Vec3& box_min,
                                                      const Vec3& box_max) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    const double o = ray.origin[a];
    if (std::abs(d) < 1e-15) {
      if (o < box_min[a] || o > box_max[a]) return std::nullopt;
      continue;
    }
    double ta = (box_min[a] - o) / d;
    double tb = (box_max[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;
  return std::make_pair(t0, t1);
}

std::vector<double> SampleAlongRay(double near, double far, int num_samples,
                                   bool stratified, uint64_t seed) {
  if (!(near > 0) || !(far > near) || !std::isfinite(far)) {
    throw std::invalid_argument("SampleAlongRay: need 0 < near < far");
  }
  if (num_samples < 2) {
    throw std::invalid_argument("SampleAlongRay: need at least two samples");
  }
  const double bin = (far - near) / num_samples;
  std::vector<double> t(num_samples);
  for (int i = 0; i < num_samples; ++i) {
    double offset = 0.5;
    if (stratified) {
      offset = static_cast<double>(SplitMix64(seed + i) >> 11) * 0x1.0p-53;
    }
    t[i] = near + (i + offset) * bin;
  }
  return t;
}

template <typename T>
T SharpSigmoid(T x, T s) {
  const T z = s * x;
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

namespace {
template <typename T>
constexpr T kAlphaFloor = T(1e-12);
}  // namespace

template <typename T>
T AlphaFromSdf(T sdf, T sdf_next, T sharpness) {
  const T phi = SharpSigmoid(sdf, sharpness);
  if (phi < kAlphaFloor<T>) {
    const T raw = (phi - SharpSigmoid(sdf_next, sharpness)) / kAlphaFloor<T>;
    return std::clamp(raw, T(0), T(1));
  }
  // (phi - phi_next) / phi = (1 - exp(-s d)) * sigmoid(-s sdf_next) with
  // d = sdf - sdf_next. This form does not cancel when both sigmoids are
  // close to one, which matters in single precision.
  const T delta = sdf - sdf_next;
  if (!(delta > T(0))) return T(0);
  const T raw =
      -std::expm1(-sharpness * delta) * SharpSigmoid(-sdf_next, sharpness);
  return std::min(raw, T(1));
}

template <typename T>
AlphaPartials<T> AlphaFromSdfPartials(T sdf, T sdf_next, T sharpness) {
  AlphaPartials<T> out;
  const T phi = SharpSigmoid(sdf, sharpness);
  if (phi < kAlphaFloor<T>) {
    const T phi_next = SharpSigmoid(sdf_next, sharpness);
    const T raw = (phi - phi_next) / kAlphaFloor<T>;
    if (!(raw > T(0)) || raw >= T(1)) return out;
    const T dsig = phi * (T(1) - phi);
    const T dsig_next = phi_next * (T(1) - phi_next);
    out.d_sdf = dsig * sharpness / kAlphaFloor<T>;
    out.d_sdf_next = -dsig_next * sharpness / kAlphaFloor<T>;
    out.d_sharpness = (dsig * sdf - dsig_next * sdf_next) / kAlphaFloor<T>;
    return out;
  }
  const T delta = sdf - sdf_next;
  if (!(delta > T(0))) return out;
  const T one_minus_e = -std::expm1(-sharpness * delta);
  const T e = T(1) - one_minus_e;
  const T g = SharpSigmoid(-sdf_next, sharpness);
  const T phi_next = SharpSigmoid(sdf_next, sharpness);
  if (one_minus_e * g >= T(1)) return out;
  out.d_sdf = sharpness * e * g;
  out.d_sdf_next = -sharpness * e * g - sharpness * one_minus_e * g * phi_next;
  out.d_sharpness = delta * e * g - sdf_next * one_minus_e * g * phi_next;
  return out;
}

template <typename T>
RayWeights<T> WeightsFromAlpha(std::span<const T> alpha) {
  RayWeights<T> out;
  const size_t n = alpha.size();
  out.alpha.assign(alpha.begin(), alpha.end());
  out.transmittance.resize(n);
  out.weight.resize(n);
  T trans = T(1);
  for (size_t i = 0; i < n; ++i) {
    out.transmittance[i] = trans;
    out.weight[i] = trans * alpha[i];
    trans *= T(1) - alpha[i];
  }
  return out;
}

template <typename T>
RayWeights<T> WeightsFromSdf(std::span<const T> sdf, T sharpness) {
  const size_t n = sdf.size();
  std::vector<T> alpha(n, T(0));
  for (size_t i = 0; i + 1 < n; ++i) {
    alpha[i] = AlphaFromSdf(sdf[i], sdf[i + 1], sharpness);
  }
  if (n > 0) alpha[n - 1] = AlphaFromSdf(sdf[n - 1], sdf[n - 1], sharpness);
  return WeightsFromAlpha<T>(alpha);
}

template <typename T>
Accumulation<T> Accumulate(std::span<const T> alpha,
                           std::span<const Vector3<T>> rgb,
                           std::span<const Vector3<T>> sem,
                           std::span<const T> t) {
  const size_t n = alpha.size();
  if (rgb.size() != n || sem.size() != n || t.size() != n) {
    throw std::invalid_argument("Accumulate: size mismatch");
  }
  Accumulation<T> out;
  out.weights = WeightsFromAlpha(alpha);
  for (size_t i = 0; i < n; ++i) {
    const T w = out.weights.weight[i];
    out.rgb += w * rgb[i];
    out.sem += w * sem[i];
    out.depth += w * t[i];
  }
  return out;
}

template <typename T>
T CompositeBackward(std::span<const T> sdf, T sharpness, std::span<const T> t,
                    const RayWeights<T>& weights,
                    std::span<const Vector3<T>> rgb,
                    std::span<const Vector3<T>> sem, const Vector3<T>& grad_rgb,
                    T grad_depth, const Vector3<T>& grad_sem,
                    std::span<T> grad_sdf) {
  const size_t n = sdf.size();
  if (n == 0) return T(0);
  // e_i = dLoss/dweight_i.
  std::vector<T> e(n);
  for (size_t i = 0; i < n; ++i) {
    e[i] = grad_rgb.dot(rgb[i]) + grad_depth * t[i] + grad_sem.dot(sem[i]);
  }
  // dLoss/dalpha_k = T_k (e_k - Q_k), Q_k = sum_{i>k} e_i alpha_i
  // prod_{k<j<i}(1 - alpha_j), evaluated back to front.
  T q = T(0);
  T grad_sharpness = T(0);
  for (size_t k = n; k-- > 0;) {
    if (k + 1 < n) {
      const T a_next = weights.alpha[k + 1];
      q = a_next * e[k + 1] + (T(1) - a_next) * q;
    }
    if (k + 1 == n) continue;  // Last opacity is identically zero.
    const T grad_alpha = weights.transmittance[k] * (e[k] - q);
    if (grad_alpha == T(0)) continue;
    const auto partial = AlphaFromSdfPartials(sdf[k], sdf[k + 1], sharpness);
    grad_sdf[k] += grad_alpha * partial.d_sdf;
    grad_sdf[k + 1] += grad_alpha * partial.d_sdf_next;
    grad_sharpness += grad_alpha * partial.d_sharpness;
  }
  return grad_sharpness;
}

void ImplicitScene::EvaluateSdf(std::span<const Vec3> points,
                                std::span<double> sdf) const {
  std::vector<Vec3> rgb(points.size()), sem(points.size());
  Evaluate(points, sdf, rgb, sem);
}

Vec3 ImplicitScene::SdfGradient(const Vec3& point) const {
  constexpr double kStep = 1e-3;
  std::array<Vec3, 6> probes;
  for (int a = 0; a < 3; ++a) {
    probes[2 * a] = point + kStep * Vec3::Unit(a);
    probes[2 * a + 1] = point - kStep * Vec3::Unit(a);
  }
  std::array<double, 6> values;
  EvaluateSdf(probes, values);
  Vec3 grad;
  for (int a = 0; a < 3; ++a) {
    grad[a] = (values[2 * a] - values[2 * a + 1]) / (2 * kStep);
  }
  return grad;
}

template <typename T>
void FieldScene<T>::Evaluate(std::span<const Vec3> points,
                             std::span<double> sdf, std::span<Vec3> rgb,
                             std::span<Vec3> sem) const {
  std::vector<Vec3> local(points.size());
  for (size_t i = 0; i < points.size(); ++i) local[i] = points[i] - offset_;
  FieldTape<T> tape;
  tape.Forward(params_, local);
  for (size_t i = 0; i < points.size(); ++i) {
    const int k = static_cast<int>(i);
    sdf[i] = static_cast<double>(tape.sdf(k));
    rgb[i] = tape.rgb(k).template cast<double>();
    sem[i] = tape.sem_rgb(k).template cast<double>();
  }
}

template <typename T>
void FieldScene<T>::EvaluateSdf(std::span<const Vec3> points,
                                std::span<double> sdf) const {
  std::vector<Vec3> local(points.size());
  for (size_t i = 0; i < points.size(); ++i) local[i] = points[i] - offset_;
  const auto values = FieldSdf(std::span<const Vec3>(local), params_);
  std::copy(values.begin(), values.end(), sdf.begin());
}

template <typename T>
Vec3 FieldScene<T>::SdfGradient(const Vec3& point) const {
  return SdfSpatialGradient(point - offset_, params_);
}

void FunctionScene::Evaluate(std::span<const Vec3> points,
                             std::span<double> sdf, std::span<Vec3> rgb,
                             std::span<Vec3> sem) const {
  for (size_t i = 0; i < points.size(); ++i) {
    sdf[i] = sdf_(points[i]);
    rgb[i] = rgb_ ? rgb_(points[i]) : Vec3::Zero();
    sem[i] = sem_ ? sem_(points[i]) : Vec3::Zero();
  }
}

void RenderConfig::Validate() const {
  if (num_samples < 2) throw std::invalid_argument("render: num_samples < 2");
  if (!(near > 0)) throw std::invalid_argument("render: near must be > 0");
  if (far > 0 && !(far > near)) {
    throw std::invalid_argument("render: far must exceed near");
  }
}

double RaySample::opacity() const {
  double sum = 0;
  for (double w : weight) sum += w;
  return sum;
}

RaySample RenderRay(const Ray& ray, const ImplicitScene& scene, double near,
                    double far, int num_samples, bool stratified,
                    uint64_t seed) {
  RaySample out;
  out.t = SampleAlongRay(near, far, num_samples, stratified, seed);
  const size_t n = out.t.size();
  std::vector<Vec3> points(n), rgb(n), sem(n);
  for (size_t i = 0; i < n; ++i) points[i] = ray.origin + out.t[i] * ray.direction;
  out.sdf.resize(n);
  scene.Evaluate(points, out.sdf, rgb, sem);
  for (double v : out.sdf) {
    if (!std::isfinite(v)) throw std::runtime_error("RenderRay: non-finite SDF");
  }
  const auto weights = WeightsFromSdf<double>(out.sdf, scene.sharpness());
  out.alpha = weights.alpha;
  out.transmittance = weights.transmittance;
  out.weight = weights.weight;
  for (size_t i = 0; i < n; ++i) {
    out.rgb_out += out.weight[i] * rgb[i];
    out.sem_out += out.weight[i] * sem[i];
    out.depth_out += out.weight[i] * out.t[i];
  }
  return out;
}

RaySample RenderRay(const Ray& ray, const ImplicitScene& scene,
                    const RenderConfig& config, uint64_t ray_seed) {
  if (!(config.far > 0)) {
    throw std::invalid_argument("RenderRay: far plane not resolved");
  }
  return RenderRay(ray, scene, config.near, config.far, config.num_samples,
                   config.stratified, ray_seed);
}

RenderedImages RenderImage(
    const Pose& pose, const CameraIntrinsics& intrinsics,
    const ImplicitScene& scene, const RenderConfig& config,
    const std::optional<std::pair<Vec3, Vec3>>& clip_box) {
  intrinsics.Validate();
  config.Validate();
  if (!(config.far > 0)) {
    throw std::invalid_argument("RenderImage: far plane not resolved");
  }
  const int w = intrinsics.width, h = intrinsics.height;
  RenderedImages out{ColorImage(w, h, 3), DepthImage(w, h, 1),
                     ColorImage(w, h, 3), ColorImage(w, h, 3),
                     DepthImage(w, h, 1)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t index = static_cast<size_t>(y) * w + x;
      const Ray ray = PixelToRay(x, y, intrinsics, pose);
      double near = config.near, far = config.far;
      if (clip_box) {
        const auto hit = IntersectBox(ray, clip_box->first, clip_box->second);
        if (!hit) continue;
        near = std::max(near, hit->first);
        far = std::min(far, hit->second);
        if (!(far > near)) continue;
      }
      const RaySample sample =
          RenderRay(ray, scene, near, far, config.num_samples,
                    config.stratified, DeriveSeed(config.seed, index));
      const double opacity = sample.opacity();
      SetColor(out.rgb, index, sample.rgb_out.cast<float>());
      SetColor(out.semantic, index, sample.sem_out.cast<float>());
      out.depth.at(x, y) = static_cast<float>(
          sample.depth_out / RayDistancePerDepth(x, y, intrinsics));
      out.opacity.at(x, y) = static_cast<float>(opacity);
      if (opacity > 1e-6) {
        const Vec3 surface =
            ray.origin + (sample.depth_out / opacity) * ray.direction;
        const Vec3 grad = scene.SdfGradient(surface);
        if (grad.norm() > 0) {
          SetColor(out.normal, index, grad.normalized().cast<float>());
        }
      }
    }
  }
  return out;
}

#define NIDSS_INSTANTIATE_RENDER(T)                                          \
  template T SharpSigmoid<T>(T, T);                                          \
  template T AlphaFromSdf<T>(T, T, T);                                       \
  template AlphaPartials<T> AlphaFromSdfPartials<T>(T, T, T);                \
  template RayWeights<T> WeightsFromSdf<T>(std::span<const T>, T);           \
  template RayWeights<T> WeightsFromAlpha<T>(std::span<const T>);            \
  template Accumulation<T> Accumulate<T>(                                    \
      std::span<const T>, std::span<const Vector3<T>>,                       \
      std::span<const Vector3<T>>, std::span<const T>);                      \
  template T CompositeBackward<T>(                                           \
      std::span<const T>, T, std::span<const T>, const RayWeights<T>&,       \
      std::span<const Vector3<T>>, std::span<const Vector3<T>>,              \
      const Vector3<T>&, T, const Vector3<T>&, std::span<T>);                \
  template class FieldScene<T>;

NIDSS_INSTANTIATE_RENDER(float)
NIDSS_INSTANTIATE_RENDER(double)

#undef NIDSS_INSTANTIATE_RENDER

}  // namespace nidss
