// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "nidss/common.h"
#include "nidss/field.h"

namespace nidss {

struct CameraIntrinsics {
  double fx = 0;
  double fy = 0;
  double cx = 0;
  double cy = 0;
  int width = 0;
  int height = 0;

  void Validate() const;
  bool operator==(const CameraIntrinsics&) const = default;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // Unit length.
};

// Throws std::out_of_range for pixels outside the image.
Ray PixelToRay(double u, double v, const CameraIntrinsics& intrinsics,
               const Pose& pose);

// Ratio between distance along the unit ray and camera z-depth at a pixel.
double RayDistancePerDepth(double u, double v,
                           const CameraIntrinsics& intrinsics);

// Parametric entry/exit of a ray through an axis-aligned box, or nullopt.
std::optional<std::pair<double, double>> IntersectBox(const Ray& ray,
                                                      const Vec3& box_min,
                                                      const Vec3& box_max);

// N strictly increasing distances in [near, far]: bin midpoints, or one
// uniform jitter per bin when stratified.
std::vector<double> SampleAlongRay(double near, double far, int num_samples,
                                   bool stratified, uint64_t seed);

// Logistic sigmoid of s * x.
template <typename T>
T SharpSigmoid(T x, T s);

// Discrete opacity between consecutive samples:
// max((Phi(sdf) - Phi(sdf_next)) / Phi(sdf), 0), Phi = sigmoid(s x).
// The denominator is floored at 1e-12.
template <typename T>
T AlphaFromSdf(T sdf, T sdf_next, T sharpness);

template <typename T>
struct AlphaPartials {
  T d_sdf{};
  T d_sdf_next{};
  T d_sharpness{};
};
template <typename T>
AlphaPartials<T> AlphaFromSdfPartials(T sdf, T sdf_next, T sharpness);

// Per-sample opacity, transmittance and weight for one ray. The last sample
// reuses its own SDF as the successor, so its opacity is zero.
template <typename T>
struct RayWeights {
  std::vector<T> alpha;
  std::vector<T> transmittance;
  std::vector<T> weight;
};

template <typename T>
RayWeights<T> WeightsFromSdf(std::span<const T> sdf, T sharpness);

template <typename T>
RayWeights<T> WeightsFromAlpha(std::span<const T> alpha);

template <typename T>
struct Accumulation {
  Vector3<T> rgb = Vector3<T>::Zero();
  Vector3<T> sem = Vector3<T>::Zero();
  T depth{};
  RayWeights<T> weights;
};

// rgb = sum w_i c_i, depth = sum w_i t_i, sem = sum w_i s_i.
template <typename T>
Accumulation<T> Accumulate(std::span<const T> alpha,
                           std::span<const Vector3<T>> rgb,
                           std::span<const Vector3<T>> sem,
                           std::span<const T> t);

// Reverse pass of WeightsFromSdf + Accumulate for one ray. Given upstream
// gradients on the composited rgb/depth/sem, accumulates dLoss/dsdf into
// `grad_sdf` and returns dLoss/dsharpness. Per-sample color gradients are
// simply weight_i * grad_rgb and are left to the caller.
template <typename T>
T CompositeBackward(std::span<const T> sdf, T sharpness, std::span<const T> t,
                    const RayWeights<T>& weights,
                    std::span<const Vector3<T>> rgb,
                    std::span<const Vector3<T>> sem, const Vector3<T>& grad_rgb,
                    T grad_depth, const Vector3<T>& grad_sem,
                    std::span<T> grad_sdf);

// Anything that can answer SDF and appearance queries: a trained field or an
// analytic stand-in.
class ImplicitScene {
 public:
  virtual ~ImplicitScene() = default;
  virtual double sharpness() const = 0;
  virtual void Evaluate(std::span<const Vec3> points, std::span<double> sdf,
                        std::span<Vec3> rgb, std::span<Vec3> sem) const = 0;
  virtual void EvaluateSdf(std::span<const Vec3> points,
                           std::span<double> sdf) const;
  // Central differences, step 1e-3 m.
  virtual Vec3 SdfGradient(const Vec3& point) const;
};

// Wraps a field. Queries are in the field's local frame; `origin_offset` is
// subtracted from every query point (global-to-local for subspaces).
template <typename T>
class FieldScene : public ImplicitScene {
 public:
  explicit FieldScene(const FieldParams<T>& params,
                      const Vec3& origin_offset = Vec3::Zero())
      : params_(params), offset_(origin_offset) {}

  double sharpness() const override {
    return static_cast<double>(params_.sharpness());
  }
  void Evaluate(std::span<const Vec3> points, std::span<double> sdf,
                std::span<Vec3> rgb, std::span<Vec3> sem) const override;
  void EvaluateSdf(std::span<const Vec3> points,
                   std::span<double> sdf) const override;
  Vec3 SdfGradient(const Vec3& point) const override;

 private:
  const FieldParams<T>& params_;
  Vec3 offset_;
};

// Callback-backed scene for analytic SDFs.
class FunctionScene : public ImplicitScene {
 public:
  using SdfFn = std::function<double(const Vec3&)>;
  using ColorFn = std::function<Vec3(const Vec3&)>;

  FunctionScene(SdfFn sdf, double sharpness, ColorFn rgb = nullptr,
                ColorFn sem = nullptr)
      : sdf_(std::move(sdf)),
        rgb_(std::move(rgb)),
        sem_(std::move(sem)),
        sharpness_(sharpness) {}

  double sharpness() const override { return sharpness_; }
  void Evaluate(std::span<const Vec3> points, std::span<double> sdf,
                std::span<Vec3> rgb, std::span<Vec3> sem) const override;

 private:
  SdfFn sdf_;
  ColorFn rgb_;
  ColorFn sem_;
  double sharpness_;
};

struct RenderConfig {
  int num_samples = 128;
  double near = 0.05;
  // Non-positive means "1.5 x scene diagonal", resolved by ResolveFar.
  double far = 0.0;
  bool stratified = false;
  uint64_t seed = 0;

  void Validate() const;
  double ResolveFar(double scene_diagonal) const {
    return far > 0 ? far : 1.5 * scene_diagonal;
  }
};

struct RaySample {
  std::vector<double> t;
  std::vector<double> sdf;
  std::vector<double> alpha;
  std::vector<double> transmittance;
  std::vector<double> weight;
  Vec3 rgb_out = Vec3::Zero();
  Vec3 sem_out = Vec3::Zero();
  double depth_out = 0.0;  // Distance along the unit ray.

  double opacity() const;
};

RaySample RenderRay(const Ray& ray, const ImplicitScene& scene, double near,
                    double far, int num_samples, bool stratified,
                    uint64_t seed);
RaySample RenderRay(const Ray& ray, const ImplicitScene& scene,
                    const RenderConfig& config, uint64_t ray_seed);

struct RenderedImages {
  ColorImage rgb;
  DepthImage depth;     // Camera z-depth in meters.
  ColorImage semantic;  // Semantic color encoding.
  ColorImage normal;    // World-frame unit normals, zero where empty.
  DepthImage opacity;   // Sum of weights per pixel.
};

// Per-pixel RenderRay with seed DeriveSeed(config.seed, pixel index). `far`
// must already be resolved. `clip_box` optionally clips rays to a box.
RenderedImages RenderImage(const Pose& pose, const CameraIntrinsics& intrinsics,
                           const ImplicitScene& scene,
                           const RenderConfig& config,
                           const std::optional<std::pair<Vec3, Vec3>>&
                               clip_box = std::nullopt);

}  // namespace nidss
