// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/trainer.h"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nidss {

const char* TrainModeName(TrainMode mode) {
  switch (mode) {
    case TrainMode::kRgbd:
      return "rgbd";
    case TrainMode::kRgbdSemantic:
      return "rgbd+semantic";
    case TrainMode::kRgb:
      return "rgb";
    case TrainMode::kRgbSemantic:
      return "rgb+semantic";
  }
  return "?";
}

TrainMode ParseTrainMode(const std::string& name) {
  if (name == "rgbd") return TrainMode::kRgbd;
  if (name == "rgbd+semantic") return TrainMode::kRgbdSemantic;
  if (name == "rgb") return TrainMode::kRgb;
  if (name == "rgb+semantic") return TrainMode::kRgbSemantic;
  throw std::invalid_argument("unknown training mode '" + name + "'");
}

void TrainConfig::Validate() const {
  if (pixels_per_iter < 1) {
    throw std::invalid_argument("train: pixels_per_iter must be >= 1");
  }
  if (!(lr_base > 0)) throw std::invalid_argument("train: lr_base must be > 0");
  if (warmup_iters < 0) {
    throw std::invalid_argument("train: warmup_iters must be >= 0");
  }
  if (!(decay_gamma > 0 && decay_gamma <= 1)) {
    throw std::invalid_argument("train: decay_gamma must be in (0, 1]");
  }
  if (decay_every < 1) {
    throw std::invalid_argument("train: decay_every must be >= 1");
  }
  if (recency_window < 0) {
    throw std::invalid_argument("train: recency_window must be >= 0");
  }
  if (!(recency_boost >= 1)) {
    throw std::invalid_argument("train: recency_boost must be >= 1");
  }
  if (!(photometric_weight >= 0 && geometric_weight >= 0 &&
        semantic_weight >= 0)) {
    throw std::invalid_argument("train: loss weights must be >= 0");
  }
  if (!(head_skip_weight >= 0 && head_skip_weight < 1)) {
    throw std::invalid_argument("train: head_skip_weight must be in [0, 1)");
  }
}

std::vector<int> SamplePixels(int num_pixels, int p, uint64_t seed) {
  if (p < 0 || p > num_pixels) {
    throw std::invalid_argument("SamplePixels: requested " + std::to_string(p) +
                                " pixels from " + std::to_string(num_pixels));
  }
  std::vector<int> all(num_pixels), out;
  std::iota(all.begin(), all.end(), 0);
  out.reserve(p);
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(out), p, rng);
  return out;
}

namespace {

template <typename T>
T Sign(T x) {
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}

void CheckSizes(size_t a, size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": batch sizes differ (" +
                                std::to_string(a) + " vs " + std::to_string(b) +
                                ")");
  }
}

}  // namespace

template <typename T>
T PhotometricLoss(std::span<const Vector3<T>> pred,
                  std::span<const Vector3<T>> gt,
                  std::span<Vector3<T>> grad) {
  CheckSizes(pred.size(), gt.size(), "photometric loss");
  if (!grad.empty()) CheckSizes(grad.size(), pred.size(), "photometric loss");
  T sum = T(0);
  for (size_t i = 0; i < pred.size(); ++i) {
    const Vector3<T> diff = pred[i] - gt[i];
    sum += diff.cwiseAbs().sum();
    if (!grad.empty()) {
      grad[i] = Vector3<T>(Sign(diff.x()), Sign(diff.y()), Sign(diff.z()));
    }
  }
  return sum;
}

template <typename T>
T GeometricLoss(std::span<const T> pred, std::span<const T> gt,
                std::span<T> grad, int* num_valid) {
  CheckSizes(pred.size(), gt.size(), "geometric loss");
  if (!grad.empty()) CheckSizes(grad.size(), pred.size(), "geometric loss");
  T sum = T(0);
  int valid = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    T g = T(0);
    if (gt[i] != T(0)) {
      ++valid;
      sum += std::abs(gt[i] - pred[i]);
      g = Sign(pred[i] - gt[i]);
    }
    if (!grad.empty()) grad[i] = g;
  }
  if (num_valid) *num_valid = valid;
  return sum;
}

template <typename T>
T SemanticLoss(std::span<const Vector3<T>> pred,
               std::span<const Vector3<T>> gt, const Palette* palette,
               std::span<Vector3<T>> grad, int* num_valid) {
  CheckSizes(pred.size(), gt.size(), "semantic loss");
  if (!grad.empty()) CheckSizes(grad.size(), pred.size(), "semantic loss");
  T sum = T(0);
  int valid = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    Vector3<T> g = Vector3<T>::Zero();
    const bool black = gt[i].isZero(0);
    if (palette && !black) {
      if (!palette->LabelOfExactColor(gt[i].template cast<float>())) {
        throw std::runtime_error(
            "semantic loss: ground-truth color is neither black nor a "
            "palette color");
      }
    }
    if (!black) {
      ++valid;
      const Vector3<T> diff = pred[i] - gt[i];
      const T norm = diff.norm();
      sum += norm;
      if (norm > T(0)) g = diff / norm;
    }
    if (!grad.empty()) grad[i] = g;
  }
  if (num_valid) *num_valid = valid;
  return sum;
}

int SelectKeyframe(std::span<const int> ids, const TrainConfig& config,
                   uint64_t seed) {
  if (ids.empty()) throw std::invalid_argument("SelectKeyframe: no keyframes");
  std::vector<double> weights(ids.size(), 1.0);
  const size_t recent = std::min<size_t>(config.recency_window, ids.size());
  for (size_t i = ids.size() - recent; i < ids.size(); ++i) {
    weights[i] = config.recency_boost;
  }
  std::mt19937_64 rng(seed);
  std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
  return ids[pick(rng)];
}

double LrAt(int iter, const TrainConfig& config) {
  if (iter < 0) throw std::invalid_argument("LrAt: negative iteration");
  if (iter < config.warmup_iters) {
    return config.lr_base * (iter + 1) / config.warmup_iters;
  }
  const int decays = (iter - config.warmup_iters) / config.decay_every;
  return config.lr_base * std::pow(config.decay_gamma, decays);
}

template <typename T>
void AdamStep(FieldParams<T>* params, const GradientBuffer<T>& grads,
              OptimizerState<T>* state, double lr) {
  if (!params->SameLayout(grads)) {
    throw std::invalid_argument("AdamStep: gradient layout differs");
  }
  grads.CheckFinite();
  const size_t n = params->values().size();
  if (state->m.empty() && state->v.empty()) {
    state->m.assign(n, T(0));
    state->v.assign(n, T(0));
  }
  if (state->m.size() != n || state->v.size() != n) {
    throw std::invalid_argument("AdamStep: optimizer state layout differs");
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++state->step;
  const T c1 = T(1.0 / (1.0 - std::pow(kBeta1, state->step)));
  const T c2 = T(1.0 / (1.0 - std::pow(kBeta2, state->step)));
  const T b1 = T(kBeta1), b2 = T(kBeta2), eps = T(kEps), step = T(lr);
  T* p = params->values().data();
  const T* g = grads.values().data();
  T* m = state->m.data();
  T* v = state->v.data();
  for (size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (T(1) - b1) * g[i];
    v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
    p[i] -= step * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
  }
}

RayBatch BuildRayBatch(const Keyframe& keyframe,
                       const CameraIntrinsics& intrinsics,
                       std::span<const int> pixels, const Vec3& center,
                       double edge, const RaySamplingConfig& sampling,
                       uint64_t seed) {
  RayBatch batch;
  const Vec3 half = Vec3::Constant(edge / 2);
  const int width = intrinsics.width;
  for (int pixel : pixels) {
    const int x = pixel % width, y = pixel / width;
    Ray ray = PixelToRay(x, y, intrinsics, keyframe.pose);
    ray.origin = GlobalToLocal(ray.origin, center);
    const auto hit = IntersectBox(ray, -half, half);
    if (!hit) continue;
    const double near = std::max(sampling.near, hit->first);
    const double far = std::min(sampling.far, hit->second);
    if (!(far > near)) continue;
    const float z = keyframe.depth.at(x, y);
    const float gt_depth =
        z > 0 ? static_cast<float>(z * RayDistancePerDepth(x, y, intrinsics))
              : 0.0f;
    if (gt_depth > 0 && (gt_depth < near || gt_depth > far)) continue;
    const auto t = SampleAlongRay(near, far, sampling.num_samples,
                                  sampling.stratified, DeriveSeed(seed, pixel));
    batch.origins.push_back(ray.origin);
    batch.directions.push_back(ray.direction);
    batch.t.insert(batch.t.end(), t.begin(), t.end());
    batch.offsets.push_back(static_cast<int>(batch.t.size()));
    batch.gt_rgb.push_back(ColorAt(keyframe.rgb, pixel));
    batch.gt_depth.push_back(gt_depth);
    batch.gt_sem.push_back(ColorAt(keyframe.semantic, pixel));
    batch.pixels.push_back(pixel);
  }
  return batch;
}

template <typename T>
LossBreakdown EvaluateBatch(const FieldParams<T>& params,
                            const RayBatch& batch, const TrainConfig& config,
                            const Palette* palette, GradientBuffer<T>* grads,
                            FieldTape<T>* workspace) {
  LossBreakdown out;
  const int rays = batch.size();
  out.n_pixels = rays;
  if (rays == 0) return out;
  const int samples = static_cast<int>(batch.t.size());

  std::vector<Vec3> points(samples);
  std::vector<T> t(samples);
  for (int r = 0; r < rays; ++r) {
    for (int i = batch.offsets[r]; i < batch.offsets[r + 1]; ++i) {
      points[i] = batch.origins[r] + batch.t[i] * batch.directions[r];
      t[i] = static_cast<T>(batch.t[i]);
    }
  }
  FieldTape<T> local_tape;
  FieldTape<T>& tape = workspace ? *workspace : local_tape;
  tape.ForwardGeometry(params, points);
  const T sharpness = params.sharpness();
  std::vector<T> sdf(samples);
  for (int i = 0; i < samples; ++i) sdf[i] = tape.sdf(i);

  std::vector<RayWeights<T>> weights(rays);
  std::vector<T> sample_weight(samples);
  std::vector<int> heads;
  const T skip = static_cast<T>(config.head_skip_weight);
  for (int r = 0; r < rays; ++r) {
    const int begin = batch.offsets[r], n = batch.offsets[r + 1] - begin;
    weights[r] = WeightsFromSdf<T>(std::span<const T>(sdf.data() + begin, n),
                                   sharpness);
    // Relative to the ray's peak, so that an empty field still evaluates
    // its heads and receives photometric gradients.
    T peak = 0;
    for (int k = 0; k < n; ++k) peak = std::max(peak, weights[r].weight[k]);
    for (int k = 0; k < n; ++k) {
      sample_weight[begin + k] = weights[r].weight[k];
      if (weights[r].weight[k] >= skip * peak) heads.push_back(begin + k);
    }
  }
  tape.ForwardHeads(params, heads);
  std::vector<Vector3<T>> rgb(samples, Vector3<T>::Zero());
  std::vector<Vector3<T>> sem(samples, Vector3<T>::Zero());
  for (int h = 0; h < static_cast<int>(heads.size()); ++h) {
    rgb[heads[h]] = tape.rgb(h);
    sem[heads[h]] = tape.sem_rgb(h);
  }

  std::vector<Vector3<T>> pred_rgb(rays, Vector3<T>::Zero());
  std::vector<Vector3<T>> pred_sem(rays, Vector3<T>::Zero());
  std::vector<T> pred_depth(rays, T(0));
  std::vector<Vector3<T>> gt_rgb(rays), gt_sem(rays);
  std::vector<T> gt_depth(rays);
  for (int r = 0; r < rays; ++r) {
    for (int i = batch.offsets[r]; i < batch.offsets[r + 1]; ++i) {
      pred_rgb[r] += sample_weight[i] * rgb[i];
      pred_sem[r] += sample_weight[i] * sem[i];
      pred_depth[r] += sample_weight[i] * t[i];
    }
    gt_rgb[r] = batch.gt_rgb[r].cast<T>();
    gt_sem[r] = batch.gt_sem[r].cast<T>();
    gt_depth[r] = static_cast<T>(batch.gt_depth[r]);
  }

  const double norm = config.sum_losses ? 1.0 : 1.0 / rays;
  std::vector<Vector3<T>> g_rgb(rays, Vector3<T>::Zero());
  std::vector<Vector3<T>> g_sem(rays, Vector3<T>::Zero());
  std::vector<T> g_depth(rays, T(0));
  out.photometric = config.photometric_weight * norm *
                    static_cast<double>(PhotometricLoss<T>(pred_rgb, gt_rgb, g_rgb));
  if (UsesDepth(config.mode)) {
    out.geometric = config.geometric_weight * norm *
                    static_cast<double>(GeometricLoss<T>(
                        pred_depth, gt_depth, g_depth, &out.n_depth_valid));
  } else {
    GeometricLoss<T>(pred_depth, gt_depth, {}, &out.n_depth_valid);
  }
  if (UsesSemantics(config.mode)) {
    out.semantic = config.semantic_weight * norm *
                   static_cast<double>(SemanticLoss<T>(
                       pred_sem, gt_sem, palette, g_sem, &out.n_sem_valid));
  } else {
    SemanticLoss<T>(pred_sem, gt_sem, nullptr, {}, &out.n_sem_valid);
  }
  out.total = out.photometric + out.geometric + out.semantic;
  if (!grads) return out;

  const T wp = static_cast<T>(config.photometric_weight * norm);
  const T wg = static_cast<T>(config.geometric_weight * norm);
  const T ws = static_cast<T>(config.semantic_weight * norm);
  std::vector<T> grad_sdf(samples, T(0));
  T grad_sharpness = T(0);
  for (int r = 0; r < rays; ++r) {
    g_rgb[r] *= wp;
    g_depth[r] *= wg;
    g_sem[r] *= ws;
    const int begin = batch.offsets[r], n = batch.offsets[r + 1] - begin;
    grad_sharpness += CompositeBackward<T>(
        std::span<const T>(sdf.data() + begin, n), sharpness,
        std::span<const T>(t.data() + begin, n), weights[r],
        std::span<const Vector3<T>>(rgb.data() + begin, n),
        std::span<const Vector3<T>>(sem.data() + begin, n), g_rgb[r],
        g_depth[r], g_sem[r], std::span<T>(grad_sdf.data() + begin, n));
  }
  std::vector<int> ray_of(samples);
  for (int r = 0; r < rays; ++r) {
    for (int i = batch.offsets[r]; i < batch.offsets[r + 1]; ++i) ray_of[i] = r;
  }
  const size_t nh = heads.size();
  std::vector<T> grad_rgb(3 * nh), grad_sem(3 * nh);
  for (size_t h = 0; h < nh; ++h) {
    const int i = heads[h];
    const Vector3<T> gc = sample_weight[i] * g_rgb[ray_of[i]];
    const Vector3<T> gs = sample_weight[i] * g_sem[ray_of[i]];
    for (int c = 0; c < 3; ++c) {
      grad_rgb[3 * h + c] = gc[c];
      grad_sem[3 * h + c] = gs[c];
    }
  }
  tape.Backward(params, grad_sdf, grad_rgb, grad_sem, grads);
  grads->values()[params.layout().s_log().offset] += grad_sharpness * sharpness;
  return out;
}

Trainer::Trainer(KeyframeAtlas* atlas, const TrainConfig& config,
                 const RaySamplingConfig& sampling, const Palette* palette)
    : atlas_(atlas), config_(config), sampling_(sampling), palette_(palette) {
  config_.Validate();
  if (sampling_.num_samples < 2 || !(sampling_.near > 0) ||
      !(sampling_.far > sampling_.near)) {
    throw std::invalid_argument("trainer: invalid ray sampling configuration");
  }
}

void Trainer::ResetOptimizer(int subspace_id) {
  optimizers_.erase(subspace_id);
}

LossBreakdown Trainer::TrainIteration(int iter) {
  const auto start = std::chrono::steady_clock::now();
  const int sub_id = atlas_->active_subspace();
  const Subspace& sub = atlas_->subspace(sub_id);
  if (sub.keyframe_ids.empty()) {
    throw std::logic_error("train_iteration: active subspace " +
                           std::to_string(sub_id) + " has no keyframes");
  }
  const uint64_t seed = DeriveSeed(config_.seed, static_cast<uint64_t>(iter));
  const int kf_id = SelectKeyframe(sub.keyframe_ids, config_, DeriveSeed(seed, 0));
  const Keyframe& kf = atlas_->keyframe(kf_id);
  const auto& intr = atlas_->intrinsics();
  const int num_pixels = intr.width * intr.height;
  const auto pixels = SamplePixels(
      num_pixels, std::min(config_.pixels_per_iter, num_pixels),
      DeriveSeed(seed, 1));
  const RayBatch batch = BuildRayBatch(kf, intr, pixels, sub.center, sub.edge,
                                       sampling_, DeriveSeed(seed, 2));

  FieldParams<float>& field = atlas_->mutable_field(sub_id);
  GradientBuffer<float> grads = field;
  grads.SetZero();
  const LossBreakdown loss =
      EvaluateBatch<float>(field, batch, config_, palette_, &grads, &tape_);
  const double lr = LrAt(iter, config_);
  AdamStep<float>(&field, grads, &optimizers_[sub_id], lr);

  TrainLogRow row;
  row.iter = iter;
  row.lr = lr;
  row.loss = loss;
  row.keyframe_id = kf_id;
  row.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - start)
                    .count();
  log_.push_back(row);
  return loss;
}

#define NIDSS_INSTANTIATE_TRAINER(T)                                         \
  template T PhotometricLoss<T>(std::span<const Vector3<T>>,                 \
                                std::span<const Vector3<T>>,                 \
                                std::span<Vector3<T>>);                      \
  template T GeometricLoss<T>(std::span<const T>, std::span<const T>,        \
                              std::span<T>, int*);                           \
  template T SemanticLoss<T>(std::span<const Vector3<T>>,                    \
                             std::span<const Vector3<T>>, const Palette*,    \
                             std::span<Vector3<T>>, int*);                   \
  template void AdamStep<T>(FieldParams<T>*, const GradientBuffer<T>&,       \
                            OptimizerState<T>*, double);                     \
  template LossBreakdown EvaluateBatch<T>(const FieldParams<T>&,             \
                                          const RayBatch&,                   \
                                          const TrainConfig&,                \
                                          const Palette*, GradientBuffer<T>*, \
                                          FieldTape<T>*);

NIDSS_INSTANTIATE_TRAINER(float)
NIDSS_INSTANTIATE_TRAINER(double)

}  // namespace nidss
