// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nidss/field.h"
#include "nidss/keyframe_atlas.h"
#include "nidss/renderer.h"
#include "nidss/semantics.h"

namespace nidss {

enum class TrainMode { kRgbd, kRgbdSemantic, kRgb, kRgbSemantic };
const char* TrainModeName(TrainMode mode);
TrainMode ParseTrainMode(const std::string& name);
inline bool UsesDepth(TrainMode m) {
  return m == TrainMode::kRgbd || m == TrainMode::kRgbdSemantic;
}
inline bool UsesSemantics(TrainMode m) {
  return m == TrainMode::kRgbdSemantic || m == TrainMode::kRgbSemantic;
}

struct TrainConfig {
  int pixels_per_iter = 1024;
  double lr_base = 1e-2;
  int warmup_iters = 2000;
  double decay_gamma = 0.95;
  int decay_every = 500;
  TrainMode mode = TrainMode::kRgbdSemantic;
  int recency_window = 10;
  double recency_boost = 5.0;
  uint64_t seed = 0;
  double photometric_weight = 1.0;
  double geometric_weight = 1.0;
  double semantic_weight = 1.0;
  // Per-term sums over pixels instead of sums divided by the ray count.
  bool sum_losses = false;
  // Color and semantic heads are evaluated only on samples whose rendering
  // weight is at least this fraction of the largest weight on the ray; 0
  // evaluates every sample.
  double head_skip_weight = 1e-4;

  void Validate() const;
};

struct LossBreakdown {
  double photometric = 0;
  double geometric = 0;
  double semantic = 0;
  double total = 0;
  int n_pixels = 0;
  int n_depth_valid = 0;
  int n_sem_valid = 0;
};

// p distinct pixel indices drawn uniformly from [0, num_pixels).
std::vector<int> SamplePixels(int num_pixels, int p, uint64_t seed);

// Sum over pixels of |gt - pred|_1. `grad` (optional) receives dL/dpred.
template <typename T>
T PhotometricLoss(std::span<const Vector3<T>> pred,
                  std::span<const Vector3<T>> gt,
                  std::span<Vector3<T>> grad = {});

// Sum over pixels with gt != 0 of |gt - pred|.
template <typename T>
T GeometricLoss(std::span<const T> pred, std::span<const T> gt,
                std::span<T> grad = {}, int* num_valid = nullptr);

// Sum over pixels with non-black gt of ||gt - pred||_2. With a palette,
// a gt color that is neither black nor a palette color is an error.
template <typename T>
T SemanticLoss(std::span<const Vector3<T>> pred,
               std::span<const Vector3<T>> gt, const Palette* palette,
               std::span<Vector3<T>> grad = {}, int* num_valid = nullptr);

// Weighted draw: the last `recency_window` ids get weight recency_boost,
// the rest weight 1. `ids` is in insertion order.
int SelectKeyframe(std::span<const int> ids, const TrainConfig& config,
                   uint64_t seed);

double LrAt(int iter, const TrainConfig& config);

template <typename T>
struct OptimizerState {
  std::vector<T> m;
  std::vector<T> v;
  int64_t step = 0;
};

// Adam with beta1 0.9, beta2 0.999, eps 1e-8 and bias correction. Throws
// std::runtime_error naming the tensor on a non-finite gradient (and leaves
// everything untouched).
template <typename T>
void AdamStep(FieldParams<T>* params, const GradientBuffer<T>& grads,
              OptimizerState<T>* state, double lr);

// Rays of one iteration in a field's local frame with their supervision.
struct RayBatch {
  std::vector<Vec3> origins;
  std::vector<Vec3> directions;
  std::vector<double> t;         // Concatenated sample distances.
  std::vector<int> offsets{0};   // Ray r owns t[offsets[r], offsets[r+1]).
  std::vector<Vec3f> gt_rgb;
  std::vector<float> gt_depth;   // Distance along the ray; 0 = invalid.
  std::vector<Vec3f> gt_sem;
  std::vector<int> pixels;

  int size() const { return static_cast<int>(origins.size()); }
};

struct RaySamplingConfig {
  int num_samples = 64;
  double near = 0.05;
  double far = 8.0;
  bool stratified = true;
};

// Builds rays for the given pixels, clipped to the cube
// [center - edge/2, center + edge/2]. Rays that miss the cube, or whose
// valid ground-truth surface lies outside the clipped interval, are
// dropped.
RayBatch BuildRayBatch(const Keyframe& keyframe,
                       const CameraIntrinsics& intrinsics,
                       std::span<const int> pixels, const Vec3& center,
                       double edge, const RaySamplingConfig& sampling,
                       uint64_t seed);

// Renders the batch, evaluates the losses named by `config.mode` and, when
// `grads` is given, accumulates exact gradients of the total. `tape` is
// optional work space that can be reused across calls.
template <typename T>
LossBreakdown EvaluateBatch(const FieldParams<T>& params,
                            const RayBatch& batch, const TrainConfig& config,
                            const Palette* palette, GradientBuffer<T>* grads,
                            FieldTape<T>* tape = nullptr);

struct TrainLogRow {
  int iter = 0;
  double lr = 0;
  LossBreakdown loss;
  int keyframe_id = -1;
  double wall_ms = 0;
};

// Optimizes the active subspace of an atlas. Single writer of the fields.
class Trainer {
 public:
  Trainer(KeyframeAtlas* atlas, const TrainConfig& config,
          const RaySamplingConfig& sampling, const Palette* palette);

  // One optimization step on the active subspace; `iter` drives the seed
  // and the learning-rate schedule.
  LossBreakdown TrainIteration(int iter);
  // Drops the optimizer moments of a subspace (after a reset).
  void ResetOptimizer(int subspace_id);

  const std::vector<TrainLogRow>& log() const { return log_; }
  const TrainConfig& config() const { return config_; }

 private:
  KeyframeAtlas* atlas_;
  TrainConfig config_;
  RaySamplingConfig sampling_;
  const Palette* palette_;
  std::map<int, OptimizerState<float>> optimizers_;
  std::vector<TrainLogRow> log_;
  FieldTape<float> tape_;
};

}  // namespace nidss
