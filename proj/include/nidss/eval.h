// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <limits>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "nidss/common.h"
#include "nidss/semantics.h"

namespace nidss {

// Timestamps must increase strictly.
using Trajectory = std::vector<TimedPose>;
void ValidateTrajectory(const Trajectory& trajectory);

// p -> scale * rotation * p + translation.
struct Similarity {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 Apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Pairs each estimated pose with the nearest unused ground-truth pose whose
// timestamp differs by at most `max_dt`; closest pairs are taken first.
// Returns (est index, gt index) sorted by est index.
std::vector<std::pair<int, int>> AssociateTimestamps(const Trajectory& est,
                                                     const Trajectory& gt,
                                                     double max_dt = 0.02);

// Least-squares similarity taking `est` onto `gt`. Throws
// std::invalid_argument for fewer than 3 pairs, mismatched sizes, or points
// that do not span a plane.
Similarity AlignUmeyama(std::span<const Vec3> est, std::span<const Vec3> gt,
                        bool with_scale);

struct AteResult {
  double rmse = 0;  // Meters.
  double mean = 0;
  int num_pairs = 0;
  Similarity alignment;
};

// Associates by timestamp, aligns unless `align` is false, and measures
// camera center errors.
AteResult ComputeAte(const Trajectory& est, const Trajectory& gt,
                     bool with_scale, bool align = true, double max_dt = 0.02);

// Mean |pred - gt| in centimeters over pixels with gt != 0. Throws when no
// pixel is valid or the shapes differ.
double L1DepthCm(const DepthImage& pred, const DepthImage& gt);

// s minimizing sum (s * pred - gt)^2 over pixels with gt != 0, for
// pipelines whose depth is only known up to scale.
double DepthScaleFactor(const DepthImage& pred, const DepthImage& gt);
DepthImage ScaleDepth(const DepthImage& depth, double scale);

// +infinity when the images are identical.
double Psnr(const ColorImage& pred, const ColorImage& gt, double max_val = 1.0);

// Mean structural similarity over all fully covered 11 x 11 Gaussian
// windows (sigma 1.5) with dynamic range 1, averaged over channels.
double Ssim(const Image<float>& pred, const Image<float>& gt);

struct SegmentationReport {
  // Percentages in [0, 100].
  double total_accuracy = 0;
  double class_avg_accuracy = 0;
  double miou = 0;
  double fwiou = 0;
  std::map<int, double> per_class_iou;  // Classes with a non-empty union.
  // Palette classes in palette order.
  std::vector<int> class_ids;
  // confusion(gt, pred) in palette order; the last column counts known-gt
  // pixels predicted as unknown, so row sums are gt pixel counts.
  Eigen::MatrixX<int64_t> confusion;
};

struct SegmentationOptions {
  // Average IoU over every palette class with a non-empty union instead of
  // only the classes present in the ground truth.
  bool miou_over_all_classes = false;
};

// Pixels whose gt is unknown are ignored. Throws std::invalid_argument on a
// shape mismatch, a label outside the palette, or no known gt pixel.
SegmentationReport EvaluateSegmentation(const LabelImage& pred,
                                        const LabelImage& gt,
                                        const Palette& palette,
                                        const SegmentationOptions& options = {});

// Builds the report from an accumulated confusion matrix laid out as above.
SegmentationReport ReportFromConfusion(const Eigen::MatrixX<int64_t>& confusion,
                                       std::vector<int> class_ids,
                                       const SegmentationOptions& options = {});

}  // namespace nidss
