// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/eval.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>

#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace nidss {

void ValidateTrajectory(const Trajectory& trajectory) {
  for (size_t i = 0; i < trajectory.size(); ++i) {
    if (!std::isfinite(trajectory[i].timestamp)) {
      throw std::invalid_argument("trajectory: non-finite timestamp");
    }
    if (i > 0 && !(trajectory[i].timestamp > trajectory[i - 1].timestamp)) {
      throw std::invalid_argument("trajectory: timestamps must increase (entry " +
                                  std::to_string(i) + ")");
    }
    trajectory[i].pose.Validate();
  }
}

std::vector<std::pair<int, int>> AssociateTimestamps(const Trajectory& est,
                                                     const Trajectory& gt,
                                                     double max_dt) {
  ValidateTrajectory(est);
  ValidateTrajectory(gt);
  // (|dt|, est, gt) candidates; both lists are sorted, so a sliding window
  // keeps this linear in the number of candidates.
  std::vector<std::tuple<double, int, int>> candidates;
  size_t lo = 0;
  for (size_t e = 0; e < est.size(); ++e) {
    const double t = est[e].timestamp;
    while (lo < gt.size() && gt[lo].timestamp < t - max_dt) ++lo;
    for (size_t g = lo; g < gt.size() && gt[g].timestamp <= t + max_dt; ++g) {
      candidates.emplace_back(std::abs(gt[g].timestamp - t), e, g);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<bool> est_used(est.size()), gt_used(gt.size());
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [dt, e, g] : candidates) {
    if (est_used[e] || gt_used[g]) continue;
    est_used[e] = gt_used[g] = true;
    pairs.emplace_back(e, g);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

Similarity AlignUmeyama(std::span<const Vec3> est, std::span<const Vec3> gt,
                        bool with_scale) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("align: point counts differ");
  }
  if (est.size() < 3) {
    throw std::invalid_argument("align: need at least 3 pairs, got " +
                                std::to_string(est.size()));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(est.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = est[i];
    dst.col(i) = gt[i];
  }
  const Eigen::Matrix3Xd src_c = src.colwise() - src.rowwise().mean();
  const Eigen::Matrix3Xd dst_c = dst.colwise() - dst.rowwise().mean();
  const Eigen::Matrix3d cov = dst_c * src_c.transpose() / static_cast<double>(n);
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(cov).singularValues();
  // A rotation is only determined when the correlation has rank >= 2.
  if (!(sv[1] > 1e-12 * std::max(sv[0], 1e-300))) {
    throw std::invalid_argument("align: degenerate (collinear or coincident) points");
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, with_scale);
  Similarity sim;
  sim.scale = with_scale ? t.block<3, 1>(0, 0).norm() : 1.0;
  sim.rotation = t.topLeftCorner<3, 3>() / sim.scale;
  sim.translation = t.topRightCorner<3, 1>();
  return sim;
}

AteResult ComputeAte(const Trajectory& est, const Trajectory& gt,
                     bool with_scale, bool align, double max_dt) {
  const auto pairs = AssociateTimestamps(est, gt, max_dt);
  if (pairs.empty()) throw std::invalid_argument("ate: no associated poses");
  std::vector<Vec3> src, dst;
  for (const auto& [e, g] : pairs) {
    src.push_back(est[e].pose.translation);
    dst.push_back(gt[g].pose.translation);
  }
  AteResult result;
  result.num_pairs = static_cast<int>(pairs.size());
  if (align) result.alignment = AlignUmeyama(src, dst, with_scale);
  double sq = 0, sum = 0;
  for (size_t i = 0; i < src.size(); ++i) {
    const double err = (dst[i] - result.alignment.Apply(src[i])).norm();
    sq += err * err;
    sum += err;
  }
  result.rmse = std::sqrt(sq / src.size());
  result.mean = sum / src.size();
  return result;
}

namespace {

void CheckSameShape(const Image<float>& a, const Image<float>& b,
                    const char* what) {
  if (a.width() != b.width() || a.height() != b.height() ||
      a.channels() != b.channels()) {
    throw std::invalid_argument(std::string(what) + ": image shapes differ");
  }
}

}  // namespace

double L1DepthCm(const DepthImage& pred, const DepthImage& gt) {
  CheckSameShape(pred, gt, "l1 depth");
  double sum = 0;
  size_t count = 0;
  for (size_t i = 0; i < gt.data().size(); ++i) {
    if (gt.data()[i] == 0) continue;
    sum += std::abs(static_cast<double>(pred.data()[i]) - gt.data()[i]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("l1 depth: no valid gt pixel");
  return 100.0 * sum / count;
}

double DepthScaleFactor(const DepthImage& pred, const DepthImage& gt) {
  CheckSameShape(pred, gt, "depth scale");
  double pg = 0, pp = 0;
  for (size_t i = 0; i < gt.data().size(); ++i) {
    if (gt.data()[i] == 0) continue;
    const double p = pred.data()[i];
    pg += p * gt.data()[i];
    pp += p * p;
  }
  if (!(pp > 0)) throw std::invalid_argument("depth scale: prediction is zero on all valid pixels");
  return pg / pp;
}

DepthImage ScaleDepth(const DepthImage& depth, double scale) {
  DepthImage out = depth;
  for (float& d : out.data()) d = static_cast<float>(d * scale);
  return out;
}

double Psnr(const ColorImage& pred, const ColorImage& gt, double max_val) {
  CheckSameShape(pred, gt, "psnr");
  if (gt.data().empty()) throw std::invalid_argument("psnr: empty image");
  double sq = 0;
  for (size_t i = 0; i < gt.data().size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - gt.data()[i];
    sq += d * d;
  }
  const double mse = sq / gt.data().size();
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse);
}

namespace {

constexpr int kSsimWindow = 11;

using Plane = Eigen::ArrayXXd;  // rows = y, cols = x.

// Valid-mode separable filtering with the normalized Gaussian.
Plane FilterValid(const Plane& in, const Eigen::ArrayXd& kernel) {
  const Eigen::Index k = kernel.size();
  Plane rows(in.rows(), in.cols() - k + 1);
  for (Eigen::Index x = 0; x < rows.cols(); ++x) {
    rows.col(x) = Plane::Zero(in.rows(), 1);
    for (Eigen::Index t = 0; t < k; ++t) rows.col(x) += kernel[t] * in.col(x + t);
  }
  Plane out(in.rows() - k + 1, rows.cols());
  for (Eigen::Index y = 0; y < out.rows(); ++y) {
    out.row(y) = Plane::Zero(1, rows.cols());
    for (Eigen::Index t = 0; t < k; ++t) out.row(y) += kernel[t] * rows.row(y + t);
  }
  return out;
}

}  // namespace

double Ssim(const Image<float>& pred, const Image<float>& gt) {
  CheckSameShape(pred, gt, "ssim");
  if (pred.width() < kSsimWindow || pred.height() < kSsimWindow) {
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  }
  Eigen::ArrayXd kernel(kSsimWindow);
  for (int t = 0; t < kSsimWindow; ++t) {
    const double d = t - kSsimWindow / 2;
    kernel[t] = std::exp(-d * d / (2 * 1.5 * 1.5));
  }
  kernel /= kernel.sum();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int w = pred.width(), h = pred.height();
  double total = 0;
  for (int c = 0; c < pred.channels(); ++c) {
    Plane x(h, w), y(h, w);
    for (int r = 0; r < h; ++r) {
      for (int q = 0; q < w; ++q) {
        x(r, q) = pred.at(q, r, c);
        y(r, q) = gt.at(q, r, c);
      }
    }
    const Plane mx = FilterValid(x, kernel), my = FilterValid(y, kernel);
    const Plane sxx = FilterValid(x * x, kernel) - mx * mx;
    const Plane syy = FilterValid(y * y, kernel) - my * my;
    const Plane sxy = FilterValid(x * y, kernel) - mx * my;
    const Plane map = ((2 * mx * my + c1) * (2 * sxy + c2)) /
                      ((mx * mx + my * my + c1) * (sxx + syy + c2));
    total += map.mean();
  }
  return total / pred.channels();
}

SegmentationReport ReportFromConfusion(const Eigen::MatrixX<int64_t>& confusion,
                                       std::vector<int> class_ids,
                                       const SegmentationOptions& options) {
  const Eigen::Index n = static_cast<Eigen::Index>(class_ids.size());
  if (confusion.rows() != n || confusion.cols() != n + 1) {
    throw std::invalid_argument("segmentation: confusion matrix must be n x (n+1)");
  }
  SegmentationReport report;
  report.class_ids = std::move(class_ids);
  report.confusion = confusion;
  const int64_t total = confusion.sum();
  if (total == 0) throw std::invalid_argument("segmentation: no pixel with known ground truth");
  int64_t correct = 0;
  double recall_sum = 0, iou_sum = 0, fwiou = 0;
  int present = 0, iou_count = 0;
  for (Eigen::Index c = 0; c < n; ++c) {
    const int64_t tp = confusion(c, c);
    const int64_t gt_count = confusion.row(c).sum();
    const int64_t pred_count = confusion.col(c).sum();
    const int64_t uni = gt_count + pred_count - tp;
    correct += tp;
    const double iou = uni > 0 ? static_cast<double>(tp) / uni : 0.0;
    if (uni > 0) report.per_class_iou[report.class_ids[c]] = 100.0 * iou;
    if (gt_count > 0) {
      ++present;
      recall_sum += static_cast<double>(tp) / gt_count;
      fwiou += static_cast<double>(gt_count) / total * iou;
    }
    if (gt_count > 0 || (options.miou_over_all_classes && uni > 0)) {
      iou_sum += iou;
      ++iou_count;
    }
  }
  report.total_accuracy = 100.0 * correct / total;
  report.class_avg_accuracy = 100.0 * recall_sum / present;
  report.miou = 100.0 * iou_sum / iou_count;
  report.fwiou = 100.0 * fwiou;
  return report;
}

SegmentationReport EvaluateSegmentation(const LabelImage& pred,
                                        const LabelImage& gt,
                                        const Palette& palette,
                                        const SegmentationOptions& options) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw std::invalid_argument("segmentation: label image shapes differ");
  }
  std::vector<int> ids;
  std::unordered_map<int32_t, int> index;
  for (const auto& e : palette.entries()) {
    index[e.id] = static_cast<int>(ids.size());
    ids.push_back(e.id);
  }
  const int n = static_cast<int>(ids.size());
  auto lookup = [&](int32_t label) {
    if (label == kUnknownLabel) return n;
    auto it = index.find(label);
    if (it == index.end()) {
      throw std::invalid_argument("segmentation: label " + std::to_string(label) +
                                  " is not in the palette");
    }
    return it->second;
  };
  Eigen::MatrixX<int64_t> confusion = Eigen::MatrixX<int64_t>::Zero(n, n + 1);
  for (size_t i = 0; i < gt.data().size(); ++i) {
    const int g = lookup(gt.data()[i]);
    const int p = lookup(pred.data()[i]);
    if (g == n) continue;
    ++confusion(g, p);
  }
  return ReportFromConfusion(confusion, std::move(ids), options);
}

}  // namespace nidss
