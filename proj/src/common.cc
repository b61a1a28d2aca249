// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/common.h"

#include <algorithm>
#include <cmath>

namespace nidss {

Pose Pose::operator*(const Pose& other) const {
  Pose out;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = rotation * other.translation + translation;
  return out;
}

Pose Pose::Inverse() const {
  Pose out;
  out.rotation = rotation.conjugate();
  out.translation = -(out.rotation * translation);
  return out;
}

void Pose::Validate() const {
  if (!rotation.coeffs().allFinite() || !translation.allFinite()) {
    throw std::invalid_argument("Pose: non-finite value");
  }
  if (std::abs(rotation.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument("Pose: quaternion is not unit");
  }
}

Pose Pose::LookAt(const Vec3& eye, const Vec3& target, const Vec3& world_up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(world_up);
  if (right.norm() < 1e-9) {
    throw std::invalid_argument("Pose::LookAt: view direction parallel to up");
  }
  right.normalize();
  const Vec3 down = forward.cross(right);
  Eigen::Matrix3d r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  Pose pose;
  pose.rotation = Eigen::Quaterniond(r).normalized();
  pose.translation = eye;
  return pose;
}

double RotationAngle(const Pose& a, const Pose& b) {
  return a.rotation.angularDistance(b.rotation);
}

float QuantizeUnit8(float value) { return DecodeUnit8(EncodeUnit8(value)); }

float DecodeUnit8(uint8_t value) { return static_cast<float>(value) / 255.0f; }

uint8_t EncodeUnit8(float value) {
  const float clamped = std::clamp(value, 0.0f, 1.0f);
  return static_cast<uint8_t>(std::lround(clamped * 255.0f));
}

uint16_t EncodeDepth(float meters, int scale) {
  if (scale <= 0) throw std::invalid_argument("depth scale must be positive");
  if (!(meters >= 0.0f)) return 0;
  const long units = std::lround(static_cast<double>(meters) * scale);
  if (units > 65535) {
    throw std::out_of_range("depth " + std::to_string(meters) +
                            " m exceeds the 16-bit range at scale " +
                            std::to_string(scale));
  }
  return static_cast<uint16_t>(units);
}

float DecodeDepth(uint16_t units, int scale) {
  if (scale <= 0) throw std::invalid_argument("depth scale must be positive");
  return static_cast<float>(static_cast<double>(units) / scale);
}

uint64_t SplitMix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace nidss
