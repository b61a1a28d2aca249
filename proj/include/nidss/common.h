// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace nidss {

using Vec3 = Eigen::Vector3d;
using Vec3f = Eigen::Vector3f;

// Rigid camera-to-world transform.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator*(const Vec3& point) const {
    return rotation * point + translation;
  }
  Pose operator*(const Pose& other) const;
  Pose Inverse() const;

  // Throws std::invalid_argument unless the quaternion is unit within 1e-9
  // and all entries are finite.
  void Validate() const;

  // OpenCV camera convention: x right, y down, z forward.
  static Pose LookAt(const Vec3& eye, const Vec3& target,
                     const Vec3& world_up = Vec3::UnitZ());
};

struct TimedPose {
  double timestamp = 0;  // Seconds.
  Pose pose;
};

// Angle of the relative rotation between two poses, in radians.
double RotationAngle(const Pose& a, const Pose& b);

// Dense interleaved raster.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, T fill = T{})
      : width_(width),
        height_(height),
        channels_(channels),
        data_(static_cast<size_t>(width) * height * channels, fill) {
    if (width < 0 || height < 0 || channels <= 0) {
      throw std::invalid_argument("Image: invalid dimensions");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  size_t num_pixels() const { return static_cast<size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y, int c = 0) {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }
  const T& at(int x, int y, int c = 0) const {
    return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<T> pixel(size_t index) {
    return {data_.data() + index * channels_, static_cast<size_t>(channels_)};
  }
  std::span<const T> pixel(size_t index) const {
    return {data_.data() + index * channels_, static_cast<size_t>(channels_)};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  template <typename U>
  bool SameShape(const Image<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const Image& other) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

using ColorImage = Image<float>;   // 3 channels in [0, 1].
using DepthImage = Image<float>;   // Meters; 0 marks an invalid pixel.
using LabelImage = Image<int32_t>;

inline Vec3f ColorAt(const ColorImage& image, size_t index) {
  const auto p = image.pixel(index);
  return {p[0], p[1], p[2]};
}
inline void SetColor(ColorImage& image, size_t index, const Vec3f& color) {
  auto p = image.pixel(index);
  p[0] = color.x();
  p[1] = color.y();
  p[2] = color.z();
}

// Values exactly representable by the on-disk encodings, so that write/read
// round trips are bitwise stable.
float QuantizeUnit8(float value);
float DecodeUnit8(uint8_t value);
uint8_t EncodeUnit8(float value);

// Depth in meters <-> 16-bit units at `scale` units per meter. Encoding
// throws std::out_of_range past 65535 units.
uint16_t EncodeDepth(float meters, int scale);
float DecodeDepth(uint16_t units, int scale);
inline float QuantizeDepth(float meters, int scale) {
  return DecodeDepth(EncodeDepth(meters, scale), scale);
}

// Stateless 64-bit mixer; used to derive independent per-ray and
// per-iteration streams from a single run seed.
uint64_t SplitMix64(uint64_t x);
inline uint64_t DeriveSeed(uint64_t seed, uint64_t stream) {
  return SplitMix64(seed ^ SplitMix64(stream + 0x9e3779b97f4a7c15ULL));
}

}  // namespace nidss
