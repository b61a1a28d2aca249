// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nidss/common.h"

namespace nidss {

// Label of pixels without a known class; encoded as black.
inline constexpr int32_t kUnknownLabel = -1;

struct PaletteEntry {
  int32_t id = 0;
  std::string name;
  std::array<uint8_t, 3> rgb8{};

  Vec3f color() const {
    return {DecodeUnit8(rgb8[0]), DecodeUnit8(rgb8[1]), DecodeUnit8(rgb8[2])};
  }
};

// Ordered class list with 8-bit colors. Black is reserved for unknown.
class Palette {
 public:
  Palette() = default;
  // Throws std::invalid_argument on duplicate ids/colors, negative ids or a
  // class mapped to black.
  explicit Palette(std::vector<PaletteEntry> entries);

  const std::vector<PaletteEntry>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }
  bool Contains(int32_t id) const { return by_id_.count(id) != 0; }

  // Black for kUnknownLabel; throws std::out_of_range for other unknown ids.
  Vec3f ColorOf(int32_t label) const;
  // kUnknownLabel for exact black, the class id for an exact palette color,
  // nullopt otherwise.
  std::optional<int32_t> LabelOfExactColor(const Vec3f& color) const;
  bool IsUnknownColor(const Vec3f& color) const;

  double MinPairwiseDistance() const;

  bool operator==(const Palette& other) const;

 private:
  std::vector<PaletteEntry> entries_;
  std::unordered_map<int32_t, size_t> by_id_;
  std::unordered_map<uint32_t, int32_t> by_code_;
};

// Classes 0..num_classes-1: hue advances by the golden ratio conjugate while
// (saturation, value) cycles through three tiers. Separation is at least 0.2
// for up to 20 classes.
Palette BuildPalette(int num_classes);

// Throws std::out_of_range for labels outside the palette.
ColorImage LabelsToColors(const LabelImage& labels, const Palette& palette);

struct DecodedLabels {
  LabelImage labels;
  Image<float> confidence;  // 1 - distance / sqrt(3).
};

// Nearest palette color (Euclidean RGB). Among equidistant classes the lower
// id wins; black decodes to unknown only when strictly nearest.
DecodedLabels ColorsToLabels(const ColorImage& colors, const Palette& palette);

// Exact inverse of LabelsToColors; throws std::runtime_error on a color that
// is neither black nor in the palette.
LabelImage ExactColorsToLabels(const ColorImage& colors, const Palette& palette);

}  // namespace nidss
