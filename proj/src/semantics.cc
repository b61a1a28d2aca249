// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/semantics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nidss {
namespace {

uint32_t PackColor(const std::array<uint8_t, 3>& c) {
  return (uint32_t{c[0]} << 16) | (uint32_t{c[1]} << 8) | c[2];
}

// HSV in [0,1] to RGB in [0,1].
Vec3 HsvToRgb(double h, double s, double v) {
  const double hh = std::fmod(h, 1.0) * 6.0;
  const int sector = static_cast<int>(std::floor(hh)) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

Palette::Palette(std::vector<PaletteEntry> entries) : entries_(std::move(entries)) {
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.id < 0) throw std::invalid_argument("palette: negative class id");
    const uint32_t code = PackColor(e.rgb8);
    if (code == 0) {
      throw std::invalid_argument("palette: black is reserved for unknown");
    }
    if (!by_id_.emplace(e.id, i).second) {
      throw std::invalid_argument("palette: duplicate class id " +
                                  std::to_string(e.id));
    }
    if (!by_code_.emplace(code, e.id).second) {
      throw std::invalid_argument("palette: duplicate color for class " +
                                  std::to_string(e.id));
    }
  }
}

Vec3f Palette::ColorOf(int32_t label) const {
  if (label == kUnknownLabel) return Vec3f::Zero();
  auto it = by_id_.find(label);
  if (it == by_id_.end()) {
    throw std::out_of_range("palette: label " + std::to_string(label) +
                            " not in palette");
  }
  return entries_[it->second].color();
}

std::optional<int32_t> Palette::LabelOfExactColor(const Vec3f& color) const {
  std::array<uint8_t, 3> rgb8;
  for (int c = 0; c < 3; ++c) {
    rgb8[c] = EncodeUnit8(color[c]);
    if (DecodeUnit8(rgb8[c]) != color[c]) return std::nullopt;
  }
  const uint32_t code = PackColor(rgb8);
  if (code == 0) return kUnknownLabel;
  auto it = by_code_.find(code);
  if (it == by_code_.end()) return std::nullopt;
  return it->second;
}

bool Palette::IsUnknownColor(const Vec3f& color) const {
  return color.x() == 0.0f && color.y() == 0.0f && color.z() == 0.0f;
}

double Palette::MinPairwiseDistance() const {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < entries_.size(); ++i) {
    for (size_t j = i + 1; j < entries_.size(); ++j) {
      best = std::min(
          best, static_cast<double>(
                    (entries_[i].color() - entries_[j].color()).norm()));
    }
  }
  return best;
}

bool Palette::operator==(const Palette& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.id != b.id || a.name != b.name || a.rgb8 != b.rgb8) return false;
  }
  return true;
}

Palette BuildPalette(int num_classes) {
  if (num_classes < 1 || num_classes > 255) {
    throw std::invalid_argument("BuildPalette: num_classes must be in [1, 255]");
  }
  constexpr double kGoldenConjugate = 0.618033988749894848;
  constexpr std::array<std::pair<double, double>, 3> kTiers = {
      {{1.0, 1.0}, {1.0, 0.55}, {0.5, 1.0}}};
  std::vector<PaletteEntry> entries;
  std::unordered_map<uint32_t, int> used;
  for (int k = 0; k < num_classes; ++k) {
    const auto [s, v] = kTiers[k % kTiers.size()];
    double hue = std::fmod(k * kGoldenConjugate, 1.0);
    PaletteEntry e;
    e.id = k;
    e.name = "class_" + std::to_string(k);
    // Past a few dozen classes 8-bit quantization can collide; nudge the hue
    // until the color is unique.
    for (;;) {
      const Vec3 rgb = HsvToRgb(hue, s, v);
      for (int c = 0; c < 3; ++c) e.rgb8[c] = EncodeUnit8(static_cast<float>(rgb[c]));
      if (used.emplace(PackColor(e.rgb8), k).second) break;
      hue = std::fmod(hue + 1.0 / 1536.0, 1.0);
    }
    entries.push_back(std::move(e));
  }
  return Palette(std::move(entries));
}

ColorImage LabelsToColors(const LabelImage& labels, const Palette& palette) {
  ColorImage out(labels.width(), labels.height(), 3);
  for (size_t i = 0; i < labels.num_pixels(); ++i) {
    SetColor(out, i, palette.ColorOf(labels.data()[i]));
  }
  return out;
}

DecodedLabels ColorsToLabels(const ColorImage& colors, const Palette& palette) {
  static const double kMaxDistance = std::sqrt(3.0);
  DecodedLabels out{LabelImage(colors.width(), colors.height(), 1),
                    Image<float>(colors.width(), colors.height(), 1)};
  std::vector<const PaletteEntry*> ordered;
  for (const auto& e : palette.entries()) ordered.push_back(&e);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->id < b->id; });
  std::vector<Vec3f> ordered_colors;
  for (const auto* e : ordered) ordered_colors.push_back(e->color());

  for (size_t i = 0; i < colors.num_pixels(); ++i) {
    const Vec3f c = ColorAt(colors, i);
    int32_t best = kUnknownLabel;
    float best_dist = std::numeric_limits<float>::infinity();
    for (size_t k = 0; k < ordered.size(); ++k) {
      const float d = (c - ordered_colors[k]).norm();
      if (d < best_dist) {
        best_dist = d;
        best = ordered[k]->id;
      }
    }
    const float black = c.norm();
    if (black < best_dist) {
      best_dist = black;
      best = kUnknownLabel;
    }
    out.labels.data()[i] = best;
    out.confidence.data()[i] =
        static_cast<float>(1.0 - best_dist / kMaxDistance);
  }
  return out;
}

LabelImage ExactColorsToLabels(const ColorImage& colors, const Palette& palette) {
  LabelImage out(colors.width(), colors.height(), 1);
  for (size_t i = 0; i < colors.num_pixels(); ++i) {
    const auto label = palette.LabelOfExactColor(ColorAt(colors, i));
    if (!label) {
      throw std::runtime_error("semantic color at pixel " + std::to_string(i) +
                               " is neither black nor a palette color");
    }
    out.data()[i] = *label;
  }
  return out;
}

}  // namespace nidss
