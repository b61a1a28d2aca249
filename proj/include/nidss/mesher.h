// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <span>
#include <vector>

#include "nidss/common.h"
#include "nidss/field.h"

namespace nidss {

class KeyframeAtlas;

// Regular lattice of SDF samples including both bounding faces, so a grid
// with resolution n along an axis has n - 1 cells there.
struct SdfGrid {
  Vec3 bounds_min = Vec3::Zero();
  Vec3 bounds_max = Vec3::Ones();
  std::array<int, 3> resolution{2, 2, 2};
  // Row-major over (i, j, k): sample (i, j, k) is at (i * ny + j) * nz + k.
  std::vector<double> values;

  size_t Index(int i, int j, int k) const {
    return (static_cast<size_t>(i) * resolution[1] + j) * resolution[2] + k;
  }
  double at(int i, int j, int k) const { return values[Index(i, j, k)]; }
  Vec3 Point(int i, int j, int k) const;
  Vec3 CellSize() const;
  size_t num_samples() const {
    return static_cast<size_t>(resolution[0]) * resolution[1] * resolution[2];
  }

  // Throws std::invalid_argument on resolution < 2, an empty box, a size
  // mismatch or a non-finite value.
  void Validate() const;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  // Empty, or one color per vertex in [0, 1].
  std::vector<Vec3f> colors;

  bool empty() const { return triangles.empty(); }
  // Throws std::invalid_argument on out-of-range or repeated indices or a
  // color count that does not match.
  void Validate() const;
};

// Evaluates many points at once and returns one SDF value per point.
using SdfBatchFunction =
    std::function<std::vector<double>(std::span<const Vec3>)>;

// Calls `sdf` once per x slice, on exactly num_samples points in total.
SdfGrid SampleSdfGrid(const SdfBatchFunction& sdf, const Vec3& bounds_min,
                      const Vec3& bounds_max, std::array<int, 3> resolution);

// Samples a field at points given in its own frame.
SdfGrid SampleFieldSdf(const FieldParams<float>& params, const Vec3& bounds_min,
                       const Vec3& bounds_max, std::array<int, 3> resolution);

// Iso-surface with the standard 256-case tables and linear interpolation
// along cell edges. Vertices on a shared edge are emitted once, so the mesh
// is closed wherever the surface does not leave the grid. Triangles wind
// counter-clockwise seen from the side where values exceed `iso`. A grid
// without a crossing yields an empty mesh.
TriangleMesh MarchingCubes(const SdfGrid& grid, double iso = 0.0);

struct LocalMesh {
  TriangleMesh mesh;
  Vec3 center = Vec3::Zero();  // Origin of the mesh frame in world space.
};

// Translates each mesh into world space and concatenates them. Vertices are
// not welded across parts. Colors survive only when every non-empty part
// has them.
TriangleMesh MergeSubmeshes(std::span<const LocalMesh> parts);

// A cube field in its local frame.
struct MeshSource {
  const FieldParams<float>* params = nullptr;
  Vec3 center = Vec3::Zero();
  double edge = 5.0;
};

// Meshes each cube with `cells` cells per edge and merges the results.
// With `color`, vertices take the color head (or the semantic head when
// `semantic` is set).
TriangleMesh MeshFields(std::span<const MeshSource> sources, int cells,
                        bool color, bool semantic = false);

// MeshFields over the cubes of the atlas that hold keyframes.
TriangleMesh MeshAtlas(const KeyframeAtlas& atlas, int cells, bool color,
                       bool semantic = false);

// Sets per-vertex colors from a callback.
void ColorVertices(TriangleMesh* mesh,
                   const std::function<Vec3f(const Vec3&)>& color);

}  // namespace nidss
