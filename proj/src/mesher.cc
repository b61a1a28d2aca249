// Copyright Contributors to the nidss project
// SPDX-License-Identifier: Apache-2.0

#include "nidss/mesher.h"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "marching_cubes_tables.h"
#include "nidss/keyframe_atlas.h"

namespace nidss {

Vec3 SdfGrid::Point(int i, int j, int k) const {
  const Vec3 cell = CellSize();
  return bounds_min + Vec3(i * cell.x(), j * cell.y(), k * cell.z());
}

Vec3 SdfGrid::CellSize() const {
  const Vec3 extent = bounds_max - bounds_min;
  return Vec3(extent.x() / (resolution[0] - 1), extent.y() / (resolution[1] - 1),
              extent.z() / (resolution[2] - 1));
}

void SdfGrid::Validate() const {
  for (int a = 0; a < 3; ++a) {
    if (resolution[a] < 2) {
      throw std::invalid_argument("sdf grid: resolution must be >= 2 per axis");
    }
    if (!(bounds_max[a] > bounds_min[a]) || !std::isfinite(bounds_min[a]) ||
        !std::isfinite(bounds_max[a])) {
      throw std::invalid_argument("sdf grid: empty or non-finite bounds");
    }
  }
  if (values.size() != num_samples()) {
    throw std::invalid_argument("sdf grid: value count does not match resolution");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("sdf grid: non-finite value");
  }
}

void TriangleMesh::Validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& t : triangles) {
    for (int v : t) {
      if (v < 0 || v >= n) throw std::invalid_argument("mesh: index out of range");
    }
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
      throw std::invalid_argument("mesh: triangle repeats a vertex");
    }
  }
  if (!colors.empty() && colors.size() != vertices.size()) {
    throw std::invalid_argument("mesh: color count does not match vertices");
  }
}

SdfGrid SampleSdfGrid(const SdfBatchFunction& sdf, const Vec3& bounds_min,
                      const Vec3& bounds_max, std::array<int, 3> resolution) {
  SdfGrid grid;
  grid.bounds_min = bounds_min;
  grid.bounds_max = bounds_max;
  grid.resolution = resolution;
  for (int a = 0; a < 3; ++a) {
    if (resolution[a] < 2) {
      throw std::invalid_argument("sdf grid: resolution must be >= 2 per axis");
    }
    if (!(bounds_max[a] > bounds_min[a])) {
      throw std::invalid_argument("sdf grid: empty bounds");
    }
  }
  grid.values.resize(grid.num_samples());
  const size_t slice = static_cast<size_t>(resolution[1]) * resolution[2];
  std::vector<Vec3> points(slice);
  for (int i = 0; i < resolution[0]; ++i) {
    for (int j = 0; j < resolution[1]; ++j) {
      for (int k = 0; k < resolution[2]; ++k) {
        points[static_cast<size_t>(j) * resolution[2] + k] = grid.Point(i, j, k);
      }
    }
    const std::vector<double> values = sdf(points);
    if (values.size() != slice) {
      throw std::runtime_error("sdf grid: callback returned " +
                               std::to_string(values.size()) + " values for " +
                               std::to_string(slice) + " points");
    }
    std::copy(values.begin(), values.end(), grid.values.begin() + i * slice);
  }
  grid.Validate();
  return grid;
}

SdfGrid SampleFieldSdf(const FieldParams<float>& params, const Vec3& bounds_min,
                       const Vec3& bounds_max, std::array<int, 3> resolution) {
  return SampleSdfGrid(
      [&params](std::span<const Vec3> points) {
        return FieldSdf<float>(points, params);
      },
      bounds_min, bounds_max, resolution);
}

TriangleMesh MarchingCubes(const SdfGrid& grid, double iso) {
  grid.Validate();
  const auto [nx, ny, nz] = grid.resolution;
  TriangleMesh mesh;
  // Edge key: lattice index of the lower endpoint times 3 plus the axis.
  std::unordered_map<uint64_t, int> edge_vertex;
  auto vertex_on = [&](int i, int j, int k, int a, int b) {
    const int* ca = mc::kCorner[a];
    const int* cb = mc::kCorner[b];
    int ia = i + ca[0], ja = j + ca[1], ka = k + ca[2];
    int ib = i + cb[0], jb = j + cb[1], kb = k + cb[2];
    if (ia + ja + ka > ib + jb + kb) {
      std::swap(ia, ib);
      std::swap(ja, jb);
      std::swap(ka, kb);
    }
    const int axis = ib != ia ? 0 : (jb != ja ? 1 : 2);
    const uint64_t key = grid.Index(ia, ja, ka) * 3 + axis;
    auto [it, inserted] = edge_vertex.try_emplace(key, 0);
    if (!inserted) return it->second;
    const double va = grid.at(ia, ja, ka), vb = grid.at(ib, jb, kb);
    const double t = (iso - va) / (vb - va);
    const Vec3 pa = grid.Point(ia, ja, ka), pb = grid.Point(ib, jb, kb);
    it->second = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(pa + t * (pb - pa));
    return it->second;
  };
  for (int i = 0; i + 1 < nx; ++i) {
    for (int j = 0; j + 1 < ny; ++j) {
      for (int k = 0; k + 1 < nz; ++k) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const int* o = mc::kCorner[c];
          if (grid.at(i + o[0], j + o[1], k + o[2]) < iso) cube |= 1 << c;
        }
        if (mc::kEdgeTable[cube] == 0) continue;
        const int8_t* tri = mc::kTriTable[cube];
        for (int t = 0; tri[t] != -1; t += 3) {
          std::array<int, 3> ids;
          for (int v = 0; v < 3; ++v) {
            const int* e = mc::kEdge[tri[t + v]];
            ids[v] = vertex_on(i, j, k, e[0], e[1]);
          }
          // The table winds toward the low side; flip to face outward.
          mesh.triangles.push_back({ids[0], ids[2], ids[1]});
        }
      }
    }
  }
  return mesh;
}

TriangleMesh MergeSubmeshes(std::span<const LocalMesh> parts) {
  TriangleMesh merged;
  bool colored = true;
  for (const auto& part : parts) {
    if (!part.mesh.vertices.empty() && part.mesh.colors.empty()) colored = false;
  }
  for (const auto& part : parts) {
    const int offset = static_cast<int>(merged.vertices.size());
    for (const Vec3& v : part.mesh.vertices) {
      merged.vertices.push_back(LocalToGlobal(v, part.center));
    }
    for (const auto& t : part.mesh.triangles) {
      merged.triangles.push_back({t[0] + offset, t[1] + offset, t[2] + offset});
    }
    if (colored) {
      merged.colors.insert(merged.colors.end(), part.mesh.colors.begin(),
                           part.mesh.colors.end());
    }
  }
  return merged;
}

void ColorVertices(TriangleMesh* mesh,
                   const std::function<Vec3f(const Vec3&)>& color) {
  mesh->colors.resize(mesh->vertices.size());
  for (size_t v = 0; v < mesh->vertices.size(); ++v) {
    mesh->colors[v] = color(mesh->vertices[v]);
  }
}

TriangleMesh MeshFields(std::span<const MeshSource> sources, int cells,
                        bool color, bool semantic) {
  if (cells < 1) throw std::invalid_argument("mesh: cells must be >= 1");
  std::vector<LocalMesh> parts;
  for (const MeshSource& source : sources) {
    const FieldParams<float>& field = *source.params;
    const Vec3 half = Vec3::Constant(source.edge / 2);
    LocalMesh part;
    part.center = source.center;
    part.mesh = MarchingCubes(
        SampleFieldSdf(field, -half, half, {cells + 1, cells + 1, cells + 1}));
    if (color) {
      ColorVertices(&part.mesh, [&](const Vec3& p) {
        const FieldOutput<float> out = FieldForward<float>(p, field);
        return semantic ? out.sem_rgb : out.rgb;
      });
    }
    parts.push_back(std::move(part));
  }
  return MergeSubmeshes(parts);
}

TriangleMesh MeshAtlas(const KeyframeAtlas& atlas, int cells, bool color,
                       bool semantic) {
  std::vector<MeshSource> sources;
  for (int s = 0; s < atlas.num_subspaces(); ++s) {
    const Subspace& sub = atlas.subspace(s);
    if (!sub.keyframe_ids.empty()) {
      sources.push_back({sub.field.get(), sub.center, sub.edge});
    }
  }
  return MeshFields(sources, cells, color, semantic);
}

}  // namespace nidss
