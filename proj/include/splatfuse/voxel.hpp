#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "splatfuse/errors.hpp"
#include "splatfuse/geom.hpp"
#include "splatfuse/parallel.hpp"
#include "splatfuse/scene.hpp"

namespace splatfuse {

struct VoxelKey {
  int x = 0, y = 0, z = 0;
  bool operator==(const VoxelKey& o) const {
    return x == o.x && y == o.y && z == o.z;
  }
  bool operator<(const VoxelKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

struct VoxelKeyHash {
  size_t operator()(const VoxelKey& k) const {
    const std::uint64_t a = static_cast<std::uint32_t>(k.x);
    const std::uint64_t b = static_cast<std::uint32_t>(k.y);
    const std::uint64_t c = static_cast<std::uint32_t>(k.z);
    std::uint64_t h = a * 0x9e3779b97f4a7c15ULL;
    h ^= b * 0xc2b2ae3d27d4eb4fULL + (h << 6) + (h >> 2);
    h ^= c * 0x165667b19e3779f9ULL + (h << 6) + (h >> 2);
    return static_cast<size_t>(h);
  }
};

/// Sparse occupancy index over a regular lattice. Every occupied voxel maps
/// to the primitives whose centers fall inside it.
struct VoxelGrid {
  Vec3 origin;
  double voxel_size = 0.05;
  std::unordered_map<VoxelKey, std::vector<int>, VoxelKeyHash> cells;
  VoxelKey min_index{0, 0, 0}, max_index{-1, -1, -1};  // empty iff max < min

  bool empty() const { return cells.empty(); }
  bool occupied(const VoxelKey& k) const { return cells.count(k) > 0; }

  VoxelKey key_of(const Vec3& p) const {
    return {static_cast<int>(std::floor((p.x - origin.x) / voxel_size)),
            static_cast<int>(std::floor((p.y - origin.y) / voxel_size)),
            static_cast<int>(std::floor((p.z - origin.z) / voxel_size))};
  }

  void insert(const VoxelKey& k, int prim_index) {
    auto& list = cells[k];
    list.push_back(prim_index);
    if (cells.size() == 1 && list.size() == 1) {
      min_index = max_index = k;
    } else {
      min_index = {std::min(min_index.x, k.x), std::min(min_index.y, k.y),
                   std::min(min_index.z, k.z)};
      max_index = {std::max(max_index.x, k.x), std::max(max_index.y, k.y),
                   std::max(max_index.z, k.z)};
    }
  }

  std::vector<VoxelKey> sorted_keys() const {
    std::vector<VoxelKey> keys;
    keys.reserve(cells.size());
    for (const auto& [k, v] : cells) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    return keys;
  }

  bool same_frame(const VoxelGrid& o) const {
    return origin == o.origin && voxel_size == o.voxel_size;
  }
};

inline VoxelGrid voxelize(std::span<const Vec3> points, double voxel_size,
                          const Vec3& origin, std::span<const int> prim_indices = {}) {
  if (voxel_size <= 0.0) throw Error("voxelize: voxel_size must be positive");
  VoxelGrid g;
  g.origin = origin;
  g.voxel_size = voxel_size;
  for (size_t i = 0; i < points.size(); ++i) {
    const int prim = prim_indices.empty() ? static_cast<int>(i) : prim_indices[i];
    g.insert(g.key_of(points[i]), prim);
  }
  return g;
}

inline VoxelGrid voxelize(const GaussianScene& scene, double voxel_size,
                          const Vec3& origin) {
  std::vector<Vec3> pts;
  pts.reserve(scene.primitives.size());
  for (const auto& p : scene.primitives) pts.push_back(p.position);
  return voxelize(pts, voxel_size, origin);
}

inline VoxelGrid voxelize(const GaussianScene& scene, const ObjectSubset& subset,
                          double voxel_size, const Vec3& origin) {
  std::vector<Vec3> pts;
  pts.reserve(subset.indices.size());
  for (int i : subset.indices) pts.push_back(scene.primitives.at(i).position);
  return voxelize(pts, voxel_size, origin, subset.indices);
}

// ---------------------------------------------------------------------------
// 3D-DDA traversal
// ---------------------------------------------------------------------------

/// Walks the voxels intersected by `ray` inside the grid's occupied-index
/// bounding box, front to back. The visitor receives each voxel key and
/// returns false to stop the walk. Traversal is exact up to the usual
/// boundary tie-breaking of floor().
template <typename Visitor>
void traverse_ray(const VoxelGrid& grid, const Ray& ray, Visitor&& visit) {
  if (grid.empty()) return;
  const double vs = grid.voxel_size;
  const Vec3 lo{grid.origin.x + grid.min_index.x * vs,
                grid.origin.y + grid.min_index.y * vs,
                grid.origin.z + grid.min_index.z * vs};
  const Vec3 hi{grid.origin.x + (grid.max_index.x + 1) * vs,
                grid.origin.y + (grid.max_index.y + 1) * vs,
                grid.origin.z + (grid.max_index.z + 1) * vs};

  // Slab clip to the bbox.
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
  const double d[3] = {ray.direction.x, ray.direction.y, ray.direction.z};
  const double blo[3] = {lo.x, lo.y, lo.z};
  const double bhi[3] = {hi.x, hi.y, hi.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-300) {
      if (o[i] < blo[i] || o[i] > bhi[i]) return;
      continue;
    }
    double ta = (blo[i] - o[i]) / d[i];
    double tb = (bhi[i] - o[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 < t0) return;

  // Nudge off the boundary so the starting cell is well-defined.
  const double t_start = t0 + 1e-12 * std::max(1.0, std::abs(t0));
  const Vec3 start = ray.origin + ray.direction * t_start;
  int cell[3] = {static_cast<int>(std::floor((start.x - grid.origin.x) / vs)),
                 static_cast<int>(std::floor((start.y - grid.origin.y) / vs)),
                 static_cast<int>(std::floor((start.z - grid.origin.z) / vs))};

  const double gorigin[3] = {grid.origin.x, grid.origin.y, grid.origin.z};
  int step[3];
  double t_max[3], t_delta[3];
  for (int i = 0; i < 3; ++i) {
    if (d[i] > 0.0) {
      step[i] = 1;
      t_max[i] = (gorigin[i] + (cell[i] + 1) * vs - o[i]) / d[i];
      t_delta[i] = vs / d[i];
    } else if (d[i] < 0.0) {
      step[i] = -1;
      t_max[i] = (gorigin[i] + cell[i] * vs - o[i]) / d[i];
      t_delta[i] = -vs / d[i];
    } else {
      step[i] = 0;
      t_max[i] = std::numeric_limits<double>::infinity();
      t_delta[i] = std::numeric_limits<double>::infinity();
    }
  }

  const int lo_idx[3] = {grid.min_index.x, grid.min_index.y, grid.min_index.z};
  const int hi_idx[3] = {grid.max_index.x, grid.max_index.y, grid.max_index.z};
  double t = t_start;
  while (t <= t1) {
    if (cell[0] >= lo_idx[0] && cell[0] <= hi_idx[0] && cell[1] >= lo_idx[1] &&
        cell[1] <= hi_idx[1] && cell[2] >= lo_idx[2] && cell[2] <= hi_idx[2]) {
      if (!visit(VoxelKey{cell[0], cell[1], cell[2]})) return;
    }
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    t = t_max[axis];
    cell[axis] += step[axis];
    t_max[axis] += t_delta[axis];
    // Stepping is monotone per axis, so once an axis leaves the bbox in its
    // step direction the walk can never re-enter.
    if ((step[axis] > 0 && cell[axis] > hi_idx[axis]) ||
        (step[axis] < 0 && cell[axis] < lo_idx[axis])) {
      return;
    }
  }
}

struct VisibilityMask {
  std::unordered_set<VoxelKey, VoxelKeyHash> visible;

  bool contains(const VoxelKey& k) const { return visible.count(k) > 0; }
  size_t size() const { return visible.size(); }
  std::vector<VoxelKey> sorted() const {
    std::vector<VoxelKey> keys(visible.begin(), visible.end());
    std::sort(keys.begin(), keys.end());
    return keys;
  }
};

/// Marks, for every camera and every (strided) pixel, the first occupied
/// voxel hit by the primary ray. Occlusion aware: one voxel per ray.
inline VisibilityMask visibility(const VoxelGrid& grid,
                                 std::span<const Camera> cams, int ray_stride = 1) {
  if (ray_stride < 1) throw Error("visibility: ray_stride must be >= 1");
  std::vector<VisibilityMask> per_cam(cams.size());
  parallel_for(static_cast<int>(cams.size()), [&](int ci) {
    const Camera& cam = cams[ci];
    auto& mask = per_cam[ci];
    for (int y = 0; y < cam.height; y += ray_stride) {
      for (int x = 0; x < cam.width; x += ray_stride) {
        const Ray ray = pixel_ray(cam, x, y);
        traverse_ray(grid, ray, [&](const VoxelKey& k) {
          if (grid.occupied(k)) {
            mask.visible.insert(k);
            return false;  // first hit only
          }
          return true;
        });
      }
    }
  });
  VisibilityMask out;
  for (const auto& m : per_cam) {
    out.visible.insert(m.visible.begin(), m.visible.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fill set and gathering
// ---------------------------------------------------------------------------

/// Voxels occupied in the current-state reconstruction but not in the
/// transformed recurrent scene: regions needing fresh primitives (background
/// revealed by object motion plus newly appearing surfaces). The previous
/// object occupancy participates in the printed set expression but cancels;
/// it is kept in the signature for interface stability and frame checking.
inline std::vector<VoxelKey> fill_set(const VoxelGrid& v_current,
                                      const VoxelGrid& v_obj_prev,
                                      const VoxelGrid& v_recurrent) {
  if (!v_current.same_frame(v_recurrent) ||
      (!v_obj_prev.empty() && !v_current.same_frame(v_obj_prev))) {
    throw GridFrameMismatchError("fill_set: grids use different lattice frames");
  }
  std::vector<VoxelKey> out;
  for (const auto& [k, prims] : v_current.cells) {
    if (!v_recurrent.occupied(k)) out.push_back(k);
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Union of the grid's primitive lists over the given voxels, deduplicated,
/// ascending.
inline std::vector<int> primitives_in(const VoxelGrid& grid,
                                      std::span<const VoxelKey> voxels) {
  std::vector<int> out;
  for (const auto& k : voxels) {
    const auto it = grid.cells.find(k);
    if (it == grid.cells.end()) continue;
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace splatfuse
