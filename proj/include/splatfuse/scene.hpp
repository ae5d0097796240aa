#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "splatfuse/errors.hpp"
#include "splatfuse/geom.hpp"
#include "splatfuse/image.hpp"

namespace splatfuse {

/// The scene atom: an isotropic 3D Gaussian blob.
struct GaussianPrimitive {
  Vec3 position;          // center, meters
  double scale = 0.01;    // isotropic standard deviation, meters, > 0
  Vec3 color{0.5, 0.5, 0.5};  // rgb in [0,1]
  double opacity = 0.5;   // in (0,1]
  int instance_id = -1;   // -1 = unlabeled

  bool operator==(const GaussianPrimitive& o) const {
    return position == o.position && scale == o.scale && color == o.color &&
           opacity == o.opacity && instance_id == o.instance_id;
  }
};

/// Ordered list of primitives; the ordering is the canonical identity of
/// each primitive within one state.
struct GaussianScene {
  std::vector<GaussianPrimitive> primitives;
  int state_index = 0;

  size_t size() const { return primitives.size(); }
};

/// A set of primitive indices belonging to one object.
struct ObjectSubset {
  int object_id = -1;
  std::vector<int> indices;  // sorted ascending, duplicate-free
};

// ---------------------------------------------------------------------------
// Mask-based 3D segmentation (projection voting)
// ---------------------------------------------------------------------------

/// Selects the primitives whose projected center lands inside the mask in at
/// least vote_fraction of the views where it projects in-bounds. Primitives
/// visible in no view are excluded. Voting alone also captures occluded
/// geometry directly behind the object (e.g. the floor patch underneath), so
/// when the voted set has a dominant color mode, primitives far from it are
/// dropped; this is the appearance-affinity half of the graph-cut style
/// segmentation the voting stands in for. Throws EmptySelectionError when
/// nothing qualifies.
inline ObjectSubset segment_by_masks(const GaussianScene& scene,
                                     std::span<const Mask> masks,
                                     std::span<const Camera> cams,
                                     double vote_fraction = 0.6,
                                     double color_tolerance = 0.2) {
  if (masks.size() != cams.size()) {
    throw DimensionMismatchError("segment_by_masks: masks/cams count mismatch");
  }
  if (vote_fraction <= 0.0 || vote_fraction > 1.0) {
    throw Error("segment_by_masks: vote_fraction must be in (0, 1]");
  }
  ObjectSubset subset;
  for (int i = 0; i < static_cast<int>(scene.primitives.size()); ++i) {
    int in_bounds = 0, hits = 0;
    for (size_t v = 0; v < cams.size(); ++v) {
      const auto proj = project(cams[v], scene.primitives[i].position);
      if (!proj) continue;
      const int px = static_cast<int>(std::floor(proj->u));
      const int py = static_cast<int>(std::floor(proj->v));
      if (px < 0 || px >= cams[v].width || py < 0 || py >= cams[v].height) continue;
      ++in_bounds;
      if (masks[v].at(px, py)) ++hits;
    }
    if (in_bounds == 0) continue;
    if (static_cast<double>(hits) >= vote_fraction * in_bounds) {
      subset.indices.push_back(i);
    }
  }
  if (subset.indices.empty()) {
    throw EmptySelectionError("segment_by_masks: no primitive selected");
  }

  if (color_tolerance > 0.0 && subset.indices.size() >= 4) {
    auto channel_median = [&](int c) {
      std::vector<double> vals;
      vals.reserve(subset.indices.size());
      for (int i : subset.indices) {
        const Vec3& col = scene.primitives[i].color;
        vals.push_back(c == 0 ? col.x : (c == 1 ? col.y : col.z));
      }
      std::nth_element(vals.begin(), vals.begin() + vals.size() / 2, vals.end());
      return vals[vals.size() / 2];
    };
    const Vec3 med{channel_median(0), channel_median(1), channel_median(2)};
    std::vector<int> coherent;
    for (int i : subset.indices) {
      const Vec3 d = scene.primitives[i].color - med;
      if (std::max({std::abs(d.x), std::abs(d.y), std::abs(d.z)}) <=
          color_tolerance) {
        coherent.push_back(i);
      }
    }
    // Apply only when a dominant mode exists; an incoherent selection (e.g.
    // a full-image mask over arbitrary content) is returned as voted.
    if (coherent.size() * 2 >= subset.indices.size()) {
      subset.indices = std::move(coherent);
    }
  }
  return subset;
}

// ---------------------------------------------------------------------------
// Rigid re-posing of a subset
// ---------------------------------------------------------------------------

inline void apply_transform_in_place(GaussianScene& scene,
                                     const ObjectSubset& subset,
                                     const RigidTransform& t) {
  for (int i : subset.indices) {
    scene.primitives.at(static_cast<size_t>(i)).position =
        t.apply(scene.primitives[static_cast<size_t>(i)].position);
  }
}

/// Positions of the subset mapped by t; every other field and every other
/// primitive bit-identical.
inline GaussianScene apply_transform(const GaussianScene& scene,
                                     const ObjectSubset& subset,
                                     const RigidTransform& t) {
  GaussianScene out = scene;
  apply_transform_in_place(out, subset, t);
  return out;
}

inline std::vector<Vec3> subset_centers(const GaussianScene& scene,
                                        const ObjectSubset& subset) {
  std::vector<Vec3> pts;
  pts.reserve(subset.indices.size());
  for (int i : subset.indices) pts.push_back(scene.primitives.at(i).position);
  return pts;
}

inline Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 c;
  for (const auto& p : pts) c += p;
  return pts.empty() ? c : c / static_cast<double>(pts.size());
}

/// Subset of all primitives carrying the given instance label.
inline ObjectSubset subset_by_label(const GaussianScene& scene, int instance_id) {
  ObjectSubset s;
  s.object_id = instance_id;
  for (int i = 0; i < static_cast<int>(scene.primitives.size()); ++i) {
    if (scene.primitives[i].instance_id == instance_id) s.indices.push_back(i);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Persistence (.gsc): line-oriented text, full double precision
// ---------------------------------------------------------------------------

inline void save_scene(const GaussianScene& scene, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("save_scene: cannot open " + path);
  f << "gsc 1\n";
  f << scene.primitives.size() << " " << scene.state_index << "\n";
  char line[320];
  for (const auto& p : scene.primitives) {
    std::snprintf(line, sizeof(line),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %d\n",
                  p.position.x, p.position.y, p.position.z, p.scale, p.color.x,
                  p.color.y, p.color.z, p.opacity, p.instance_id);
    f << line;
  }
  if (!f) throw Error("save_scene: write failed for " + path);
}

inline GaussianScene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_scene: cannot open " + path);
  std::string header;
  std::getline(f, header);
  if (header != "gsc 1") {
    throw ParseError("load_scene: " + path + ": bad magic line '" + header + "'");
  }
  size_t count = 0;
  GaussianScene scene;
  {
    std::string line;
    if (!std::getline(f, line)) {
      throw ParseError("load_scene: " + path + ": missing count line");
    }
    std::istringstream ss(line);
    if (!(ss >> count >> scene.state_index)) {
      throw ParseError("load_scene: " + path + ": malformed count line '" + line + "'");
    }
  }
  scene.primitives.reserve(count);
  std::string line;
  for (size_t i = 0; i < count; ++i) {
    if (!std::getline(f, line)) {
      throw ParseError("load_scene: " + path + ": truncated at record " +
                       std::to_string(i) + " of " + std::to_string(count));
    }
    GaussianPrimitive p;
    std::istringstream ss(line);
    if (!(ss >> p.position.x >> p.position.y >> p.position.z >> p.scale >>
          p.color.x >> p.color.y >> p.color.z >> p.opacity >> p.instance_id)) {
      throw ParseError("load_scene: " + path + ": malformed record " +
                       std::to_string(i) + ": '" + line + "'");
    }
    if (p.scale <= 0.0 || p.opacity <= 0.0 || p.opacity > 1.0) {
      throw ParseError("load_scene: " + path + ": invalid scale/opacity in record " +
                       std::to_string(i));
    }
    scene.primitives.push_back(p);
  }
  return scene;
}

}  // namespace splatfuse
