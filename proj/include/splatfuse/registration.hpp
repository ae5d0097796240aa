#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "splatfuse/errors.hpp"
#include "splatfuse/geom.hpp"
#include "splatfuse/render.hpp"
#include "splatfuse/scene.hpp"

namespace splatfuse {

// ---------------------------------------------------------------------------
// Nearest-neighbor index: brute force at desk scale, uniform grid above.
// ---------------------------------------------------------------------------

class NnIndex {
 public:
  static constexpr size_t kBruteForceLimit = 20000;

  explicit NnIndex(std::span<const Vec3> points, double cell_size = 0.1)
      : points_(points.begin(), points.end()), cell_(cell_size) {
    if (points_.size() > kBruteForceLimit) {
      for (size_t i = 0; i < points_.size(); ++i) {
        grid_[cell_key(points_[i])].push_back(static_cast<int>(i));
      }
    }
  }

  /// Index of the nearest point, or -1 when max_dist is finite and nothing
  /// lies within it.
  int nearest(const Vec3& q,
              double max_dist = std::numeric_limits<double>::infinity()) const {
    if (points_.empty()) return -1;
    if (grid_.empty()) return brute(q, max_dist);

    const double md2 = max_dist * max_dist;
    int best = -1;
    double best_d2 = md2;
    // Expanding shells around the query cell; stop once the shell cannot
    // contain anything closer than the current best.
    const auto center = cell_key(q);
    for (int ring = 0;; ++ring) {
      const double ring_min = (ring - 1) * cell_;
      if (best >= 0 && ring_min * ring_min > best_d2) break;
      if (std::isfinite(max_dist) && ring_min > max_dist) break;
      if (ring > 64 && best >= 0) break;
      if (ring > 4096) break;  // empty space guard
      bool any_cell = false;
      for (int dx = -ring; dx <= ring; ++dx)
        for (int dy = -ring; dy <= ring; ++dy)
          for (int dz = -ring; dz <= ring; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            const auto it = grid_.find({center.x + dx, center.y + dy, center.z + dz});
            if (it == grid_.end()) continue;
            any_cell = true;
            for (int i : it->second) {
              const double d2 = (points_[i] - q).squared_norm();
              if (d2 < best_d2 || (best < 0 && d2 <= best_d2)) {
                best_d2 = d2;
                best = i;
              }
            }
          }
      (void)any_cell;
    }
    return best;
  }

  const Vec3& point(int i) const { return points_[i]; }
  size_t size() const { return points_.size(); }

 private:
  struct Key {
    int x, y, z;
    bool operator==(const Key& o) const { return x == o.x && y == o.y && z == o.z; }
  };
  struct KeyHash {
    size_t operator()(const Key& k) const {
      return static_cast<size_t>(k.x * 73856093) ^ static_cast<size_t>(k.y * 19349663) ^
             static_cast<size_t>(k.z * 83492791);
    }
  };

  Key cell_key(const Vec3& p) const {
    return {static_cast<int>(std::floor(p.x / cell_)),
            static_cast<int>(std::floor(p.y / cell_)),
            static_cast<int>(std::floor(p.z / cell_))};
  }

  int brute(const Vec3& q, double max_dist) const {
    int best = -1;
    double best_d2 =
        std::isfinite(max_dist) ? max_dist * max_dist : std::numeric_limits<double>::max();
    for (size_t i = 0; i < points_.size(); ++i) {
      const double d2 = (points_[i] - q).squared_norm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = static_cast<int>(i);
      }
    }
    if (best < 0 && !std::isfinite(max_dist)) best = 0;
    return best;
  }

  std::vector<Vec3> points_;
  double cell_;
  std::unordered_map<Key, std::vector<int>, KeyHash> grid_;
};

// ---------------------------------------------------------------------------
// ICP
// ---------------------------------------------------------------------------

struct ICPConfig {
  int max_iterations = 50;
  double convergence_tol = 1e-6;        // mean correspondence distance change, m
  double max_correspondence_dist = 0.3;  // m
};

namespace registration_detail {

/// Closed-form best-fit rigid transform mapping src onto dst (Kabsch).
/// Throws when the correspondence geometry is rank-deficient (collinear).
inline RigidTransform best_fit_rigid(std::span<const Vec3> src,
                                     std::span<const Vec3> dst) {
  const size_t n = src.size();
  Vec3 cs, cd;
  for (size_t i = 0; i < n; ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs = cs / static_cast<double>(n);
  cd = cd / static_cast<double>(n);

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Vec3 a = src[i] - cs, b = dst[i] - cd;
    h(0, 0) += a.x * b.x;
    h(0, 1) += a.x * b.y;
    h(0, 2) += a.x * b.z;
    h(1, 0) += a.y * b.x;
    h(1, 1) += a.y * b.y;
    h(1, 2) += a.y * b.z;
    h(2, 0) += a.z * b.x;
    h(2, 1) += a.z * b.y;
    h(2, 2) += a.z * b.z;
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300)) {
    throw DegenerateGeometryError(
        "best_fit_rigid: correspondences are collinear (rank-deficient)");
  }
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();

  RigidTransform t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t.rotation(i, j) = r(i, j);
  t.translation = cd - t.rotation * cs;
  return t;
}

}  // namespace registration_detail

/// Iterative closest point: nearest-neighbor correspondences within
/// max_correspondence_dist, closed-form SVD fit, until the mean
/// correspondence distance stops changing. Returns the composed transform
/// mapping src toward dst.
inline RigidTransform icp(std::span<const Vec3> src, std::span<const Vec3> dst,
                          const RigidTransform& init = RigidTransform::identity(),
                          const ICPConfig& cfg = {}) {
  if (src.size() < 3 || dst.size() < 3) {
    throw DegenerateGeometryError("icp: need at least 3 points on each side");
  }
  NnIndex index(dst, std::max(1e-6, cfg.max_correspondence_dist));
  RigidTransform t = init;
  double prev_mean = std::numeric_limits<double>::infinity();

  std::vector<Vec3> moved, matched;
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    moved.clear();
    matched.clear();
    double dist_sum = 0.0;
    for (const Vec3& p : src) {
      const Vec3 q = t.apply(p);
      const int j = index.nearest(q, cfg.max_correspondence_dist);
      if (j < 0) continue;
      moved.push_back(q);
      matched.push_back(index.point(j));
      dist_sum += (q - index.point(j)).norm();
    }
    if (moved.size() < 3) {
      throw DegenerateGeometryError("icp: fewer than 3 correspondences in range");
    }
    const double mean_dist = dist_sum / static_cast<double>(moved.size());
    if (std::abs(prev_mean - mean_dist) < cfg.convergence_tol) break;
    prev_mean = mean_dist;
    const RigidTransform delta = registration_detail::best_fit_rigid(moved, matched);
    t = compose(delta, t);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Lie-algebra photometric/geometric refinement
// ---------------------------------------------------------------------------

struct RefineConfig {
  int iterations = 1000;
  double initial_step = 1e-3;
  double min_step = 1e-7;
  double max_step = 0.05;
  double w_photo = 1.0;
  double w_geom = 0.1;
  // The geometric term anchors the coarse basin but its targets come from a
  // fuzzy reconstruction, so its weight decays linearly to zero over this
  // fraction of the run and the photometric term polishes unbiased.
  double geom_decay_fraction = 0.6;
  int mask_dilation_px = 10;
  double silhouette_threshold = 0.05;
  int max_floored_rejections = 30;  // early exit once the step is pinned at min
  double converge_rel_improvement = 1e-7;  // stop when accepted gains stay below
  int converge_patience = 8;               // ... this for this many accepts
  Vec3 background{0, 0, 0};
};

struct AlignmentResult {
  RigidTransform t_coarse;
  RigidTransform t_fine;
  double final_loss = 0.0;
  int iterations_used = 0;
};

namespace registration_detail {

struct ChamferEval {
  double loss = 0.0;
  Vec3 g_rho;
  Vec3 g_omega;
};

/// One-directional chamfer from the transformed subset centers to the
/// targets, with its gradient w.r.t. a left-multiplied pose perturbation.
inline ChamferEval chamfer_to_targets(std::span<const Vec3> points,
                                      const RigidTransform& t, const NnIndex& targets,
                                      bool with_gradient) {
  ChamferEval out;
  if (points.empty() || targets.size() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(points.size());
  for (const Vec3& p : points) {
    const Vec3 q = t.apply(p);
    const int j = targets.nearest(q);
    const Vec3 diff = q - targets.point(j);
    const double dist = diff.norm();
    out.loss += dist * inv_n;
    if (with_gradient && dist > 1e-12) {
      const Vec3 g = diff * (inv_n / dist);
      out.g_rho += g;
      out.g_omega += q.cross(g);
    }
  }
  return out;
}

/// Keeps the subset plus every static primitive whose footprint can touch
/// the masked pixels in some view; everything else cannot influence the
/// masked loss and is dropped for speed.
inline void cull_scene_to_masks(const GaussianScene& scene, const ObjectSubset& subset,
                                std::span<const Camera> cams, std::span<const Mask> masks,
                                GaussianScene& culled, ObjectSubset& culled_subset) {
  std::vector<std::uint8_t> keep(scene.primitives.size(), 0);
  for (int i : subset.indices) keep[i] = 1;
  for (size_t v = 0; v < cams.size(); ++v) {
    const auto splats = render_detail::project_splats(scene, cams[v]);
    for (const auto& s : splats) {
      if (keep[s.prim]) continue;
      bool touches = false;
      for (int y = s.y0; y <= s.y1 && !touches; ++y)
        for (int x = s.x0; x <= s.x1; ++x) {
          if (masks[v].at(x, y)) {
            touches = true;
            break;
          }
        }
      if (touches) keep[s.prim] = 1;
    }
  }
  culled = GaussianScene{};
  culled.state_index = scene.state_index;
  culled_subset = ObjectSubset{subset.object_id, {}};
  std::vector<char> in_subset(scene.primitives.size(), 0);
  for (int i : subset.indices) in_subset[i] = 1;
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    if (!keep[i]) continue;
    if (in_subset[i]) {
      culled_subset.indices.push_back(static_cast<int>(culled.primitives.size()));
    }
    culled.primitives.push_back(scene.primitives[i]);
  }
}

}  // namespace registration_detail

/// Coarse-to-fine pose refinement: gradient descent on the se(3) parameters
/// of the subset's pose, with an accept / halve-step rule, minimizing a
/// masked photometric L1 against the observations plus a one-directional
/// chamfer to the geometric targets. The rest of the scene stays frozen and
/// is composited so occlusions stay photometrically correct.
inline AlignmentResult refine_pose(const GaussianScene& scene,
                                   const ObjectSubset& subset,
                                   const RigidTransform& t_init,
                                   std::span<const Camera> cams,
                                   std::span<const ImageBuffer> observations,
                                   std::span<const Vec3> geom_targets,
                                   const RefineConfig& cfg = {}) {
  if (subset.indices.empty()) {
    throw EmptySelectionError("refine_pose: empty subset");
  }
  if (cams.empty() || cams.size() != observations.size()) {
    throw DimensionMismatchError("refine_pose: need matching observations/cams");
  }

  // Fixed loss domain: silhouette at the initial pose united with the
  // projected geometric targets, dilated.
  std::vector<Mask> masks;
  masks.reserve(cams.size());
  bool subset_visible = false;
  {
    GaussianScene at_init = scene;
    apply_transform_in_place(at_init, subset, t_init);
    for (size_t v = 0; v < cams.size(); ++v) {
      Mask m = subset_silhouette(at_init, subset, cams[v], cfg.silhouette_threshold);
      if (!m.empty()) subset_visible = true;
      for (const Vec3& g : geom_targets) {
        const auto proj = project(cams[v], g);
        if (!proj) continue;
        const int px = static_cast<int>(std::floor(proj->u));
        const int py = static_cast<int>(std::floor(proj->v));
        if (px >= 0 && px < cams[v].width && py >= 0 && py < cams[v].height) {
          m.at(px, py) = 1;
        }
      }
      m = dilate(m, cfg.mask_dilation_px);
      masks.push_back(std::move(m));
    }
  }
  if (!subset_visible) {
    throw NoVisiblePixelsError("refine_pose: subset projects to no pixel in any view");
  }

  GaussianScene culled;
  ObjectSubset culled_subset;
  registration_detail::cull_scene_to_masks(scene, subset, cams, masks, culled,
                                           culled_subset);

  const std::vector<Vec3> subset_points = subset_centers(culled, culled_subset);
  NnIndex target_index(geom_targets);
  // Perturbations are taken about the transformed subset centroid: rotation
  // and translation decouple there, which conditions the descent far better
  // than steps about the world origin. The omega block is preconditioned by
  // the mean squared lever arm so rotation and translation progress at the
  // same rate under one shared step size.
  const Vec3 pivot_local = centroid(subset_points);
  double lever2 = 0.0;
  for (const Vec3& p : subset_points) lever2 += (p - pivot_local).squared_norm();
  lever2 = std::max(lever2 / std::max<size_t>(1, subset_points.size()), 1e-6);

  struct LossParts {
    double photo = 0.0, geom = 0.0;
  };
  const auto eval_parts = [&](const RigidTransform& t) {
    LossParts parts;
    parts.photo = pose_photometric_gradient(culled, culled_subset, t, cams,
                                            observations, masks, cfg.background,
                                            false)
                      .loss;
    parts.geom = registration_detail::chamfer_to_targets(subset_points, t,
                                                         target_index, false)
                     .loss;
    return parts;
  };
  const auto geom_weight = [&](int it) {
    const double horizon = cfg.geom_decay_fraction * cfg.iterations;
    if (horizon <= 0.0) return cfg.w_geom;
    return cfg.w_geom * std::max(0.0, 1.0 - static_cast<double>(it) / horizon);
  };

  AlignmentResult result;
  result.t_coarse = t_init;

  RigidTransform t = t_init;
  double step = cfg.initial_step;
  LossParts current = eval_parts(t);
  double wg = geom_weight(0);
  bool need_gradient = true;
  bool polish_phase = cfg.w_geom == 0.0;
  std::array<double, 6> photo_grad{}, geom_grad{};
  int floored_rejections = 0;
  int tiny_accepts = 0;
  int it = 0;
  for (; it < cfg.iterations; ++it) {
    wg = geom_weight(it);
    if (!polish_phase && wg == 0.0) {
      // geometric anchor fully decayed: restart the line search so the
      // photometric term can polish from a useful step size
      polish_phase = true;
      step = cfg.initial_step;
      floored_rejections = 0;
    }
    const Vec3 pivot = t.apply(pivot_local);
    if (need_gradient) {
      const auto photo = pose_photometric_gradient(culled, culled_subset, t, cams,
                                                   observations, masks,
                                                   cfg.background, true);
      const auto geom = registration_detail::chamfer_to_targets(subset_points, t,
                                                                target_index, true);
      // re-express the omega gradients about the pivot:
      // sum (p - pivot) x g  =  sum p x g  -  pivot x sum g
      photo_grad = photo.grad;
      const Vec3 photo_rho{photo.grad[0], photo.grad[1], photo.grad[2]};
      const Vec3 photo_omega =
          Vec3{photo.grad[3], photo.grad[4], photo.grad[5]} - pivot.cross(photo_rho);
      photo_grad = {photo_rho.x, photo_rho.y, photo_rho.z,
                    photo_omega.x, photo_omega.y, photo_omega.z};
      const Vec3 geom_omega = geom.g_omega - pivot.cross(geom.g_rho);
      geom_grad = {geom.g_rho.x, geom.g_rho.y, geom.g_rho.z,
                   geom_omega.x, geom_omega.y, geom_omega.z};
      need_gradient = false;
    }
    std::array<double, 6> grad{};
    double gnorm2 = 0.0;
    for (int k = 0; k < 6; ++k) {
      grad[k] = cfg.w_photo * photo_grad[k] + wg * geom_grad[k];
      gnorm2 += grad[k] * grad[k];
    }
    if (gnorm2 < 1e-24) break;  // flat: already at a minimum

    const double omega_step = step / lever2;
    const Twist delta{{-step * grad[0], -step * grad[1], -step * grad[2]},
                      {-omega_step * grad[3], -omega_step * grad[4],
                       -omega_step * grad[5]}};
    const RigidTransform step_tf =
        compose(RigidTransform{Mat3::identity(), pivot},
                compose(se3_exp(delta), RigidTransform{Mat3::identity(), -pivot}));
    const RigidTransform candidate = compose(step_tf, t);
    const LossParts cand = eval_parts(candidate);
    const double current_total = cfg.w_photo * current.photo + wg * current.geom;
    const double cand_total = cfg.w_photo * cand.photo + wg * cand.geom;
    if (cand_total < current_total) {
      const double gain = current_total - cand_total;
      t = candidate;
      current = cand;
      need_gradient = true;
      floored_rejections = 0;
      step = std::min(step * 2.0, cfg.max_step);
      if (polish_phase &&
          gain < cfg.converge_rel_improvement * (1.0 + current_total)) {
        if (++tiny_accepts >= cfg.converge_patience) {
          ++it;
          break;
        }
      } else {
        tiny_accepts = 0;
      }
    } else {
      if (step <= cfg.min_step && polish_phase) {
        if (++floored_rejections >= cfg.max_floored_rejections) {
          ++it;
          break;
        }
      }
      step = std::max(step * 0.5, cfg.min_step);
    }
  }
  result.t_fine = t;
  result.final_loss = cfg.w_photo * current.photo + wg * current.geom;
  result.iterations_used = it;
  return result;
}

}  // namespace splatfuse
