#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splatfuse/assoc.hpp"
#include "splatfuse/change.hpp"
#include "splatfuse/errors.hpp"
#include "splatfuse/geom.hpp"
#include "splatfuse/image.hpp"
#include "splatfuse/metrics.hpp"
#include "splatfuse/parallel.hpp"
#include "splatfuse/registration.hpp"
#include "splatfuse/render.hpp"
#include "splatfuse/rng.hpp"
#include "splatfuse/scene.hpp"
#include "splatfuse/voxel.hpp"

namespace splatfuse {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct FusionConfig {
  // Loss weights and optimization schedule.
  double lambda_s = 0.2;   // SSIM weight inside each photometric loss
  double lambda_r = 0.5;   // replay weight in the combined objective
  int iterations = 2000;   // recurrent optimization steps per fused state

  // Per-parameter learning rates (position is scaled by scene extent).
  double lr_position = 1.6e-4;
  double lr_color = 2.5e-3;
  double lr_opacity = 0.05;
  double lr_scale = 5e-3;

  int densify_interval = 100;
  double densify_grad_threshold = 2e-4;
  double prune_opacity = 0.005;
  std::uint64_t rng_seed = 0;

  // Pipeline knobs.
  double tau_change = 0.95;       // change-mask cosine threshold
  double tau_match = 0.5;         // association acceptance gate
  double tau_group = 0.5;         // cross-view region grouping similarity
  double saliency_max_cos = 0.92; // region-vs-surround gate (descriptor mode)
  double vote_fraction = 0.6;
  size_t min_region_area = 50;
  int quick_recon_iterations = 800;
  int initial_recon_iterations = 1200;
  int recon_init_primitives = 5000;
  double voxel_size = 0.05;
  int ray_stride = 1;
  double fill_min_opacity = 0.05;
  bool enable_completion = true;  // newly-observed region completion
  bool enable_visibility = true;  // visibility-guided refinement
  Vec3 background{0.05, 0.05, 0.08};

  ICPConfig icp;
  RefineConfig refine;
};

// ---------------------------------------------------------------------------
// Recurrent state
// ---------------------------------------------------------------------------

struct TransformRecord {
  int state_index = 0;
  RigidTransform transform;
};

/// The evolving scene plus everything needed to re-pose it at any past
/// state: per-object transform history and per-state camera rigs. Object
/// membership lives on the primitives as instance labels.
struct RecurrentState {
  GaussianScene scene;
  std::map<int, std::vector<TransformRecord>> transform_history;
  std::map<int, int> first_state;  // object id -> state where it appeared
  int state_count = 0;
  std::vector<std::vector<Camera>> state_cameras;
  Vec3 grid_origin;  // shared voxel lattice frame, fixed at state 0
  bool grid_origin_set = false;

  ObjectSubset membership(int object_id) const {
    return subset_by_label(scene, object_id);
  }

  int next_object_id() const {
    int next = 0;
    for (const auto& p : scene.primitives) next = std::max(next, p.instance_id + 1);
    for (const auto& [id, _] : transform_history) next = std::max(next, id + 1);
    for (const auto& [id, _] : first_state) next = std::max(next, id + 1);
    return next;
  }
};

inline RecurrentState make_initial_state(GaussianScene scene,
                                         std::vector<Camera> cams) {
  RecurrentState rs;
  rs.scene = std::move(scene);
  rs.scene.state_index = 0;
  rs.state_count = 1;
  rs.state_cameras.push_back(std::move(cams));
  Vec3 lo{1e30, 1e30, 1e30};
  for (const auto& p : rs.scene.primitives) {
    lo = {std::min(lo.x, p.position.x), std::min(lo.y, p.position.y),
          std::min(lo.z, p.position.z)};
  }
  rs.grid_origin = rs.scene.primitives.empty() ? Vec3{} : lo - Vec3{1e-6, 1e-6, 1e-6};
  rs.grid_origin_set = true;
  for (const auto& p : rs.scene.primitives) {
    if (p.instance_id >= 0 && !rs.first_state.count(p.instance_id)) {
      rs.first_state[p.instance_id] = 0;
    }
  }
  return rs;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct LossStep {
  double l_curr = 0.0;
  double l_replay = 0.0;
  double total = 0.0;
  int replay_index = -1;
};

struct LossReport {
  std::vector<LossStep> steps;
};

struct StageRecord {
  std::string name;
  double seconds = 0.0;
  std::vector<std::pair<std::string, double>> stats;
};

struct AlignmentRecord {
  int object_id = -1;
  AlignmentResult result;
};

/// Everything a fusion step did: per-stage timing/stats for the run
/// manifest plus the index bookkeeping the frozen-region check needs.
struct FusionTrace {
  std::vector<StageRecord> stages;
  MatchResult match;  // group-level association result, for audit
  std::vector<int> moved_object_ids, added_object_ids, removed_object_ids;
  std::vector<AlignmentRecord> alignments;
  std::vector<int> moved_indices_pre;    // pre-deletion scene indices
  std::vector<int> removed_indices_pre;  // pre-deletion scene indices
  std::vector<int> optimized_indices_post;  // at optimization start
  int fill_inserted = 0;
  size_t peak_primitives = 0;
  size_t peak_voxels = 0;
  bool no_change_short_circuit = false;
  double total_seconds = 0.0;
};

/// One row of the experiment tables.
struct MetricsRow {
  int state_count = 0;
  double test_psnr = std::numeric_limits<double>::quiet_NaN();
  double test_ssim = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  size_t peak_primitive_count = 0;
  size_t peak_voxel_count = 0;
};

/// Multi-view observations of one state. The proposal sets are optional
/// ground-truth-mask inputs (one region list per view, ids = object ids);
/// empty means descriptor mode.
struct Observations {
  std::vector<ImageBuffer> images;
  std::vector<Camera> cams;
  std::vector<ObjectMaskSet> prev_proposals;
  std::vector<ObjectMaskSet> curr_proposals;
};

// ---------------------------------------------------------------------------
// Replay rendering
// ---------------------------------------------------------------------------

namespace fusion_detail {

/// Forward composition of the transforms recorded after state i, per object.
/// Objects first seen after state i are reported for exclusion.
struct ReplayPose {
  std::map<int, RigidTransform> inverse_map;  // object id -> re-posing transform
  std::vector<int> excluded_objects;          // not yet present at state i
  bool any() const { return !inverse_map.empty() || !excluded_objects.empty(); }
};

inline ReplayPose replay_pose(const RecurrentState& rs, int state) {
  ReplayPose rp;
  for (const auto& [id, records] : rs.transform_history) {
    RigidTransform fwd = RigidTransform::identity();
    bool moved = false;
    for (const auto& rec : records) {
      if (rec.state_index > state) {
        fwd = compose(rec.transform, fwd);
        moved = true;
      }
    }
    if (moved) rp.inverse_map[id] = inverse(fwd);
  }
  for (const auto& [id, first] : rs.first_state) {
    if (first > state) {
      rp.excluded_objects.push_back(id);
      rp.inverse_map.erase(id);
    }
  }
  return rp;
}

/// Scene re-posed at a past state: moved objects mapped back by the inverse
/// composition of their later transforms, later-added objects dropped.
/// With nothing to do, returns an untouched copy (bit-identical render).
inline GaussianScene reposed_scene(const RecurrentState& rs, const ReplayPose& rp) {
  GaussianScene out = rs.scene;
  if (!rp.any()) return out;
  if (!rp.excluded_objects.empty()) {
    std::vector<GaussianPrimitive> kept;
    kept.reserve(out.primitives.size());
    for (const auto& p : out.primitives) {
      bool drop = false;
      for (int id : rp.excluded_objects) {
        if (p.instance_id == id) {
          drop = true;
          break;
        }
      }
      if (!drop) kept.push_back(p);
    }
    out.primitives = std::move(kept);
  }
  for (auto& p : out.primitives) {
    const auto it = rp.inverse_map.find(p.instance_id);
    if (it != rp.inverse_map.end()) p.position = it->second.apply(p.position);
  }
  return out;
}

}  // namespace fusion_detail

/// Re-poses the scene at past state i (per-object inverse composition of the
/// transforms recorded after i) and renders it with state-i cameras. The
/// state itself is left unmodified; i = current state renders bit-identical
/// to a direct render.
inline std::vector<ImageBuffer> replay_render(const RecurrentState& rs, int state,
                                              const Vec3& background = Vec3{0.05, 0.05,
                                                                            0.08}) {
  if (state < 0 || state >= rs.state_count) {
    throw std::out_of_range("replay_render: unknown state index " +
                            std::to_string(state));
  }
  const auto rp = fusion_detail::replay_pose(rs, state);
  const GaussianScene scene = fusion_detail::reposed_scene(rs, rp);
  const auto& cams = rs.state_cameras.at(state);
  std::vector<ImageBuffer> out(cams.size());
  parallel_for(static_cast<int>(cams.size()), [&](int v) {
    out[v] = render_image(scene, cams[v], background);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Scene optimizer (Adam + clone/split/prune)
// ---------------------------------------------------------------------------

enum class PrimRole : std::uint8_t {
  kFrozen = 0,   // untouched, bit-identical
  kVisible = 1,  // parameters optimize, structure fixed
  kFill = 2,     // parameters optimize, densify/prune allowed
};

struct OptimizerParams {
  double lr_position = 1.6e-4;  // multiplied by scene_extent
  double lr_color = 2.5e-3;
  double lr_opacity = 0.05;
  double lr_scale = 5e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int densify_interval = 100;
  double densify_grad_threshold = 2e-4;
  double prune_opacity = 0.005;
  double percent_dense = 0.01;  // split-vs-clone size threshold x extent
  double scene_extent = 1.0;

  static OptimizerParams from(const FusionConfig& cfg, double extent) {
    OptimizerParams p;
    p.lr_position = cfg.lr_position;
    p.lr_color = cfg.lr_color;
    p.lr_opacity = cfg.lr_opacity;
    p.lr_scale = cfg.lr_scale;
    p.densify_interval = cfg.densify_interval;
    p.densify_grad_threshold = cfg.densify_grad_threshold;
    p.prune_opacity = cfg.prune_opacity;
    p.scene_extent = extent;
    return p;
  }
};

/// First-order per-parameter (Adam) updates over a scene, restricted to
/// non-frozen primitives. Opacity is optimized through a logit and scale
/// through a log so their invariants hold by construction; frozen
/// primitives are never written back.
class SceneOptimizer {
 public:
  SceneOptimizer(GaussianScene& scene, std::vector<PrimRole> roles,
                 const OptimizerParams& params)
      : scene_(scene), roles_(std::move(roles)), params_(params) {
    rebuild_raw();
  }

  const std::vector<std::uint8_t>& trainable_mask() const { return trainable_; }
  const std::vector<PrimRole>& roles() const { return roles_; }
  size_t size() const { return scene_.primitives.size(); }

  void step(const RenderGradients& grads) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(params_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(params_.beta2, step_count_);
    const double lr_pos = params_.lr_position * params_.scene_extent;
    for (size_t i = 0; i < scene_.primitives.size(); ++i) {
      if (!trainable_[i]) continue;
      const double alpha = 1.0 / (1.0 + std::exp(-raw_[8 * i + 6]));
      const double scale = std::exp(raw_[8 * i + 7]);
      const double g[8] = {
          grads.d_position[i].x, grads.d_position[i].y, grads.d_position[i].z,
          grads.d_color[i].x,    grads.d_color[i].y,    grads.d_color[i].z,
          grads.d_opacity[i] * alpha * (1.0 - alpha),
          grads.d_scale[i] * scale};
      const double lr[8] = {lr_pos,          lr_pos,          lr_pos,
                            params_.lr_color, params_.lr_color, params_.lr_color,
                            params_.lr_opacity, params_.lr_scale};
      for (int k = 0; k < 8; ++k) {
        const size_t j = 8 * i + k;
        m_[j] = params_.beta1 * m_[j] + (1.0 - params_.beta1) * g[k];
        v_[j] = params_.beta2 * v_[j] + (1.0 - params_.beta2) * g[k] * g[k];
        raw_[j] -= lr[k] * (m_[j] / bc1) / (std::sqrt(v_[j] / bc2) + params_.eps);
      }
      // densify statistic: mean position-gradient norm over contributing steps
      const double gn = grads.d_position[i].norm();
      if (gn > 0.0) {
        grad_acc_[i] += gn;
        grad_cnt_[i] += 1;
      }
      write_back(i);
    }
  }

  /// Clone / split primitives whose accumulated position gradient exceeds
  /// the threshold and prune nearly transparent ones; both restricted to
  /// kFill primitives. Children are appended at the end, so indices of
  /// frozen and visible primitives never move.
  void densify_and_prune(Rng& rng) {
    const double size_limit = params_.percent_dense * params_.scene_extent;
    std::vector<GaussianPrimitive> children;
    std::vector<std::uint8_t> remove(scene_.primitives.size(), 0);
    for (size_t i = 0; i < scene_.primitives.size(); ++i) {
      if (roles_[i] != PrimRole::kFill) continue;
      auto& prim = scene_.primitives[i];
      if (prim.opacity < params_.prune_opacity) {
        remove[i] = 1;
        continue;
      }
      if (grad_cnt_[i] == 0) continue;
      const double avg = grad_acc_[i] / static_cast<double>(grad_cnt_[i]);
      if (avg <= params_.densify_grad_threshold) continue;
      if (prim.scale <= size_limit) {
        children.push_back(prim);  // clone; optimizer separates the pair
      } else {
        Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        if (axis.norm() < 1e-12) axis = {1, 0, 0};
        axis = axis.normalized();
        GaussianPrimitive child = prim;
        child.scale = prim.scale / 1.6;
        child.position = prim.position + axis * (0.5 * prim.scale);
        children.push_back(child);
        child.position = prim.position - axis * (0.5 * prim.scale);
        children.push_back(child);
        remove[i] = 1;
      }
    }
    if (children.empty() && std::none_of(remove.begin(), remove.end(),
                                         [](std::uint8_t r) { return r != 0; })) {
      std::fill(grad_acc_.begin(), grad_acc_.end(), 0.0);
      std::fill(grad_cnt_.begin(), grad_cnt_.end(), 0);
      return;
    }
    std::vector<GaussianPrimitive> prims;
    std::vector<PrimRole> roles;
    prims.reserve(scene_.primitives.size() + children.size());
    roles.reserve(prims.capacity());
    for (size_t i = 0; i < scene_.primitives.size(); ++i) {
      if (remove[i]) continue;
      prims.push_back(scene_.primitives[i]);
      roles.push_back(roles_[i]);
    }
    for (auto& c : children) {
      prims.push_back(c);
      roles.push_back(PrimRole::kFill);
    }
    scene_.primitives = std::move(prims);
    roles_ = std::move(roles);
    rebuild_raw();
  }

 private:
  void rebuild_raw() {
    const size_t n = scene_.primitives.size();
    trainable_.assign(n, 0);
    raw_.assign(n * 8, 0.0);
    m_.assign(n * 8, 0.0);
    v_.assign(n * 8, 0.0);
    grad_acc_.assign(n, 0.0);
    grad_cnt_.assign(n, 0);
    for (size_t i = 0; i < n; ++i) {
      if (roles_[i] == PrimRole::kFrozen) continue;
      trainable_[i] = 1;
      const auto& p = scene_.primitives[i];
      raw_[8 * i + 0] = p.position.x;
      raw_[8 * i + 1] = p.position.y;
      raw_[8 * i + 2] = p.position.z;
      raw_[8 * i + 3] = p.color.x;
      raw_[8 * i + 4] = p.color.y;
      raw_[8 * i + 5] = p.color.z;
      const double a = std::clamp(p.opacity, 1e-4, 0.9999);
      raw_[8 * i + 6] = std::log(a / (1.0 - a));
      raw_[8 * i + 7] = std::log(std::clamp(p.scale, 1e-5, params_.scene_extent));
    }
  }

  void write_back(size_t i) {
    auto& p = scene_.primitives[i];
    p.position = {raw_[8 * i + 0], raw_[8 * i + 1], raw_[8 * i + 2]};
    p.color = {std::clamp(raw_[8 * i + 3], 0.0, 1.0),
               std::clamp(raw_[8 * i + 4], 0.0, 1.0),
               std::clamp(raw_[8 * i + 5], 0.0, 1.0)};
    p.opacity = 1.0 / (1.0 + std::exp(-raw_[8 * i + 6]));
    raw_[8 * i + 7] = std::clamp(raw_[8 * i + 7], std::log(1e-5),
                                 std::log(params_.scene_extent));
    p.scale = std::exp(raw_[8 * i + 7]);
  }

  GaussianScene& scene_;
  std::vector<PrimRole> roles_;
  OptimizerParams params_;
  std::vector<std::uint8_t> trainable_;
  std::vector<double> raw_, m_, v_;
  std::vector<double> grad_acc_;
  std::vector<int> grad_cnt_;
  long step_count_ = 0;
};

// ---------------------------------------------------------------------------
// Photometric loss over a view set
// ---------------------------------------------------------------------------

namespace fusion_detail {

struct LossWorkspace {
  std::vector<RenderGradients> worker_grads;
  std::vector<double> worker_loss;

  void ensure(size_t workers, size_t prims) {
    worker_grads.resize(workers);
    worker_loss.assign(workers, 0.0);
    for (auto& g : worker_grads) g.resize(prims);
  }
};

/// (1 - lambda_s) L1 + lambda_s (1 - SSIM), averaged over views. Gradients
/// flow into `total_grads` with the given weight. `invalid`, when non-empty,
/// marks pixels excluded from the loss (known-stale replay content).
inline double photometric_views_loss(
    const GaussianScene& scene, std::span<const Camera> cams,
    std::span<const ImageBuffer> targets, std::span<const Mask> invalid,
    double lambda_s, double weight, const Vec3& background,
    RenderGradients* total_grads, const std::vector<std::uint8_t>* trainable,
    LossWorkspace& ws) {
  const int n_views = static_cast<int>(cams.size());
  const size_t workers =
      std::min<size_t>(worker_count(), std::max(1, n_views));
  ws.ensure(workers, scene.primitives.size());
  const double vw = 1.0 / static_cast<double>(n_views);

  parallel_for(n_views, [&](int v) {
    const size_t w = static_cast<size_t>(v) % workers;
    ForwardCache cache;
    const ImageBuffer img = render_image(scene, cams[v], background, nullptr,
                                         total_grads ? &cache : nullptr);
    const Mask* bad = invalid.empty() ? nullptr : &invalid[v];

    double l1;
    if (bad) {
      Mask valid(img.width, img.height);
      for (size_t k = 0; k < valid.on.size(); ++k) valid.on[k] = bad->on[k] ? 0 : 1;
      l1 = masked_l1_loss(img, targets[v], valid);
    } else {
      l1 = l1_loss(img, targets[v]);
    }

    ImageBuffer target_eff = targets[v];
    if (bad) {
      // Stale pixels are treated as already correct so SSIM neither rewards
      // nor punishes them.
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          if (!bad->at(x, y)) continue;
          for (int c = 0; c < 3; ++c) target_eff.at(x, y, c) = img.at(x, y, c);
        }
    }

    ImageBuffer dpix(img.width, img.height, 0.0);
    double ssim_val;
    if (total_grads) {
      // d(1-ssim)/dpix accumulates with negative weight
      ssim_val = ssim(img, target_eff, &dpix, -weight * vw * lambda_s);
      if (bad) {
        Mask valid(img.width, img.height);
        for (size_t k = 0; k < valid.on.size(); ++k) valid.on[k] = bad->on[k] ? 0 : 1;
        masked_l1_gradient(img, targets[v], valid, weight * vw * (1.0 - lambda_s),
                           dpix);
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) {
            if (!bad->at(x, y)) continue;
            for (int c = 0; c < 3; ++c) dpix.at(x, y, c) = 0.0;
          }
      } else {
        l1_gradient(img, targets[v], weight * vw * (1.0 - lambda_s), dpix);
      }
      render_backward(scene, cams[v], dpix, ws.worker_grads[w], background, nullptr,
                      trainable, &cache);
    } else {
      ssim_val = ssim(img, target_eff);
    }
    ws.worker_loss[w] += vw * ((1.0 - lambda_s) * l1 + lambda_s * (1.0 - ssim_val));
  });

  double loss = 0.0;
  for (size_t w = 0; w < workers; ++w) loss += ws.worker_loss[w];
  if (total_grads) {
    for (size_t w = 0; w < workers; ++w) {
      const auto& g = ws.worker_grads[w];
      for (size_t i = 0; i < scene.primitives.size(); ++i) {
        if (trainable && !(*trainable)[i]) continue;
        total_grads->d_color[i] += g.d_color[i];
        total_grads->d_opacity[i] += g.d_opacity[i];
        total_grads->d_position[i] += g.d_position[i];
        total_grads->d_scale[i] += g.d_scale[i];
      }
    }
  }
  return loss;
}

inline double camera_rig_extent(std::span<const Camera> cams) {
  if (cams.empty()) return 1.0;
  Vec3 mean;
  std::vector<Vec3> centers;
  centers.reserve(cams.size());
  for (const auto& c : cams) {
    centers.push_back(c.center());
    mean += centers.back();
  }
  mean = mean / static_cast<double>(cams.size());
  double extent = 0.0;
  for (const auto& c : centers) extent = std::max(extent, (c - mean).norm());
  return std::max(extent, 0.1);
}

}  // namespace fusion_detail

// ---------------------------------------------------------------------------
// Per-state reconstruction
// ---------------------------------------------------------------------------

/// Standard splatting optimization of all primitive parameters against the
/// given views, with periodic clone/split densification and opacity
/// pruning. Starts from `init` when given, otherwise from uniform random
/// seeding inside the camera-rig bounding volume.
inline GaussianScene reconstruct_state(std::span<const ImageBuffer> images,
                                       std::span<const Camera> cams,
                                       const GaussianScene* init, int iterations,
                                       const FusionConfig& cfg = {},
                                       std::uint64_t seed_salt = 0) {
  if (images.size() < 2 || images.size() != cams.size()) {
    throw Error("reconstruct_state: need at least 2 views with matching cameras");
  }
  Rng rng = Rng(cfg.rng_seed).fork(0x7ec0u ^ seed_salt);
  GaussianScene scene;
  if (init) {
    scene = *init;
  } else {
    Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
    auto grow = [&](const Vec3& p) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    };
    for (const auto& cam : cams) {
      const Vec3 c = cam.center();
      grow(c);
      const Mat3& r = cam.world_to_camera.rotation;
      const Vec3 forward{r(2, 0), r(2, 1), r(2, 2)};
      grow(c + forward * fusion_detail::camera_rig_extent(cams));
    }
    const Vec3 pad = (hi - lo) * 0.1 + Vec3{0.05, 0.05, 0.05};
    lo -= pad;
    hi += pad;
    scene.primitives.reserve(cfg.recon_init_primitives);
    for (int i = 0; i < cfg.recon_init_primitives; ++i) {
      GaussianPrimitive p;
      p.position = {rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y),
                    rng.uniform(lo.z, hi.z)};
      p.scale = cfg.voxel_size * 0.8;
      p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
      p.opacity = 0.25;
      scene.primitives.push_back(p);
    }
  }
  if (iterations <= 0) return scene;

  const double extent = fusion_detail::camera_rig_extent(cams);
  OptimizerParams params = OptimizerParams::from(cfg, extent);
  std::vector<PrimRole> roles(scene.primitives.size(), PrimRole::kFill);
  SceneOptimizer opt(scene, roles, params);
  fusion_detail::LossWorkspace ws;
  RenderGradients grads;
  for (int it = 0; it < iterations; ++it) {
    grads.resize(scene.primitives.size());
    fusion_detail::photometric_views_loss(scene, cams, images, {}, cfg.lambda_s, 1.0,
                                          cfg.background, &grads,
                                          &opt.trainable_mask(), ws);
    opt.step(grads);
    if ((it + 1) % cfg.densify_interval == 0 && it + 1 < iterations) {
      opt.densify_and_prune(rng);
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Novel-state synthesis
// ---------------------------------------------------------------------------

/// Copy of the scene with only the given object's primitives transformed;
/// everything else bit-identical. The state itself is unmodified.
inline GaussianScene novel_state(const RecurrentState& rs, int object_id,
                                 const RigidTransform& t) {
  const ObjectSubset subset = rs.membership(object_id);
  if (subset.indices.empty()) {
    throw UnknownObjectError("novel_state: unknown object id " +
                             std::to_string(object_id));
  }
  return apply_transform(rs.scene, subset, t);
}

}  // namespace splatfuse
