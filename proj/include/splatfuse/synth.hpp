#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "splatfuse/errors.hpp"
#include "splatfuse/geom.hpp"
#include "splatfuse/image.hpp"
#include "splatfuse/parallel.hpp"
#include "splatfuse/render.hpp"
#include "splatfuse/rng.hpp"
#include "splatfuse/scene.hpp"

namespace splatfuse {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

struct ObjectSpec {
  enum class Shape { kSphere, kBox };
  Shape shape = Shape::kSphere;
  Vec3 size{0.15, 0.15, 0.15};  // sphere: radius in x; box: half-extents
  Vec3 color{0.8, 0.2, 0.2};
  int primitive_count = 250;
  RigidTransform initial_pose;
  double prim_scale = 0.025;
  double opacity = 0.95;
  double color_jitter = 0.015;
};

/// Room-and-blobs scene: a floor at z = 0 with four walls of height
/// room_half_extents.z, plus labeled object clusters.
struct SceneSpec {
  Vec3 room_half_extents{1.4, 1.4, 0.9};
  Vec3 floor_color{0.55, 0.50, 0.45};
  Vec3 wall_color{0.76, 0.75, 0.72};
  double surface_spacing = 0.05;
  double surface_scale = 0.03;
  double surface_opacity = 0.95;
  double color_noise = 0.02;  // low-amplitude wall/floor variation
  std::vector<ObjectSpec> objects;
};

struct ScriptAction {
  enum class Type { kMove, kAdd, kRemove };
  Type type = Type::kMove;
  int object_id = -1;
  RigidTransform transform;  // move only
  ObjectSpec spec;           // add only

  static ScriptAction move(int id, const RigidTransform& t) {
    ScriptAction a;
    a.type = Type::kMove;
    a.object_id = id;
    a.transform = t;
    return a;
  }
  static ScriptAction add(const ObjectSpec& spec) {
    ScriptAction a;
    a.type = Type::kAdd;
    a.spec = spec;
    return a;
  }
  static ScriptAction remove(int id) {
    ScriptAction a;
    a.type = Type::kRemove;
    a.object_id = id;
    return a;
  }
};

struct StateScript {
  std::vector<std::vector<ScriptAction>> steps;
};

struct CameraRigSpec {
  int count = 12;
  double radius = 2.6;
  double height = 2.1;
  Vec3 look_at{0.0, 0.0, 0.2};
  int image_width = 128, image_height = 128;
  double fov_deg = 62.0;  // horizontal
};

struct TestStateSpec {
  double max_yaw_deg = 30.0;
  double min_move_m = 0.25;
  double max_move_m = 0.6;
};

/// Everything the harness needs: per-state scenes with instance labels,
/// deterministic renders, per-object instance masks, the applied script,
/// and a held-out test state with its true transforms.
struct GroundTruth {
  std::vector<GaussianScene> scenes;
  std::vector<std::vector<ImageBuffer>> renders;                 // [state][view]
  std::vector<std::map<int, std::vector<Mask>>> masks;           // [state][obj][view]
  std::vector<std::vector<ScriptAction>> applied_steps;          // resolved ids
  std::vector<Camera> cameras;
  Vec3 background{0.05, 0.05, 0.08};
  double mask_weight_threshold = 0.3;

  GaussianScene test_scene;
  std::vector<ImageBuffer> test_renders;
  std::map<int, RigidTransform> test_transforms;  // final state -> test state
  std::map<int, std::vector<Mask>> test_masks;

  int state_count() const { return static_cast<int>(scenes.size()); }
  int view_count() const { return static_cast<int>(cameras.size()); }

  std::vector<int> object_ids(int state) const {
    std::vector<int> ids;
    for (const auto& [id, _] : masks.at(state)) ids.push_back(id);
    return ids;
  }
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace synth_detail {

inline void check_inside_room(const SceneSpec& spec, const GaussianScene& scene,
                              int object_id) {
  const Vec3& h = spec.room_half_extents;
  for (const auto& p : scene.primitives) {
    if (p.instance_id != object_id) continue;
    if (std::abs(p.position.x) > h.x || std::abs(p.position.y) > h.y ||
        p.position.z < -1e-9 || p.position.z > h.z) {
      throw Error("generate: object " + std::to_string(object_id) +
                  " placed outside the room");
    }
  }
}

inline void add_surface_lattice(GaussianScene& scene, const SceneSpec& spec,
                                Rng& rng) {
  const Vec3& h = spec.room_half_extents;
  const double d = spec.surface_spacing;
  auto emit = [&](const Vec3& pos, const Vec3& base_color, const Vec3& jitter_axis_a,
                  const Vec3& jitter_axis_b) {
    GaussianPrimitive p;
    const double ja = rng.normal(0.0, d * 0.25);
    const double jb = rng.normal(0.0, d * 0.25);
    p.position = pos + jitter_axis_a * ja + jitter_axis_b * jb;
    p.scale = spec.surface_scale;
    p.opacity = spec.surface_opacity;
    p.color = {std::clamp(base_color.x + rng.normal(0.0, spec.color_noise), 0.0, 1.0),
               std::clamp(base_color.y + rng.normal(0.0, spec.color_noise), 0.0, 1.0),
               std::clamp(base_color.z + rng.normal(0.0, spec.color_noise), 0.0, 1.0)};
    p.instance_id = -1;
    scene.primitives.push_back(p);
  };

  // floor
  for (double y = -h.y + d * 0.5; y <= h.y; y += d)
    for (double x = -h.x + d * 0.5; x <= h.x; x += d) {
      emit({x, y, 0.0}, spec.floor_color, {1, 0, 0}, {0, 1, 0});
    }
  // walls: x = +-hx and y = +-hy, z in [0, hz]
  for (double z = d * 0.5; z <= h.z; z += d) {
    for (double y = -h.y + d * 0.5; y <= h.y; y += d) {
      emit({-h.x, y, z}, spec.wall_color, {0, 1, 0}, {0, 0, 1});
      emit({h.x, y, z}, spec.wall_color, {0, 1, 0}, {0, 0, 1});
    }
    for (double x = -h.x + d * 0.5; x <= h.x; x += d) {
      emit({x, -h.y, z}, spec.wall_color, {1, 0, 0}, {0, 0, 1});
      emit({x, h.y, z}, spec.wall_color, {1, 0, 0}, {0, 0, 1});
    }
  }
}

inline void add_object_cluster(GaussianScene& scene, const ObjectSpec& obj, int id,
                               Rng& rng) {
  if (obj.primitive_count < 20) {
    throw Error("generate: objects need at least 20 primitives");
  }
  for (int i = 0; i < obj.primitive_count; ++i) {
    Vec3 local;
    if (obj.shape == ObjectSpec::Shape::kSphere) {
      const double r = obj.size.x;
      do {
        local = {rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-r, r)};
      } while (local.squared_norm() > r * r);
    } else {
      local = {rng.uniform(-obj.size.x, obj.size.x),
               rng.uniform(-obj.size.y, obj.size.y),
               rng.uniform(-obj.size.z, obj.size.z)};
    }
    GaussianPrimitive p;
    p.position = obj.initial_pose.apply(local);
    p.scale = obj.prim_scale;
    p.opacity = obj.opacity;
    p.color = {std::clamp(obj.color.x + rng.normal(0.0, obj.color_jitter), 0.0, 1.0),
               std::clamp(obj.color.y + rng.normal(0.0, obj.color_jitter), 0.0, 1.0),
               std::clamp(obj.color.z + rng.normal(0.0, obj.color_jitter), 0.0, 1.0)};
    p.instance_id = id;
    scene.primitives.push_back(p);
  }
}

inline std::map<int, std::vector<Mask>> instance_masks(
    const GaussianScene& scene, std::span<const Camera> cams,
    double weight_threshold) {
  std::vector<int> ids;
  for (const auto& p : scene.primitives) {
    if (p.instance_id >= 0 &&
        std::find(ids.begin(), ids.end(), p.instance_id) == ids.end()) {
      ids.push_back(p.instance_id);
    }
  }
  std::sort(ids.begin(), ids.end());
  std::map<int, std::vector<Mask>> out;
  for (int id : ids) out[id].resize(cams.size());
  parallel_for(static_cast<int>(cams.size()), [&](int v) {
    const auto planes = render_label_weights(scene, cams[v], ids);
    for (size_t k = 0; k < ids.size(); ++k) {
      Mask m(cams[v].width, cams[v].height);
      for (int y = 0; y < cams[v].height; ++y)
        for (int x = 0; x < cams[v].width; ++x) {
          const size_t px = static_cast<size_t>(y) * cams[v].width + x;
          const double w = planes[k][px];
          if (w < weight_threshold) continue;
          bool is_max = true;
          for (size_t k2 = 0; k2 < ids.size(); ++k2) {
            if (k2 == k) continue;
            if (planes[k2][px] > w ||
                (planes[k2][px] == w && k2 < k)) {  // deterministic argmax
              is_max = false;
              break;
            }
          }
          m.at(x, y) = is_max ? 1 : 0;
        }
      out[ids[k]][v] = std::move(m);
    }
  });
  return out;
}

inline RigidTransform yaw_about(double yaw_rad, const Vec3& pivot,
                                const Vec3& translation) {
  const RigidTransform rot{so3_exp({0, 0, yaw_rad}), {}};
  RigidTransform t = compose(RigidTransform{Mat3::identity(), pivot},
                             compose(rot, RigidTransform{Mat3::identity(), -pivot}));
  t.translation += translation;
  return t;
}

}  // namespace synth_detail

inline std::vector<Camera> make_camera_ring(const CameraRigSpec& rig) {
  if (rig.count < 2) throw Error("make_camera_ring: need at least 2 cameras");
  const double fx =
      (rig.image_width * 0.5) / std::tan(rig.fov_deg * 0.5 * M_PI / 180.0);
  std::vector<Camera> cams;
  cams.reserve(rig.count);
  for (int k = 0; k < rig.count; ++k) {
    const double angle = 2.0 * M_PI * k / rig.count;
    const Vec3 eye{rig.radius * std::cos(angle), rig.radius * std::sin(angle),
                   rig.height};
    cams.push_back(make_look_at_camera(eye, rig.look_at, fx, fx,
                                       rig.image_width * 0.5,
                                       rig.image_height * 0.5, rig.image_width,
                                       rig.image_height));
  }
  return cams;
}

/// Deterministic synthesis of a full state sequence with ground truth for
/// every stage. Byte-identical outputs for identical (specs, seed).
inline GroundTruth generate(const SceneSpec& spec, const CameraRigSpec& rig,
                            const StateScript& script, std::uint64_t seed,
                            const TestStateSpec& test_spec = {}) {
  using namespace synth_detail;
  Rng rng(seed);
  GroundTruth gt;
  gt.cameras = make_camera_ring(rig);

  // State 0.
  GaussianScene base;
  base.state_index = 0;
  add_surface_lattice(base, spec, rng);
  int next_id = 0;
  for (const auto& obj : spec.objects) {
    add_object_cluster(base, obj, next_id, rng);
    check_inside_room(spec, base, next_id);
    ++next_id;
  }
  gt.scenes.push_back(base);

  // Scripted states.
  for (const auto& step : script.steps) {
    GaussianScene scene = gt.scenes.back();
    scene.state_index = static_cast<int>(gt.scenes.size());
    std::vector<ScriptAction> resolved;
    for (const ScriptAction& action : step) {
      switch (action.type) {
        case ScriptAction::Type::kMove: {
          const ObjectSubset subset = subset_by_label(scene, action.object_id);
          if (subset.indices.empty()) {
            throw Error("generate: move references unknown object " +
                        std::to_string(action.object_id));
          }
          apply_transform_in_place(scene, subset, action.transform);
          check_inside_room(spec, scene, action.object_id);
          resolved.push_back(action);
          break;
        }
        case ScriptAction::Type::kAdd: {
          const int id = next_id++;
          add_object_cluster(scene, action.spec, id, rng);
          check_inside_room(spec, scene, id);
          ScriptAction r = action;
          r.object_id = id;
          resolved.push_back(r);
          break;
        }
        case ScriptAction::Type::kRemove: {
          const ObjectSubset subset = subset_by_label(scene, action.object_id);
          if (subset.indices.empty()) {
            throw Error("generate: remove references unknown object " +
                        std::to_string(action.object_id));
          }
          std::vector<GaussianPrimitive> kept;
          kept.reserve(scene.primitives.size());
          for (const auto& p : scene.primitives) {
            if (p.instance_id != action.object_id) kept.push_back(p);
          }
          scene.primitives = std::move(kept);
          resolved.push_back(action);
          break;
        }
      }
    }
    gt.applied_steps.push_back(std::move(resolved));
    gt.scenes.push_back(std::move(scene));
  }

  // Held-out test state: every surviving object randomly repositioned.
  // With no scripted steps there is nothing held out; the test state is
  // state 0 itself.
  gt.test_scene = gt.scenes.back();
  if (!script.steps.empty()) {
    const Vec3& h = spec.room_half_extents;
    std::vector<int> ids;
    for (const auto& p : gt.test_scene.primitives) {
      if (p.instance_id >= 0 &&
          std::find(ids.begin(), ids.end(), p.instance_id) == ids.end()) {
        ids.push_back(p.instance_id);
      }
    }
    std::sort(ids.begin(), ids.end());
    for (int id : ids) {
      const ObjectSubset subset = subset_by_label(gt.test_scene, id);
      const Vec3 c = centroid(subset_centers(gt.test_scene, subset));
      RigidTransform t;
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const double yaw = rng.uniform(-test_spec.max_yaw_deg, test_spec.max_yaw_deg) *
                           M_PI / 180.0;
        const double dist = rng.uniform(test_spec.min_move_m, test_spec.max_move_m);
        const double dir = rng.uniform(0.0, 2.0 * M_PI);
        const Vec3 delta{dist * std::cos(dir), dist * std::sin(dir), 0.0};
        t = yaw_about(yaw, c, delta);
        GaussianScene probe = apply_transform(gt.test_scene, subset, t);
        bool inside = true;
        for (int i : subset.indices) {
          const Vec3& p = probe.primitives[i].position;
          if (std::abs(p.x) > h.x - 0.02 || std::abs(p.y) > h.y - 0.02 ||
              p.z < -1e-9 || p.z > h.z) {
            inside = false;
            break;
          }
        }
        if (inside) {
          gt.test_scene = std::move(probe);
          placed = true;
        }
      }
      if (!placed) {
        throw Error("generate: could not place test pose for object " +
                    std::to_string(id));
      }
      gt.test_transforms[id] = t;
    }
  }

  // Renders and instance masks through the render module.
  gt.renders.resize(gt.scenes.size());
  gt.masks.resize(gt.scenes.size());
  for (size_t s = 0; s < gt.scenes.size(); ++s) {
    gt.renders[s].resize(gt.cameras.size());
    parallel_for(gt.view_count(), [&](int v) {
      gt.renders[s][v] = render_image(gt.scenes[s], gt.cameras[v], gt.background);
    });
    gt.masks[s] = instance_masks(gt.scenes[s], gt.cameras, gt.mask_weight_threshold);
  }
  gt.test_renders.resize(gt.cameras.size());
  parallel_for(gt.view_count(), [&](int v) {
    gt.test_renders[v] = render_image(gt.test_scene, gt.cameras[v], gt.background);
  });
  gt.test_masks = instance_masks(gt.test_scene, gt.cameras, gt.mask_weight_threshold);
  return gt;
}

/// Union, over both states, of the instance-mask pixels of every object
/// whose pose or presence differs between states a and b.
inline Mask gt_change_mask(const GroundTruth& gt, int state_a, int state_b,
                           int view) {
  if (state_a > state_b) std::swap(state_a, state_b);
  if (state_a < 0 || state_b >= gt.state_count()) {
    throw std::out_of_range("gt_change_mask: state out of range");
  }
  Mask out(gt.cameras.at(view).width, gt.cameras.at(view).height);
  std::vector<int> changed;
  for (int s = state_a; s < state_b; ++s) {
    for (const auto& action : gt.applied_steps.at(s)) {
      if (std::find(changed.begin(), changed.end(), action.object_id) ==
          changed.end()) {
        changed.push_back(action.object_id);
      }
    }
  }
  for (int id : changed) {
    for (int s : {state_a, state_b}) {
      const auto it = gt.masks[s].find(id);
      if (it == gt.masks[s].end()) continue;
      out = mask_union(out, it->second.at(view));
    }
  }
  return out;
}

}  // namespace splatfuse
