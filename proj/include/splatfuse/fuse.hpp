#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "splatfuse/fusion.hpp"

namespace splatfuse {

struct FuseResult {
  RecurrentState state;
  LossReport losses;
  MetricsRow metrics;
  FusionTrace trace;
};

namespace fusion_detail {

class StageTimer {
 public:
  StageTimer() : t0_(std::chrono::steady_clock::now()) {}
  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

/// A region is salient when it looks different from its immediate
/// surroundings in the given image; revealed background patches fail this
/// and are excluded from the side's region list.
inline bool region_salient(const ImageBuffer& img, const Mask& region,
                           double max_cos) {
  Mask ring = dilate(region, 6);
  for (size_t i = 0; i < ring.on.size(); ++i) {
    if (region.on[i]) ring.on[i] = 0;
  }
  if (ring.empty()) return true;
  try {
    const RegionDescriptor a = region_descriptor(img, region);
    const RegionDescriptor b = region_descriptor(img, ring);
    return a.cosine(b) < max_cos;
  } catch (const EmptyMaskError&) {
    return true;
  }
}

/// Per-view regions of one side grouped into multi-view object candidates.
struct GroupedObject {
  std::vector<Mask> masks;  // one per view; empty where unseen
  std::vector<std::uint8_t> has_view;
  std::vector<double> desc_sum;
  int count = 0;
  int gt_id = -1;  // proposal id when grouping by id

  RegionDescriptor rep(int as_id) const {
    RegionDescriptor r;
    r.region_id = as_id;
    r.v = desc_sum;
    double n = 0.0;
    for (double x : r.v) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0) {
      for (double& x : r.v) x /= n;
    } else if (!r.v.empty()) {
      r.v[0] = 1.0;
    }
    return r;
  }
};

inline std::vector<GroupedObject> group_regions(
    const std::vector<ObjectMaskSet>& per_view,
    const std::vector<ImageBuffer>& images, double tau_group, bool by_id) {
  const int n_views = static_cast<int>(per_view.size());
  std::vector<GroupedObject> groups;
  for (int v = 0; v < n_views; ++v) {
    for (const auto& region : per_view[v].regions) {
      const RegionDescriptor d = region_descriptor(images[v], region.mask);
      GroupedObject* target = nullptr;
      if (by_id) {
        for (auto& g : groups) {
          if (g.gt_id == region.region_id) {
            target = &g;
            break;
          }
        }
      } else {
        for (auto& g : groups) {
          if (g.has_view[v]) continue;  // one region per view per object
          if (g.rep(0).cosine(d) >= tau_group) {
            target = &g;
            break;
          }
        }
      }
      if (!target) {
        groups.emplace_back();
        target = &groups.back();
        target->masks.assign(n_views, Mask{});
        target->has_view.assign(n_views, 0);
        target->desc_sum.assign(d.v.size(), 0.0);
        target->gt_id = region.region_id;
      }
      if (target->has_view[v]) {
        target->masks[v] = mask_union(target->masks[v], region.mask);
      } else {
        target->masks[v] = region.mask;
        target->has_view[v] = 1;
      }
      for (size_t k = 0; k < d.v.size(); ++k) target->desc_sum[k] += d.v[k];
      target->count += 1;
    }
  }
  return groups;
}

inline std::optional<ObjectSubset> try_segment(const GaussianScene& scene,
                                               const GroupedObject& group,
                                               std::span<const Camera> cams,
                                               double vote_fraction) {
  std::vector<Mask> masks;
  std::vector<Camera> view_cams;
  for (size_t v = 0; v < group.has_view.size(); ++v) {
    if (!group.has_view[v] || group.masks[v].empty()) continue;
    // region masks hug the silhouette; edge primitives project just outside
    masks.push_back(dilate(group.masks[v], 2));
    view_cams.push_back(cams[v]);
  }
  if (masks.empty()) return std::nullopt;
  try {
    return segment_by_masks(scene, masks, view_cams, vote_fraction);
  } catch (const EmptySelectionError&) {
    return std::nullopt;
  }
}

/// Majority instance label of a subset (>= half its primitives), or -1.
inline int majority_label(const GaussianScene& scene, const ObjectSubset& subset) {
  std::map<int, size_t> counts;
  for (int i : subset.indices) {
    const int id = scene.primitives[i].instance_id;
    if (id >= 0) ++counts[id];
  }
  for (const auto& [id, n] : counts) {
    if (2 * n >= subset.indices.size()) return id;
  }
  return -1;
}

inline void delete_primitives(GaussianScene& scene, std::vector<int> indices) {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  std::vector<GaussianPrimitive> kept;
  kept.reserve(scene.primitives.size() - indices.size());
  size_t cursor = 0;
  for (size_t i = 0; i < scene.primitives.size(); ++i) {
    if (cursor < indices.size() && static_cast<int>(i) == indices[cursor]) {
      ++cursor;
      continue;
    }
    kept.push_back(scene.primitives[i]);
  }
  scene.primitives = std::move(kept);
}

/// Index-preserving re-posing for gradient passes: excluded objects are
/// silenced via zero opacity instead of removal so gradient slots align.
inline GaussianScene reposed_for_grad(const GaussianScene& scene,
                                      const ReplayPose& rp) {
  GaussianScene out = scene;
  for (auto& p : out.primitives) {
    for (int id : rp.excluded_objects) {
      if (p.instance_id == id) {
        p.opacity = 0.0;
        break;
      }
    }
    const auto it = rp.inverse_map.find(p.instance_id);
    if (it != rp.inverse_map.end()) p.position = it->second.apply(p.position);
  }
  return out;
}

inline Mask labels_silhouette(const GaussianScene& scene,
                              std::span<const int> ids, const Camera& cam,
                              double threshold = 0.1) {
  const auto planes = render_label_weights(scene, cam, ids);
  Mask m(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      double w = 0.0;
      for (const auto& plane : planes) w += plane[static_cast<size_t>(y) * cam.width + x];
      m.at(x, y) = w >= threshold ? 1 : 0;
    }
  return m;
}

}  // namespace fusion_detail

// ---------------------------------------------------------------------------
// The state-transition operator
// ---------------------------------------------------------------------------

/// Fuses one new multi-view observation set into the recurrent scene:
/// change localization, object association, coarse-to-fine alignment of
/// moved objects, removal, voxel-guided completion of newly observed
/// regions, and replay-supervised optimization of the visible + fill
/// subsets. Observations identical to a render of the current state
/// short-circuit to a no-op.
inline FuseResult fuse_state(const RecurrentState& rs, const Observations& obs,
                             const FusionConfig& cfg = {}) {
  using namespace fusion_detail;
  if (rs.state_count < 1 || rs.scene.primitives.empty()) {
    throw StageError("validate", "recurrent state is empty");
  }
  if (obs.images.empty() || obs.images.size() != obs.cams.size()) {
    throw StageError("validate", "observations need matching images and cameras");
  }
  const bool gt_mode = !obs.prev_proposals.empty() || !obs.curr_proposals.empty();
  if (gt_mode && (obs.prev_proposals.size() != obs.cams.size() ||
                  obs.curr_proposals.size() != obs.cams.size())) {
    throw StageError("validate", "proposal sets must cover every view");
  }

  const int t_new = rs.state_count;
  const int n_views = static_cast<int>(obs.cams.size());
  Rng rng = Rng(cfg.rng_seed).fork(100 + static_cast<std::uint64_t>(t_new));

  FuseResult result;
  result.state = rs;
  RecurrentState& work = result.state;
  FusionTrace& trace = result.trace;
  trace.peak_primitives = work.scene.size();

  GaussianScene snapshot_scene = rs.scene;  // pre-update copy for replay targets

  auto run_stage = [&](const char* name, auto&& fn) {
    StageTimer timer;
    StageRecord rec;
    rec.name = name;
    try {
      fn(rec);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    rec.seconds = timer.elapsed();
    trace.stages.push_back(std::move(rec));
  };

  // -- 1. render the previous state under the current cameras
  std::vector<ImageBuffer> prev_renders(n_views);
  run_stage("render_previous", [&](StageRecord& rec) {
    parallel_for(n_views, [&](int v) {
      prev_renders[v] = render_image(work.scene, obs.cams[v], cfg.background);
    });
    rec.stats.emplace_back("views", n_views);
  });

  // -- 2. visual change localization + per-side regions
  std::vector<ObjectMaskSet> prev_regions(n_views), curr_regions(n_views);
  size_t total_prev_regions = 0, total_curr_regions = 0;
  run_stage("change_localization", [&](StageRecord& rec) {
    const PatchDescriptor extractor;
    std::vector<ChangeMask> cmasks(n_views);
    parallel_for(n_views, [&](int v) {
      const FeatureMap fa = extract_features(prev_renders[v], extractor);
      const FeatureMap fb = extract_features(obs.images[v], extractor);
      cmasks[v] = change_mask(fa, fb, cfg.tau_change);
    });
    for (int v = 0; v < n_views; ++v) {
      if (gt_mode) {
        prev_regions[v] =
            refine_object_masks(cmasks[v], obs.prev_proposals[v], cfg.min_region_area);
        curr_regions[v] =
            refine_object_masks(cmasks[v], obs.curr_proposals[v], cfg.min_region_area);
      } else {
        const ObjectMaskSet comps =
            refine_object_masks(cmasks[v], std::nullopt, cfg.min_region_area);
        int next_prev = 0, next_curr = 0;
        for (const auto& comp : comps.regions) {
          if (region_salient(prev_renders[v], comp.mask, cfg.saliency_max_cos)) {
            prev_regions[v].regions.push_back({next_prev++, comp.mask});
          }
          if (region_salient(obs.images[v], comp.mask, cfg.saliency_max_cos)) {
            curr_regions[v].regions.push_back({next_curr++, comp.mask});
          }
        }
      }
      total_prev_regions += prev_regions[v].regions.size();
      total_curr_regions += curr_regions[v].regions.size();
    }
    rec.stats.emplace_back("prev_regions", static_cast<double>(total_prev_regions));
    rec.stats.emplace_back("curr_regions", static_cast<double>(total_curr_regions));
  });

  if (total_prev_regions == 0 && total_curr_regions == 0) {
    trace.no_change_short_circuit = true;
    trace.total_seconds = 0.0;
    for (const auto& s : trace.stages) trace.total_seconds += s.seconds;
    result.metrics.state_count = t_new + 1;
    result.metrics.peak_primitive_count = work.scene.size();
    result.metrics.wall_seconds = trace.total_seconds;
    work.state_count = t_new + 1;
    work.scene.state_index = t_new;
    work.state_cameras.push_back(obs.cams);
    return result;
  }

  // -- 3. cross-state object association
  std::vector<GroupedObject> prev_groups, curr_groups;
  MatchResult match;
  run_stage("association", [&](StageRecord& rec) {
    prev_groups = group_regions(prev_regions, prev_renders, cfg.tau_group, gt_mode);
    curr_groups = group_regions(curr_regions, obs.images, cfg.tau_group, gt_mode);
    std::vector<RegionDescriptor> prev_reps, curr_reps;
    for (size_t i = 0; i < prev_groups.size(); ++i) {
      prev_reps.push_back(prev_groups[i].rep(static_cast<int>(i)));
    }
    for (size_t j = 0; j < curr_groups.size(); ++j) {
      curr_reps.push_back(curr_groups[j].rep(static_cast<int>(j)));
    }
    match = associate(prev_reps, curr_reps, cfg.tau_match);
    trace.match = match;
    rec.stats.emplace_back("moved", static_cast<double>(match.moved.size()));
    rec.stats.emplace_back("removed", static_cast<double>(match.removed.size()));
    rec.stats.emplace_back("added", static_cast<double>(match.added.size()));
  });

  if (match.moved.empty() && match.removed.empty() && match.added.empty()) {
    trace.no_change_short_circuit = true;
    for (const auto& s : trace.stages) trace.total_seconds += s.seconds;
    result.metrics.state_count = t_new + 1;
    result.metrics.peak_primitive_count = work.scene.size();
    result.metrics.wall_seconds = trace.total_seconds;
    work.state_count = t_new + 1;
    work.scene.state_index = t_new;
    work.state_cameras.push_back(obs.cams);
    return result;
  }

  // -- 4. quick current-state reconstruction (alignment targets + fill source)
  GaussianScene quick;
  const bool need_quick = !match.moved.empty() || cfg.enable_completion;
  run_stage("quick_reconstruction", [&](StageRecord& rec) {
    if (!need_quick) return;
    FusionConfig qcfg = cfg;
    quick = reconstruct_state(obs.images, obs.cams, nullptr,
                              cfg.quick_recon_iterations, qcfg,
                              0x71c3u + static_cast<std::uint64_t>(t_new));
    rec.stats.emplace_back("primitives", static_cast<double>(quick.size()));
  });
  trace.peak_primitives = std::max(trace.peak_primitives, work.scene.size() + quick.size());

  // -- 5. per moved object: segment both states, icp, refine, re-pose
  std::vector<Vec3> pre_move_positions;
  int next_id = work.next_object_id();
  run_stage("pose_alignment", [&](StageRecord& rec) {
    int skipped = 0;
    for (const auto& [pi, ci] : match.moved) {
      const auto o_prev =
          try_segment(work.scene, prev_groups[pi], obs.cams, cfg.vote_fraction);
      const auto o_curr =
          try_segment(quick, curr_groups[ci], obs.cams, cfg.vote_fraction);
      if (!o_prev || !o_curr) {
        ++skipped;
        continue;
      }
      int id = majority_label(work.scene, *o_prev);
      if (id < 0) id = next_id++;
      for (int i : o_prev->indices) {
        work.scene.primitives[i].instance_id = id;
        snapshot_scene.primitives[i].instance_id = id;
        pre_move_positions.push_back(work.scene.primitives[i].position);
      }
      const std::vector<Vec3> src = subset_centers(work.scene, *o_prev);
      const std::vector<Vec3> dst = subset_centers(quick, *o_curr);
      RigidTransform t_coarse;
      {
        RigidTransform t0;
        t0.translation = centroid(dst) - centroid(src);
        try {
          t_coarse = icp(src, dst, t0, cfg.icp);
        } catch (const DegenerateGeometryError&) {
          t_coarse = t0;
        }
      }
      const AlignmentResult aligned = refine_pose(
          work.scene, *o_prev, t_coarse, obs.cams, obs.images, dst, cfg.refine);
      apply_transform_in_place(work.scene, *o_prev, aligned.t_fine);
      work.transform_history[id].push_back({t_new, aligned.t_fine});
      if (!work.first_state.count(id)) work.first_state[id] = 0;
      trace.moved_object_ids.push_back(id);
      trace.alignments.push_back({id, aligned});
      trace.moved_indices_pre.insert(trace.moved_indices_pre.end(),
                                     o_prev->indices.begin(), o_prev->indices.end());
    }
    rec.stats.emplace_back("aligned", static_cast<double>(trace.moved_object_ids.size()));
    rec.stats.emplace_back("skipped", skipped);
  });

  // -- 6. removed objects: label (for replay validity) and delete
  run_stage("removal", [&](StageRecord& rec) {
    for (int rg : match.removed) {
      const auto o_rem =
          try_segment(work.scene, prev_groups[rg], obs.cams, cfg.vote_fraction);
      if (!o_rem) continue;
      int id = majority_label(work.scene, *o_rem);
      if (id < 0) id = next_id++;
      for (int i : o_rem->indices) {
        work.scene.primitives[i].instance_id = id;
        snapshot_scene.primitives[i].instance_id = id;
      }
      trace.removed_object_ids.push_back(id);
      trace.removed_indices_pre.insert(trace.removed_indices_pre.end(),
                                       o_rem->indices.begin(), o_rem->indices.end());
    }
    delete_primitives(work.scene, trace.removed_indices_pre);
    std::sort(trace.removed_indices_pre.begin(), trace.removed_indices_pre.end());
    rec.stats.emplace_back("removed_objects",
                           static_cast<double>(trace.removed_object_ids.size()));
    rec.stats.emplace_back("removed_primitives",
                           static_cast<double>(trace.removed_indices_pre.size()));
  });

  // -- 7. newly-observed region completion
  if (!work.grid_origin_set) {
    Vec3 lo{1e30, 1e30, 1e30};
    for (const auto& p : work.scene.primitives) {
      lo = {std::min(lo.x, p.position.x), std::min(lo.y, p.position.y),
            std::min(lo.z, p.position.z)};
    }
    work.grid_origin = lo - Vec3{1e-6, 1e-6, 1e-6};
    work.grid_origin_set = true;
  }
  const size_t fill_start = work.scene.size();
  run_stage("completion", [&](StageRecord& rec) {
    if (!cfg.enable_completion) return;
    for (int ai : match.added) {
      const auto o_add =
          try_segment(quick, curr_groups[ai], obs.cams, cfg.vote_fraction);
      if (!o_add) continue;
      const int id = next_id++;
      for (int i : o_add->indices) quick.primitives[i].instance_id = id;
      work.first_state[id] = t_new;
      trace.added_object_ids.push_back(id);
    }
    const VoxelGrid v_t = voxelize(quick, cfg.voxel_size, work.grid_origin);
    const VoxelGrid v_obj_prev =
        voxelize(pre_move_positions, cfg.voxel_size, work.grid_origin);
    const VoxelGrid v_rec = voxelize(work.scene, cfg.voxel_size, work.grid_origin);
    const auto fill_vox = fill_set(v_t, v_obj_prev, v_rec);
    const auto fill_prims = primitives_in(v_t, fill_vox);
    for (int j : fill_prims) {
      const auto& p = quick.primitives[j];
      if (p.opacity < cfg.fill_min_opacity) continue;
      work.scene.primitives.push_back(p);
    }
    trace.fill_inserted = static_cast<int>(work.scene.size() - fill_start);
    trace.peak_voxels = std::max({trace.peak_voxels, v_t.cells.size(),
                                  v_rec.cells.size()});
    rec.stats.emplace_back("fill_voxels", static_cast<double>(fill_vox.size()));
    rec.stats.emplace_back("fill_primitives", static_cast<double>(trace.fill_inserted));
  });
  trace.peak_primitives = std::max(trace.peak_primitives,
                                   work.scene.size() + quick.size());

  // -- 8. visibility-guided selection of the optimized object subset
  std::vector<int> vis_indices;
  run_stage("visibility", [&](StageRecord& rec) {
    std::set<int> moved_ids(trace.moved_object_ids.begin(),
                            trace.moved_object_ids.end());
    ObjectSubset moved_union;
    for (int i = 0; i < static_cast<int>(fill_start); ++i) {
      if (moved_ids.count(work.scene.primitives[i].instance_id)) {
        moved_union.indices.push_back(i);
      }
    }
    if (!cfg.enable_visibility || moved_union.indices.empty()) {
      vis_indices = moved_union.indices;
      rec.stats.emplace_back("mode", cfg.enable_visibility ? 0.0 : 1.0);
      return;
    }
    const VoxelGrid v_obj =
        voxelize(work.scene, moved_union, cfg.voxel_size, work.grid_origin);
    const VisibilityMask vis = visibility(v_obj, obs.cams, cfg.ray_stride);
    const auto keys = vis.sorted();
    vis_indices = primitives_in(v_obj, keys);
    trace.peak_voxels = std::max(trace.peak_voxels, v_obj.cells.size());
    rec.stats.emplace_back("object_voxels", static_cast<double>(v_obj.cells.size()));
    rec.stats.emplace_back("visible_voxels", static_cast<double>(vis.size()));
    rec.stats.emplace_back("visible_primitives", static_cast<double>(vis_indices.size()));
    rec.stats.emplace_back("object_primitives",
                           static_cast<double>(moved_union.indices.size()));
  });

  // -- 9. recurrent optimization of G_vis + G_fill with replay supervision
  run_stage("recurrent_optimization", [&](StageRecord& rec) {
    const size_t n0 = work.scene.size();
    std::vector<PrimRole> roles(n0, PrimRole::kFrozen);
    const PrimRole object_role =
        cfg.enable_completion ? PrimRole::kVisible : PrimRole::kFill;
    for (int i : vis_indices) roles[i] = object_role;
    for (size_t i = fill_start; i < n0; ++i) roles[i] = PrimRole::kFill;
    trace.optimized_indices_post = vis_indices;
    for (size_t i = fill_start; i < n0; ++i) {
      trace.optimized_indices_post.push_back(static_cast<int>(i));
    }

    const double extent = camera_rig_extent(obs.cams);
    SceneOptimizer opt(work.scene, roles, OptimizerParams::from(cfg, extent));

    // Replay caches: pseudo ground truth comes from the pre-update snapshot.
    RecurrentState snapshot_rs;
    snapshot_rs.scene = std::move(snapshot_scene);
    snapshot_rs.transform_history = rs.transform_history;
    snapshot_rs.first_state = rs.first_state;
    snapshot_rs.state_count = rs.state_count;
    snapshot_rs.state_cameras = rs.state_cameras;

    std::vector<std::optional<std::vector<ImageBuffer>>> pseudo_gt(t_new);
    std::vector<std::vector<Mask>> invalid(t_new);
    const bool any_staleness =
        !trace.removed_object_ids.empty() || !trace.added_object_ids.empty();

    auto ensure_replay = [&](int i) {
      if (pseudo_gt[i]) return;
      pseudo_gt[i] = replay_render(snapshot_rs, i, cfg.background);
      if (!any_staleness) return;
      const auto& cams_i = work.state_cameras.at(i);
      const auto snap_rp = replay_pose(snapshot_rs, i);
      const GaussianScene snap_reposed = reposed_scene(snapshot_rs, snap_rp);
      invalid[i].resize(cams_i.size());
      for (size_t v = 0; v < cams_i.size(); ++v) {
        Mask bad(cams_i[v].width, cams_i[v].height);
        if (!trace.removed_object_ids.empty()) {
          bad = labels_silhouette(snap_reposed, trace.removed_object_ids, cams_i[v]);
        }
        if (!trace.added_object_ids.empty()) {
          bad = mask_union(
              bad, labels_silhouette(work.scene, trace.added_object_ids, cams_i[v]));
        }
        invalid[i][v] = dilate(bad, 2);
      }
    };

    LossWorkspace ws_curr, ws_replay;
    RenderGradients grads, replay_grads;
    for (int it = 0; it < cfg.iterations; ++it) {
      grads.resize(work.scene.size());
      LossStep step;
      if (cfg.lambda_r > 0.0) {
        step.replay_index = rng.uniform_int(0, t_new - 1);
        ensure_replay(step.replay_index);
        const auto rp = replay_pose(work, step.replay_index);
        const GaussianScene reposed = reposed_for_grad(work.scene, rp);
        replay_grads.resize(work.scene.size());
        const auto& cams_i = work.state_cameras.at(step.replay_index);
        step.l_replay = photometric_views_loss(
            reposed, cams_i, *pseudo_gt[step.replay_index],
            invalid[step.replay_index], cfg.lambda_s, cfg.lambda_r, cfg.background,
            &replay_grads, &opt.trainable_mask(), ws_replay);
        // Rotate position gradients of re-posed objects back to the
        // current-state frame before merging.
        for (const auto& [id, m] : rp.inverse_map) {
          const Mat3 rt = m.rotation.transpose();
          for (size_t i = 0; i < work.scene.size(); ++i) {
            if (work.scene.primitives[i].instance_id != id) continue;
            replay_grads.d_position[i] = rt * replay_grads.d_position[i];
          }
        }
        for (size_t i = 0; i < work.scene.size(); ++i) {
          if (!opt.trainable_mask()[i]) continue;
          grads.d_color[i] += replay_grads.d_color[i];
          grads.d_opacity[i] += replay_grads.d_opacity[i];
          grads.d_position[i] += replay_grads.d_position[i];
          grads.d_scale[i] += replay_grads.d_scale[i];
        }
      }
      step.l_curr = photometric_views_loss(
          work.scene, obs.cams, obs.images, {}, cfg.lambda_s, 1.0 - cfg.lambda_r,
          cfg.background, &grads, &opt.trainable_mask(), ws_curr);
      step.total = cfg.lambda_r * step.l_replay + (1.0 - cfg.lambda_r) * step.l_curr;
      opt.step(grads);
      if ((it + 1) % cfg.densify_interval == 0 && it + 1 < cfg.iterations) {
        opt.densify_and_prune(rng);
      }
      result.losses.steps.push_back(step);
      trace.peak_primitives =
          std::max(trace.peak_primitives, work.scene.size() + quick.size());
    }
    rec.stats.emplace_back("iterations", cfg.iterations);
    rec.stats.emplace_back("optimized",
                           static_cast<double>(trace.optimized_indices_post.size()));
    rec.stats.emplace_back("final_primitives", static_cast<double>(work.scene.size()));
  });

  work.state_count = t_new + 1;
  work.scene.state_index = t_new;
  work.state_cameras.push_back(obs.cams);

  for (const auto& s : trace.stages) trace.total_seconds += s.seconds;
  result.metrics.state_count = work.state_count;
  result.metrics.wall_seconds = trace.total_seconds;
  result.metrics.peak_primitive_count = trace.peak_primitives;
  result.metrics.peak_voxel_count = trace.peak_voxels;
  return result;
}

}  // namespace splatfuse
