#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "splatfuse/fuse.hpp"
#include "splatfuse/fusion.hpp"
#include "splatfuse/io_json.hpp"
#include "splatfuse/metrics.hpp"
#include "splatfuse/synth.hpp"

namespace splatfuse {

// ---------------------------------------------------------------------------
// Scenario presets
// ---------------------------------------------------------------------------

struct Scenario {
  std::string name;
  SceneSpec scene;
  CameraRigSpec rig;
  StateScript script;
  TestStateSpec test;
};

namespace harness_detail {

inline Vec3 palette(int i) {
  static const Vec3 colors[] = {
      {0.86, 0.16, 0.13}, {0.15, 0.32, 0.88}, {0.16, 0.78, 0.24},
      {0.93, 0.84, 0.18}, {0.78, 0.22, 0.82}, {0.15, 0.80, 0.80},
      {0.95, 0.52, 0.12}, {0.55, 0.30, 0.12},
  };
  return colors[i % 8];
}

inline ObjectSpec make_box(int color_idx, const Vec3& half, const Vec3& pos,
                           int count) {
  ObjectSpec o;
  o.shape = ObjectSpec::Shape::kBox;
  o.size = half;
  o.color = palette(color_idx);
  o.primitive_count = count;
  o.initial_pose.translation = pos;
  return o;
}

inline ObjectSpec make_sphere(int color_idx, double radius, const Vec3& pos,
                              int count) {
  ObjectSpec o;
  o.shape = ObjectSpec::Shape::kSphere;
  o.size = {radius, radius, radius};
  o.color = palette(color_idx);
  o.primitive_count = count;
  o.initial_pose.translation = pos;
  return o;
}

inline RigidTransform translate(double x, double y, double z = 0.0) {
  RigidTransform t;
  t.translation = {x, y, z};
  return t;
}

}  // namespace harness_detail

/// Named harness scenes. All share a 2.8 m room and a 5-camera ring at
/// 128x128 so runtimes stay desk-scale.
inline Scenario make_scenario(const std::string& name) {
  using namespace harness_detail;
  Scenario sc;
  sc.name = name;
  sc.rig.count = 5;
  sc.rig.radius = 2.7;
  sc.rig.height = 2.2;
  sc.rig.look_at = {0.0, 0.0, 0.15};
  sc.scene.room_half_extents = {1.4, 1.4, 0.9};
  sc.scene.surface_spacing = 0.075;
  sc.scene.surface_scale = 0.038;

  if (name == "two_blobs") {
    sc.scene.objects = {
        make_sphere(0, 0.16, {-0.5, -0.35, 0.18}, 300),
        make_box(1, {0.16, 0.13, 0.15}, {0.45, 0.4, 0.15}, 300),
    };
  } else if (name == "move_short") {
    sc.scene.objects = {
        make_box(0, {0.17, 0.14, 0.15}, {-0.35, -0.3, 0.15}, 320),
        make_sphere(1, 0.15, {0.5, 0.35, 0.16}, 280),
    };
    sc.script.steps = {
        {ScriptAction::move(0, translate(0.62, 0.18))},
        {ScriptAction::move(1, translate(-0.45, -0.52))},
    };
  } else if (name == "occlusion") {
    sc.scene.objects = {
        make_box(0, {0.2, 0.17, 0.16}, {-0.2, -0.15, 0.16}, 360),
        make_sphere(2, 0.14, {0.55, 0.45, 0.15}, 260),
    };
    sc.script.steps = {
        {ScriptAction::move(0, translate(0.58, 0.12))},
        {ScriptAction::move(0, translate(-0.15, 0.55))},
    };
  } else if (name == "move_add_remove") {
    sc.scene.objects = {
        make_box(0, {0.16, 0.14, 0.15}, {-0.45, -0.4, 0.15}, 300),
        make_sphere(1, 0.15, {0.5, -0.4, 0.16}, 280),
        make_sphere(3, 0.13, {0.0, 0.55, 0.14}, 240),
    };
    ObjectSpec added = make_box(6, {0.13, 0.13, 0.13}, {0.55, 0.5, 0.14}, 260);
    sc.script.steps = {
        {ScriptAction::move(0, translate(0.5, 0.3)), ScriptAction::remove(1),
         ScriptAction::add(added)},
    };
  } else if (name == "long_moves") {
    sc.scene.objects = {
        make_box(0, {0.17, 0.14, 0.15}, {-0.5, -0.45, 0.15}, 300),
        make_sphere(1, 0.15, {0.55, 0.4, 0.16}, 280),
        make_box(2, {0.13, 0.13, 0.14}, {0.45, -0.5, 0.14}, 260),
    };
    sc.script.steps = {
        {ScriptAction::move(0, translate(0.55, 0.2))},
        {ScriptAction::move(1, translate(-0.5, -0.25))},
        {ScriptAction::move(2, translate(-0.3, 0.6))},
        {ScriptAction::move(0, translate(0.15, 0.55))},
        {ScriptAction::move(1, translate(0.55, -0.3))},
        {ScriptAction::move(2, translate(-0.45, -0.35))},
    };
  } else if (name == "noise_pose") {
    sc.scene.objects = {
        make_box(0, {0.18, 0.15, 0.16}, {-0.3, -0.25, 0.16}, 340),
    };
    sc.script.steps = {
        {ScriptAction::move(0, translate(0.6, 0.35))},
    };
  } else {
    throw Error("make_scenario: unknown scenario '" + name + "'");
  }
  return sc;
}

inline GroundTruth generate_scenario(const std::string& name, std::uint64_t seed) {
  const Scenario sc = make_scenario(name);
  return generate(sc.scene, sc.rig, sc.script, seed, sc.test);
}

// ---------------------------------------------------------------------------
// Pipeline runner
// ---------------------------------------------------------------------------

inline Observations make_observations(const GroundTruth& gt, int state,
                                      bool gt_masks) {
  Observations obs;
  obs.images = gt.renders.at(state);
  obs.cams = gt.cameras;
  if (gt_masks) {
    const int n_views = gt.view_count();
    obs.prev_proposals.resize(n_views);
    obs.curr_proposals.resize(n_views);
    for (int v = 0; v < n_views; ++v) {
      for (const auto& [id, views] : gt.masks.at(state - 1)) {
        obs.prev_proposals[v].regions.push_back({id, views.at(v)});
      }
      for (const auto& [id, views] : gt.masks.at(state)) {
        obs.curr_proposals[v].regions.push_back({id, views.at(v)});
      }
    }
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Evaluation against ground truth
// ---------------------------------------------------------------------------

namespace harness_detail {

/// Composition of the ground-truth moves taking object `id` from its pose at
/// `from_state` to the final state, then to the held-out test pose.
inline bool test_pose_transform(const GroundTruth& gt, int id, int from_state,
                                RigidTransform& out) {
  RigidTransform m;  // identity
  for (size_t s = from_state; s < gt.applied_steps.size(); ++s) {
    for (const auto& a : gt.applied_steps[s]) {
      if (a.type == ScriptAction::Type::kMove && a.object_id == id) {
        m = compose(a.transform, m);
      }
      if (a.type == ScriptAction::Type::kRemove && a.object_id == id) return false;
    }
  }
  const auto it = gt.test_transforms.find(id);
  if (it == gt.test_transforms.end()) return false;
  out = compose(it->second, m);
  return true;
}

}  // namespace harness_detail

/// Re-poses every ground-truth object of `from_state` into the held-out
/// test configuration. Objects are located in the scene via the GT instance
/// masks of that state (the evaluation protocol knows the object regions);
/// all subsets are segmented before any transform is applied.
inline GaussianScene apply_test_configuration(const GaussianScene& scene,
                                              const GroundTruth& gt,
                                              int from_state,
                                              double vote_fraction = 0.5) {
  GaussianScene out = scene;
  std::vector<std::pair<ObjectSubset, RigidTransform>> moves;
  for (const auto& [id, views] : gt.masks.at(from_state)) {
    RigidTransform m;
    if (!harness_detail::test_pose_transform(gt, id, from_state, m)) continue;
    // instance masks hug the blend-weight silhouette; a small dilation keeps
    // edge primitives whose centers project just outside
    std::vector<Mask> grown;
    grown.reserve(views.size());
    for (const auto& v : views) grown.push_back(dilate(v, 2));
    try {
      const ObjectSubset subset =
          segment_by_masks(out, grown, gt.cameras, vote_fraction);
      moves.emplace_back(subset, m);
    } catch (const EmptySelectionError&) {
      continue;  // object not represented in this reconstruction
    }
  }
  for (const auto& [subset, m] : moves) apply_transform_in_place(out, subset, m);
  return out;
}

struct EvalResult {
  double psnr = 0.0;
  double ssim = 0.0;
};

/// Mean PSNR/SSIM of a scene's renders against reference images.
inline EvalResult eval_renders(const GaussianScene& scene,
                               std::span<const Camera> cams,
                               std::span<const ImageBuffer> refs,
                               const Vec3& background) {
  EvalResult r;
  std::vector<double> psnrs(cams.size(), 0.0), ssims(cams.size(), 0.0);
  parallel_for(static_cast<int>(cams.size()), [&](int v) {
    const ImageBuffer img = render_image(scene, cams[v], background);
    psnrs[v] = psnr(img, refs[v]);
    ssims[v] = ssim(img, refs[v]);
  });
  for (size_t v = 0; v < cams.size(); ++v) {
    r.psnr += psnrs[v] / static_cast<double>(cams.size());
    r.ssim += ssims[v] / static_cast<double>(cams.size());
  }
  return r;
}

/// Test-state synthesis quality from the reconstruction at `from_state`.
inline EvalResult eval_test_state(const GaussianScene& scene, const GroundTruth& gt,
                                  int from_state, const Vec3& background) {
  const GaussianScene test = apply_test_configuration(scene, gt, from_state);
  return eval_renders(test, gt.cameras, gt.test_renders, background);
}

/// Replay fidelity: render the recurrent state re-posed at past state i and
/// compare against that state's ground-truth views.
inline double eval_replay_psnr(const RecurrentState& rs, const GroundTruth& gt,
                               int state, const Vec3& background) {
  const auto imgs = replay_render(rs, state, background);
  double total = 0.0;
  for (size_t v = 0; v < imgs.size(); ++v) {
    total += psnr(imgs[v], gt.renders.at(state).at(v)) /
             static_cast<double>(imgs.size());
  }
  return total;
}

struct PipelineResult {
  RecurrentState state;
  std::vector<FuseResult> fuses;    // one per fused state 1..T-1
  std::vector<MetricsRow> rows;     // one per state 0..T-1 (test eval filled)
  double initial_seconds = 0.0;
};

struct RunOptions {
  FusionConfig fusion;
  bool use_gt_masks = true;
  bool evaluate_per_state = true;
};

/// Initial reconstruction of state 0 followed by one fuse_state per
/// subsequent state. The per-state rows carry test-state PSNR/SSIM when
/// evaluation is enabled.
inline PipelineResult run_pipeline(const GroundTruth& gt, const RunOptions& opt,
                                   int max_states = -1) {
  PipelineResult result;
  const int n_states =
      max_states < 0 ? gt.state_count() : std::min(max_states, gt.state_count());
  FusionConfig cfg = opt.fusion;
  cfg.background = gt.background;
  cfg.refine.background = gt.background;

  const auto t0 = std::chrono::steady_clock::now();
  GaussianScene initial =
      reconstruct_state(gt.renders.at(0), gt.cameras, nullptr,
                        cfg.initial_recon_iterations, cfg, 0xA11CEu);
  result.initial_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  RecurrentState rs = make_initial_state(std::move(initial), gt.cameras);
  {
    MetricsRow row;
    row.state_count = 1;
    row.wall_seconds = result.initial_seconds;
    row.peak_primitive_count = rs.scene.size();
    if (opt.evaluate_per_state) {
      const EvalResult ev = eval_test_state(rs.scene, gt, 0, cfg.background);
      row.test_psnr = ev.psnr;
      row.test_ssim = ev.ssim;
    }
    result.rows.push_back(row);
  }

  for (int t = 1; t < n_states; ++t) {
    const Observations obs = make_observations(gt, t, opt.use_gt_masks);
    FuseResult fr = fuse_state(rs, obs, cfg);
    rs = fr.state;
    MetricsRow row = fr.metrics;
    if (opt.evaluate_per_state) {
      const EvalResult ev = eval_test_state(rs.scene, gt, t, cfg.background);
      row.test_psnr = ev.psnr;
      row.test_ssim = ev.ssim;
    }
    result.rows.push_back(row);
    result.fuses.push_back(std::move(fr));
  }
  result.state = std::move(rs);
  return result;
}

// ---------------------------------------------------------------------------
// Pose-noise trials
// ---------------------------------------------------------------------------

/// Noise magnitudes are stated for a ~4 m reference scene; desk scenes
/// scale them by the radius ratio.
inline double scene_extent_scale(const GroundTruth& gt) {
  Vec3 c;
  const auto& prims = gt.scenes.at(0).primitives;
  for (const auto& p : prims) c += p.position;
  c = c / static_cast<double>(prims.size());
  double r = 0.0;
  for (const auto& p : prims) r = std::max(r, (p.position - c).norm());
  return r / 2.0;
}

struct PoseTrialResult {
  double rot_err_deg = 0.0;
  double trans_err_m = 0.0;
  double psnr_initial = 0.0;
  double psnr_refined = 0.0;
};

/// One seeded trial: perturb the ground-truth move of `object_id` at step
/// `step` (state step -> step+1) by a fixed-magnitude random rotation (about
/// the target centroid) and translation, then recover it with icp + refine
/// and measure pose error and object-region PSNR before/after.
inline PoseTrialResult pose_noise_trial(const GroundTruth& gt, int step,
                                        int object_id, double rot_deg,
                                        double trans_m, std::uint64_t seed,
                                        const FusionConfig& cfg) {
  const GaussianScene& prev = gt.scenes.at(step);
  const GaussianScene& curr = gt.scenes.at(step + 1);
  RigidTransform t_gt;
  bool found = false;
  for (const auto& a : gt.applied_steps.at(step)) {
    if (a.type == ScriptAction::Type::kMove && a.object_id == object_id) {
      t_gt = a.transform;
      found = true;
    }
  }
  if (!found) throw Error("pose_noise_trial: object not moved at that step");

  const ObjectSubset subset = subset_by_label(prev, object_id);
  const std::vector<Vec3> src = subset_centers(prev, subset);
  const std::vector<Vec3> targets = subset_centers(curr, subset_by_label(curr, object_id));
  const Vec3 c_target = centroid(targets);

  Rng rng(seed);
  Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
  if (axis.norm() < 1e-9) axis = {0, 0, 1};
  axis = axis.normalized();
  const double angle = rot_deg * M_PI / 180.0;
  const double dir = rng.uniform(0.0, 2.0 * M_PI);
  const double zf = rng.uniform(-0.3, 0.3);
  Vec3 delta{std::cos(dir), std::sin(dir), zf};
  delta = delta.normalized() * trans_m;

  RigidTransform noise{so3_exp(axis * angle), {}};
  noise = compose(RigidTransform{Mat3::identity(), c_target},
                  compose(noise, RigidTransform{Mat3::identity(), -c_target}));
  noise.translation += delta;
  const RigidTransform t_init = compose(noise, t_gt);

  // coarse stage exactly as the pipeline runs it: centroid shift, then ICP
  RigidTransform t_start = t_init;
  {
    std::vector<Vec3> at_init;
    at_init.reserve(src.size());
    for (const Vec3& p : src) at_init.push_back(t_init.apply(p));
    t_start.translation += centroid(targets) - centroid(at_init);
  }
  RigidTransform t_icp;
  try {
    t_icp = icp(src, targets, t_start, cfg.icp);
  } catch (const DegenerateGeometryError&) {
    t_icp = t_start;
  }
  RefineConfig rcfg = cfg.refine;
  rcfg.background = gt.background;
  const AlignmentResult aligned = refine_pose(prev, subset, t_icp, gt.cameras,
                                              gt.renders.at(step + 1), targets, rcfg);

  PoseTrialResult out;
  out.rot_err_deg =
      rotation_angle_between(aligned.t_fine.rotation, t_gt.rotation) * 180.0 / M_PI;
  const Vec3 c0 = centroid(src);
  out.trans_err_m = (aligned.t_fine.apply(c0) - t_gt.apply(c0)).norm();

  const auto region_psnr = [&](const RigidTransform& t) {
    const GaussianScene posed = apply_transform(prev, subset, t);
    double total = 0.0;
    int used = 0;
    for (int v = 0; v < gt.view_count(); ++v) {
      const Mask& gt_mask = gt.masks.at(step + 1).at(object_id).at(v);
      if (gt_mask.empty()) continue;
      const Mask region = dilate(gt_mask, 4);
      const ImageBuffer img = render_image(posed, gt.cameras[v], gt.background);
      total += psnr(img, gt.renders.at(step + 1).at(v), &region);
      ++used;
    }
    return used > 0 ? total / used : 0.0;
  };
  out.psnr_initial = region_psnr(t_init);
  out.psnr_refined = region_psnr(aligned.t_fine);
  return out;
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string scenario;  // empty = experiment-specific default
  std::uint64_t seed = 7;
  std::vector<double> lambda_values{0.2, 0.4, 0.5, 0.6, 0.8};
  std::vector<double> voxel_sizes{0.5, 0.1, 0.05, 0.01};
  std::vector<double> rot_noise_deg{5.0, 10.0};
  std::vector<double> trans_noise_m{0.25, 0.5};
  int noise_trials = 8;
  bool use_gt_masks = true;
  FusionConfig fusion;
};

/// Rows R / R+N / R+N+V: completion and visibility toggled on top of the
/// recurrent fusion baseline, reporting test-state quality and fusion time.
inline Table run_ablation(const ExperimentConfig& xc) {
  const std::string scenario = xc.scenario.empty() ? "occlusion" : xc.scenario;
  const GroundTruth gt = generate_scenario(scenario, xc.seed);
  Table table;
  table.name = "ablation";
  table.headers = {"completion", "visibility", "psnr", "ssim",
                   "fusion_seconds", "optimized_primitives"};
  const std::pair<bool, bool> rows[] = {{false, false}, {true, false}, {true, true}};
  for (const auto& [completion, vis] : rows) {
    RunOptions opt;
    opt.fusion = xc.fusion;
    opt.fusion.enable_completion = completion;
    opt.fusion.enable_visibility = vis;
    opt.use_gt_masks = xc.use_gt_masks;
    opt.evaluate_per_state = false;
    const PipelineResult pr = run_pipeline(gt, opt);
    const EvalResult ev =
        eval_test_state(pr.state.scene, gt, gt.state_count() - 1, gt.background);
    double fusion_seconds = 0.0;
    double optimized = 0.0;
    for (const auto& f : pr.fuses) {
      fusion_seconds += f.trace.total_seconds;
      optimized += static_cast<double>(f.trace.optimized_indices_post.size());
    }
    table.rows.push_back({completion ? 1.0 : 0.0, vis ? 1.0 : 0.0, ev.psnr, ev.ssim,
                          fusion_seconds, optimized});
  }
  return table;
}

/// Initial vs refined object-region PSNR under rotation / translation noise
/// levels (magnitudes scaled by the rig-extent ratio).
inline Table run_noise_sweep(const ExperimentConfig& xc) {
  const std::string scenario = xc.scenario.empty() ? "noise_pose" : xc.scenario;
  const GroundTruth gt = generate_scenario(scenario, xc.seed);
  const double extent_scale = scene_extent_scale(gt);
  int object_id = -1;
  for (const auto& a : gt.applied_steps.at(0)) {
    if (a.type == ScriptAction::Type::kMove) object_id = a.object_id;
  }
  if (object_id < 0) throw Error("run_noise_sweep: scenario has no move at step 0");

  Table table;
  table.name = "pose_noise";
  table.headers = {"is_translation", "level",          "initial_psnr",
                   "refined_psnr",   "rot_err_deg",    "trans_err_m",
                   "recovered_frac", "trials"};
  auto run_level = [&](bool is_translation, double level) {
    double init_sum = 0, ref_sum = 0, rot_sum = 0, trans_sum = 0;
    int recovered = 0;
    for (int k = 0; k < xc.noise_trials; ++k) {
      const PoseTrialResult r = pose_noise_trial(
          gt, 0, object_id, is_translation ? 0.0 : level,
          is_translation ? level * extent_scale : 0.0,
          xc.seed * 1000 + k + (is_translation ? 500 : 0), xc.fusion);
      init_sum += r.psnr_initial;
      ref_sum += r.psnr_refined;
      rot_sum += r.rot_err_deg;
      trans_sum += r.trans_err_m;
      if (r.rot_err_deg < 0.5 && r.trans_err_m < 0.01) ++recovered;
    }
    const double n = xc.noise_trials;
    table.rows.push_back({is_translation ? 1.0 : 0.0, level, init_sum / n,
                          ref_sum / n, rot_sum / n, trans_sum / n, recovered / n,
                          n});
  };
  for (double deg : xc.rot_noise_deg) run_level(false, deg);
  for (double m : xc.trans_noise_m) run_level(true, m);
  return table;
}

/// Incremental fusion over a long sequence: per-state memory proxy, wall
/// time, and test-state quality.
inline Table run_scaling(const ExperimentConfig& xc) {
  const std::string scenario = xc.scenario.empty() ? "long_moves" : xc.scenario;
  const GroundTruth gt = generate_scenario(scenario, xc.seed);
  RunOptions opt;
  opt.fusion = xc.fusion;
  opt.use_gt_masks = xc.use_gt_masks;
  opt.evaluate_per_state = true;
  const PipelineResult pr = run_pipeline(gt, opt);
  Table table;
  table.name = "scaling";
  table.headers = {"state_count", "psnr",           "ssim",
                   "seconds",     "peak_primitives", "peak_voxels"};
  for (const auto& row : pr.rows) {
    table.rows.push_back({static_cast<double>(row.state_count), row.test_psnr,
                          row.test_ssim, row.wall_seconds,
                          static_cast<double>(row.peak_primitive_count),
                          static_cast<double>(row.peak_voxel_count)});
  }
  return table;
}

/// Grid runs over the replay weight and the voxel size.
inline std::pair<Table, Table> run_sweeps(const ExperimentConfig& xc) {
  const std::string scenario = xc.scenario.empty() ? "occlusion" : xc.scenario;
  const GroundTruth gt = generate_scenario(scenario, xc.seed);

  Table lambda_table;
  lambda_table.name = "lambda_sweep";
  lambda_table.headers = {"lambda_r", "psnr", "ssim", "fusion_seconds"};
  for (double lr : xc.lambda_values) {
    RunOptions opt;
    opt.fusion = xc.fusion;
    opt.fusion.lambda_r = lr;
    opt.use_gt_masks = xc.use_gt_masks;
    opt.evaluate_per_state = false;
    const PipelineResult pr = run_pipeline(gt, opt);
    const EvalResult ev =
        eval_test_state(pr.state.scene, gt, gt.state_count() - 1, gt.background);
    double seconds = 0.0;
    for (const auto& f : pr.fuses) seconds += f.trace.total_seconds;
    lambda_table.rows.push_back({lr, ev.psnr, ev.ssim, seconds});
  }

  Table voxel_table;
  voxel_table.name = "voxel_sweep";
  voxel_table.headers = {"voxel_size", "psnr", "ssim", "fusion_seconds",
                         "peak_voxels"};
  for (double vs : xc.voxel_sizes) {
    RunOptions opt;
    opt.fusion = xc.fusion;
    opt.fusion.voxel_size = vs;
    opt.use_gt_masks = xc.use_gt_masks;
    opt.evaluate_per_state = false;
    const PipelineResult pr = run_pipeline(gt, opt);
    const EvalResult ev =
        eval_test_state(pr.state.scene, gt, gt.state_count() - 1, gt.background);
    double seconds = 0.0;
    double peak_vox = 0.0;
    for (const auto& f : pr.fuses) {
      seconds += f.trace.total_seconds;
      peak_vox = std::max(peak_vox, static_cast<double>(f.trace.peak_voxels));
    }
    voxel_table.rows.push_back({vs, ev.psnr, ev.ssim, seconds, peak_vox});
  }
  return {lambda_table, voxel_table};
}

}  // namespace splatfuse
