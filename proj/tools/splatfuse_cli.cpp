// Command-line front end: dataset generation, recurrent fusion, evaluation,
// object manipulation, experiment sweeps, and single-scene rendering.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "splatfuse/splatfuse.hpp"

namespace fs = std::filesystem;
using namespace splatfuse;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path);
  json j;
  f >> j;
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path);
  f << j.dump(2) << "\n";
}

Vec3 vec3_from(const json& a) {
  return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
}

ObjectSpec object_spec_from(const json& j) {
  ObjectSpec o;
  const std::string shape = j.value("shape", std::string("sphere"));
  o.shape = shape == "box" ? ObjectSpec::Shape::kBox : ObjectSpec::Shape::kSphere;
  if (j.contains("size")) o.size = vec3_from(j.at("size"));
  if (j.contains("color")) o.color = vec3_from(j.at("color"));
  o.primitive_count = j.value("count", o.primitive_count);
  if (j.contains("position")) o.initial_pose.translation = vec3_from(j.at("position"));
  o.prim_scale = j.value("prim_scale", o.prim_scale);
  o.opacity = j.value("opacity", o.opacity);
  return o;
}

Scenario scenario_from_json(const json& j) {
  if (j.contains("scenario")) {
    return make_scenario(j.at("scenario").get<std::string>());
  }
  Scenario sc;
  sc.name = j.value("name", std::string("custom"));
  if (j.contains("room_half_extents")) {
    sc.scene.room_half_extents = vec3_from(j.at("room_half_extents"));
  }
  if (j.contains("floor_color")) sc.scene.floor_color = vec3_from(j.at("floor_color"));
  if (j.contains("wall_color")) sc.scene.wall_color = vec3_from(j.at("wall_color"));
  sc.scene.surface_spacing = j.value("surface_spacing", sc.scene.surface_spacing);
  sc.scene.surface_scale = j.value("surface_scale", sc.scene.surface_scale);
  sc.scene.color_noise = j.value("color_noise", sc.scene.color_noise);
  if (j.contains("objects")) {
    for (const auto& o : j.at("objects")) sc.scene.objects.push_back(object_spec_from(o));
  }
  if (j.contains("rig")) {
    const auto& r = j.at("rig");
    sc.rig.count = r.value("count", sc.rig.count);
    sc.rig.radius = r.value("radius", sc.rig.radius);
    sc.rig.height = r.value("height", sc.rig.height);
    if (r.contains("look_at")) sc.rig.look_at = vec3_from(r.at("look_at"));
    sc.rig.image_width = r.value("width", sc.rig.image_width);
    sc.rig.image_height = r.value("height_px", sc.rig.image_height);
    sc.rig.fov_deg = r.value("fov_deg", sc.rig.fov_deg);
  }
  if (j.contains("script")) {
    for (const auto& step : j.at("script")) {
      std::vector<ScriptAction> actions;
      for (const auto& a : step) {
        const std::string type = a.at("type").get<std::string>();
        if (type == "move") {
          actions.push_back(ScriptAction::move(a.at("object").get<int>(),
                                               transform_from_json(a.at("transform"))));
        } else if (type == "add") {
          actions.push_back(ScriptAction::add(object_spec_from(a.at("object_spec"))));
        } else if (type == "remove") {
          actions.push_back(ScriptAction::remove(a.at("object").get<int>()));
        } else {
          throw ParseError("unknown script action type '" + type + "'");
        }
      }
      sc.script.steps.push_back(std::move(actions));
    }
  }
  if (j.contains("test")) {
    const auto& t = j.at("test");
    sc.test.max_yaw_deg = t.value("max_yaw_deg", sc.test.max_yaw_deg);
    sc.test.min_move_m = t.value("min_move_m", sc.test.min_move_m);
    sc.test.max_move_m = t.value("max_move_m", sc.test.max_move_m);
  }
  return sc;
}

// Recurrent-state persistence for eval/manipulate after a fuse run.
void save_state_meta(const RecurrentState& rs, const std::string& path) {
  json j;
  j["state_count"] = rs.state_count;
  j["grid_origin"] = {rs.grid_origin.x, rs.grid_origin.y, rs.grid_origin.z};
  json hist = json::object();
  for (const auto& [id, records] : rs.transform_history) {
    json arr = json::array();
    for (const auto& r : records) {
      arr.push_back({{"state", r.state_index},
                     {"transform", transform_to_json(r.transform)}});
    }
    hist[std::to_string(id)] = arr;
  }
  j["history"] = hist;
  json first = json::object();
  for (const auto& [id, s] : rs.first_state) first[std::to_string(id)] = s;
  j["first_state"] = first;
  write_json_file(j, path);
}

RecurrentState load_run_state(const std::string& run_dir,
                              const std::vector<Camera>& cams) {
  RecurrentState rs;
  rs.scene = load_scene(run_dir + "/final_scene.gsc");
  const json j = read_json_file(run_dir + "/state.json");
  rs.state_count = j.at("state_count").get<int>();
  rs.grid_origin = vec3_from(j.at("grid_origin"));
  rs.grid_origin_set = true;
  for (const auto& [key, arr] : j.at("history").items()) {
    auto& records = rs.transform_history[std::stoi(key)];
    for (const auto& r : arr) {
      records.push_back(
          {r.at("state").get<int>(), transform_from_json(r.at("transform"))});
    }
  }
  for (const auto& [key, s] : j.at("first_state").items()) {
    rs.first_state[std::stoi(key)] = s.get<int>();
  }
  rs.state_cameras.assign(rs.state_count, cams);
  return rs;
}

int cmd_generate(const std::string& spec_path, std::uint64_t seed,
                 const std::string& out_dir) {
  Scenario sc = spec_path.empty() ? make_scenario("move_short")
                                  : scenario_from_json(read_json_file(spec_path));
  const GroundTruth gt = generate(sc.scene, sc.rig, sc.script, seed, sc.test);
  save_ground_truth(gt, out_dir);
  std::printf("generated %d states x %d views into %s\n", gt.state_count(),
              gt.view_count(), out_dir.c_str());
  return 0;
}

int cmd_fuse(const std::string& data_dir, const std::string& config_path,
             const std::string& out_dir, bool descriptor_masks) {
  const GroundTruth gt = load_ground_truth(data_dir);
  RunOptions opt;
  if (!config_path.empty()) {
    opt.fusion = fusion_config_from_json(read_json_file(config_path));
  }
  opt.use_gt_masks = !descriptor_masks;
  opt.evaluate_per_state = true;
  const PipelineResult pr = run_pipeline(gt, opt);

  fs::create_directories(out_dir + "/states");
  for (int t = 0; t < pr.state.state_count; ++t) {
    fs::create_directories(out_dir + "/states/" + std::to_string(t));
  }
  // state-0 checkpoint is the initial reconstruction; later ones come from
  // the per-state fuse results
  {
    json manifest;
    manifest["config"] = fusion_config_to_json(opt.fusion);
    manifest["use_gt_masks"] = opt.use_gt_masks;
    manifest["initial_seconds"] = pr.initial_seconds;
    manifest["states"] = json::array();
    for (size_t k = 0; k < pr.fuses.size(); ++k) {
      json s = trace_to_json(pr.fuses[k].trace);
      s["state"] = static_cast<int>(k) + 1;
      manifest["states"].push_back(s);
    }
    write_json_file(manifest, out_dir + "/manifest.json");
  }
  save_scene(pr.state.scene, out_dir + "/final_scene.gsc");
  save_state_meta(pr.state, out_dir + "/state.json");

  Table metrics;
  metrics.name = "metrics";
  metrics.headers = {"state_count", "psnr", "ssim", "seconds", "peak_primitives",
                     "peak_voxels"};
  for (const auto& row : pr.rows) {
    metrics.rows.push_back({static_cast<double>(row.state_count), row.test_psnr,
                            row.test_ssim, row.wall_seconds,
                            static_cast<double>(row.peak_primitive_count),
                            static_cast<double>(row.peak_voxel_count)});
  }
  write_csv(metrics, out_dir + "/metrics.csv");
  std::printf("fused %zu states; final scene %zu primitives -> %s\n",
              pr.fuses.size() + 1, pr.state.scene.size(), out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir,
             bool test_state) {
  const GroundTruth gt = load_ground_truth(data_dir);
  const RecurrentState rs = load_run_state(run_dir, gt.cameras);
  json out;
  if (test_state) {
    const EvalResult ev =
        eval_test_state(rs.scene, gt, gt.state_count() - 1, gt.background);
    out["test_psnr"] = ev.psnr;
    out["test_ssim"] = ev.ssim;
    std::printf("test-state psnr %.3f dB, ssim %.4f\n", ev.psnr, ev.ssim);
  }
  json replay = json::array();
  for (int i = 0; i < std::min(rs.state_count, gt.state_count()); ++i) {
    const double p = eval_replay_psnr(rs, gt, i, gt.background);
    replay.push_back({{"state", i}, {"psnr", p}});
    std::printf("replay state %d: psnr %.3f dB\n", i, p);
  }
  out["replay"] = replay;
  write_json_file(out, run_dir + "/eval.json");
  return 0;
}

int cmd_manipulate(const std::string& run_dir, const std::string& data_dir,
                   int object_id, const std::vector<double>& tf16,
                   const std::string& out_dir) {
  const GroundTruth gt = load_ground_truth(data_dir);
  const RecurrentState rs = load_run_state(run_dir, gt.cameras);
  std::array<double, 16> m{};
  std::copy(tf16.begin(), tf16.end(), m.begin());
  const RigidTransform t = rigid_from_matrix4(m);
  const GaussianScene moved = novel_state(rs, object_id, t);
  fs::create_directories(out_dir);
  save_scene(moved, out_dir + "/scene.gsc");
  for (int v = 0; v < gt.view_count(); ++v) {
    write_ppm(render_image(moved, gt.cameras[v], gt.background),
              out_dir + "/view_" + std::to_string(v) + ".ppm");
  }
  std::printf("object %d re-posed; renders written to %s\n", object_id,
              out_dir.c_str());
  return 0;
}

int cmd_sweep(const std::string& experiment, const std::string& config_path,
              std::uint64_t seed, const std::string& out_dir) {
  ExperimentConfig xc;
  xc.seed = seed;
  if (!config_path.empty()) {
    const json j = read_json_file(config_path);
    if (j.contains("fusion")) xc.fusion = fusion_config_from_json(j.at("fusion"));
    if (j.contains("scenario")) xc.scenario = j.at("scenario").get<std::string>();
    if (j.contains("use_gt_masks")) xc.use_gt_masks = j.at("use_gt_masks").get<bool>();
    if (j.contains("noise_trials")) xc.noise_trials = j.at("noise_trials").get<int>();
    if (j.contains("lambda_values")) {
      xc.lambda_values = j.at("lambda_values").get<std::vector<double>>();
    }
    if (j.contains("voxel_sizes")) {
      xc.voxel_sizes = j.at("voxel_sizes").get<std::vector<double>>();
    }
  }
  fs::create_directories(out_dir);
  if (experiment == "ablation") {
    write_csv(run_ablation(xc), out_dir + "/ablation.csv");
  } else if (experiment == "noise") {
    write_csv(run_noise_sweep(xc), out_dir + "/pose_noise.csv");
  } else if (experiment == "scaling") {
    write_csv(run_scaling(xc), out_dir + "/scaling.csv");
  } else if (experiment == "lambda") {
    ExperimentConfig only = xc;
    only.voxel_sizes.clear();
    write_csv(run_sweeps(only).first, out_dir + "/lambda_sweep.csv");
  } else if (experiment == "voxel") {
    ExperimentConfig only = xc;
    only.lambda_values.clear();
    write_csv(run_sweeps(only).second, out_dir + "/voxel_sweep.csv");
  } else {
    throw Error("unknown experiment '" + experiment + "'");
  }
  std::printf("experiment %s written to %s\n", experiment.c_str(), out_dir.c_str());
  return 0;
}

int cmd_render(const std::string& scene_path, const std::string& camera_path,
               const std::string& out_path) {
  const GaussianScene scene = load_scene(scene_path);
  const json j = read_json_file(camera_path);
  const Camera cam = camera_from_json(j.contains("cameras") ? j.at("cameras").at(0) : j);
  Vec3 background{0.05, 0.05, 0.08};
  if (j.contains("background")) background = vec3_from(j.at("background"));
  write_ppm(render_image(scene, cam, background), out_path);
  std::printf("rendered %s -> %s\n", scene_path.c_str(), out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent discrete-state Gaussian scene fusion"};
  app.require_subcommand(1);

  std::string spec_path, config_path, data_dir, run_dir, out_dir = "out";
  std::string experiment, scene_path, camera_path, out_path = "render.ppm";
  std::uint64_t seed = 7;
  int object_id = 0;
  bool test_state = false, descriptor_masks = false;
  std::vector<double> tf16;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--spec", spec_path, "Scenario JSON (or {\"scenario\": name})");
  gen->add_option("--seed", seed, "RNG seed");
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* fuse = app.add_subcommand("fuse", "Run recurrent fusion over a dataset");
  fuse->add_option("--data", data_dir, "Dataset directory")->required();
  fuse->add_option("--config", config_path, "FusionConfig JSON");
  fuse->add_option("--out", out_dir, "Run output directory")->required();
  fuse->add_flag("--descriptor-masks", descriptor_masks,
                 "Use the patch-descriptor pipeline instead of dataset masks");

  auto* ev = app.add_subcommand("eval", "Evaluate a fusion run");
  ev->add_option("--run", run_dir, "Run directory")->required();
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_flag("--test-state", test_state, "Evaluate held-out test state");

  auto* man = app.add_subcommand("manipulate", "Re-pose one object and render");
  man->add_option("--run", run_dir, "Run directory")->required();
  man->add_option("--data", data_dir, "Dataset directory")->required();
  man->add_option("--object", object_id, "Object id")->required();
  man->add_option("--transform", tf16, "Row-major 4x4 (16 floats)")
      ->expected(16)
      ->required();
  man->add_option("--out", out_dir, "Output directory")->required();

  auto* sw = app.add_subcommand("sweep", "Run a predefined experiment");
  sw->add_option("--experiment", experiment, "ablation|noise|scaling|lambda|voxel")
      ->required();
  sw->add_option("--config", config_path, "ExperimentConfig JSON");
  sw->add_option("--seed", seed, "RNG seed");
  sw->add_option("--out", out_dir, "Output directory")->required();

  auto* rd = app.add_subcommand("render", "Render a scene file");
  rd->add_option("--scene", scene_path, "Scene .gsc path")->required();
  rd->add_option("--camera", camera_path, "Camera JSON")->required();
  rd->add_option("--out", out_path, "Output PPM path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(spec_path, seed, out_dir);
    if (fuse->parsed()) return cmd_fuse(data_dir, config_path, out_dir, descriptor_masks);
    if (ev->parsed()) return cmd_eval(run_dir, data_dir, test_state);
    if (man->parsed()) return cmd_manipulate(run_dir, data_dir, object_id, tf16, out_dir);
    if (sw->parsed()) return cmd_sweep(experiment, config_path, seed, out_dir);
    if (rd->parsed()) return cmd_render(scene_path, camera_path, out_path);
  } catch (const StageError& e) {
    std::fprintf(stderr, "error %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
