#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "splatfuse/fuse.hpp"
#include "splatfuse/fusion.hpp"
#include "splatfuse/synth.hpp"

namespace splatfuse {

using json = nlohmann::json;

// Transforms are exchanged as row-major 4x4 matrices with 12 significant
// decimal digits.
inline double round_sig12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::strtod(buf, nullptr);
}

inline json transform_to_json(const RigidTransform& t) {
  json arr = json::array();
  for (double v : to_matrix4(t)) arr.push_back(round_sig12(v));
  return arr;
}

inline RigidTransform transform_from_json(const json& arr) {
  if (!arr.is_array() || arr.size() != 16) {
    throw ParseError("transform_from_json: expected 16-element array");
  }
  std::array<double, 16> m{};
  for (int i = 0; i < 16; ++i) m[i] = arr[i].get<double>();
  return rigid_from_matrix4(m);
}

inline json camera_to_json(const Camera& cam) {
  return json{{"fx", cam.fx},         {"fy", cam.fy},
              {"cx", cam.cx},         {"cy", cam.cy},
              {"width", cam.width},   {"height", cam.height},
              {"world_to_camera", transform_to_json(cam.world_to_camera)}};
}

inline Camera camera_from_json(const json& j) {
  Camera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.world_to_camera = transform_from_json(j.at("world_to_camera"));
  if (cam.fx <= 0 || cam.fy <= 0 || cam.width <= 0 || cam.height <= 0) {
    throw ParseError("camera_from_json: invalid intrinsics");
  }
  return cam;
}

inline void save_cameras(const std::vector<Camera>& cams, const std::string& path) {
  json j;
  j["cameras"] = json::array();
  for (const auto& c : cams) j["cameras"].push_back(camera_to_json(c));
  std::ofstream f(path);
  if (!f) throw Error("save_cameras: cannot open " + path);
  f << j.dump(2) << "\n";
}

inline std::vector<Camera> load_cameras(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("load_cameras: cannot open " + path);
  json j;
  f >> j;
  std::vector<Camera> cams;
  for (const auto& c : j.at("cameras")) cams.push_back(camera_from_json(c));
  return cams;
}

// ---------------------------------------------------------------------------
// FusionConfig <-> JSON (every key optional; unset keys keep the defaults)
// ---------------------------------------------------------------------------

inline FusionConfig fusion_config_from_json(const json& j) {
  FusionConfig cfg;
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  get("lambda_s", cfg.lambda_s);
  get("lambda_r", cfg.lambda_r);
  get("iterations", cfg.iterations);
  get("lr_position", cfg.lr_position);
  get("lr_color", cfg.lr_color);
  get("lr_opacity", cfg.lr_opacity);
  get("lr_scale", cfg.lr_scale);
  get("densify_interval", cfg.densify_interval);
  get("densify_grad_threshold", cfg.densify_grad_threshold);
  get("prune_opacity", cfg.prune_opacity);
  get("rng_seed", cfg.rng_seed);
  get("tau_change", cfg.tau_change);
  get("tau_match", cfg.tau_match);
  get("tau_group", cfg.tau_group);
  get("saliency_max_cos", cfg.saliency_max_cos);
  get("vote_fraction", cfg.vote_fraction);
  get("min_region_area", cfg.min_region_area);
  get("quick_recon_iterations", cfg.quick_recon_iterations);
  get("initial_recon_iterations", cfg.initial_recon_iterations);
  get("recon_init_primitives", cfg.recon_init_primitives);
  get("voxel_size", cfg.voxel_size);
  get("ray_stride", cfg.ray_stride);
  get("fill_min_opacity", cfg.fill_min_opacity);
  get("enable_completion", cfg.enable_completion);
  get("enable_visibility", cfg.enable_visibility);
  if (j.contains("background")) {
    const auto& b = j.at("background");
    cfg.background = {b.at(0).get<double>(), b.at(1).get<double>(),
                      b.at(2).get<double>()};
  }
  if (j.contains("refine")) {
    const auto& r = j.at("refine");
    auto getr = [&](const char* key, auto& out) {
      if (r.contains(key)) out = r.at(key).get<std::decay_t<decltype(out)>>();
    };
    getr("iterations", cfg.refine.iterations);
    getr("initial_step", cfg.refine.initial_step);
    getr("min_step", cfg.refine.min_step);
    getr("w_photo", cfg.refine.w_photo);
    getr("w_geom", cfg.refine.w_geom);
    getr("mask_dilation_px", cfg.refine.mask_dilation_px);
  }
  if (j.contains("icp")) {
    const auto& r = j.at("icp");
    auto geti = [&](const char* key, auto& out) {
      if (r.contains(key)) out = r.at(key).get<std::decay_t<decltype(out)>>();
    };
    geti("max_iterations", cfg.icp.max_iterations);
    geti("convergence_tol", cfg.icp.convergence_tol);
    geti("max_correspondence_dist", cfg.icp.max_correspondence_dist);
  }
  cfg.refine.background = cfg.background;
  return cfg;
}

inline json fusion_config_to_json(const FusionConfig& cfg) {
  json j;
  j["lambda_s"] = cfg.lambda_s;
  j["lambda_r"] = cfg.lambda_r;
  j["iterations"] = cfg.iterations;
  j["lr_position"] = cfg.lr_position;
  j["lr_color"] = cfg.lr_color;
  j["lr_opacity"] = cfg.lr_opacity;
  j["lr_scale"] = cfg.lr_scale;
  j["densify_interval"] = cfg.densify_interval;
  j["densify_grad_threshold"] = cfg.densify_grad_threshold;
  j["prune_opacity"] = cfg.prune_opacity;
  j["rng_seed"] = cfg.rng_seed;
  j["tau_change"] = cfg.tau_change;
  j["tau_match"] = cfg.tau_match;
  j["tau_group"] = cfg.tau_group;
  j["saliency_max_cos"] = cfg.saliency_max_cos;
  j["vote_fraction"] = cfg.vote_fraction;
  j["min_region_area"] = cfg.min_region_area;
  j["quick_recon_iterations"] = cfg.quick_recon_iterations;
  j["initial_recon_iterations"] = cfg.initial_recon_iterations;
  j["recon_init_primitives"] = cfg.recon_init_primitives;
  j["voxel_size"] = cfg.voxel_size;
  j["ray_stride"] = cfg.ray_stride;
  j["fill_min_opacity"] = cfg.fill_min_opacity;
  j["enable_completion"] = cfg.enable_completion;
  j["enable_visibility"] = cfg.enable_visibility;
  j["background"] = {cfg.background.x, cfg.background.y, cfg.background.z};
  j["refine"] = {{"iterations", cfg.refine.iterations},
                 {"initial_step", cfg.refine.initial_step},
                 {"min_step", cfg.refine.min_step},
                 {"w_photo", cfg.refine.w_photo},
                 {"w_geom", cfg.refine.w_geom},
                 {"mask_dilation_px", cfg.refine.mask_dilation_px}};
  j["icp"] = {{"max_iterations", cfg.icp.max_iterations},
              {"convergence_tol", cfg.icp.convergence_tol},
              {"max_correspondence_dist", cfg.icp.max_correspondence_dist}};
  return j;
}

// ---------------------------------------------------------------------------
// GroundTruth on disk
// ---------------------------------------------------------------------------

inline void save_ground_truth(const GroundTruth& gt, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_cameras(gt.cameras, dir + "/cameras.json");

  json meta;
  meta["background"] = {gt.background.x, gt.background.y, gt.background.z};
  meta["mask_weight_threshold"] = gt.mask_weight_threshold;
  meta["states"] = gt.state_count();
  meta["views"] = gt.view_count();
  meta["steps"] = json::array();
  for (size_t s = 0; s < gt.applied_steps.size(); ++s) {
    json step;
    step["state"] = s + 1;
    step["actions"] = json::array();
    for (const auto& a : gt.applied_steps[s]) {
      json act;
      act["object"] = a.object_id;
      switch (a.type) {
        case ScriptAction::Type::kMove:
          act["type"] = "move";
          act["transform"] = transform_to_json(a.transform);
          break;
        case ScriptAction::Type::kAdd:
          act["type"] = "add";
          break;
        case ScriptAction::Type::kRemove:
          act["type"] = "remove";
          break;
      }
      step["actions"].push_back(act);
    }
    meta["steps"].push_back(step);
  }
  meta["objects_per_state"] = json::array();
  for (int s = 0; s < gt.state_count(); ++s) {
    meta["objects_per_state"].push_back(gt.object_ids(s));
  }
  json test_tf = json::object();
  for (const auto& [id, t] : gt.test_transforms) {
    test_tf[std::to_string(id)] = transform_to_json(t);
  }
  meta["test_transforms"] = test_tf;
  std::vector<int> test_ids;
  for (const auto& [id, _] : gt.test_masks) test_ids.push_back(id);
  meta["test_objects"] = test_ids;
  {
    std::ofstream f(dir + "/gt.json");
    if (!f) throw Error("save_ground_truth: cannot open gt.json");
    f << meta.dump(2) << "\n";
  }

  for (int s = 0; s < gt.state_count(); ++s) {
    const std::string sdir = dir + "/states/" + std::to_string(s);
    fs::create_directories(sdir);
    save_scene(gt.scenes[s], sdir + "/scene.gsc");
    for (int v = 0; v < gt.view_count(); ++v) {
      write_ppm(gt.renders[s][v], sdir + "/view_" + std::to_string(v) + ".ppm");
    }
    for (const auto& [id, views] : gt.masks[s]) {
      for (int v = 0; v < gt.view_count(); ++v) {
        write_pgm(views[v], sdir + "/mask_obj_" + std::to_string(id) + "_view_" +
                                std::to_string(v) + ".pgm");
      }
    }
  }
  const std::string tdir = dir + "/test_state";
  fs::create_directories(tdir);
  save_scene(gt.test_scene, tdir + "/scene.gsc");
  for (int v = 0; v < gt.view_count(); ++v) {
    write_ppm(gt.test_renders[v], tdir + "/view_" + std::to_string(v) + ".ppm");
  }
  for (const auto& [id, views] : gt.test_masks) {
    for (int v = 0; v < gt.view_count(); ++v) {
      write_pgm(views[v], tdir + "/mask_obj_" + std::to_string(id) + "_view_" +
                              std::to_string(v) + ".pgm");
    }
  }
}

/// Loads a generated dataset. Renders come back 8-bit quantized (they are
/// stored as PPM); scenes and transforms are full precision.
inline GroundTruth load_ground_truth(const std::string& dir) {
  GroundTruth gt;
  gt.cameras = load_cameras(dir + "/cameras.json");
  json meta;
  {
    std::ifstream f(dir + "/gt.json");
    if (!f) throw Error("load_ground_truth: cannot open " + dir + "/gt.json");
    f >> meta;
  }
  const auto& b = meta.at("background");
  gt.background = {b.at(0).get<double>(), b.at(1).get<double>(),
                   b.at(2).get<double>()};
  gt.mask_weight_threshold = meta.at("mask_weight_threshold").get<double>();
  const int n_states = meta.at("states").get<int>();
  const int n_views = meta.at("views").get<int>();

  for (const auto& step : meta.at("steps")) {
    std::vector<ScriptAction> actions;
    for (const auto& act : step.at("actions")) {
      ScriptAction a;
      a.object_id = act.at("object").get<int>();
      const std::string type = act.at("type").get<std::string>();
      if (type == "move") {
        a.type = ScriptAction::Type::kMove;
        a.transform = transform_from_json(act.at("transform"));
      } else if (type == "add") {
        a.type = ScriptAction::Type::kAdd;
      } else if (type == "remove") {
        a.type = ScriptAction::Type::kRemove;
      } else {
        throw ParseError("load_ground_truth: unknown action type " + type);
      }
      actions.push_back(a);
    }
    gt.applied_steps.push_back(std::move(actions));
  }

  gt.scenes.resize(n_states);
  gt.renders.resize(n_states);
  gt.masks.resize(n_states);
  for (int s = 0; s < n_states; ++s) {
    const std::string sdir = dir + "/states/" + std::to_string(s);
    gt.scenes[s] = load_scene(sdir + "/scene.gsc");
    gt.renders[s].resize(n_views);
    for (int v = 0; v < n_views; ++v) {
      gt.renders[s][v] = read_ppm(sdir + "/view_" + std::to_string(v) + ".ppm");
    }
    for (const auto& id_json : meta.at("objects_per_state").at(s)) {
      const int id = id_json.get<int>();
      auto& views = gt.masks[s][id];
      views.resize(n_views);
      for (int v = 0; v < n_views; ++v) {
        views[v] = read_pgm(sdir + "/mask_obj_" + std::to_string(id) + "_view_" +
                            std::to_string(v) + ".pgm");
      }
    }
  }
  const std::string tdir = dir + "/test_state";
  gt.test_scene = load_scene(tdir + "/scene.gsc");
  gt.test_renders.resize(n_views);
  for (int v = 0; v < n_views; ++v) {
    gt.test_renders[v] = read_ppm(tdir + "/view_" + std::to_string(v) + ".ppm");
  }
  for (const auto& [key, arr] : meta.at("test_transforms").items()) {
    gt.test_transforms[std::stoi(key)] = transform_from_json(arr);
  }
  for (const auto& id_json : meta.at("test_objects")) {
    const int id = id_json.get<int>();
    auto& views = gt.test_masks[id];
    views.resize(n_views);
    for (int v = 0; v < n_views; ++v) {
      views[v] = read_pgm(tdir + "/mask_obj_" + std::to_string(id) + "_view_" +
                          std::to_string(v) + ".pgm");
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

inline json trace_to_json(const FusionTrace& trace) {
  json j;
  j["no_change"] = trace.no_change_short_circuit;
  j["stages"] = json::array();
  for (const auto& s : trace.stages) {
    json stage;
    stage["name"] = s.name;
    stage["seconds"] = s.seconds;
    json stats = json::object();
    for (const auto& [k, v] : s.stats) stats[k] = v;
    stage["stats"] = stats;
    j["stages"].push_back(stage);
  }
  json match;
  match["moved_pairs"] = json::array();
  for (const auto& [p, c] : trace.match.moved) match["moved_pairs"].push_back({p, c});
  match["removed"] = trace.match.removed;
  match["added"] = trace.match.added;
  j["association"] = match;
  j["moved_objects"] = trace.moved_object_ids;
  j["added_objects"] = trace.added_object_ids;
  j["removed_objects"] = trace.removed_object_ids;
  j["alignments"] = json::array();
  for (const auto& a : trace.alignments) {
    j["alignments"].push_back({{"object", a.object_id},
                               {"t_coarse", transform_to_json(a.result.t_coarse)},
                               {"t_fine", transform_to_json(a.result.t_fine)},
                               {"final_loss", a.result.final_loss},
                               {"iterations_used", a.result.iterations_used}});
  }
  j["fill_inserted"] = trace.fill_inserted;
  j["peak_primitives"] = trace.peak_primitives;
  j["peak_voxels"] = trace.peak_voxels;
  j["total_seconds"] = trace.total_seconds;
  return j;
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

struct Table {
  std::string name;
  std::vector<std::string> headers;
  std::vector<std::vector<double>> rows;
};

inline void write_csv(const Table& table, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("write_csv: cannot open " + path);
  for (size_t i = 0; i < table.headers.size(); ++i) {
    f << (i ? "," : "") << table.headers[i];
  }
  f << "\n";
  char buf[64];
  for (const auto& row : table.rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      f << (i ? "," : "") << buf;
    }
    f << "\n";
  }
  if (!f) throw Error("write_csv: write failed for " + path);
}

inline Table parse_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("parse_csv: cannot open " + path);
  Table table;
  std::string line;
  if (!std::getline(f, line)) throw ParseError("parse_csv: empty file " + path);
  size_t pos = 0;
  while (pos <= line.size()) {
    const size_t comma = line.find(',', pos);
    table.headers.push_back(line.substr(pos, comma == std::string::npos
                                                 ? std::string::npos
                                                 : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    pos = 0;
    while (pos <= line.size()) {
      const size_t comma = line.find(',', pos);
      const std::string cell = line.substr(
          pos, comma == std::string::npos ? std::string::npos : comma - pos);
      char* end = nullptr;
      row.push_back(std::strtod(cell.c_str(), &end));
      if (end == cell.c_str()) {
        throw ParseError("parse_csv: " + path + ": bad number at line " +
                         std::to_string(line_no));
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (row.size() != table.headers.size()) {
      throw ParseError("parse_csv: " + path + ": column count mismatch at line " +
                       std::to_string(line_no));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace splatfuse
