#include <catch2/catch.hpp>

#include <filesystem>

#include "oracles.hpp"
#include "splatfuse/harness.hpp"

using namespace splatfuse;

TEST_CASE("csv tables round trip without loss", "[harness]") {
  Rng rng(44);
  Table table;
  table.name = "random";
  table.headers = {"alpha", "beta", "gamma_dB", "count"};
  for (int r = 0; r < 25; ++r) {
    table.rows.push_back({rng.uniform(-1e6, 1e6), rng.normal(), rng.uniform(),
                          static_cast<double>(rng.uniform_int(0, 1000))});
  }
  const std::string path =
      (std::filesystem::temp_directory_path() / "sf_table.csv").string();
  write_csv(table, path);
  const Table back = parse_csv(path);
  REQUIRE(back.headers == table.headers);
  REQUIRE(back.rows.size() == table.rows.size());
  for (size_t r = 0; r < table.rows.size(); ++r) {
    for (size_t c = 0; c < table.rows[r].size(); ++c) {
      REQUIRE(back.rows[r][c] == table.rows[r][c]);  // exact, 17 digits
    }
  }
}

TEST_CASE("parse_csv diagnoses malformed input", "[harness]") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "sf_bad.csv").string();
  {
    std::ofstream f(path);
    f << "a,b\n1.0,2.0\n3.0\n";
  }
  CHECK_THROWS_AS(parse_csv(path), ParseError);
}

TEST_CASE("fusion config json round trip", "[harness]") {
  FusionConfig cfg;
  cfg.lambda_r = 0.37;
  cfg.iterations = 1234;
  cfg.enable_visibility = false;
  cfg.voxel_size = 0.02;
  cfg.refine.iterations = 321;
  cfg.icp.max_correspondence_dist = 0.77;
  const FusionConfig back = fusion_config_from_json(fusion_config_to_json(cfg));
  CHECK(back.lambda_r == cfg.lambda_r);
  CHECK(back.iterations == cfg.iterations);
  CHECK(back.enable_visibility == cfg.enable_visibility);
  CHECK(back.voxel_size == cfg.voxel_size);
  CHECK(back.refine.iterations == cfg.refine.iterations);
  CHECK(back.icp.max_correspondence_dist == cfg.icp.max_correspondence_dist);
  // paper-pinned defaults ship unchanged
  const FusionConfig defaults;
  CHECK(defaults.lambda_s == 0.2);
  CHECK(defaults.lambda_r == 0.5);
  CHECK(defaults.iterations == 2000);
  CHECK(defaults.voxel_size == 0.05);
  CHECK(defaults.refine.iterations == 1000);
}

TEST_CASE("transforms serialize with 12 significant digits", "[harness]") {
  Rng rng(45);
  const Vec3 axis = oracle::random_unit(rng);
  const RigidTransform t{so3_exp(axis * 1.1),
                         {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}};
  const json j = transform_to_json(t);
  const RigidTransform back = transform_from_json(j);
  CHECK(rotation_angle_between(back.rotation, t.rotation) < 1e-9);
  CHECK((back.translation - t.translation).norm() < 1e-9);
}

TEST_CASE("scenario presets", "[harness]") {
  for (const char* name : {"two_blobs", "move_short", "occlusion",
                           "move_add_remove", "long_moves", "noise_pose"}) {
    const Scenario sc = make_scenario(name);
    CHECK(sc.rig.count >= 2);
    CHECK(!sc.scene.objects.empty());
  }
  CHECK_THROWS_AS(make_scenario("nope"), Error);
}

TEST_CASE("experiment config defaults match the shipped sweep grids", "[harness]") {
  const ExperimentConfig xc;
  CHECK(xc.lambda_values == std::vector<double>{0.2, 0.4, 0.5, 0.6, 0.8});
  CHECK(std::find(xc.lambda_values.begin(), xc.lambda_values.end(), 0.5) !=
        xc.lambda_values.end());
  CHECK(xc.voxel_sizes == std::vector<double>{0.5, 0.1, 0.05, 0.01});
}

TEST_CASE("test-state evaluation on ground truth is near-exact", "[harness][synth]") {
  const GroundTruth gt = generate_scenario("move_short", 81);
  // the GT final scene re-posed by the GT test transforms must reproduce the
  // test renders almost exactly (segmentation via GT masks)
  const EvalResult ev =
      eval_test_state(gt.scenes.back(), gt, gt.state_count() - 1, gt.background);
  CHECK(ev.psnr > 45.0);
  CHECK(ev.ssim > 0.99);
}

TEST_CASE("trace json carries the audit fields", "[harness]") {
  FusionTrace trace;
  trace.stages.push_back({"demo", 1.5, {{"count", 3.0}}});
  trace.match.moved = {{0, 1}};
  trace.match.removed = {2};
  trace.moved_object_ids = {7};
  trace.fill_inserted = 42;
  const json j = trace_to_json(trace);
  CHECK(j.at("stages").size() == 1);
  CHECK(j.at("association").at("moved_pairs").size() == 1);
  CHECK(j.at("association").at("removed").size() == 1);
  CHECK(j.at("moved_objects").at(0).get<int>() == 7);
  CHECK(j.at("fill_inserted").get<int>() == 42);
}
