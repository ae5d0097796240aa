#include <catch2/catch.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "splatfuse/harness.hpp"
#include "splatfuse/scene.hpp"
#include "splatfuse/synth.hpp"

using namespace splatfuse;

namespace {

GaussianScene random_scene(size_t n, Rng& rng) {
  GaussianScene scene;
  scene.state_index = 3;
  for (size_t i = 0; i < n; ++i) {
    GaussianPrimitive p;
    p.position = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    p.scale = rng.uniform(1e-3, 0.2);
    p.color = {rng.uniform(), rng.uniform(), rng.uniform()};
    p.opacity = rng.uniform(0.01, 1.0);
    p.instance_id = rng.uniform_int(-1, 5);
    scene.primitives.push_back(p);
  }
  return scene;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("scene save/load round trip", "[scene]") {
  Rng rng(5);
  SECTION("single primitive") {
    GaussianScene scene = random_scene(1, rng);
    const std::string path = temp_path("sf_one.gsc");
    save_scene(scene, path);
    const GaussianScene back = load_scene(path);
    REQUIRE(back.primitives.size() == 1);
    CHECK(back.state_index == scene.state_index);
    CHECK(back.primitives[0] == scene.primitives[0]);
  }
  SECTION("50k primitives, order preserved, exact fields") {
    GaussianScene scene = random_scene(50000, rng);
    const std::string path = temp_path("sf_big.gsc");
    save_scene(scene, path);
    const GaussianScene back = load_scene(path);
    REQUIRE(back.primitives.size() == scene.primitives.size());
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
      REQUIRE(back.primitives[i] == scene.primitives[i]);
    }
  }
  SECTION("truncated file names the offending record") {
    GaussianScene scene = random_scene(10, rng);
    const std::string path = temp_path("sf_trunc.gsc");
    save_scene(scene, path);
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    in.close();
    content.erase(content.find_last_of('\n', content.size() - 2));
    content.erase(content.find_last_of('\n', content.size() - 2));
    std::ofstream out(path);
    out << content;
    out.close();
    try {
      load_scene(path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("record") != std::string::npos);
    }
  }
  SECTION("bad magic rejected") {
    const std::string path = temp_path("sf_magic.gsc");
    std::ofstream out(path);
    out << "not a scene\n";
    out.close();
    CHECK_THROWS_AS(load_scene(path), ParseError);
  }
}

TEST_CASE("apply_transform", "[scene]") {
  Rng rng(9);
  GaussianScene scene = random_scene(200, rng);
  ObjectSubset all;
  all.object_id = 0;
  for (int i = 0; i < 200; ++i) all.indices.push_back(i);

  SECTION("identity keeps the scene bit-identical") {
    const GaussianScene out = apply_transform(scene, all, RigidTransform::identity());
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
      CHECK(out.primitives[i] == scene.primitives[i]);
    }
  }
  SECTION("translation moves only positions of the subset") {
    ObjectSubset some;
    for (int i = 0; i < 200; i += 3) some.indices.push_back(i);
    RigidTransform t;
    t.translation = {0, 0, 1};
    const GaussianScene out = apply_transform(scene, some, t);
    REQUIRE(out.primitives.size() == scene.primitives.size());
    for (int i = 0; i < 200; ++i) {
      const bool in_subset = (i % 3) == 0;
      const auto& a = scene.primitives[i];
      const auto& b = out.primitives[i];
      CHECK(b.scale == a.scale);
      CHECK(b.color == a.color);
      CHECK(b.opacity == a.opacity);
      CHECK(b.instance_id == a.instance_id);
      if (in_subset) {
        CHECK(b.position.z == Approx(a.position.z + 1.0));
      } else {
        CHECK(b.position == a.position);
      }
    }
  }
  SECTION("T then T inverse returns positions within 1e-9") {
    const Vec3 axis = oracle::random_unit(rng);
    const RigidTransform t{so3_exp(axis * 0.8), {0.3, -0.2, 0.5}};
    GaussianScene out = apply_transform(scene, all, t);
    out = apply_transform(out, all, inverse(t));
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
      CHECK((out.primitives[i].position - scene.primitives[i].position).norm() < 1e-9);
    }
  }
}

TEST_CASE("segment_by_masks voting", "[scene]") {
  CameraRigSpec rig;
  rig.count = 6;
  rig.radius = 2.0;
  rig.height = 1.2;
  rig.image_width = rig.image_height = 64;
  const std::vector<Camera> cams = make_camera_ring(rig);
  Rng rng(31);
  GaussianScene scene;
  for (int i = 0; i < 100; ++i) {
    GaussianPrimitive p;
    p.position = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4),
                  rng.uniform(0.0, 0.4)};
    scene.primitives.push_back(p);
  }

  SECTION("full masks select every in-bounds primitive") {
    std::vector<Mask> masks(6, Mask(64, 64, true));
    const ObjectSubset s = segment_by_masks(scene, masks, cams, 0.6);
    CHECK(s.indices.size() == 100);
  }
  SECTION("empty masks select nothing") {
    std::vector<Mask> masks(6, Mask(64, 64, false));
    CHECK_THROWS_AS(segment_by_masks(scene, masks, cams, 0.6), EmptySelectionError);
  }
  SECTION("count mismatch is rejected") {
    std::vector<Mask> masks(3, Mask(64, 64, true));
    CHECK_THROWS_AS(segment_by_masks(scene, masks, cams, 0.6),
                    DimensionMismatchError);
  }
}

TEST_CASE("segmentation recovers instance labels on a two-blob scene",
          "[scene][synth]") {
  const GroundTruth gt = generate_scenario("two_blobs", 11);
  const GaussianScene& scene = gt.scenes[0];
  std::vector<std::vector<int>> recovered;
  for (int id : {0, 1}) {
    const auto& views = gt.masks[0].at(id);
    const ObjectSubset s = segment_by_masks(scene, views, gt.cameras, 0.6);
    std::vector<int> expected;
    for (int i = 0; i < static_cast<int>(scene.primitives.size()); ++i) {
      if (scene.primitives[i].instance_id == id) expected.push_back(i);
    }
    CHECK(s.indices == expected);
    recovered.push_back(s.indices);
  }
  std::vector<int> inter;
  std::set_intersection(recovered[0].begin(), recovered[0].end(),
                        recovered[1].begin(), recovered[1].end(),
                        std::back_inserter(inter));
  CHECK(inter.empty());
}
