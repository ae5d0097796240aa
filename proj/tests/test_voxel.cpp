#include <catch2/catch.hpp>

#include <set>

#include "oracles.hpp"
#include "splatfuse/synth.hpp"
#include "splatfuse/voxel.hpp"

using namespace splatfuse;

namespace {

GaussianScene cloud(const std::vector<Vec3>& pts) {
  GaussianScene scene;
  for (const auto& p : pts) {
    GaussianPrimitive prim;
    prim.position = p;
    scene.primitives.push_back(prim);
  }
  return scene;
}

VoxelGrid random_grid(Rng& rng, int extent, double voxel, int count) {
  std::vector<Vec3> pts;
  for (int i = 0; i < count; ++i) {
    pts.push_back({rng.uniform(0, extent * voxel), rng.uniform(0, extent * voxel),
                   rng.uniform(0, extent * voxel)});
  }
  return voxelize(pts, voxel, Vec3{0, 0, 0});
}

}  // namespace

TEST_CASE("voxelize floor arithmetic", "[voxel]") {
  SECTION("worked example") {
    const auto grid = voxelize(cloud({{0.12, 0.0, -0.03}}), 0.05, {0, 0, 0});
    REQUIRE(grid.cells.size() == 1);
    CHECK(grid.occupied({2, 0, -1}));
  }
  SECTION("nearby points verified by recomputing floors") {
    Rng rng(14);
    for (int rep = 0; rep < 200; ++rep) {
      const Vec3 a{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      Vec3 b = a;
      b.x += rng.uniform(-0.01, 0.01);
      const auto grid = voxelize(cloud({a, b}), 0.05, {0, 0, 0});
      const VoxelKey ka{static_cast<int>(std::floor(a.x / 0.05)),
                        static_cast<int>(std::floor(a.y / 0.05)),
                        static_cast<int>(std::floor(a.z / 0.05))};
      const VoxelKey kb{static_cast<int>(std::floor(b.x / 0.05)),
                        static_cast<int>(std::floor(b.y / 0.05)),
                        static_cast<int>(std::floor(b.z / 0.05))};
      CHECK(grid.occupied(ka));
      CHECK(grid.occupied(kb));
      CHECK(grid.cells.size() == ((ka == kb) ? 1u : 2u));
    }
  }
  SECTION("empty subset gives an empty grid") {
    GaussianScene scene = cloud({{0, 0, 0}});
    ObjectSubset subset;
    const auto grid = voxelize(scene, subset, 0.05, {0, 0, 0});
    CHECK(grid.empty());
  }
  SECTION("doubling the voxel size never increases occupancy") {
    Rng rng(15);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<Vec3> pts;
      for (int i = 0; i < 300; ++i) {
        pts.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
      }
      const auto fine = voxelize(pts, 0.05, {0, 0, 0});
      const auto coarse = voxelize(pts, 0.10, {0, 0, 0});
      CHECK(coarse.cells.size() <= fine.cells.size());
    }
  }
}

TEST_CASE("primitives_in matches a linear scan", "[voxel]") {
  Rng rng(16);
  GaussianScene scene;
  for (int i = 0; i < 500; ++i) {
    GaussianPrimitive p;
    p.position = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    scene.primitives.push_back(p);
  }
  const auto grid = voxelize(scene, 0.1, {0, 0, 0});

  SECTION("empty voxel set gives an empty list") {
    CHECK(primitives_in(grid, {}).empty());
  }
  SECTION("all voxels give every primitive") {
    const auto keys = grid.sorted_keys();
    const auto prims = primitives_in(grid, keys);
    REQUIRE(prims.size() == 500);
    for (int i = 0; i < 500; ++i) CHECK(prims[i] == i);
  }
  SECTION("random sets equal the brute-force scan") {
    const auto keys = grid.sorted_keys();
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<VoxelKey> subset;
      for (const auto& k : keys) {
        if (rng.uniform() < 0.3) subset.push_back(k);
      }
      std::set<VoxelKey> in_set(subset.begin(), subset.end());
      std::vector<int> expected;
      for (int i = 0; i < 500; ++i) {
        if (in_set.count(grid.key_of(scene.primitives[i].position))) {
          expected.push_back(i);
        }
      }
      CHECK(primitives_in(grid, subset) == expected);
    }
  }
}

TEST_CASE("fill_set equals brute-force set difference", "[voxel]") {
  Rng rng(17);
  SECTION("identical grids produce an empty fill set") {
    const auto a = random_grid(rng, 16, 0.05, 200);
    CHECK(fill_set(a, VoxelGrid{{}, 0.05, {}, {}, {}}, a).empty());
  }
  SECTION("empty recurrent grid fills everything") {
    const auto a = random_grid(rng, 16, 0.05, 200);
    VoxelGrid empty;
    empty.origin = a.origin;
    empty.voxel_size = a.voxel_size;
    const auto fill = fill_set(a, empty, empty);
    CHECK(fill.size() == a.cells.size());
  }
  SECTION("random grids up to 32^3") {
    for (int rep = 0; rep < 100; ++rep) {
      const auto current = random_grid(rng, 32, 0.05, 400);
      const auto recurrent = random_grid(rng, 32, 0.05, 400);
      const auto obj = random_grid(rng, 32, 0.05, 50);
      const auto fill = fill_set(current, obj, recurrent);
      std::set<VoxelKey> expected;
      for (const auto& [k, v] : current.cells) {
        if (!recurrent.occupied(k)) expected.insert(k);
      }
      REQUIRE(fill.size() == expected.size());
      for (const auto& k : fill) REQUIRE(expected.count(k) == 1);
    }
  }
  SECTION("frame mismatch is rejected") {
    const auto a = random_grid(rng, 8, 0.05, 50);
    auto b = random_grid(rng, 8, 0.05, 50);
    b.voxel_size = 0.1;
    CHECK_THROWS_AS(fill_set(a, VoxelGrid{a.origin, 0.05, {}, {}, {}}, b),
                    GridFrameMismatchError);
  }
}

TEST_CASE("DDA traversal matches fine-step sampling", "[voxel]") {
  Rng rng(18);
  const double voxel = 0.05;
  const auto grid = random_grid(rng, 20, voxel, 600);

  for (int rep = 0; rep < 1000; ++rep) {
    Ray ray;
    ray.origin = {rng.uniform(-2, 3), rng.uniform(-2, 3), rng.uniform(-2, 3)};
    ray.direction = oracle::random_unit(rng);

    std::vector<VoxelKey> visited;
    traverse_ray(grid, ray, [&](const VoxelKey& k) {
      visited.push_back(k);
      return true;
    });
    std::set<VoxelKey> visited_set(visited.begin(), visited.end());
    REQUIRE(visited_set.size() == visited.size());  // no revisit

    // (1) fine sampling at voxel/20 never finds a voxel DDA missed
    const double step = voxel / 20.0;
    const double max_t = 12.0;
    std::set<VoxelKey> sampled;
    for (double t = step * 0.5; t < max_t; t += step) {
      const Vec3 p = ray.origin + ray.direction * t;
      const VoxelKey k = grid.key_of(p);
      if (k.x < grid.min_index.x || k.x > grid.max_index.x ||
          k.y < grid.min_index.y || k.y > grid.max_index.y ||
          k.z < grid.min_index.z || k.z > grid.max_index.z) {
        continue;
      }
      sampled.insert(k);
    }
    for (const auto& k : sampled) REQUIRE(visited_set.count(k) == 1);

    // (2) every DDA voxel truly intersects the ray (slab test), and any
    // voxel the sampler missed has a chord shorter than the sampling step
    for (const auto& k : visited) {
      double t0 = 0.0, t1 = max_t;
      const double lo[3] = {k.x * voxel, k.y * voxel, k.z * voxel};
      const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
      const double d[3] = {ray.direction.x, ray.direction.y, ray.direction.z};
      bool hit = true;
      for (int i = 0; i < 3; ++i) {
        if (std::abs(d[i]) < 1e-300) {
          if (o[i] < lo[i] || o[i] > lo[i] + voxel) hit = false;
          continue;
        }
        double ta = (lo[i] - o[i]) / d[i];
        double tb = (lo[i] + voxel - o[i]) / d[i];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      REQUIRE(hit);
      REQUIRE(t1 >= t0 - 1e-9);
      if (!sampled.count(k)) {
        REQUIRE(t1 - t0 <= step + 1e-9);
      }
    }
  }
}

TEST_CASE("visibility marks first hits only", "[voxel]") {
  SECTION("single voxel in front of the camera is visible") {
    const auto grid = voxelize(cloud({{0.0, 0.0, 0.5}}), 0.05, {-1, -1, -1});
    Camera cam;
    cam.fx = cam.fy = 60.0;
    cam.cx = cam.cy = 32.0;
    cam.width = cam.height = 64;
    const auto vis = visibility(grid, std::vector<Camera>{cam}, 1);
    CHECK(vis.size() == 1);
    CHECK(vis.contains(grid.key_of({0.0, 0.0, 0.5})));
  }
  SECTION("occluded voxel on the same ray is not visible") {
    // two voxels straight ahead; only the nearer one can be hit first
    const auto grid =
        voxelize(cloud({{0.0, 0.0, 0.5}, {0.0, 0.0, 1.0}}), 0.05, {-1, -1, -1});
    Camera cam;
    cam.fx = cam.fy = 400.0;  // narrow fov: all rays nearly axial
    cam.cx = cam.cy = 8.0;
    cam.width = cam.height = 16;
    const auto vis = visibility(grid, std::vector<Camera>{cam}, 1);
    CHECK(vis.contains(grid.key_of({0.0, 0.0, 0.5})));
    CHECK_FALSE(vis.contains(grid.key_of({0.0, 0.0, 1.0})));
  }
  SECTION("object outside every frustum is invisible") {
    const auto grid = voxelize(cloud({{0.0, 0.0, -2.0}}), 0.05, {-3, -3, -3});
    Camera cam;
    cam.fx = cam.fy = 60.0;
    cam.cx = cam.cy = 32.0;
    cam.width = cam.height = 64;
    const auto vis = visibility(grid, std::vector<Camera>{cam}, 1);
    CHECK(vis.size() == 0);
  }
  SECTION("visibility is a subset of occupancy") {
    Rng rng(19);
    const auto grid = random_grid(rng, 12, 0.05, 150);
    CameraRigSpec rig;
    rig.count = 4;
    rig.radius = 2.0;
    rig.height = 1.0;
    rig.look_at = {0.3, 0.3, 0.3};
    rig.image_width = rig.image_height = 48;
    const auto cams = make_camera_ring(rig);
    const auto vis = visibility(grid, cams, 2);
    for (const auto& k : vis.visible) REQUIRE(grid.occupied(k));
  }
}
