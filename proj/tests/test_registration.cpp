#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "splatfuse/harness.hpp"
#include "splatfuse/registration.hpp"

using namespace splatfuse;

namespace {

std::vector<Vec3> random_cloud(int n, Rng& rng) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i) {
    pts.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                   rng.uniform(-0.5, 0.5)});
  }
  return pts;
}

std::vector<Vec3> apply_all(const std::vector<Vec3>& pts, const RigidTransform& t) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(t.apply(p));
  return out;
}

}  // namespace

TEST_CASE("icp basics", "[registration]") {
  Rng rng(6);
  SECTION("self-aligned clouds are a no-op") {
    const auto src = random_cloud(120, rng);
    const RigidTransform t = icp(src, src, RigidTransform::identity(), {});
    CHECK(rotation_angle_between(t.rotation, Mat3::identity()) < 1e-9);
    CHECK(t.translation.norm() < 1e-9);
  }
  SECTION("recovers a constructed 10 degree + 0.1 m transform") {
    const auto src = random_cloud(200, rng);
    const Vec3 axis = oracle::random_unit(rng);
    const RigidTransform t_gt{so3_exp(axis * (10.0 * M_PI / 180.0)),
                              {0.06, -0.05, 0.05}};
    const auto dst = apply_all(src, t_gt);
    const RigidTransform t = icp(src, dst, RigidTransform::identity(), {});
    CHECK(rotation_angle_between(t.rotation, t_gt.rotation) < 0.1 * M_PI / 180.0);
    CHECK((t.translation - t_gt.translation).norm() < 1e-3);
  }
  SECTION("fewer than 3 points is degenerate") {
    const std::vector<Vec3> two{{0, 0, 0}, {1, 0, 0}};
    const auto dst = random_cloud(10, rng);
    CHECK_THROWS_AS(icp(two, dst, RigidTransform::identity(), {}),
                    DegenerateGeometryError);
  }
  SECTION("collinear points are degenerate") {
    std::vector<Vec3> line;
    for (int i = 0; i < 20; ++i) line.push_back({0.01 * i, 0.0, 0.0});
    CHECK_THROWS_AS(icp(line, line, RigidTransform::identity(), {}),
                    DegenerateGeometryError);
  }
  SECTION("correspondence cutoff rejects far clouds") {
    const auto src = random_cloud(50, rng);
    std::vector<Vec3> far;
    for (const auto& p : src) far.push_back(p + Vec3{10, 0, 0});
    CHECK_THROWS_AS(icp(src, far, RigidTransform::identity(), {}),
                    DegenerateGeometryError);
  }
}

TEST_CASE("nearest-neighbor index", "[registration]") {
  Rng rng(26);
  const auto pts = random_cloud(500, rng);
  NnIndex index(pts);
  for (int rep = 0; rep < 100; ++rep) {
    const Vec3 q{rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7),
                 rng.uniform(-0.7, 0.7)};
    const int got = index.nearest(q);
    int best = 0;
    for (int i = 1; i < 500; ++i) {
      if ((pts[i] - q).squared_norm() < (pts[best] - q).squared_norm()) best = i;
    }
    REQUIRE(got == best);
  }
}

TEST_CASE("refine_pose recovers perturbed poses", "[registration][slow]") {
  const GroundTruth gt = generate_scenario("noise_pose", 23);
  FusionConfig cfg;
  cfg.background = gt.background;
  cfg.refine.background = gt.background;

  SECTION("ground-truth init stays at the minimum") {
    const PoseTrialResult r = pose_noise_trial(gt, 0, 0, 0.0, 0.0, 101, cfg);
    CHECK(r.rot_err_deg < 0.05);
    CHECK(r.trans_err_m < 1e-3);
    // the zero-noise init reproduces the reference bit-exactly (+inf dB);
    // refined must stay essentially at the optimum
    if (std::isinf(r.psnr_initial)) {
      CHECK(r.psnr_refined > 60.0);
    } else {
      CHECK(r.psnr_refined >= r.psnr_initial - 0.1);
    }
  }
  SECTION("recovers from 10 degree rotation noise") {
    for (std::uint64_t seed : {201, 202, 203}) {
      const PoseTrialResult r = pose_noise_trial(gt, 0, 0, 10.0, 0.0, seed, cfg);
      CAPTURE(seed, r.rot_err_deg, r.trans_err_m);
      CHECK(r.rot_err_deg < 0.5);
      CHECK(r.psnr_refined > r.psnr_initial);
    }
  }
  SECTION("recovers from 0.35 m translation noise within one voxel") {
    for (std::uint64_t seed : {301, 302, 303}) {
      const PoseTrialResult r = pose_noise_trial(gt, 0, 0, 0.0, 0.35, seed, cfg);
      CAPTURE(seed, r.rot_err_deg, r.trans_err_m);
      CHECK(r.trans_err_m < 0.05);
      CHECK(r.psnr_refined > r.psnr_initial);
    }
  }
}

TEST_CASE("refine_pose error paths and monotonicity", "[registration]") {
  const GroundTruth gt = generate_scenario("noise_pose", 24);
  const GaussianScene& prev = gt.scenes[0];
  const ObjectSubset subset = subset_by_label(prev, 0);
  const std::vector<Vec3> targets =
      subset_centers(gt.scenes[1], subset_by_label(gt.scenes[1], 0));

  SECTION("empty subset is rejected") {
    RefineConfig rcfg;
    CHECK_THROWS_AS(refine_pose(prev, ObjectSubset{}, RigidTransform::identity(),
                                gt.cameras, gt.renders[1], targets, rcfg),
                    EmptySelectionError);
  }
  SECTION("subset outside every frustum has no visible pixels") {
    RigidTransform far;
    far.translation = {0, 0, 500.0};
    RefineConfig rcfg;
    rcfg.background = gt.background;
    CHECK_THROWS_AS(
        refine_pose(prev, subset, far, gt.cameras, gt.renders[1], targets, rcfg),
        NoVisiblePixelsError);
  }
  SECTION("more iterations never increase the final loss") {
    RigidTransform t_init;
    t_init.translation = {0.5, 0.28, 0.0};  // rough coarse guess
    RefineConfig short_cfg;
    short_cfg.background = gt.background;
    short_cfg.iterations = 0;
    const AlignmentResult base =
        refine_pose(prev, subset, t_init, gt.cameras, gt.renders[1], targets, short_cfg);
    RefineConfig more = short_cfg;
    more.iterations = 120;
    const AlignmentResult refined =
        refine_pose(prev, subset, t_init, gt.cameras, gt.renders[1], targets, more);
    CHECK(refined.final_loss <= base.final_loss);
    CHECK(refined.iterations_used <= 120);
    CHECK(refined.final_loss >= 0.0);
    // t_coarse passes through
    CHECK((refined.t_coarse.translation - t_init.translation).norm() < 1e-15);
  }
}
