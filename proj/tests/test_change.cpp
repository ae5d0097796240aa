#include <catch2/catch.hpp>

#include "oracles.hpp"
#include "splatfuse/change.hpp"
#include "splatfuse/harness.hpp"

using namespace splatfuse;

TEST_CASE("patch descriptor features", "[change]") {
  Rng rng(3);
  const PatchDescriptor extractor;

  SECTION("constant image gives identical descriptors") {
    ImageBuffer img(20, 20, 0.0);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        img.at(x, y, 0) = 0.4;
        img.at(x, y, 1) = 0.6;
        img.at(x, y, 2) = 0.1;
      }
    const FeatureMap fm = extract_features(img, extractor);
    const double* ref = fm.at(10, 10);
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 20; ++x) {
        for (int d = 0; d < fm.dim; ++d) REQUIRE(fm.at(x, y)[d] == Approx(ref[d]).margin(1e-12));
      }
  }
  SECTION("descriptor is local to the 9x9 neighborhood") {
    ImageBuffer a = oracle::random_image(24, 24, rng);
    ImageBuffer b = a;
    // change pixels outside the 9x9 neighborhood of (12, 12)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        if (std::abs(x - 12) <= 4 && std::abs(y - 12) <= 4) continue;
        b.at(x, y, 0) = 1.0 - b.at(x, y, 0);
      }
    const FeatureMap fa = extract_features(a, extractor);
    const FeatureMap fb = extract_features(b, extractor);
    for (int d = 0; d < fa.dim; ++d) {
      CHECK(fa.at(12, 12)[d] == Approx(fb.at(12, 12)[d]).margin(1e-12));
    }
  }
  SECTION("descriptors are unit norm") {
    const ImageBuffer img = oracle::random_image(15, 13, rng);
    const FeatureMap fm = extract_features(img, extractor);
    for (int y = 0; y < 13; ++y)
      for (int x = 0; x < 15; ++x) {
        double n = 0.0;
        for (int d = 0; d < fm.dim; ++d) n += fm.at(x, y)[d] * fm.at(x, y)[d];
        REQUIRE(std::sqrt(n) == Approx(1.0).margin(1e-6));
      }
  }
  SECTION("black image maps to the fixed unit basis vector") {
    ImageBuffer img(8, 8, 0.0);
    const FeatureMap fm = extract_features(img, extractor);
    CHECK(fm.at(4, 4)[0] == Approx(1.0));
  }
}

TEST_CASE("change mask properties", "[change]") {
  Rng rng(5);
  const PatchDescriptor extractor;
  const ImageBuffer a = oracle::random_image(32, 32, rng);
  const ImageBuffer b = oracle::random_image(32, 32, rng);
  const FeatureMap fa = extract_features(a, extractor);
  const FeatureMap fb = extract_features(b, extractor);

  SECTION("identical features give an empty mask for any tau < 1") {
    for (double tau : {0.99, 0.8, 0.2, -0.5}) {
      CHECK(change_mask(fa, fa, tau).empty());
      CHECK(change_mask_raw(fa, fa, tau).empty());
    }
  }
  SECTION("tau = -1 gives an empty mask for any inputs") {
    CHECK(change_mask_raw(fa, fb, -1.0).empty());
    CHECK(change_mask(fa, fb, -1.0).empty());
  }
  SECTION("mask is symmetric in its inputs") {
    const ChangeMask ab = change_mask(fa, fb, 0.8);
    const ChangeMask ba = change_mask(fb, fa, 0.8);
    CHECK(ab.on == ba.on);
  }
  SECTION("marked count is monotone in tau (pre-morphology)") {
    size_t prev_count = 0;
    for (double tau : {0.95, 0.8, 0.5, 0.2, -0.2, -0.9}) {
      const size_t count = change_mask_raw(fa, fb, tau).count();
      if (tau != 0.95) CHECK(count <= prev_count);
      prev_count = count;
    }
  }
  SECTION("dimension mismatch is rejected") {
    const ImageBuffer c = oracle::random_image(16, 32, rng);
    const FeatureMap fc = extract_features(c, extractor);
    CHECK_THROWS_AS(change_mask(fa, fc, 0.8), DimensionMismatchError);
  }
}

TEST_CASE("change detection on a moved object", "[change][synth]") {
  const GroundTruth gt = generate_scenario("move_short", 19);
  const PatchDescriptor extractor;
  double iou_sum = 0.0;
  for (int v = 0; v < gt.view_count(); ++v) {
    const FeatureMap fa = extract_features(gt.renders[0][v], extractor);
    const FeatureMap fb = extract_features(gt.renders[1][v], extractor);
    const ChangeMask mask = change_mask(fa, fb, 0.95);
    const Mask ref = gt_change_mask(gt, 0, 1, v);
    iou_sum += iou(mask, ref);
  }
  CHECK(iou_sum / gt.view_count() >= 0.7);
}

TEST_CASE("refine_object_masks", "[change]") {
  SECTION("empty change mask gives an empty set") {
    const ObjectMaskSet out = refine_object_masks(Mask(64, 64, false));
    CHECK(out.regions.empty());
  }
  SECTION("two well-separated blobs become exactly two regions") {
    Mask change(64, 64, false);
    for (int y = 8; y < 20; ++y)
      for (int x = 8; x < 20; ++x) change.at(x, y) = 1;
    for (int y = 40; y < 52; ++y)
      for (int x = 40; x < 52; ++x) change.at(x, y) = 1;
    const ObjectMaskSet out = refine_object_masks(change);
    REQUIRE(out.regions.size() == 2);
    CHECK(out.regions[0].region_id == 0);
    CHECK(out.regions[1].region_id == 1);
    CHECK(out.regions[0].mask.count() == 144);
    CHECK(out.regions[1].mask.count() == 144);
  }
  SECTION("small components are dropped") {
    Mask change(64, 64, false);
    for (int y = 10; y < 14; ++y)
      for (int x = 10; x < 14; ++x) change.at(x, y) = 1;  // 16 px < 50
    CHECK(refine_object_masks(change).regions.empty());
  }
  SECTION("proposal fully outside the change mask is dropped") {
    Mask change(64, 64, false);
    for (int y = 8; y < 24; ++y)
      for (int x = 8; x < 24; ++x) change.at(x, y) = 1;
    ObjectMaskSet proposals;
    Mask inside(64, 64, false), outside(64, 64, false);
    for (int y = 10; y < 22; ++y)
      for (int x = 10; x < 22; ++x) inside.at(x, y) = 1;
    for (int y = 40; y < 60; ++y)
      for (int x = 40; x < 60; ++x) outside.at(x, y) = 1;
    proposals.regions.push_back({7, inside});
    proposals.regions.push_back({9, outside});
    const ObjectMaskSet out = refine_object_masks(change, proposals);
    REQUIRE(out.regions.size() == 1);
    CHECK(out.regions[0].region_id == 7);
  }
  SECTION("every refined region is a subset of the change mask") {
    Rng rng(8);
    Mask change(48, 48, false);
    for (int k = 0; k < 4; ++k) {
      const int cx = rng.uniform_int(8, 40), cy = rng.uniform_int(8, 40);
      for (int y = -6; y <= 6; ++y)
        for (int x = -6; x <= 6; ++x) {
          const int xx = cx + x, yy = cy + y;
          if (xx >= 0 && xx < 48 && yy >= 0 && yy < 48 && x * x + y * y <= 36) {
            change.at(xx, yy) = 1;
          }
        }
    }
    for (const auto& region : refine_object_masks(change).regions) {
      for (size_t i = 0; i < change.on.size(); ++i) {
        if (region.mask.on[i]) REQUIRE(change.on[i]);
      }
    }
  }
}
