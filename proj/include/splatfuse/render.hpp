#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "splatfuse/geom.hpp"
#include "splatfuse/image.hpp"
#include "splatfuse/metrics.hpp"
#include "splatfuse/scene.hpp"

namespace splatfuse {

// Compositing constants. Effective opacity is capped, near-invisible
// contributions are skipped, traversal stops once the pixel is saturated,
// and footprints are truncated at 3 sigma.
inline constexpr double kAlphaCap = 0.99;
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kFootprintSigmas = 3.0;

struct RenderGradients {
  std::vector<Vec3> d_color;
  std::vector<double> d_opacity;
  std::vector<Vec3> d_position;
  std::vector<double> d_scale;

  void resize(size_t n) {
    d_color.assign(n, Vec3{});
    d_opacity.assign(n, 0.0);
    d_position.assign(n, Vec3{});
    d_scale.assign(n, 0.0);
  }
};

struct RenderResult {
  ImageBuffer image;
  DepthBuffer depth;
};

/// Pre-background compositing state of a forward pass: premultiplied color
/// sums and final transmittance. Lets the backward pass skip recomputing
/// the forward traversal.
struct ForwardCache {
  int width = 0, height = 0;
  std::vector<double> premult;  // 3 channels
  std::vector<double> trans;
};

namespace render_detail {

/// One projected primitive: screen-space footprint, clipped pixel bbox.
struct Splat {
  int prim;
  double u, v, z;
  double sigma;   // projected footprint std dev, pixels
  double alpha;   // base opacity
  int x0, x1, y0, y1;  // inclusive pixel range
};

/// Projects every primitive, clips footprints to the image, and returns
/// splats sorted front-to-back by center depth (ties: primitive index).
inline std::vector<Splat> project_splats(const GaussianScene& scene,
                                         const Camera& cam) {
  std::vector<Splat> splats;
  splats.reserve(scene.primitives.size());
  for (int i = 0; i < static_cast<int>(scene.primitives.size()); ++i) {
    const auto& p = scene.primitives[i];
    const Vec3 q = cam.world_to_camera.apply(p.position);
    if (q.z <= kDefaultNearPlane) continue;
    Splat s;
    s.prim = i;
    s.u = cam.fx * q.x / q.z + cam.cx;
    s.v = cam.fy * q.y / q.z + cam.cy;
    s.z = q.z;
    s.sigma = cam.fx * p.scale / q.z;
    s.alpha = p.opacity;
    const double r = kFootprintSigmas * s.sigma;
    // pixels whose center (x+0.5, y+0.5) lies within r of the projection
    s.x0 = std::max(0, static_cast<int>(std::ceil(s.u - r - 0.5)));
    s.x1 = std::min(cam.width - 1, static_cast<int>(std::floor(s.u + r - 0.5)));
    s.y0 = std::max(0, static_cast<int>(std::ceil(s.v - r - 0.5)));
    s.y1 = std::min(cam.height - 1, static_cast<int>(std::floor(s.v + r - 0.5)));
    if (s.x0 > s.x1 || s.y0 > s.y1) continue;
    splats.push_back(s);
  }
  std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
    return a.z < b.z || (a.z == b.z && a.prim < b.prim);
  });
  return splats;
}

/// Tracks which 16x16 tiles still hold unsaturated pixels, so splats lying
/// entirely behind saturated regions can be skipped without touching their
/// footprints. Skipped pairs contribute nothing either way; results are
/// bit-identical.
struct SaturationTiles {
  static constexpr int kTile = 16;
  int tiles_x = 0, tiles_y = 0;
  std::vector<int> unsat;

  void init(int w, int h) {
    tiles_x = (w + kTile - 1) / kTile;
    tiles_y = (h + kTile - 1) / kTile;
    unsat.assign(static_cast<size_t>(tiles_x) * tiles_y, 0);
    for (int ty = 0; ty < tiles_y; ++ty)
      for (int tx = 0; tx < tiles_x; ++tx) {
        const int px_w = std::min(kTile, w - tx * kTile);
        const int px_h = std::min(kTile, h - ty * kTile);
        unsat[static_cast<size_t>(ty) * tiles_x + tx] = px_w * px_h;
      }
  }

  void saturate_pixel(int x, int y) {
    --unsat[static_cast<size_t>(y / kTile) * tiles_x + x / kTile];
  }

  bool any_active(int x0, int x1, int y0, int y1) const {
    for (int ty = y0 / kTile; ty <= y1 / kTile; ++ty)
      for (int tx = x0 / kTile; tx <= x1 / kTile; ++tx) {
        if (unsat[static_cast<size_t>(ty) * tiles_x + tx] > 0) return true;
      }
    return false;
  }
};

// Shared traversal core: calls body(px, x, y, dx, dy, d2, w) for every
// contributing pair and updates transmittance / saturation bookkeeping.
// The row Gaussian advances by a constant ratio, so each row costs three
// exp() evaluations.
template <typename Body>
inline void composite_splat(const Splat& s, int w, const Mask* roi,
                            std::vector<double>& trans, SaturationTiles& tiles,
                            Body&& body) {
  const double r2 = kFootprintSigmas * kFootprintSigmas * s.sigma * s.sigma;
  const double inv_2s2 = 1.0 / (2.0 * s.sigma * s.sigma);
  const double ratio = std::exp(-2.0 * inv_2s2);
  for (int y = s.y0; y <= s.y1; ++y) {
    const double dy = (y + 0.5) - s.v;
    const double row_w = std::exp(-dy * dy * inv_2s2);
    const double dx0 = (s.x0 + 0.5) - s.u;
    double wx = std::exp(-dx0 * dx0 * inv_2s2);
    double fx = std::exp(-(2.0 * dx0 + 1.0) * inv_2s2);
    double dx = dx0;
    for (int x = s.x0; x <= s.x1; ++x, dx += 1.0, wx *= fx, fx *= ratio) {
      if (roi && !roi->at(x, y)) continue;
      const size_t px = static_cast<size_t>(y) * w + x;
      const double t = trans[px];
      if (t < kTransmittanceStop) continue;
      const double d2 = dx * dx + dy * dy;
      if (d2 > r2) continue;
      const double wgt = row_w * wx;
      const double a = std::min(kAlphaCap, s.alpha * wgt);
      if (a < kAlphaSkip) continue;
      body(px, x, y, t, a, wgt, d2);
      const double nt = t * (1.0 - a);
      trans[px] = nt;
      if (nt < kTransmittanceStop) tiles.saturate_pixel(x, y);
    }
  }
}

}  // namespace render_detail

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Differentiable alpha-compositing forward pass. Pixels outside `roi`
/// (when given) are left at the background color. Empty scenes render the
/// background everywhere. `cache`, when given, receives the premultiplied
/// sums and final transmittance for reuse by render_backward.
inline RenderResult render(const GaussianScene& scene, const Camera& cam,
                           const Vec3& background = Vec3{0, 0, 0},
                           const Mask* roi = nullptr,
                           ForwardCache* cache = nullptr) {
  using namespace render_detail;
  const int w = cam.width, h = cam.height;
  const size_t npx = static_cast<size_t>(w) * h;
  RenderResult out;
  out.image = ImageBuffer(w, h);
  out.depth = DepthBuffer(w, h);
  std::vector<double> trans(npx, 1.0);
  SaturationTiles tiles;
  tiles.init(w, h);

  const auto splats = project_splats(scene, cam);
  for (const auto& s : splats) {
    if (!tiles.any_active(s.x0, s.x1, s.y0, s.y1)) continue;
    const Vec3& col = scene.primitives[s.prim].color;
    composite_splat(s, w, roi, trans, tiles,
                    [&](size_t px, int x, int y, double t, double a, double, double) {
                      const double at = a * t;
                      out.image.data[px * 3 + 0] += col.x * at;
                      out.image.data[px * 3 + 1] += col.y * at;
                      out.image.data[px * 3 + 2] += col.z * at;
                      if (std::isinf(out.depth.at(x, y)) &&
                          (1.0 - t * (1.0 - a)) > 0.5) {
                        out.depth.at(x, y) = s.z;
                      }
                    });
  }
  if (cache) {
    cache->width = w;
    cache->height = h;
    cache->premult = out.image.data;
    cache->trans = trans;
  }
  for (size_t px = 0; px < npx; ++px) {
    const double t = trans[px];
    out.image.data[px * 3 + 0] += t * background.x;
    out.image.data[px * 3 + 1] += t * background.y;
    out.image.data[px * 3 + 2] += t * background.z;
  }
  return out;
}

inline ImageBuffer render_image(const GaussianScene& scene, const Camera& cam,
                                const Vec3& background = Vec3{0, 0, 0},
                                const Mask* roi = nullptr,
                                ForwardCache* cache = nullptr) {
  return render(scene, cam, background, roi, cache).image;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Exact gradients of the forward compositing w.r.t. color, opacity,
/// position, and scale of every contributing primitive, holding the
/// per-pixel traversal order fixed. `trainable`, when given, restricts which
/// primitives receive gradients (compositing still accounts for all).
/// Gradients accumulate into `grads`, which must be sized to the scene.
/// `cache` from the matching forward render skips the recompute pass.
inline void render_backward(const GaussianScene& scene, const Camera& cam,
                            const ImageBuffer& dL_dpixels,
                            RenderGradients& grads,
                            const Vec3& background = Vec3{0, 0, 0},
                            const Mask* roi = nullptr,
                            const std::vector<std::uint8_t>* trainable = nullptr,
                            const ForwardCache* cache = nullptr) {
  using namespace render_detail;
  const int w = cam.width, h = cam.height;
  const size_t npx = static_cast<size_t>(w) * h;
  const auto splats = project_splats(scene, cam);

  // Pass 1 (skipped when the forward cache is supplied): premultiplied
  // totals and final transmittance per pixel.
  std::vector<double> trans_fin, total;
  const std::vector<double>* trans_ptr = nullptr;
  const std::vector<double>* total_ptr = nullptr;
  if (cache) {
    if (cache->width != w || cache->height != h) {
      throw DimensionMismatchError("render_backward: cache size mismatch");
    }
    trans_ptr = &cache->trans;
    total_ptr = &cache->premult;
  } else {
    trans_fin.assign(npx, 1.0);
    total.assign(npx * 3, 0.0);
    SaturationTiles tiles;
    tiles.init(w, h);
    for (const auto& s : splats) {
      if (!tiles.any_active(s.x0, s.x1, s.y0, s.y1)) continue;
      const Vec3& col = scene.primitives[s.prim].color;
      composite_splat(s, w, roi, trans_fin, tiles,
                      [&](size_t px, int, int, double t, double a, double, double) {
                        const double at = a * t;
                        total[px * 3 + 0] += col.x * at;
                        total[px * 3 + 1] += col.y * at;
                        total[px * 3 + 2] += col.z * at;
                      });
    }
    trans_ptr = &trans_fin;
    total_ptr = &total;
  }
  const std::vector<double>& tfin = *trans_ptr;
  const std::vector<double>& tot = *total_ptr;

  // Pass 2: identical traversal, accumulating gradients. prefix holds the
  // premultiplied color up to (excluding) the current primitive, so the
  // suffix needed for the opacity gradient is total - prefix - own term.
  std::vector<double> trans2(npx, 1.0);
  std::vector<double> prefix(npx * 3, 0.0);
  SaturationTiles tiles2;
  tiles2.init(w, h);
  std::vector<double> acc_du(splats.size(), 0.0), acc_dv(splats.size(), 0.0),
      acc_ds(splats.size(), 0.0);
  for (size_t si = 0; si < splats.size(); ++si) {
    const auto& s = splats[si];
    if (!tiles2.any_active(s.x0, s.x1, s.y0, s.y1)) continue;
    const double inv_s2 = 1.0 / (s.sigma * s.sigma);
    const Vec3& col = scene.primitives[s.prim].color;
    const bool train = !trainable || (*trainable)[s.prim] != 0;
    composite_splat(
        s, w, roi, trans2, tiles2,
        [&](size_t px, int x, int y, double t, double a, double wgt, double d2) {
          const double at = a * t;
          if (train) {
            const double g0 = dL_dpixels.data[px * 3 + 0];
            const double g1 = dL_dpixels.data[px * 3 + 1];
            const double g2 = dL_dpixels.data[px * 3 + 2];
            if (g0 != 0.0 || g1 != 0.0 || g2 != 0.0) {
              grads.d_color[s.prim] += Vec3{g0, g1, g2} * at;
              if (s.alpha * wgt < kAlphaCap) {  // clamped alpha blocks the rest
                const double own0 = col.x * at, own1 = col.y * at, own2 = col.z * at;
                const double inv1ma = 1.0 / (1.0 - a);
                const double tf = tfin[px];
                // d pixel / d a = c*T - (suffix + background*T_final)/(1-a)
                const double da =
                    g0 * (col.x * t - (tot[px * 3 + 0] - prefix[px * 3 + 0] - own0 +
                                       background.x * tf) *
                                          inv1ma) +
                    g1 * (col.y * t - (tot[px * 3 + 1] - prefix[px * 3 + 1] - own1 +
                                       background.y * tf) *
                                          inv1ma) +
                    g2 * (col.z * t - (tot[px * 3 + 2] - prefix[px * 3 + 2] - own2 +
                                       background.z * tf) *
                                          inv1ma);
                grads.d_opacity[s.prim] += da * wgt;
                const double dw = da * s.alpha;
                const double dxp = (x + 0.5) - s.u;
                const double dyp = (y + 0.5) - s.v;
                acc_du[si] += dw * wgt * dxp * inv_s2;
                acc_dv[si] += dw * wgt * dyp * inv_s2;
                acc_ds[si] += dw * wgt * d2 * inv_s2 / s.sigma;
              }
            }
          }
          prefix[px * 3 + 0] += col.x * at;
          prefix[px * 3 + 1] += col.y * at;
          prefix[px * 3 + 2] += col.z * at;
        });
  }

  // Chain screen-space accumulators through the projection to position and
  // scale in world coordinates.
  const Mat3 rot_t = cam.world_to_camera.rotation.transpose();
  for (size_t si = 0; si < splats.size(); ++si) {
    const auto& s = splats[si];
    if (acc_du[si] == 0.0 && acc_dv[si] == 0.0 && acc_ds[si] == 0.0) continue;
    const auto& p = scene.primitives[s.prim];
    const Vec3 q = cam.world_to_camera.apply(p.position);
    const double inv_z = 1.0 / q.z;
    const Vec3 dq{
        acc_du[si] * cam.fx * inv_z,
        acc_dv[si] * cam.fy * inv_z,
        -(acc_du[si] * cam.fx * q.x + acc_dv[si] * cam.fy * q.y) * inv_z * inv_z -
            acc_ds[si] * cam.fx * p.scale * inv_z * inv_z};
    grads.d_position[s.prim] += rot_t * dq;
    grads.d_scale[s.prim] += acc_ds[si] * cam.fx * inv_z;
  }
}

// ---------------------------------------------------------------------------
// Label-weight rendering (instance silhouettes)
// ---------------------------------------------------------------------------

/// Accumulated blend weight per pixel for each instance label (occlusion
/// aware, same traversal as render). labels[k] selects the slot; primitives
/// with other labels still occlude. Returns one weight plane per label.
inline std::vector<std::vector<double>> render_label_weights(
    const GaussianScene& scene, const Camera& cam, std::span<const int> labels) {
  using namespace render_detail;
  const int w = cam.width, h = cam.height;
  const size_t npx = static_cast<size_t>(w) * h;
  std::vector<std::vector<double>> planes(labels.size(),
                                          std::vector<double>(npx, 0.0));
  std::vector<int> slot_of(scene.primitives.size(), -1);
  for (size_t k = 0; k < labels.size(); ++k) {
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
      if (scene.primitives[i].instance_id == labels[k]) slot_of[i] = static_cast<int>(k);
    }
  }
  std::vector<double> trans(npx, 1.0);
  SaturationTiles tiles;
  tiles.init(w, h);
  const auto splats = project_splats(scene, cam);
  for (const auto& s : splats) {
    if (!tiles.any_active(s.x0, s.x1, s.y0, s.y1)) continue;
    const int slot = slot_of[s.prim];
    composite_splat(s, w, nullptr, trans, tiles,
                    [&](size_t px, int, int, double t, double a, double, double) {
                      if (slot >= 0) planes[slot][px] += a * t;
                    });
  }
  return planes;
}

/// Occlusion-aware silhouette of a subset: pixels where the subset's
/// accumulated blend weight reaches the threshold.
inline Mask subset_silhouette(const GaussianScene& scene,
                              const ObjectSubset& subset, const Camera& cam,
                              double weight_threshold = 0.1) {
  GaussianScene tagged = scene;
  for (auto& p : tagged.primitives) p.instance_id = -1;
  for (int i : subset.indices) tagged.primitives.at(i).instance_id = 0;
  const int label = 0;
  const auto planes = render_label_weights(tagged, cam, std::span<const int>(&label, 1));
  Mask m(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      m.at(x, y) =
          planes[0][static_cast<size_t>(y) * cam.width + x] >= weight_threshold ? 1 : 0;
    }
  return m;
}

// ---------------------------------------------------------------------------
// Pose gradient (photometric alignment term)
// ---------------------------------------------------------------------------

struct PoseGradientResult {
  double loss = 0.0;
  std::array<double, 6> grad{};  // (rho, omega) order
  size_t covered_splats = 0;     // subset splats with on-screen footprint
};

/// Photometric loss and its gradient w.r.t. a left-multiplied pose
/// perturbation applied to the subset, which is rendered at pose `t`
/// composited with the frozen rest of the scene. Per-view L1 (masked when
/// masks are given), averaged over views.
inline PoseGradientResult pose_photometric_gradient(
    const GaussianScene& scene, const ObjectSubset& subset,
    const RigidTransform& t, std::span<const Camera> cams,
    std::span<const ImageBuffer> targets, std::span<const Mask> masks = {},
    const Vec3& background = Vec3{0, 0, 0}, bool with_gradient = true) {
  if (cams.size() != targets.size()) {
    throw DimensionMismatchError("pose gradient: cams/targets count mismatch");
  }
  if (!masks.empty() && masks.size() != cams.size()) {
    throw DimensionMismatchError("pose gradient: cams/masks count mismatch");
  }
  GaussianScene posed = scene;
  apply_transform_in_place(posed, subset, t);

  std::vector<std::uint8_t> train(scene.primitives.size(), 0);
  for (int i : subset.indices) train[i] = 1;

  PoseGradientResult out;
  RenderGradients grads;
  if (with_gradient) grads.resize(scene.primitives.size());

  for (size_t v = 0; v < cams.size(); ++v) {
    const Mask* roi = masks.empty() ? nullptr : &masks[v];
    ForwardCache cache;
    const ImageBuffer img = render_image(posed, cams[v], background, roi,
                                         with_gradient ? &cache : nullptr);
    const double vw = 1.0 / static_cast<double>(cams.size());
    out.loss += vw * (roi ? masked_l1_loss(img, targets[v], *roi)
                          : l1_loss(img, targets[v]));
    for (int i : subset.indices) {
      const auto proj = project(cams[v], posed.primitives[i].position);
      if (proj && proj->u > -50 && proj->u < cams[v].width + 50 && proj->v > -50 &&
          proj->v < cams[v].height + 50) {
        ++out.covered_splats;
      }
    }
    if (!with_gradient) continue;
    ImageBuffer dL(img.width, img.height, 0.0);
    if (roi) {
      masked_l1_gradient(img, targets[v], *roi, vw, dL);
    } else {
      l1_gradient(img, targets[v], vw, dL);
    }
    render_backward(posed, cams[v], dL, grads, background, roi, &train, &cache);
  }

  if (with_gradient) {
    Vec3 g_rho, g_omega;
    for (int i : subset.indices) {
      const Vec3& gp = grads.d_position[i];
      const Vec3& pw = posed.primitives[i].position;
      g_rho += gp;
      g_omega += pw.cross(gp);
    }
    out.grad = {g_rho.x, g_rho.y, g_rho.z, g_omega.x, g_omega.y, g_omega.z};
  }
  return out;
}

/// Gradient of the photometric alignment loss at pose Exp(xi_current),
/// w.r.t. a left-multiplied perturbation delta-xi.
inline PoseGradientResult pose_gradient(const GaussianScene& scene,
                                        const ObjectSubset& subset,
                                        const Twist& xi_current,
                                        std::span<const Camera> cams,
                                        std::span<const ImageBuffer> targets,
                                        const Vec3& background = Vec3{0, 0, 0}) {
  return pose_photometric_gradient(scene, subset, se3_exp(xi_current), cams,
                                   targets, {}, background, true);
}

}  // namespace splatfuse
