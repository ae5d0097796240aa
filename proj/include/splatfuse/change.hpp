#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "splatfuse/errors.hpp"
#include "splatfuse/image.hpp"

namespace splatfuse {

/// Per-pixel unit-norm descriptor field.
struct FeatureMap {
  int width = 0, height = 0, dim = 0;
  std::vector<double> data;  // row-major, dim-interleaved

  FeatureMap() = default;
  FeatureMap(int w, int h, int d)
      : width(w), height(h), dim(d), data(static_cast<size_t>(w) * h * d, 0.0) {}

  double* at(int x, int y) {
    return &data[(static_cast<size_t>(y) * width + x) * dim];
  }
  const double* at(int x, int y) const {
    return &data[(static_cast<size_t>(y) * width + x) * dim];
  }

  double cosine(const FeatureMap& o, int x, int y) const {
    const double* a = at(x, y);
    const double* b = o.at(x, y);
    double dot = 0.0;
    for (int i = 0; i < dim; ++i) dot += a[i] * b[i];
    return dot;
  }
};

/// Pluggable per-pixel descriptor backend.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureMap extract(const ImageBuffer& img) const = 0;
};

/// Default deterministic extractor: per pixel, the concatenation of
/// (center RGB, 5x5 patch mean RGB, 5x5 patch std RGB, 9x9 patch mean RGB),
/// L2-normalized. Borders use clamped padding. Zero descriptors map to the
/// first unit basis vector.
class PatchDescriptor final : public FeatureExtractor {
 public:
  static constexpr int kDim = 12;

  FeatureMap extract(const ImageBuffer& img) const override {
    FeatureMap fm(img.width, img.height, kDim);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double* d = fm.at(x, y);
        for (int c = 0; c < 3; ++c) d[c] = img.at(x, y, c);
        patch_stats(img, x, y, 2, d + 3, d + 6);   // 5x5 mean + std
        patch_stats(img, x, y, 4, d + 9, nullptr); // 9x9 mean
        double norm = 0.0;
        for (int i = 0; i < kDim; ++i) norm += d[i] * d[i];
        norm = std::sqrt(norm);
        if (norm > 1e-12) {
          for (int i = 0; i < kDim; ++i) d[i] /= norm;
        } else {
          d[0] = 1.0;
        }
      }
    }
    return fm;
  }

 private:
  static void patch_stats(const ImageBuffer& img, int x, int y, int radius,
                          double* mean, double* stddev) {
    double sum[3] = {0, 0, 0}, sum2[3] = {0, 0, 0};
    int n = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
      const int yy = std::clamp(y + dy, 0, img.height - 1);
      for (int dx = -radius; dx <= radius; ++dx) {
        const int xx = std::clamp(x + dx, 0, img.width - 1);
        for (int c = 0; c < 3; ++c) {
          const double v = img.at(xx, yy, c);
          sum[c] += v;
          sum2[c] += v * v;
        }
        ++n;
      }
    }
    for (int c = 0; c < 3; ++c) {
      mean[c] = sum[c] / n;
      if (stddev) {
        const double var = std::max(0.0, sum2[c] / n - mean[c] * mean[c]);
        stddev[c] = std::sqrt(var);
      }
    }
  }
};

inline FeatureMap extract_features(const ImageBuffer& img,
                                   const FeatureExtractor& extractor) {
  return extractor.extract(img);
}

using ChangeMask = Mask;

/// Pixels whose descriptors disagree (cosine < tau), before morphological
/// cleanup. Exposed for the monotonicity property; most callers want
/// change_mask.
inline ChangeMask change_mask_raw(const FeatureMap& fa, const FeatureMap& fb,
                                  double tau) {
  if (fa.width != fb.width || fa.height != fb.height || fa.dim != fb.dim) {
    throw DimensionMismatchError("change_mask: feature map size mismatch");
  }
  ChangeMask m(fa.width, fa.height);
  for (int y = 0; y < fa.height; ++y)
    for (int x = 0; x < fa.width; ++x) {
      m.at(x, y) = fa.cosine(fb, x, y) < tau ? 1 : 0;
    }
  return m;
}

/// change_mask_raw followed by morphological open then close (3x3 square)
/// to suppress speckle.
inline ChangeMask change_mask(const FeatureMap& fa, const FeatureMap& fb,
                              double tau = 0.95) {
  ChangeMask m = change_mask_raw(fa, fb, tau);
  m = dilate(erode(m, 1), 1);  // open
  m = erode(dilate(m, 1), 1);  // close
  return m;
}

// ---------------------------------------------------------------------------
// Region extraction
// ---------------------------------------------------------------------------

struct MaskRegion {
  int region_id = -1;
  Mask mask;
};

/// Disjoint labeled regions of one view.
struct ObjectMaskSet {
  std::vector<MaskRegion> regions;
};

namespace change_detail {

inline std::vector<Mask> connected_components(const Mask& m, size_t min_area) {
  std::vector<Mask> comps;
  std::vector<std::uint8_t> seen(m.on.size(), 0);
  std::vector<int> stack;
  for (int y0 = 0; y0 < m.height; ++y0) {
    for (int x0 = 0; x0 < m.width; ++x0) {
      const size_t start = static_cast<size_t>(y0) * m.width + x0;
      if (!m.on[start] || seen[start]) continue;
      Mask comp(m.width, m.height);
      size_t area = 0;
      stack.clear();
      stack.push_back(static_cast<int>(start));
      seen[start] = 1;
      while (!stack.empty()) {
        const int idx = stack.back();
        stack.pop_back();
        const int x = idx % m.width, y = idx / m.width;
        comp.on[idx] = 1;
        ++area;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {  // 8-connected
            if (dx == 0 && dy == 0) continue;
            const int xx = x + dx, yy = y + dy;
            if (xx < 0 || xx >= m.width || yy < 0 || yy >= m.height) continue;
            const size_t ni = static_cast<size_t>(yy) * m.width + xx;
            if (m.on[ni] && !seen[ni]) {
              seen[ni] = 1;
              stack.push_back(static_cast<int>(ni));
            }
          }
        }
      }
      if (area >= min_area) comps.push_back(std::move(comp));
    }
  }
  return comps;
}

}  // namespace change_detail

/// With proposals: each proposal intersected with the change mask, dropped
/// when the intersection falls below min_area pixels (proposal ids kept).
/// Without proposals: 8-connected components of the change mask with area
/// >= min_area, ids assigned in scan order.
inline ObjectMaskSet refine_object_masks(
    const ChangeMask& change,
    const std::optional<ObjectMaskSet>& proposals = std::nullopt,
    size_t min_area = 50) {
  ObjectMaskSet out;
  if (proposals) {
    for (const auto& region : proposals->regions) {
      Mask inter = mask_intersect(region.mask, change);
      if (inter.count() < min_area) continue;
      out.regions.push_back({region.region_id, std::move(inter)});
    }
    return out;
  }
  int next_id = 0;
  for (auto& comp : change_detail::connected_components(change, min_area)) {
    out.regions.push_back({next_id++, std::move(comp)});
  }
  return out;
}

}  // namespace splatfuse
