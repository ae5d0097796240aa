// Test-only reference implementations, independent of the library paths
// they check.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "splatfuse/geom.hpp"
#include "splatfuse/image.hpp"
#include "splatfuse/rng.hpp"
#include "splatfuse/scene.hpp"

namespace oracle {

using splatfuse::ImageBuffer;
using splatfuse::Mask;
using splatfuse::Rng;
using splatfuse::Twist;
using splatfuse::Vec3;

// ---------------------------------------------------------------------------
// Dense 4x4 matrix exponential by scaling and squaring (Taylor core)
// ---------------------------------------------------------------------------

using Mat4 = std::array<double, 16>;

inline Mat4 mat4_identity() {
  Mat4 m{};
  m[0] = m[5] = m[10] = m[15] = 1.0;
  return m;
}

inline Mat4 mat4_mul(const Mat4& a, const Mat4& b) {
  Mat4 r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[4 * i + k] * b[4 * k + j];
      r[4 * i + j] = s;
    }
  return r;
}

inline Mat4 mat4_exp(Mat4 a) {
  double norm = 0.0;
  for (double v : a) norm = std::max(norm, std::abs(v));
  int squarings = 0;
  while (norm > 0.25) {
    norm *= 0.5;
    ++squarings;
  }
  const double scale = std::ldexp(1.0, -squarings);
  for (double& v : a) v *= scale;

  Mat4 result = mat4_identity();
  Mat4 term = mat4_identity();
  for (int k = 1; k <= 20; ++k) {
    term = mat4_mul(term, a);
    for (double& v : term) v /= k;
    for (int i = 0; i < 16; ++i) result[i] += term[i];
  }
  for (int s = 0; s < squarings; ++s) result = mat4_mul(result, result);
  return result;
}

/// exp of the se(3) hat matrix of a twist, as a 4x4 homogeneous matrix.
inline Mat4 se3_exp_bruteforce(const Twist& xi) {
  Mat4 hat{};
  hat[1] = -xi.omega.z;
  hat[2] = xi.omega.y;
  hat[4] = xi.omega.z;
  hat[6] = -xi.omega.x;
  hat[8] = -xi.omega.y;
  hat[9] = xi.omega.x;
  hat[3] = xi.rho.x;
  hat[7] = xi.rho.y;
  hat[11] = xi.rho.z;
  return mat4_exp(hat);
}

// ---------------------------------------------------------------------------
// Scalar-loop image metric references
// ---------------------------------------------------------------------------

inline double psnr_reference(const ImageBuffer& a, const ImageBuffer& b) {
  double mse = 0.0;
  size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        mse += d * d;
        ++n;
      }
  mse /= static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline double l1_reference(const ImageBuffer& a, const ImageBuffer& b) {
  double sum = 0.0;
  size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < 3; ++c) {
        sum += std::abs(a.at(x, y, c) - b.at(x, y, c));
        ++n;
      }
  return sum / static_cast<double>(n);
}

/// Direct nested-loop SSIM with an 11x11 Gaussian window (sigma 1.5),
/// valid-region centers only, channels averaged.
inline double ssim_reference(const ImageBuffer& a, const ImageBuffer& b) {
  constexpr int kHalf = 5;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  double weights[11][11];
  double wsum = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      const double dx = i - kHalf, dy = j - kHalf;
      weights[i][j] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      wsum += weights[i][j];
    }
  for (auto& row : weights)
    for (double& w : row) w /= wsum;

  double total = 0.0;
  size_t count = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = kHalf; y < a.height - kHalf; ++y)
      for (int x = kHalf; x < a.width - kHalf; ++x) {
        double mx = 0, my = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            mx += weights[i][j] * a.at(x + i - kHalf, y + j - kHalf, c);
            my += weights[i][j] * b.at(x + i - kHalf, y + j - kHalf, c);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double da = a.at(x + i - kHalf, y + j - kHalf, c) - mx;
            const double db = b.at(x + i - kHalf, y + j - kHalf, c) - my;
            vx += weights[i][j] * da * da;
            vy += weights[i][j] * db * db;
            cov += weights[i][j] * da * db;
          }
        total += ((2 * mx * my + kC1) * (2 * cov + kC2)) /
                 ((mx * mx + my * my + kC1) * (vx + vy + kC2));
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Brute-force assignment (n <= 9)
// ---------------------------------------------------------------------------

/// Exhaustive minimum assignment cost over permutations of min(n, m) picks.
inline double assignment_bruteforce(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  const int m = n > 0 ? static_cast<int>(cost[0].size()) : 0;
  if (n == 0 || m == 0) return 0.0;
  if (n <= m) {
    std::vector<int> cols(m);
    std::iota(cols.begin(), cols.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    // permutations of column subsets: choose injection rows -> cols
    std::vector<char> used(m, 0);
    // no branch pruning: costs may be negative, so partial sums cannot bound
    std::function<void(int, double)> rec = [&](int row, double acc) {
      if (row == n) {
        best = std::min(best, acc);
        return;
      }
      for (int c = 0; c < m; ++c) {
        if (used[c]) continue;
        used[c] = 1;
        rec(row + 1, acc + cost[row][c]);
        used[c] = 0;
      }
    };
    rec(0, 0.0);
    return best;
  }
  // transpose
  std::vector<std::vector<double>> t(m, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) t[j][i] = cost[i][j];
  return assignment_bruteforce(t);
}

// ---------------------------------------------------------------------------
// Footprint-inclusion stability (for finite-difference gradient checks)
// ---------------------------------------------------------------------------

/// Pixels where one primitive contributes, mirroring the renderer's
/// inclusion rule (3 sigma truncation and the 1/255 opacity skip). The
/// compositing is only piecewise smooth across these boundaries, so a
/// finite-difference probe is valid only if this set is stable under it.
inline std::vector<std::pair<int, int>> footprint_pixels(
    const splatfuse::GaussianPrimitive& p, const splatfuse::Camera& cam) {
  std::vector<std::pair<int, int>> pixels;
  const splatfuse::Vec3 q = cam.world_to_camera.apply(p.position);
  if (q.z <= 1e-3) return pixels;
  const double u = cam.fx * q.x / q.z + cam.cx;
  const double v = cam.fy * q.y / q.z + cam.cy;
  const double sigma = cam.fx * p.scale / q.z;
  const double r = 3.0 * sigma;
  const int x0 = std::max(0, static_cast<int>(std::ceil(u - r - 0.5)));
  const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(u + r - 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(v - r - 0.5)));
  const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(v + r - 0.5)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - u, dy = (y + 0.5) - v;
      const double d2 = dx * dx + dy * dy;
      if (d2 > r * r) continue;
      const double a =
          std::min(0.99, p.opacity * std::exp(-d2 / (2.0 * sigma * sigma)));
      if (a < 1.0 / 255.0) continue;
      pixels.emplace_back(x, y);
    }
  return pixels;
}

// ---------------------------------------------------------------------------
// Random helpers
// ---------------------------------------------------------------------------

inline Vec3 random_unit(Rng& rng) {
  Vec3 v;
  do {
    v = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
  } while (v.squared_norm() > 1.0 || v.squared_norm() < 1e-6);
  return v.normalized();
}

inline ImageBuffer random_image(int w, int h, Rng& rng) {
  ImageBuffer img(w, h);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

}  // namespace oracle
