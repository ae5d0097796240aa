#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "splatfuse/errors.hpp"
#include "splatfuse/image.hpp"

namespace splatfuse {

// ---------------------------------------------------------------------------
// L1
// ---------------------------------------------------------------------------

/// Mean absolute difference over all pixel channels.
inline double l1_loss(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_size(b)) throw DimensionMismatchError("l1_loss: size mismatch");
  double sum = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
  return sum / static_cast<double>(a.data.size());
}

/// Gradient of l1_loss w.r.t. a, written into grad (accumulated with weight).
inline void l1_gradient(const ImageBuffer& a, const ImageBuffer& b,
                        double weight, ImageBuffer& grad) {
  if (!a.same_size(b) || !a.same_size(grad)) {
    throw DimensionMismatchError("l1_gradient: size mismatch");
  }
  const double w = weight / static_cast<double>(a.data.size());
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    if (d > 0.0) {
      grad.data[i] += w;
    } else if (d < 0.0) {
      grad.data[i] -= w;
    }
  }
}

/// Mean absolute difference restricted to mask pixels (all 3 channels).
inline double masked_l1_loss(const ImageBuffer& a, const ImageBuffer& b,
                             const Mask& mask) {
  if (!a.same_size(b) || a.width != mask.width || a.height != mask.height) {
    throw DimensionMismatchError("masked_l1_loss: size mismatch");
  }
  double sum = 0.0;
  size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!mask.at(x, y)) continue;
      for (int c = 0; c < 3; ++c) sum += std::abs(a.at(x, y, c) - b.at(x, y, c));
      n += 3;
    }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline void masked_l1_gradient(const ImageBuffer& a, const ImageBuffer& b,
                               const Mask& mask, double weight,
                               ImageBuffer& grad) {
  const size_t n = mask.count() * 3;
  if (n == 0) return;
  const double w = weight / static_cast<double>(n);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!mask.at(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        if (d > 0.0) {
          grad.at(x, y, c) += w;
        } else if (d < 0.0) {
          grad.at(x, y, c) -= w;
        }
      }
    }
}

// ---------------------------------------------------------------------------
// PSNR
// ---------------------------------------------------------------------------

/// 10*log10(1/MSE) with dynamic range 1.0; +inf when MSE = 0. With a mask,
/// MSE runs over masked pixels only (empty mask is an error).
inline double psnr(const ImageBuffer& a, const ImageBuffer& b,
                   const Mask* mask = nullptr) {
  if (!a.same_size(b)) throw DimensionMismatchError("psnr: size mismatch");
  if (mask && (mask->width != a.width || mask->height != a.height)) {
    throw DimensionMismatchError("psnr: mask size mismatch");
  }
  double sum = 0.0;
  size_t n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask && !mask->at(x, y)) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(x, y, c) - b.at(x, y, c);
        sum += d * d;
      }
      n += 3;
    }
  if (n == 0) throw EmptyMaskError("psnr: mask selects no pixel");
  const double mse = sum / static_cast<double>(n);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

// ---------------------------------------------------------------------------
// SSIM (11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, range 1.0)
// ---------------------------------------------------------------------------

namespace ssim_detail {

inline constexpr int kWindow = 11;
inline constexpr int kHalf = 5;
inline constexpr double kC1 = 0.01 * 0.01;
inline constexpr double kC2 = 0.03 * 0.03;

inline const std::vector<double>& gaussian_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> g(kWindow);
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - kHalf;
      g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
  }();
  return k;
}

/// Separable 11-tap filtering with zero padding. Border outputs are only
/// meaningful where the window is fully inside; callers restrict to that
/// valid region.
inline void filter(const std::vector<double>& src, int w, int h,
                   std::vector<double>& tmp, std::vector<double>& dst) {
  const auto& k = gaussian_kernel();
  tmp.resize(src.size());
  dst.assign(src.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    const double* row = &src[static_cast<size_t>(y) * w];
    double* out = &tmp[static_cast<size_t>(y) * w];
    for (int x = 0; x < std::min(w, kHalf); ++x) {
      double s = 0.0;
      const int hi = std::min(w - 1, x + kHalf);
      for (int xx = 0; xx <= hi; ++xx) s += row[xx] * k[xx - x + kHalf];
      out[x] = s;
    }
    for (int x = kHalf; x < w - kHalf; ++x) {
      const double* r = row + x - kHalf;
      double s = 0.0;
      for (int j = 0; j < kWindow; ++j) s += r[j] * k[j];
      out[x] = s;
    }
    for (int x = std::max(kHalf, w - kHalf); x < w; ++x) {
      double s = 0.0;
      const int lo = std::max(0, x - kHalf);
      for (int xx = lo; xx <= w - 1; ++xx) s += row[xx] * k[xx - x + kHalf];
      out[x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    const int lo = std::max(0, y - kHalf), hi = std::min(h - 1, y + kHalf);
    double* out = &dst[static_cast<size_t>(y) * w];
    for (int yy = lo; yy <= hi; ++yy) {
      const double kv = k[yy - y + kHalf];
      const double* row = &tmp[static_cast<size_t>(yy) * w];
      for (int x = 0; x < w; ++x) out[x] += kv * row[x];
    }
  }
}

/// Per-thread scratch so repeated ssim() calls do not reallocate.
struct Workspace {
  std::vector<double> ca, cb, caa, cbb, cab;
  std::vector<double> mu_a, mu_b, m_aa, m_bb, m_ab, tmp;
  std::vector<double> p_mu, p_var, p_cov;
  std::vector<double> f_mu, f_var, f_cov, prod, f_var_mu, f_cov_mu;

  static Workspace& local() {
    thread_local Workspace ws;
    return ws;
  }
};

struct ChannelStats {
  std::vector<double> mu_a, mu_b, a2, b2, ab;  // filtered fields
};

}  // namespace ssim_detail

/// Mean SSIM over window centers whose 11x11 window lies fully inside the
/// image, averaged across the three channels. Requires min side >= 11.
/// When grad_a is non-null, the gradient of the mean SSIM w.r.t. image a is
/// accumulated into it with the given weight.
inline double ssim(const ImageBuffer& a, const ImageBuffer& b,
                   ImageBuffer* grad_a = nullptr, double grad_weight = 1.0) {
  using namespace ssim_detail;
  if (!a.same_size(b)) throw DimensionMismatchError("ssim: size mismatch");
  if (a.width < kWindow || a.height < kWindow) {
    throw DimensionMismatchError("ssim: image smaller than 11x11 window");
  }
  const int w = a.width, h = a.height;
  const size_t n = a.pixel_count();
  const int x0 = kHalf, x1 = w - kHalf - 1;
  const int y0 = kHalf, y1 = h - kHalf - 1;
  const double n_valid = static_cast<double>(x1 - x0 + 1) * (y1 - y0 + 1) * 3.0;

  ssim_detail::Workspace& ws = ssim_detail::Workspace::local();
  auto& ca = ws.ca;
  auto& cb = ws.cb;
  auto& caa = ws.caa;
  auto& cbb = ws.cbb;
  auto& cab = ws.cab;
  auto& mu_a = ws.mu_a;
  auto& mu_b = ws.mu_b;
  auto& m_aa = ws.m_aa;
  auto& m_bb = ws.m_bb;
  auto& m_ab = ws.m_ab;
  auto& tmp = ws.tmp;
  auto& p_mu = ws.p_mu;
  auto& p_var = ws.p_var;
  auto& p_cov = ws.p_cov;
  auto& f_mu = ws.f_mu;
  auto& f_var = ws.f_var;
  auto& f_cov = ws.f_cov;
  ca.resize(n);
  cb.resize(n);
  caa.resize(n);
  cbb.resize(n);
  cab.resize(n);
  p_mu.resize(n);
  p_var.resize(n);
  p_cov.resize(n);

  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        const double va = a.at(x, y, c), vb = b.at(x, y, c);
        ca[i] = va;
        cb[i] = vb;
        caa[i] = va * va;
        cbb[i] = vb * vb;
        cab[i] = va * vb;
      }
    filter(ca, w, h, tmp, mu_a);
    filter(cb, w, h, tmp, mu_b);
    filter(caa, w, h, tmp, m_aa);
    filter(cbb, w, h, tmp, m_bb);
    filter(cab, w, h, tmp, m_ab);

    if (grad_a) {
      std::fill(p_mu.begin(), p_mu.end(), 0.0);
      std::fill(p_var.begin(), p_var.end(), 0.0);
      std::fill(p_cov.begin(), p_cov.end(), 0.0);
    }
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        const double a1 = 2.0 * ma * mb + kC1;
        const double a2v = 2.0 * cov + kC2;
        const double b1 = ma * ma + mb * mb + kC1;
        const double b2 = va + vb + kC2;
        total += (a1 * a2v) / (b1 * b2);
        if (grad_a) {
          const double inv = 1.0 / (b1 * b2);
          // dS/d(mu_a), dS/d(var_a), dS/d(cov)
          p_mu[i] = 2.0 * a2v * (mb * b1 - ma * a1) * inv / b1;
          p_var[i] = -a1 * a2v * inv / b2;
          p_cov[i] = 2.0 * a1 * inv;
        }
      }

    if (grad_a) {
      // Chain through the filtered fields. The kernel is symmetric, so the
      // adjoint of filtering is filtering the (valid-region-only) partials:
      //   dL/dx(q) = G*p_mu + 2 x(q) G*p_var - 2 G*(mu_a p_var)
      //            + y(q) G*p_cov - G*(mu_b p_cov), all over n_valid.
      // The x- and y-independent terms share one filter pass by linearity.
      auto& prod = ws.prod;
      prod.resize(n);
      for (size_t i = 0; i < n; ++i) {
        prod[i] = p_mu[i] - 2.0 * mu_a[i] * p_var[i] - mu_b[i] * p_cov[i];
      }
      filter(prod, w, h, tmp, f_mu);
      filter(p_var, w, h, tmp, f_var);
      filter(p_cov, w, h, tmp, f_cov);
      const double scale = grad_weight / n_valid;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const size_t i = static_cast<size_t>(y) * w + x;
          const double g = f_mu[i] + 2.0 * ca[i] * f_var[i] + cb[i] * f_cov[i];
          grad_a->at(x, y, c) += scale * g;
        }
    }
  }
  return total / n_valid;
}

}  // namespace splatfuse
