#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "splatfuse/errors.hpp"

namespace splatfuse {

/// H x W x 3 floating-point image. Values live in [0,1] by convention but
/// are clamped only at file export, never internally.
struct ImageBuffer {
  int width = 0, height = 0;
  std::vector<double> data;  // row-major, 3 channels interleaved

  ImageBuffer() = default;
  ImageBuffer(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

  double& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  size_t pixel_count() const { return static_cast<size_t>(width) * height; }
  bool same_size(const ImageBuffer& o) const {
    return width == o.width && height == o.height;
  }
};

/// Per-pixel depth of the first primitive whose accumulated contribution
/// exceeds 0.5 during compositing; +inf where nothing reaches that.
struct DepthBuffer {
  int width = 0, height = 0;
  std::vector<double> depth;

  DepthBuffer() = default;
  DepthBuffer(int w, int h)
      : width(w),
        height(h),
        depth(static_cast<size_t>(w) * h, std::numeric_limits<double>::infinity()) {}

  double& at(int x, int y) { return depth[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const {
    return depth[static_cast<size_t>(y) * width + x];
  }
};

/// Binary per-pixel mask.
struct Mask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> on;

  Mask() = default;
  Mask(int w, int h, bool fill = false)
      : width(w), height(h), on(static_cast<size_t>(w) * h, fill ? 1 : 0) {}

  std::uint8_t& at(int x, int y) { return on[static_cast<size_t>(y) * width + x]; }
  bool at(int x, int y) const {
    return on[static_cast<size_t>(y) * width + x] != 0;
  }
  bool same_size(const Mask& o) const {
    return width == o.width && height == o.height;
  }
  size_t count() const {
    size_t n = 0;
    for (auto v : on) n += (v != 0);
    return n;
  }
  bool empty() const { return count() == 0; }
};

inline Mask mask_union(const Mask& a, const Mask& b) {
  if (!a.same_size(b)) throw DimensionMismatchError("mask_union: size mismatch");
  Mask r(a.width, a.height);
  for (size_t i = 0; i < r.on.size(); ++i) r.on[i] = (a.on[i] || b.on[i]) ? 1 : 0;
  return r;
}

inline Mask mask_intersect(const Mask& a, const Mask& b) {
  if (!a.same_size(b)) throw DimensionMismatchError("mask_intersect: size mismatch");
  Mask r(a.width, a.height);
  for (size_t i = 0; i < r.on.size(); ++i) r.on[i] = (a.on[i] && b.on[i]) ? 1 : 0;
  return r;
}

/// Binary dilation with a (2*radius+1)^2 square structuring element.
inline Mask dilate(const Mask& m, int radius) {
  Mask r(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      bool hit = false;
      for (int dy = -radius; dy <= radius && !hit; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= m.height) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= m.width) continue;
          if (m.at(xx, yy)) {
            hit = true;
            break;
          }
        }
      }
      r.at(x, y) = hit ? 1 : 0;
    }
  }
  return r;
}

inline Mask erode(const Mask& m, int radius) {
  Mask r(m.width, m.height);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      bool all = true;
      for (int dy = -radius; dy <= radius && all; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= m.height) {
          all = false;
          break;
        }
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= m.width || !m.at(xx, yy)) {
            all = false;
            break;
          }
        }
      }
      r.at(x, y) = all ? 1 : 0;
    }
  }
  return r;
}

inline double iou(const Mask& a, const Mask& b) {
  if (!a.same_size(b)) throw DimensionMismatchError("iou: size mismatch");
  size_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.on.size(); ++i) {
    inter += (a.on[i] && b.on[i]);
    uni += (a.on[i] || b.on[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// PPM / PGM I/O
// ---------------------------------------------------------------------------

inline std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// Binary PPM (P6, 8-bit). Values clamped to [0,1] at export.
inline void write_ppm(const ImageBuffer& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) row[3 * x + c] = to_byte(img.at(x, y, c));
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw Error("write_ppm: write failed for " + path);
}

inline ImageBuffer read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("read_ppm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError("read_ppm: unsupported header in " + path);
  }
  f.get();  // single whitespace after header
  ImageBuffer img(w, h);
  std::vector<std::uint8_t> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size()));
    if (!f) throw ParseError("read_ppm: truncated pixel data in " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = row[3 * x + c] / 255.0;
  }
  return img;
}

/// Binary PGM (P5) with 0/255 values.
inline void write_pgm(const Mask& mask, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_pgm: cannot open " + path);
  f << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<size_t>(mask.width));
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) row[x] = mask.at(x, y) ? 255 : 0;
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw Error("write_pgm: write failed for " + path);
}

inline Mask read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("read_pgm: cannot open " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw ParseError("read_pgm: unsupported header in " + path);
  }
  f.get();
  Mask mask(w, h);
  std::vector<std::uint8_t> row(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size()));
    if (!f) throw ParseError("read_pgm: truncated pixel data in " + path);
    for (int x = 0; x < w; ++x) mask.at(x, y) = row[x] >= 128 ? 1 : 0;
  }
  return mask;
}

}  // namespace splatfuse
