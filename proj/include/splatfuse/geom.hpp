#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "splatfuse/errors.hpp"

namespace splatfuse {

// ---------------------------------------------------------------------------
// Vectors and matrices
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3() = default;
  Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  Vec3& operator*=(double s) {
    x *= s;
    y *= s;
    z *= s;
    return *this;
  }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }

  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double squared_norm() const { return dot(*this); }
  double norm() const { return std::sqrt(squared_norm()); }
  Vec3 normalized() const {
    const double n = norm();
    return n > 0.0 ? (*this) / n : Vec3{0, 0, 0};
  }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// Row-major 3x3 matrix. Also serves as the rotation type; rotation-valued
/// instances are expected to satisfy is_rotation().
struct Mat3 {
  std::array<double, 9> m{};  // row-major

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }
  static Mat3 zero() { return Mat3{}; }

  double& operator()(int r, int c) { return m[3 * r + c]; }
  double operator()(int r, int c) const { return m[3 * r + c]; }

  Mat3 operator+(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] + o.m[i];
    return r;
  }
  Mat3 operator-(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] - o.m[i];
    return r;
  }
  Mat3 operator*(double s) const {
    Mat3 r;
    for (int i = 0; i < 9; ++i) r.m[i] = m[i] * s;
    return r;
  }
  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }
  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 transpose() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
  double trace() const { return m[0] + m[4] + m[8]; }
  double determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

using Rotation = Mat3;

inline Mat3 outer(const Vec3& a, const Vec3& b) {
  Mat3 r;
  r.m = {a.x * b.x, a.x * b.y, a.x * b.z, a.y * b.x, a.y * b.y,
         a.y * b.z, a.z * b.x, a.z * b.y, a.z * b.z};
  return r;
}

/// Skew-symmetric matrix such that skew(v) * u = v x u.
inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s.m = {0, -v.z, v.y, v.z, 0, -v.x, -v.y, v.x, 0};
  return s;
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  const Mat3 rtr = r.transpose() * r;
  const Mat3 id = Mat3::identity();
  for (int i = 0; i < 9; ++i)
    if (std::abs(rtr.m[i] - id.m[i]) > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

// ---------------------------------------------------------------------------
// SE(3)
// ---------------------------------------------------------------------------

struct RigidTransform {
  Rotation rotation = Mat3::identity();
  Vec3 translation{};

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
};

/// se(3) tangent vector. Component order is (rho, omega): translational
/// part first, rotational part second. This ordering is the library-wide
/// convention, including the 6-vector layouts in files and gradients.
struct Twist {
  Vec3 rho{};    // translational part, meters
  Vec3 omega{};  // rotational part, radians

  static Twist zero() { return {}; }

  double operator[](int i) const { return i < 3 ? rho[i] : omega[i - 3]; }
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline RigidTransform inverse(const RigidTransform& t) {
  const Mat3 rt = t.rotation.transpose();
  return {rt, -(rt * t.translation)};
}

inline Vec3 transform_point(const RigidTransform& t, const Vec3& p) {
  return t.apply(p);
}

namespace detail {
// Angle below which the Rodrigues coefficients switch to their 2nd-order
// Taylor expansions.
inline constexpr double kSmallAngle = 1e-8;
}  // namespace detail

inline Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < detail::kSmallAngle) {
    return Mat3::identity() + k + (k * k) * 0.5;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::identity() + k * a + (k * k) * b;
}

inline Vec3 so3_log(const Mat3& r) {
  const double cos_theta = std::min(1.0, std::max(-1.0, (r.trace() - 1.0) * 0.5));
  const double theta = std::acos(cos_theta);
  if (theta > 3.14159265358979323846 - 1e-6) {
    throw AngleNearPiError("so3_log: rotation angle within 1e-6 of pi, log is multivalued");
  }
  const Vec3 v{(r(2, 1) - r(1, 2)) * 0.5, (r(0, 2) - r(2, 0)) * 0.5,
               (r(1, 0) - r(0, 1)) * 0.5};
  if (theta < detail::kSmallAngle) {
    // v = sin(theta)/theta * omega; the 2nd-order correction keeps the
    // round-trip exact to machine precision.
    return v * (1.0 + theta * theta / 6.0);
  }
  return v * (theta / std::sin(theta));
}

/// Left Jacobian of SO(3): translation mixing matrix of the SE(3) exponential.
inline Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < detail::kSmallAngle) {
    return Mat3::identity() + k * 0.5 + (k * k) * (1.0 / 6.0);
  }
  const double t2 = theta * theta;
  const double b = (1.0 - std::cos(theta)) / t2;
  const double c = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::identity() + k * b + (k * k) * c;
}

inline Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < detail::kSmallAngle) {
    return Mat3::identity() - k * 0.5 + (k * k) * (1.0 / 12.0);
  }
  const double c = 1.0 / (theta * theta) -
                   (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  return Mat3::identity() - k * 0.5 + (k * k) * c;
}

/// Closed-form SE(3) exponential (Rodrigues). Total function.
inline RigidTransform se3_exp(const Twist& xi) {
  return {so3_exp(xi.omega), so3_left_jacobian(xi.omega) * xi.rho};
}

/// Inverse of se3_exp. Requires rotation angle < pi - 1e-6; throws
/// AngleNearPiError otherwise.
inline Twist se3_log(const RigidTransform& t) {
  const Vec3 omega = so3_log(t.rotation);
  const Vec3 rho = so3_left_jacobian_inverse(omega) * t.translation;
  return {rho, omega};
}

/// Rotation angle (radians) of a * b^-1; pose-error metric between rotations.
/// atan2 form, stable for near-identity differences where acos loses digits.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 d = a * b.transpose();
  const Vec3 v{(d(2, 1) - d(1, 2)) * 0.5, (d(0, 2) - d(2, 0)) * 0.5,
               (d(1, 0) - d(0, 1)) * 0.5};
  const double c = (d.trace() - 1.0) * 0.5;
  return std::atan2(v.norm(), c);
}

// ---------------------------------------------------------------------------
// 4x4 row-major serialization (the exchange form in scene/config files)
// ---------------------------------------------------------------------------

inline std::array<double, 16> to_matrix4(const RigidTransform& t) {
  return {t.rotation(0, 0), t.rotation(0, 1), t.rotation(0, 2), t.translation.x,
          t.rotation(1, 0), t.rotation(1, 1), t.rotation(1, 2), t.translation.y,
          t.rotation(2, 0), t.rotation(2, 1), t.rotation(2, 2), t.translation.z,
          0.0,              0.0,              0.0,              1.0};
}

inline RigidTransform rigid_from_matrix4(const std::array<double, 16>& m,
                                         double tol = 1e-6) {
  RigidTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = m[4 * r + c];
  t.translation = {m[3], m[7], m[11]};
  if (!is_rotation(t.rotation, tol)) {
    throw ParseError("rigid_from_matrix4: upper-left 3x3 block is not a rotation");
  }
  return t;
}

// ---------------------------------------------------------------------------
// Cameras
// ---------------------------------------------------------------------------

/// Pinhole camera. Camera frame is the usual CV convention: +X right,
/// +Y down, +Z forward; world_to_camera maps world points into that frame.
struct Camera {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
  RigidTransform world_to_camera;

  Vec3 center() const { return inverse(world_to_camera).translation; }
};

struct PixelProjection {
  double u = 0.0, v = 0.0;
  double depth = 0.0;
};

inline constexpr double kDefaultNearPlane = 1e-3;

/// Perspective projection. Returns nullopt when the point is behind the
/// camera (depth <= near).
inline std::optional<PixelProjection> project(const Camera& cam, const Vec3& p,
                                              double near = kDefaultNearPlane) {
  const Vec3 q = cam.world_to_camera.apply(p);
  if (q.z <= near) return std::nullopt;
  return PixelProjection{cam.fx * q.x / q.z + cam.cx,
                         cam.fy * q.y / q.z + cam.cy, q.z};
}

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

/// Primary ray through the center of pixel (u, v).
inline Ray pixel_ray(const Camera& cam, int u, int v) {
  if (u < 0 || u >= cam.width || v < 0 || v >= cam.height) {
    throw std::out_of_range("pixel_ray: pixel outside image bounds");
  }
  const Vec3 dir_cam{(u + 0.5 - cam.cx) / cam.fx, (v + 0.5 - cam.cy) / cam.fy, 1.0};
  const RigidTransform cam_to_world = inverse(cam.world_to_camera);
  const Vec3 dir_world = cam_to_world.rotation * dir_cam;
  return {cam_to_world.translation, dir_world.normalized()};
}

/// Camera at `eye` looking at `target`, world +Z treated as up.
inline Camera make_look_at_camera(const Vec3& eye, const Vec3& target,
                                  double fx, double fy, double cx, double cy,
                                  int width, int height) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up{0, 0, 1};
  if (std::abs(forward.dot(up)) > 0.999) up = {0, 1, 0};
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);  // +Y down in camera frame

  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  Mat3 r;
  r.m = {right.x, right.y, right.z, down.x, down.y, down.z,
         forward.x, forward.y, forward.z};
  cam.world_to_camera = {r, -(r * eye)};
  return cam;
}

}  // namespace splatfuse
