// Spherical geometry for equirectangular reprojection.
//
// Frames are right-handed with x forward, y left, z up. Angles are radians.
// Azimuth theta is measured about +z from +x and lies in (-pi, pi]; elevation
// phi is measured from the xy-plane and lies in [-pi/2, pi/2].
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace panosim {

struct RgbImage;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend constexpr Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend constexpr Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  friend constexpr bool operator==(Vec3, Vec3) = default;
};

constexpr double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

/// Unit vector. Only constructible through normalization or from a value the
/// caller vouches is already unit length.
class Direction3 {
 public:
  Direction3() = default;

  static Direction3 normalize(Vec3 v) {
    const double n = norm(v);
    return Direction3(Vec3{v.x / n, v.y / n, v.z / n});
  }
  static constexpr Direction3 from_unit(Vec3 v) { return Direction3(v); }

  constexpr double x() const { return v_.x; }
  constexpr double y() const { return v_.y; }
  constexpr double z() const { return v_.z; }
  constexpr const Vec3& vec() const { return v_; }

  friend constexpr bool operator==(Direction3, Direction3) = default;

 private:
  constexpr explicit Direction3(Vec3 v) : v_(v) {}
  Vec3 v_{1.0, 0.0, 0.0};
};

struct SphereAngles {
  double theta = 0.0;  // azimuth
  double phi = 0.0;    // elevation
};

/// Continuous pixel coordinates into a panorama; integer values address pixel
/// centers.
struct TexCoord {
  double u = 0.0;
  double v = 0.0;
};

struct Rgb8 {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  friend constexpr bool operator==(Rgb8, Rgb8) = default;
};

/// Pinhole model of the virtual camera.
class CameraIntrinsics {
 public:
  /// Throws std::invalid_argument when width/height < 1 or hfov is outside
  /// (0, pi). vfov defaults to the value implied by square pixels.
  CameraIntrinsics(int width, int height, double hfov);
  CameraIntrinsics(int width, int height, double hfov, double vfov);

  int width() const { return width_; }
  int height() const { return height_; }
  double hfov() const { return hfov_; }
  double vfov() const { return vfov_; }

  /// Horizontal pixels per degree of field of view.
  double angular_resolution() const;

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;

 private:
  int width_;
  int height_;
  double hfov_;
  double vfov_;
};

/// Euler angles applied yaw (about z), then pitch (about the yawed y), then
/// roll (about the resulting forward axis). Positive pitch looks down.
struct Orientation {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

struct Rotation3 {
  std::array<std::array<double, 3>, 3> m{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};

  static Rotation3 from(const Orientation& o);

  Vec3 apply(Vec3 v) const {
    return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
  }
  double determinant() const;
};

struct SphereExit {
  double t = 0.0;
  Direction3 q;
};

/// Camera-frame ray through the center of pixel (u, v).
Direction3 pixel_ray(double u, double v, const CameraIntrinsics& intr);

SphereAngles dir_to_angles(Direction3 d);
Direction3 angles_to_dir(SphereAngles a);

/// Maps sphere angles to panorama pixel coordinates. yaw_offset is subtracted
/// from the azimuth before lookup.
TexCoord angles_to_tex(SphereAngles a, int pano_width, int pano_height, double yaw_offset);

Direction3 rotate(Direction3 d, const Orientation& o);

/// Exit point of the ray origin + t*d through the unit sphere. Throws
/// std::domain_error when |origin| >= 1.
SphereExit ray_sphere_exit(Vec3 origin, Direction3 d);

/// Bilinear lookup with horizontal wrap and vertical clamp. image must be RGB.
Rgb8 bilinear_sample(const RgbImage& image, TexCoord t);

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

}  // namespace panosim
