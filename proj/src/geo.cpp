#include "panosim/geo.hpp"

#include <algorithm>
#include <stdexcept>

#include "panosim/image.hpp"

namespace panosim {

namespace {

constexpr double kPi = std::numbers::pi;

void check_fov(double fov, const char* what) {
  if (!(fov > 0.0 && fov < kPi)) {
    throw std::invalid_argument(std::string(what) + " must lie in (0, pi)");
  }
}

}  // namespace

CameraIntrinsics::CameraIntrinsics(int width, int height, double hfov)
    : CameraIntrinsics(width, height, hfov,
                       (width >= 1 && height >= 1)
                           ? 2.0 * std::atan(std::tan(hfov / 2.0) * height / width)
                           : hfov) {}

CameraIntrinsics::CameraIntrinsics(int width, int height, double hfov, double vfov)
    : width_(width), height_(height), hfov_(hfov), vfov_(vfov) {
  if (width < 1 || height < 1) {
    throw std::invalid_argument("camera width and height must be >= 1");
  }
  check_fov(hfov, "hfov");
  check_fov(vfov, "vfov");
}

double CameraIntrinsics::angular_resolution() const { return width_ / rad_to_deg(hfov_); }

Rotation3 Rotation3::from(const Orientation& o) {
  const double cy = std::cos(o.yaw), sy = std::sin(o.yaw);
  const double cp = std::cos(o.pitch), sp = std::sin(o.pitch);
  const double cr = std::cos(o.roll), sr = std::sin(o.roll);
  // Rz(yaw) * Ry(pitch) * Rx(roll)
  Rotation3 r;
  r.m = {{{cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
          {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
          {-sp, cp * sr, cp * cr}}};
  return r;
}

double Rotation3::determinant() const {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Direction3 pixel_ray(double u, double v, const CameraIntrinsics& intr) {
  const double a = (2.0 * (u + 0.5) / intr.width() - 1.0) * std::tan(intr.hfov() / 2.0);
  const double b = (1.0 - 2.0 * (v + 0.5) / intr.height()) * std::tan(intr.vfov() / 2.0);
  // forward (1,0,0), right (0,-1,0), up (0,0,1)
  return Direction3::normalize({1.0, -a, b});
}

SphereAngles dir_to_angles(Direction3 d) {
  return {std::atan2(d.y(), d.x()), std::asin(std::clamp(d.z(), -1.0, 1.0))};
}

Direction3 angles_to_dir(SphereAngles a) {
  const double cp = std::cos(a.phi);
  return Direction3::from_unit({cp * std::cos(a.theta), cp * std::sin(a.theta), std::sin(a.phi)});
}

TexCoord angles_to_tex(SphereAngles a, int pano_width, int pano_height, double yaw_offset) {
  double s = (a.theta - yaw_offset + kPi) / (2.0 * kPi);
  s -= std::floor(s);
  double u = s * pano_width;
  if (u >= pano_width) u -= pano_width;
  const double v = ((kPi / 2.0 - a.phi) / kPi) * (pano_height - 1);
  return {u, v};
}

Direction3 rotate(Direction3 d, const Orientation& o) {
  return Direction3::from_unit(Rotation3::from(o).apply(d.vec()));
}

SphereExit ray_sphere_exit(Vec3 origin, Direction3 d) {
  const double oo = dot(origin, origin);
  if (!(oo < 1.0)) {
    throw std::domain_error("ray origin must lie strictly inside the unit sphere");
  }
  const double b = dot(origin, d.vec());
  const double t = -b + std::sqrt(b * b - oo + 1.0);
  return {t, Direction3::from_unit(origin + t * d.vec())};
}

Rgb8 bilinear_sample(const RgbImage& image, TexCoord t) {
  const int w = image.width;
  const int h = image.height;

  double u = std::fmod(t.u, static_cast<double>(w));
  if (u < 0.0) u += w;
  const double v = std::clamp(t.v, 0.0, static_cast<double>(h - 1));

  int x0 = static_cast<int>(u);
  if (x0 >= w) x0 = w - 1;
  const int x1 = (x0 + 1 == w) ? 0 : x0 + 1;
  const int y0 = static_cast<int>(v);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = u - x0;
  const double fy = v - y0;

  const std::uint8_t* p00 = image.pixels.data() + image.offset(x0, y0);
  const std::uint8_t* p10 = image.pixels.data() + image.offset(x1, y0);
  const std::uint8_t* p01 = image.pixels.data() + image.offset(x0, y1);
  const std::uint8_t* p11 = image.pixels.data() + image.offset(x1, y1);

  const double w00 = (1.0 - fx) * (1.0 - fy);
  const double w10 = fx * (1.0 - fy);
  const double w01 = (1.0 - fx) * fy;
  const double w11 = fx * fy;

  auto channel = [&](int c) {
    const double value = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
    return static_cast<std::uint8_t>(std::min(255.0, value + 0.5));
  };
  return {channel(0), channel(1), channel(2)};
}

}  // namespace panosim
