#include "panosim/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <thread>
#include <vector>

namespace panosim {

PanoSelection select_panorama(const GridIndex& grid, const CameraPose& pose) {
  const CellCoord c = grid.nearest(pose.x_m, pose.y_m);
  return {c, grid.record(c).id, grid.distance_m(pose.x_m, pose.y_m, c)};
}

Vec3 sphere_offset(const CameraPose& pose, double center_x, double center_y, double cell_size,
                   const InterpolationParams& params, double dz) {
  const double scale = params.lambda / (cell_size / 2.0);
  Vec3 o{scale * (pose.x_m - center_x), scale * (pose.y_m - center_y),
         params.include_z ? scale * dz : 0.0};
  const double n = norm(o);
  if (n > params.max_radius) o = (params.max_radius / n) * o;
  return o;
}

namespace {

constexpr double kPi = std::numbers::pi;

// atan2 via reduction to |t| <= tan(pi/8) and an odd series through t^17;
// absolute error below 3e-9 rad, i.e. far under a texel at any pano width.
double fast_atan2(double y, double x) {
  const double ay = std::abs(y);
  const double ax = std::abs(x);
  const bool swap = ay > ax;
  double t = swap ? ax / ay : (ax > 0.0 ? ay / ax : 0.0);  // in [0, 1]
  double base = 0.0;
  if (t > 0.41421356237309503) {
    t = (t - 1.0) / (t + 1.0);
    base = kPi / 4.0;
  }
  const double t2 = t * t;
  double p = 1.0 / 17.0;
  for (double c : {-1.0 / 15.0, 1.0 / 13.0, -1.0 / 11.0, 1.0 / 9.0, -1.0 / 7.0, 1.0 / 5.0, -1.0 / 3.0, 1.0}) {
    p = p * t2 + c;
  }
  double a = base + t * p;
  if (swap) a = kPi / 2.0 - a;
  if (x < 0.0) a = kPi - a;
  return y < 0.0 ? -a : a;
}

void render_rows(const RenderRequest& req, const EquirectPanorama& pano, const Rotation3& rot,
                 const Vec3& origin, bool displaced, int row_begin, int row_end, RgbImage& out) {
  const auto& intr = req.intrinsics;
  const RgbImage& img = pano.image;
  const int pw = pano.width();
  const int ph = pano.height();
  const double u_scale = pw / (2.0 * kPi);
  const double v_scale = (ph - 1) / kPi;
  double u_shift = std::fmod(kPi - pano.record.yaw_offset, 2.0 * kPi);
  if (u_shift < 0.0) u_shift += 2.0 * kPi;
  const double inside = 1.0 - dot(origin, origin);
  // Same arithmetic as pixel_ray, hoisted out of the pixel loop.
  const double tan_h = std::tan(intr.hfov() / 2.0);
  const double tan_v = std::tan(intr.vfov() / 2.0);
  std::vector<double> col(static_cast<std::size_t>(intr.width()));
  for (int u = 0; u < intr.width(); ++u) {
    col[static_cast<std::size_t>(u)] = -((2.0 * (u + 0.5) / intr.width() - 1.0) * tan_h);
  }
  for (int v = row_begin; v < row_end; ++v) {
    const double b = (1.0 - 2.0 * (v + 0.5) / intr.height()) * tan_v;
    std::uint8_t* dst = out.pixels.data() + out.offset(0, v);
    for (int u = 0; u < intr.width(); ++u, dst += 3) {
      // Both angles are scale-invariant, so q never needs normalizing. For a
      // displaced origin o and unnormalized ray d, the exit point scaled by
      // |d|^2 is |d|^2 o + (sqrt(b^2 + |d|^2 (1 - |o|^2)) - b) d with b = o.d.
      Vec3 q = rot.apply({1.0, col[static_cast<std::size_t>(u)], b});
      if (displaced) {
        const double dd = dot(q, q);
        const double ob = dot(origin, q);
        q = dd * origin + (std::sqrt(ob * ob + dd * inside) - ob) * q;
      }

      // Equirect texel: azimuth across, polar angle from +z down.
      double s = (fast_atan2(q.y, q.x) + u_shift) * u_scale;
      if (s >= pw) s -= pw;
      if (s < 0.0) s += pw;
      double tv = fast_atan2(std::sqrt(q.x * q.x + q.y * q.y), q.z) * v_scale;
      tv = std::clamp(tv, 0.0, static_cast<double>(ph - 1));

      int x0 = static_cast<int>(s);
      if (x0 >= pw) x0 = pw - 1;
      const int x1 = x0 + 1 == pw ? 0 : x0 + 1;
      const int y0 = static_cast<int>(tv);
      const int y1 = std::min(y0 + 1, ph - 1);
      const double fx = s - x0;
      const double fy = tv - y0;
      const std::uint8_t* p00 = img.pixels.data() + img.offset(x0, y0);
      const std::uint8_t* p10 = img.pixels.data() + img.offset(x1, y0);
      const std::uint8_t* p01 = img.pixels.data() + img.offset(x0, y1);
      const std::uint8_t* p11 = img.pixels.data() + img.offset(x1, y1);
      const double w00 = (1.0 - fx) * (1.0 - fy);
      const double w10 = fx * (1.0 - fy);
      const double w01 = (1.0 - fx) * fy;
      const double w11 = fx * fy;
      for (int c = 0; c < 3; ++c) {
        const double value = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
        dst[c] = static_cast<std::uint8_t>(std::min(255.0, value + 0.5));
      }
    }
  }
}

}  // namespace

Frame render(const RenderRequest& req, const EquirectPanorama& pano, double cell_size_m,
             double pano_z_m, int threads) {
  const auto& intr = req.intrinsics;
  Frame frame;
  frame.image = RgbImage(intr.width(), intr.height());
  frame.source_pano_id = pano.record.id;

  const Rotation3 rot = Rotation3::from(req.pose.orientation);
  Vec3 origin{};
  if (req.interpolation.enabled) {
    origin = sphere_offset(req.pose, pano.record.x_m, pano.record.y_m, cell_size_m,
                           req.interpolation, req.pose.z_m - pano_z_m);
  }
  const bool displaced = origin != Vec3{};
  if (!(dot(origin, origin) < 1.0)) {
    throw std::domain_error("projection origin must lie strictly inside the unit sphere");
  }

  threads = std::clamp(threads, 1, intr.height());
  if (threads == 1) {
    render_rows(req, pano, rot, origin, displaced, 0, intr.height(), frame.image);
    return frame;
  }
  std::vector<std::jthread> pool;
  const int chunk = (intr.height() + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int begin = t * chunk;
    const int end = std::min(intr.height(), begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      render_rows(req, pano, rot, origin, displaced, begin, end, frame.image);
    });
  }
  pool.clear();
  return frame;
}

RgbImage composite_over(const RgbImage& base, const RgbaImage& overlay) {
  if (base.width != overlay.width || base.height != overlay.height) {
    throw std::invalid_argument("overlay size does not match the frame");
  }
  RgbImage out(base.width, base.height);
  const std::size_t n = static_cast<std::size_t>(base.width) * base.height;
  for (std::size_t p = 0; p < n; ++p) {
    const unsigned a = overlay.pixels[4 * p + 3];
    for (int c = 0; c < 3; ++c) {
      const unsigned fg = overlay.pixels[4 * p + c];
      const unsigned bg = base.pixels[3 * p + c];
      // floor((a*fg + (255-a)*bg) / 255 + 1/2)
      out.pixels[3 * p + c] = static_cast<std::uint8_t>((2 * (a * fg + (255 - a) * bg) + 255) / 510);
    }
  }
  return out;
}

namespace {

void require_same_size(const RgbImage& a, const RgbImage& b) {
  if (a.width != b.width || a.height != b.height) {
    throw std::invalid_argument("images differ in size");
  }
}

}  // namespace

double image_mae(const RgbImage& a, const RgbImage& b) {
  require_same_size(a, b);
  if (a.pixels.empty()) return 0.0;
  std::uint64_t sum = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    sum += static_cast<std::uint64_t>(std::abs(int{a.pixels[i]} - int{b.pixels[i]}));
  }
  return static_cast<double>(sum) / static_cast<double>(a.pixels.size());
}

double image_psnr(const RgbImage& a, const RgbImage& b) {
  require_same_size(a, b);
  std::uint64_t sq = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const int d = int{a.pixels[i]} - int{b.pixels[i]};
    sq += static_cast<std::uint64_t>(d * d);
  }
  if (sq == 0) return std::numeric_limits<double>::infinity();
  const double rmse = std::sqrt(static_cast<double>(sq) / static_cast<double>(a.pixels.size()));
  return 20.0 * std::log10(255.0 / rmse);
}

}  // namespace panosim
