#include "panosim/renderer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace panosim {
namespace {

constexpr double kPi = std::numbers::pi;

double max_oracle_error(const Frame& f, const CameraIntrinsics& intr, const Orientation& o,
                        int pw, int ph, double yaw_offset) {
  double worst = 0.0;
  for (int v = 0; v < intr.height(); ++v) {
    for (int u = 0; u < intr.width(); ++u) {
      const auto ray = oracle::world_ray(u, v, intr.width(), intr.height(), intr.hfov(), intr.vfov(),
                                         o.yaw, o.pitch, o.roll);
      const auto want = oracle::synth_value(ray, pw, ph, yaw_offset);
      const Rgb8 got = f.image.at(u, v);
      worst = std::max({worst, std::abs(got.r - want[0]), std::abs(got.g - want[1]),
                        std::abs(got.b - want[2])});
    }
  }
  return worst;
}

TEST(SelectPanorama, NearestWithTieToLowerCell) {
  const auto m = testing::grid_manifest({{0, 0}, {1, 0}}, 0.2, 64, 32);
  const GridIndex grid(m);
  CameraPose p;
  p.x_m = 0.09;
  EXPECT_EQ(select_panorama(grid, p).cell, (CellCoord{0, 0}));
  p.x_m = 0.10;
  EXPECT_EQ(select_panorama(grid, p).cell, (CellCoord{0, 0}));
  p.x_m = 0.11;
  EXPECT_EQ(select_panorama(grid, p).id, "c1_0");
}

TEST(SelectPanorama, RandomPosesMatchBruteForce) {
  const auto cells = testing::block(0, 0, 5, 5);
  const GridIndex grid(testing::grid_manifest(cells, 0.2, 64, 32));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(-0.3, 1.1);
  for (int k = 0; k < 100; ++k) {
    CameraPose p;
    p.x_m = pos(rng);
    p.y_m = pos(rng);
    EXPECT_EQ(select_panorama(grid, p).cell, oracle::brute_nearest(cells, p.x_m, p.y_m, 0.2));
  }
}

TEST(SphereOffset, Examples) {
  InterpolationParams ip{.enabled = true, .lambda = 0.5};
  CameraPose p;
  p.x_m = 0.4;
  p.y_m = 0.2;
  EXPECT_EQ(sphere_offset(p, 0.4, 0.2, 0.2, ip), (Vec3{}));

  p.x_m = 0.5;
  const Vec3 o = sphere_offset(p, 0.4, 0.2, 0.2, ip);
  EXPECT_NEAR(o.x, 0.5, 1e-12);
  EXPECT_NEAR(o.y, 0.0, 1e-12);

  ip.lambda = 0.9;
  p.x_m = 0.1;
  p.y_m = 0.1;
  const Vec3 c = sphere_offset(p, 0.0, 0.0, 0.2, ip);
  // 0.9 * sqrt(2) = 1.27 exceeds the clamp.
  EXPECT_NEAR(norm(c), 0.95, 1e-12);
  EXPECT_NEAR(c.x, 0.95 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(c.y, 0.95 / std::sqrt(2.0), 1e-12);
}

TEST(SphereOffset, HeightOnlyWhenRequested) {
  InterpolationParams ip{.enabled = true, .lambda = 0.5};
  CameraPose p;
  EXPECT_EQ(sphere_offset(p, 0, 0, 0.2, ip, 0.05).z, 0.0);
  ip.include_z = true;
  EXPECT_NEAR(sphere_offset(p, 0, 0, 0.2, ip, 0.05).z, 0.25, 1e-12);
}

TEST(Render, InterpolationIsNoOpAtCapturePoint) {
  auto pano = synth_pano(512, 256);
  pano.record.x_m = 0.4;
  pano.record.y_m = -0.2;
  RenderRequest req;
  req.intrinsics = CameraIntrinsics(160, 120, deg_to_rad(70.0));
  req.pose.x_m = 0.4;
  req.pose.y_m = -0.2;
  req.pose.orientation = {0.7, -0.2, 0.1};
  const Frame off = render(req, pano, 0.2);
  req.interpolation.enabled = true;
  const Frame on = render(req, pano, 0.2);
  EXPECT_EQ(off.image, on.image);
  EXPECT_EQ(on.source_pano_id, "synthetic");
}

TEST(Render, ForwardViewMatchesAnalyticPano) {
  const auto pano = synth_pano(1024, 512);
  RenderRequest req;
  req.intrinsics = CameraIntrinsics(200, 150, kPi / 2);
  const Frame f = render(req, pano, 0.2);
  EXPECT_LE(max_oracle_error(f, req.intrinsics, {}, 1024, 512, 0.0), 2.0);
}

TEST(Render, YawEquivalentToNegativeYawOffset) {
  // angles_to_tex subtracts yaw_offset, so looking at yaw = a over an
  // unshifted panorama equals looking ahead over a panorama shifted by -a.
  const double a = kPi / 2;
  auto pano = synth_pano(1024, 512);
  RenderRequest req;
  req.intrinsics = CameraIntrinsics(160, 120, deg_to_rad(60.0));
  req.pose.orientation.yaw = a;
  const Frame turned = render(req, pano, 0.2);

  req.pose.orientation.yaw = 0.0;
  pano.record.yaw_offset = -a;
  const Frame shifted = render(req, pano, 0.2);
  int worst = 0;
  for (std::size_t i = 0; i < turned.image.pixels.size(); ++i) {
    worst = std::max(worst, std::abs(int{turned.image.pixels[i]} - int{shifted.image.pixels[i]}));
  }
  EXPECT_LE(worst, 2);
  EXPECT_LE(max_oracle_error(shifted, req.intrinsics, {}, 1024, 512, -a), 2.0);
}

TEST(Render, DeterministicAcrossThreadCounts) {
  auto pano = synth_pano(512, 256);
  RenderRequest req;
  req.intrinsics = CameraIntrinsics(97, 61, deg_to_rad(80.0));
  req.pose = {0.03, -0.02, 0.0, {0.3, 0.2, -0.1}};
  req.interpolation.enabled = true;
  const Frame a = render(req, pano, 0.2);
  EXPECT_EQ(a.image, render(req, pano, 0.2).image);
  EXPECT_EQ(a.image, render(req, pano, 0.2, 0.0, 4).image);
  EXPECT_EQ(a.image, render(req, pano, 0.2, 0.0, 1000).image);
}

TEST(Render, ContinuityInsideCell) {
  const auto pano = synth_pano(2048, 1024);
  RenderRequest req;
  req.intrinsics = CameraIntrinsics(160, 120, deg_to_rad(60.0));
  req.interpolation.enabled = true;
  req.pose.orientation = {0.4, 0.1, 0.0};
  req.pose.x_m = 0.02;
  req.pose.y_m = 0.01;
  const Frame base = render(req, pano, 0.2);
  double prev = std::numeric_limits<double>::infinity();
  for (double eps_mm : {8.0, 4.0, 2.0, 1.0}) {
    RenderRequest moved = req;
    moved.pose.x_m += eps_mm / 1000.0;
    const double mae = image_mae(base.image, render(moved, pano, 0.2).image);
    EXPECT_LT(mae, prev) << eps_mm << " mm";
    prev = mae;
  }
}

TEST(Render, DisplacementMagnifiesForwardPatch) {
  // A fixed pixel block around the forward direction covers a smaller arc of
  // the sphere when the projection camera moves toward it.
  const CameraIntrinsics intr(101, 101, deg_to_rad(40.0));
  auto spread = [&](Vec3 origin) {
    const Direction3 a = ray_sphere_exit(origin, pixel_ray(45, 50, intr)).q;
    const Direction3 b = ray_sphere_exit(origin, pixel_ray(55, 50, intr)).q;
    return std::acos(std::clamp(dot(a.vec(), b.vec()), -1.0, 1.0));
  };
  double prev = spread({});
  for (double x : {0.1, 0.3, 0.5, 0.9}) {
    const double s = spread({x, 0, 0});
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(Render, VgaFrameWithinRealTimeBudget) {
  const auto pano = synth_pano(2048, 1024);
  RenderRequest req;
  req.interpolation.enabled = true;
  req.pose.x_m = 0.03;
  render(req, pano, 0.2);
  std::vector<double> ms;
  for (int k = 0; k < 9; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    render(req, pano, 0.2);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(ms.begin(), ms.begin() + 4, ms.end());
  EXPECT_LT(ms[4], 33.0);
}

TEST(Composite, AlphaExtremesAndHalf) {
  RgbImage base(3, 2);
  for (auto& p : base.pixels) p = 40;
  RgbaImage overlay(3, 2);
  for (std::size_t i = 0; i < overlay.pixels.size(); i += 4) {
    overlay.pixels[i] = 250;
    overlay.pixels[i + 1] = 7;
    overlay.pixels[i + 2] = 99;
  }
  EXPECT_EQ(composite_over(base, overlay), base);

  for (std::size_t i = 3; i < overlay.pixels.size(); i += 4) overlay.pixels[i] = 255;
  const auto opaque = composite_over(base, overlay);
  EXPECT_EQ(opaque.at(1, 1), (Rgb8{250, 7, 99}));

  RgbImage black(1, 1);
  RgbaImage white(1, 1);
  white.pixels = {255, 255, 255, 128};
  EXPECT_EQ(composite_over(black, white).at(0, 0), (Rgb8{128, 128, 128}));
}

TEST(Composite, SizeMismatch) {
  EXPECT_THROW(composite_over(RgbImage(2, 2), RgbaImage(2, 3)), std::invalid_argument);
}

TEST(Composite, MatchesFloatingPointFormula) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> byte(0, 255);
  RgbImage base(64, 16);
  RgbaImage over(64, 16);
  for (auto& p : base.pixels) p = static_cast<std::uint8_t>(byte(rng));
  for (auto& p : over.pixels) p = static_cast<std::uint8_t>(byte(rng));
  const auto out = composite_over(base, over);
  for (std::size_t p = 0; p < 64 * 16; ++p) {
    const double a = over.pixels[4 * p + 3] / 255.0;
    for (int c = 0; c < 3; ++c) {
      const double want = a * over.pixels[4 * p + c] + (1 - a) * base.pixels[3 * p + c];
      EXPECT_NEAR(out.pixels[3 * p + c], want, 0.5 + 1e-9);
    }
  }
}

TEST(Metrics, IdenticalAndExtremes) {
  RgbImage a(4, 4);
  EXPECT_EQ(image_mae(a, a), 0.0);
  EXPECT_TRUE(std::isinf(image_psnr(a, a)));
  RgbImage b(4, 4);
  for (auto& p : b.pixels) p = 255;
  EXPECT_EQ(image_mae(a, b), 255.0);
  EXPECT_NEAR(image_psnr(a, b), 0.0, 1e-12);
  EXPECT_THROW(image_mae(a, RgbImage(4, 5)), std::invalid_argument);
  EXPECT_THROW(image_psnr(a, RgbImage(5, 4)), std::invalid_argument);
}

TEST(Metrics, RandomPairAgainstDoubleLoop) {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> byte(0, 255);
  RgbImage a(37, 23), b(37, 23);
  for (auto& p : a.pixels) p = static_cast<std::uint8_t>(byte(rng));
  for (auto& p : b.pixels) p = static_cast<std::uint8_t>(byte(rng));
  double abs_sum = 0.0, sq_sum = 0.0;
  for (int y = 0; y < 23; ++y) {
    for (int x = 0; x < 37; ++x) {
      const Rgb8 p = a.at(x, y), q = b.at(x, y);
      for (auto [u, v] : {std::pair{p.r, q.r}, std::pair{p.g, q.g}, std::pair{p.b, q.b}}) {
        const double d = double(u) - double(v);
        abs_sum += std::abs(d);
        sq_sum += d * d;
      }
    }
  }
  const double n = 37.0 * 23.0 * 3.0;
  EXPECT_NEAR(image_mae(a, b), abs_sum / n, 1e-9);
  EXPECT_NEAR(image_psnr(a, b), 20.0 * std::log10(255.0 / std::sqrt(sq_sum / n)), 1e-9);
}

}  // namespace
}  // namespace panosim
