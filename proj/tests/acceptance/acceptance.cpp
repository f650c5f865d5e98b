// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Usage: panosim_acceptance [path/to/pano_sim]
#include <httplib.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "panosim/capture_osc.hpp"
#include "panosim/dataset.hpp"
#include "panosim/pano_cache.hpp"
#include "panosim/renderer.hpp"
#include "panosim/study.hpp"
#include "panosim/trajectory_sim.hpp"
#include "support/fixtures.hpp"
#include "support/mock_osc.hpp"
#include "support/oracles.hpp"

namespace panosim {
namespace {

using namespace std::chrono_literals;
constexpr double kPi = std::numbers::pi;

// Tolerances.
constexpr double kResolutionTol = 0.01;       // px/deg
constexpr double kProjectionTol = 2.0;        // 8-bit levels
constexpr double kRoundTripTol = 1e-9;
constexpr double kFrameBudgetMs = 33.0;
constexpr double kRateTol = 0.01;             // photos/min

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string str(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// ---- criteria --------------------------------------------------------------

Outcome speed_limit() {
  const double v1 = max_speed(0.2, 0.2, 1);
  bool linear = true;
  std::string detail = "max_speed(0.2, 0.2, 1) = " + str(v1, 17);
  for (std::size_t w : {1u, 2u, 4u}) {
    const double v = max_speed(0.2, 0.2, w);
    linear = linear && v == static_cast<double>(w) * v1;
    detail += ", w=" + std::to_string(w) + ": " + str(v);
  }
  return {v1 == 1.0 && linear, detail};
}

Outcome angular_resolution_check() {
  const double r = angular_resolution(5376);
  DatasetManifest m = testing::grid_manifest(testing::block(0, 0, 3, 3), 0.2, 5376, 2688);
  const ValidationReport report = validate(m, 10.0, false);
  return {std::abs(r - 14.93) <= kResolutionTol && report.ok(),
          "angular_resolution(5376) = " + str(r, 6) + " px/deg, validate(10 px/deg) " +
              (report.ok() ? "ok" : "failed")};
}

Outcome projection() {
  constexpr int kPw = 2048, kPh = 1024;
  const EquirectPanorama pano = synth_pano(kPw, kPh);
  RenderRequest req;
  req.intrinsics = CameraIntrinsics(640, 480, deg_to_rad(60.0));
  const std::array<Orientation, 8> views{{{0.0, 0.0, 0.0},
                                          {kPi / 2, 0.3, 0.0},
                                          {kPi, -0.4, 0.0},
                                          {-kPi / 2, 0.0, 0.5},
                                          {2.6, 0.9, -0.3},
                                          {-1.0, -1.1, 0.2},
                                          {0.4, 1.45, 0.0},
                                          {-2.9, -0.2, 3.0}}};
  double worst = 0.0;
  for (const Orientation& o : views) {
    req.pose.orientation = o;
    const Frame f = render(req, pano, 0.2);
    const auto& in = req.intrinsics;
    for (int v = 0; v < in.height(); ++v) {
      for (int u = 0; u < in.width(); ++u) {
        const auto ray = oracle::world_ray(u, v, in.width(), in.height(), in.hfov(), in.vfov(), o.yaw, o.pitch,
                                           o.roll);
        const auto want = oracle::synth_value(ray, kPw, kPh, 0.0);
        const Rgb8 got = f.image.at(u, v);
        worst = std::max({worst, std::abs(got.r - want[0]), std::abs(got.g - want[1]),
                          std::abs(got.b - want[2])});
      }
    }
  }
  return {worst <= kProjectionTol, "8 views x 640x480, max deviation " + str(worst, 4) + "/255"};
}

Outcome round_trip() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  double worst_dir = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const Direction3 d = Direction3::normalize({g(rng), g(rng), g(rng)});
    const Direction3 back = angles_to_dir(dir_to_angles(d));
    worst_dir = std::max(worst_dir, norm(back.vec() - d.vec()));
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_exit = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double r = 0.95 * std::cbrt(unit(rng));
    const Vec3 origin = r * Direction3::normalize({g(rng), g(rng), g(rng)}).vec();
    const SphereExit e = ray_sphere_exit(origin, Direction3::normalize({g(rng), g(rng), g(rng)}));
    worst_exit = std::max(worst_exit, std::abs(norm(e.q.vec()) - 1.0));
  }
  return {worst_dir < kRoundTripTol && worst_exit < kRoundTripTol,
          "dir->angles->dir max " + str(worst_dir) + ", |q|-1 max " + str(worst_exit)};
}

Outcome interpolation_noop() {
  const auto m = testing::grid_manifest(testing::block(0, 0, 3, 3), 0.2, 1024, 512);
  const PanoRecord& rec = m.records[4];
  const EquirectPanorama pano{synth_room_pano(1024, 512, {rec.x_m, rec.y_m, 1.1}), rec};
  RenderRequest req;
  req.pose.x_m = rec.x_m;
  req.pose.y_m = rec.y_m;
  std::size_t frames = 0;
  bool equal = true;
  for (double yaw : {0.0, 1.3, -2.8}) {
    req.pose.orientation = {yaw, 0.2, 0.0};
    req.interpolation.enabled = false;
    const Frame off = render(req, pano, m.cell_size_m);
    req.interpolation.enabled = true;
    const Frame on = render(req, pano, m.cell_size_m);
    equal = equal && on.image == off.image;
    ++frames;
  }
  return {equal, std::to_string(frames) + " views at the capture point of " + rec.id + ", bitwise " +
                     (equal ? "equal" : "different")};
}

Outcome cache_behavior() {
  const auto m = testing::grid_manifest(testing::block(0, 0, 40, 1), 0.2, 8, 4);
  const GridIndex grid(m);
  const LatencyModel latency{.fixed_ms = 200.0};
  CacheConfig config;
  config.workers = 1;
  config.prefetch_depth = 2;
  // Start on the entry border of the first cell.
  const auto slow = straight_line(-0.1, 0.0, 0.9, 0.0, 7.0, 30.0);
  const auto fast = straight_line(-0.1, 0.0, 2.0, 0.0, 3.5, 30.0);
  const auto a = simulate_trajectory(slow, grid, latency, config);
  const auto a2 = simulate_trajectory(slow, grid, latency, config);
  const auto b = simulate_trajectory(fast, grid, latency, config);
  const bool deterministic = a.stalls == a2.stalls && a.decodes == a2.decodes && a.trace.size() == a2.trace.size();
  return {a.stalls_after_first_cell == 0 && b.stalls_after_first_cell >= 1 && deterministic,
          "0.9 m/s: " + std::to_string(a.stalls_after_first_cell) + " stalls after first cell (" +
              std::to_string(a.warmup_stalls) + " cold start); 2.0 m/s: " +
              std::to_string(b.stalls_after_first_cell) + " stalls after first cell" +
              (deterministic ? "" : "; runs differ")};
}

Outcome decimation() {
  const auto m = testing::grid_manifest(testing::block(0, 0, 11, 11), 0.2, 512, 256);
  std::vector<CameraPose> poses;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(0.0, 2.0), yaw(-kPi, kPi);
  for (int k = 0; k < 12; ++k) poses.push_back({pos(rng), pos(rng), 0.0, {yaw(rng), 0.1, 0.0}});
  const StudySettings settings{CameraIntrinsics(160, 120, deg_to_rad(60.0)), {}};
  const auto rows = decimation_study(m, {1, 5, 10}, poses, settings,
                                     [&m](const PanoRecord& r) { return testing::room_pano(m, r); });
  std::vector<std::array<double, 3>> mae(poses.size());
  for (const auto& r : rows) mae[r.pose_index][r.factor == 1 ? 0 : r.factor == 5 ? 1 : 2] = r.mae;
  bool zero = true;
  std::string decreasing;
  double mean5 = 0, mean10 = 0;
  for (std::size_t k = 0; k < mae.size(); ++k) {
    const auto& p = mae[k];
    zero = zero && p[0] == 0.0;
    if (!(p[0] <= p[1] && p[1] <= p[2])) {
      decreasing += "; pose " + std::to_string(k) + " (" + str(poses[k].x_m) + ", " + str(poses[k].y_m) +
                    ", yaw " + str(poses[k].orientation.yaw) + ") MAE " + str(p[0]) + " / " + str(p[1]) + " / " +
                    str(p[2]);
    }
    mean5 += p[1] / static_cast<double>(mae.size());
    mean10 += p[2] / static_cast<double>(mae.size());
  }
  return {rows.size() == 3 * poses.size() && zero && decreasing.empty(),
          "11x11 cells, " + std::to_string(poses.size()) + " random poses; mean MAE 0 / " + str(mean5) + " / " +
              str(mean10) + decreasing};
}

Outcome render_throughput(const std::string& pano_sim) {
  constexpr int kPw = 2048, kPh = 1024;
  const auto m = testing::grid_manifest({{0, 0}}, 0.2, kPw, kPh);
  const EquirectPanorama pano{synth_room_pano(kPw, kPh, {0.0, 0.0, 1.1}), m.records[0]};
  RenderRequest req;
  req.intrinsics = CameraIntrinsics(640, 480, deg_to_rad(60.0));
  req.interpolation.enabled = true;
  req.pose.x_m = 0.07;
  req.pose.y_m = -0.05;
  render(req, pano, 0.2);  // warm-up
  std::vector<double> ms;
  for (int k = 0; k < 21; ++k) {
    req.pose.orientation.yaw = 0.3 * k;
    const auto t0 = std::chrono::steady_clock::now();
    render(req, pano, 0.2);
    ms.push_back(ms_since(t0));
  }
  std::sort(ms.begin(), ms.end());
  const double median = ms[ms.size() / 2];
  std::string detail = "VGA frame median " + str(median) + " ms, max " + str(ms.back()) + " ms (budget " +
                       str(kFrameBudgetMs) + ")";
  bool reported = false;
  if (!pano_sim.empty()) {
    testing::TempDir dir;
    write_image(dir.path() / "pano.png", pano.image);
    DatasetManifest dm = m;
    dm.records[0].file = "pano.png";
    save_manifest(dm, dir.path() / "manifest.json");
    const std::string cmd =
        pano_sim + " bench-render " + (dir.path() / "manifest.json").string() + " --frames 5 --json 2>/dev/null";
    std::string out;
    if (FILE* p = popen(cmd.c_str(), "r")) {
      char buf[4096];
      while (std::fgets(buf, sizeof buf, p)) out += buf;
      reported = pclose(p) == 0;
    }
    try {
      const auto j = nlohmann::json::parse(out);
      reported = reported && j.at("ms_per_frame").get<double>() > 0 && j.at("fps").get<double>() > 0;
      detail += "; bench-render reports " + str(j["ms_per_frame"].get<double>()) + " ms/frame, " +
                str(j["fps"].get<double>()) + " FPS";
    } catch (const std::exception&) {
      reported = false;
      detail += "; bench-render output unusable";
    }
  } else {
    detail += "; pano_sim path not given";
  }
  return {median < kFrameBudgetMs && reported, detail};
}

Outcome capture_round_trip() {
  testing::MockOsc cam;
  cam.set_script({.in_progress_polls = 2});
  OscClient client(cam.base_url());
  testing::TempDir dir;
  CaptureTarget target;
  target.dataset_dir = dir.path();
  target.manifest_path = dir.path() / "manifest.json";
  target.poll_interval = 0ms;
  CaptureSession s(0.2, format_rfc3339(now_millis()));
  const CellCoord cell{7, -3};
  s.plan({cell});
  capture_cell(s, cell, client, target);
  const auto m = load_manifest(target.manifest_path);
  const bool lattice = m.records.size() == 1 && m.records[0].x_m == 7 * 0.2 && m.records[0].y_m == -3 * 0.2 &&
                       s.cell(cell).status == CellStatus::kCaptured;

  // 404 photos evenly spread over 137 minutes.
  const SysMillis start = parse_rfc3339("2026-03-01T09:00:00.000Z");
  CaptureSession survey(0.2, format_rfc3339(start));
  std::vector<CellCoord> cells;
  for (int k = 0; k < 404; ++k) cells.push_back({k % 20, k / 20});
  survey.plan(cells);
  const auto span = std::chrono::milliseconds(137 * 60 * 1000);
  for (int k = 0; k < 404; ++k) {
    survey.begin(cells[k]);
    survey.complete(cells[k], "f", "p", format_rfc3339(start + span * k / 403));
  }
  const double rate = throughput_and_eta(survey).rate_per_min.value_or(0.0);
  return {lattice && std::abs(rate - 2.95) <= kRateTol,
          "record at (" + (m.records.empty() ? std::string("-") : str(m.records[0].x_m) + ", " +
                                                                      str(m.records[0].y_m)) +
              "), 404 photos / 137 min = " + str(rate, 5) + " photos/min"};
}

Outcome nearest_selection() {
  const auto cells = testing::block(0, 0, 10, 10);
  const GridIndex grid(testing::grid_manifest(cells, 0.2, 8, 4));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(-0.3, 2.1);
  std::uniform_int_distribution<int> idx(0, 9);
  int mismatches = 0, ties = 0;
  for (int k = 0; k < 1000; ++k) {
    CameraPose p;
    if (k % 4 == 0) {
      // Midpoints between lattice points along x, y or both.
      p.x_m = (idx(rng) + (k % 8 == 0 ? 0.5 : 0.0)) * 0.2;
      p.y_m = (idx(rng) + (k % 12 == 0 ? 0.0 : 0.5)) * 0.2;
    } else {
      p.x_m = pos(rng);
      p.y_m = pos(rng);
    }
    const CellCoord want = oracle::brute_nearest(cells, p.x_m, p.y_m, 0.2);
    std::size_t at_best = 0;
    const double best = cell_distance2(p.x_m / 0.2, p.y_m / 0.2, want);
    for (CellCoord c : cells) at_best += cell_distance2(p.x_m / 0.2, p.y_m / 0.2, c) == best;
    ties += at_best > 1;
    mismatches += select_panorama(grid, p).cell != want;
  }
  return {mismatches == 0, "1000 poses on 10x10, " + std::to_string(ties) + " exact ties, " +
                               std::to_string(mismatches) + " mismatches"};
}

}  // namespace
}  // namespace panosim

int main(int argc, char** argv) {
  using namespace panosim;
  const std::string pano_sim = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"speed-limit formula", speed_limit},
      {"angular resolution", angular_resolution_check},
      {"projection correctness", projection},
      {"round-trip geometry", round_trip},
      {"interpolation no-op", interpolation_noop},
      {"cache behavior", cache_behavior},
      {"decimation study", decimation},
      {"render throughput", [&] { return render_throughput(pano_sim); }},
      {"capture round-trip", capture_round_trip},
      {"nearest selection", nearest_selection},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << " [" << str(ms_since(t0), 4)
              << " ms]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
