// pano_sim: operator command line for the panorama camera simulator.
#include <CLI11.hpp>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numbers>
#include <pthread.h>

#include "csv_input.hpp"
#include "panosim/capture_osc.hpp"
#include "panosim/dataset.hpp"
#include "panosim/image.hpp"
#include "panosim/pano_cache.hpp"
#include "panosim/renderer.hpp"
#include "panosim/sim_service.hpp"
#include "panosim/study.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace panosim;

namespace {

constexpr int kDataError = 1;
constexpr int kUsageError = 2;

struct ViewOptions {
  int width = 640;
  int height = 480;
  double hfov_deg = 60.0;
  std::optional<double> vfov_deg;
  bool interp = false;
  double lambda = 0.5;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--width", width, "Output width in pixels")->check(CLI::Range(1, 8192));
    cmd->add_option("--height", height, "Output height in pixels")->check(CLI::Range(1, 8192));
    cmd->add_option("--hfov", hfov_deg, "Horizontal field of view, degrees")->check(CLI::Range(0.01, 179.99));
    cmd->add_option("--vfov", vfov_deg, "Vertical field of view, degrees (default: square pixels)")
        ->check(CLI::Range(0.01, 179.99));
    cmd->add_flag("--interp", interp, "Shift the projection camera inside the sphere");
    cmd->add_option("--lambda", lambda, "Interpolation gain")->check(CLI::Range(0.0, 10.0));
  }
  CameraIntrinsics intrinsics() const {
    return vfov_deg ? CameraIntrinsics(width, height, deg_to_rad(hfov_deg), deg_to_rad(*vfov_deg))
                    : CameraIntrinsics(width, height, deg_to_rad(hfov_deg));
  }
  InterpolationParams interpolation() const {
    InterpolationParams p;
    p.enabled = interp;
    p.lambda = lambda;
    return p;
  }
};

struct Summary {
  double mean = 0, min = 0, max = 0, p50 = 0, p90 = 0, p99 = 0;
};

Summary summarize(const std::vector<double>& v) {
  LatencyWindow w(v.size());
  Summary s;
  for (double x : v) {
    w.add(x);
    s.mean += x;
  }
  s.mean /= static_cast<double>(v.size());
  s.min = w.percentile(0);
  s.max = w.percentile(100);
  s.p50 = w.percentile(50);
  s.p90 = w.percentile(90);
  s.p99 = w.percentile(99);
  return s;
}

json summary_json(const Summary& s) {
  return {{"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"p50", s.p50}, {"p90", s.p90}, {"p99", s.p99}};
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// Shortest of 1..3 decimals that still shows the value, e.g. 1.0, 0.45.
std::string speed_text(double v) {
  std::string s = fixed(v, 3);
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  return s;
}

void print_summary(std::ostream& os, const std::string& label, const Summary& s) {
  os << label << ": mean " << fixed(s.mean, 3) << " ms, p50 " << fixed(s.p50, 3) << ", p90 " << fixed(s.p90, 3)
     << ", p99 " << fixed(s.p99, 3) << ", min " << fixed(s.min, 3) << ", max " << fixed(s.max, 3) << "\n";
}

const PanoRecord& record_by_id(const DatasetManifest& m, const std::string& id) {
  for (const auto& r : m.records) {
    if (r.id == id) return r;
  }
  throw cli::InputError("no record with id '" + id + "'");
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// ---- subcommands ---------------------------------------------------------

int cmd_validate(const fs::path& dataset, double required, bool check_files) {
  const DatasetManifest m = load_manifest(dataset, {.check_files = false});
  const ValidationReport r = validate(m, required, check_files);
  std::cout << dataset.string() << ": " << m.records.size() << " records, " << m.pano_width << "x"
            << m.pano_height << ", " << fixed(r.pano_px_per_deg, 2) << " px/deg (required "
            << fixed(r.required_px_per_deg, 2) << ")\n";
  for (const auto& line : r.lines()) std::cout << "  " << line << "\n";
  std::cout << (r.ok() ? "OK" : "INVALID") << "\n";
  return r.ok() ? 0 : kDataError;
}

int cmd_render(const fs::path& dataset, const std::string& pose_text, const fs::path& out,
               const ViewOptions& view) {
  const DatasetManifest m = load_manifest(dataset);
  const GridIndex grid(m);
  RenderRequest req;
  req.pose = cli::parse_pose(pose_text);
  req.intrinsics = view.intrinsics();
  req.interpolation = view.interpolation();
  const PanoSelection sel = select_panorama(grid, req.pose);
  const PanoRecord& rec = grid.record(sel.cell);
  const Frame f = render(req, load_panorama(m, rec), m.cell_size_m, m.record_z(rec));
  write_image(out, f.image);
  std::cout << out.string() << ": " << view.width << "x" << view.height << " from " << rec.id << " ("
            << fixed(sel.distance_m, 3) << " m away)\n";
  return 0;
}

int cmd_trajectory(const fs::path& dataset, const fs::path& poses_csv, const fs::path& out_dir,
                   const ViewOptions& view, const CacheConfig& cache_config) {
  const auto poses = cli::read_pose_csv(poses_csv);
  const DatasetManifest m = load_manifest(dataset);
  const GridIndex grid(m);
  PanoCache cache(grid, [&m](const PanoRecord& r) { return load_panorama(m, r); }, cache_config);
  fs::create_directories(out_dir);
  std::ofstream index(out_dir / "frames.csv");
  index << "frame,t,source_pano_id,stalled,file\n";
  std::size_t stalls = 0;
  for (std::size_t k = 0; k < poses.size(); ++k) {
    RenderRequest req;
    req.pose = poses[k].pose;
    req.intrinsics = view.intrinsics();
    req.interpolation = view.interpolation();
    const PanoSelection sel = select_panorama(grid, req.pose);
    cache.prefetch(predict_cells(req.pose, grid, cache_config.prefetch_depth, cache_config.neighbor_k));
    const auto lookup = cache.get(sel.cell);
    const Frame f = render(req, *lookup.pano, m.cell_size_m, m.record_z(lookup.pano->record));
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.png", k);
    write_image(out_dir / name, f.image);
    stalls += !lookup.was_resident;
    index << k << "," << poses[k].t_s << "," << sel.id << "," << (lookup.was_resident ? 0 : 1) << "," << name
          << "\n";
  }
  std::cout << poses.size() << " frames written to " << out_dir.string() << " (" << stalls
            << " rendered after a decode wait)\n";
  return 0;
}

int cmd_bench_render(const fs::path& dataset, int frames, const std::string& pano_id, int threads,
                     const ViewOptions& view, bool as_json) {
  const DatasetManifest m = load_manifest(dataset);
  if (m.records.empty()) throw cli::InputError("dataset has no records");
  const PanoRecord& rec = pano_id.empty() ? m.records.front() : record_by_id(m, pano_id);
  const EquirectPanorama pano = load_panorama(m, rec);

  RenderRequest req;
  req.intrinsics = view.intrinsics();
  req.interpolation = view.interpolation();
  req.pose.x_m = rec.x_m;
  req.pose.y_m = rec.y_m;
  req.pose.z_m = m.record_z(rec);
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(frames));
  std::uint64_t checksum = 0;  // keeps the frames observable
  for (int k = 0; k < frames; ++k) {
    req.pose.orientation.yaw = 2.0 * std::numbers::pi * k / 97.0;
    req.pose.orientation.pitch = 0.3 * std::sin(k * 0.1);
    const auto t0 = std::chrono::steady_clock::now();
    const Frame f = render(req, pano, m.cell_size_m, m.record_z(rec), threads);
    ms.push_back(elapsed_ms(t0));
    checksum += f.image.pixels[f.image.pixels.size() / 2];
  }
  const Summary s = summarize(ms);
  const double fps = 1000.0 / s.mean;
  std::ostream& human = as_json ? std::cerr : std::cout;
  human << "bench-render: " << frames << " frames " << view.width << "x" << view.height << " from " << rec.id
        << " (" << pano.image.width << "x" << pano.image.height << "), " << threads << " thread(s)"
        << (view.interp ? ", interpolation on" : "") << "\n";
  human << "  " << fixed(s.mean, 3) << " ms/frame, " << fixed(fps, 1) << " FPS\n";
  print_summary(human, "  frame time", s);
  if (as_json) {
    std::cout << json{{"frames", frames},
                      {"width", view.width},
                      {"height", view.height},
                      {"threads", threads},
                      {"interp", view.interp},
                      {"pano_id", rec.id},
                      {"ms_per_frame", s.mean},
                      {"fps", fps},
                      {"ms", summary_json(s)},
                      {"checksum", checksum}}
                     .dump()
              << "\n";
  }
  return 0;
}

int cmd_bench_load(const fs::path& dataset, int images, bool as_json) {
  const DatasetManifest m = load_manifest(dataset);
  if (m.records.empty()) throw cli::InputError("dataset has no records");
  std::vector<double> ms;
  for (int k = 0; k < images; ++k) {
    const PanoRecord& rec = m.records[static_cast<std::size_t>(k) % m.records.size()];
    const auto t0 = std::chrono::steady_clock::now();
    const EquirectPanorama p = load_panorama(m, rec);
    ms.push_back(elapsed_ms(t0));
  }
  const Summary s = summarize(ms);
  std::ostream& human = as_json ? std::cerr : std::cout;
  human << "bench-load: " << images << " decodes of " << m.pano_width << "x" << m.pano_height << " panoramas\n";
  print_summary(human, "  decode time", s);
  human << "  max speed with 1 worker at this decode time: "
        << speed_text(max_speed(m.cell_size_m, s.mean / 1000.0, 1)) << " m/s\n";
  if (as_json) {
    std::cout << json{{"images", images}, {"ms", summary_json(s)},
                      {"max_speed_mps", max_speed(m.cell_size_m, s.mean / 1000.0, 1)}}
                     .dump()
              << "\n";
  }
  return 0;
}

int cmd_decimate_study(const fs::path& dataset, const std::string& factors_text, const fs::path& poses_csv,
                       const fs::path& out, const ViewOptions& view) {
  const auto factors = cli::parse_int_list(factors_text);
  std::vector<CameraPose> poses;
  for (const auto& p : cli::read_pose_csv(poses_csv)) poses.push_back(p.pose);
  const DatasetManifest m = load_manifest(dataset);
  StudySettings settings;
  settings.intrinsics = view.intrinsics();
  settings.interpolation = view.interpolation();
  const auto rows = decimation_study(m, factors, poses, settings,
                                     [&m](const PanoRecord& r) { return load_panorama(m, r); });
  std::ofstream(out) << study_csv(rows);

  std::map<int, std::pair<double, std::size_t>> mae;
  for (const auto& r : rows) {
    mae[r.factor].first += r.mae;
    ++mae[r.factor].second;
  }
  std::cout << "factor  grid_m  mean_mae\n";
  for (int f : factors) {
    const auto [sum, n] = mae[f];
    std::cout << std::setw(6) << f << "  " << std::setw(6) << fixed(f * m.cell_size_m, 2) << "  "
              << fixed(n ? sum / static_cast<double>(n) : 0.0, 4) << "\n";
  }
  std::cout << rows.size() << " rows written to " << out.string() << "\n";
  return 0;
}

int cmd_synth_dataset(const fs::path& out_dir, int nx, int ny, double cell_size, int width, int height,
                      const std::string& kind) {
  DatasetManifest m;
  m.cell_size_m = cell_size;
  m.pano_width = width;
  m.pano_height = height;
  fs::create_directories(out_dir / "imgs");
  const RgbImage direction = kind == "direction" ? synth_pano(width, height).image : RgbImage{};
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) {
      PanoRecord r;
      r.id = "cell_" + std::to_string(i) + "_" + std::to_string(j);
      r.file = "imgs/" + r.id + ".png";
      r.x_m = i * cell_size;
      r.y_m = j * cell_size;
      r.captured_at = "2026-01-01T00:00:00.000Z";
      write_image(out_dir / r.file,
                  kind == "direction" ? direction : synth_room_pano(width, height, {r.x_m, r.y_m, 1.1}));
      m.records.push_back(r);
    }
  }
  save_manifest(m, out_dir / "manifest.json");
  std::cout << m.records.size() << " panoramas written to " << out_dir.string() << "\n";
  return 0;
}

int cmd_capture_init(const fs::path& cells_csv, double cell_size, const fs::path& out, bool force) {
  if (fs::exists(out) && !force) throw cli::InputError(out.string() + " exists; pass --force to replace it");
  CaptureSession s(cell_size, format_rfc3339(now_millis()));
  s.plan(cli::read_cell_csv(cells_csv));
  save_session(s, out);
  std::cout << s.cells().size() << " cells planned in " << out.string() << "\n";
  return 0;
}

int cmd_serve(ServiceConfig config) {
  // Block the stop signals before any service thread exists so only sigwait sees them.
  sigset_t stop_signals;
  sigemptyset(&stop_signals);
  sigaddset(&stop_signals, SIGINT);
  sigaddset(&stop_signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

  SimService service(std::move(config));
  if (!service.dataset_loaded()) {
    std::cerr << "warning: no dataset loaded; /render answers 503\n";
    for (const auto& e : service.dataset_errors()) std::cerr << "  " << e << "\n";
  }
  service.start();
  std::cout << "http://" << service.config().host << ":" << service.http_port() << "  ws://"
            << service.config().host << ":" << service.stream_port() << "/stream" << std::endl;
  int sig = 0;
  sigwait(&stop_signals, &sig);
  std::cout << "stopping\n";
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spherical-panorama camera simulator"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  fs::path dataset;
  auto add_dataset = [&](CLI::App* cmd) {
    cmd->add_option("dataset", dataset, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
  };
  ViewOptions view;
  int result = 0;

  // validate
  auto* validate_cmd = app.add_subcommand("validate", "Check a dataset manifest and its images");
  add_dataset(validate_cmd);
  double required_px = 10.0;
  bool skip_files = false;
  validate_cmd->add_option("--require-px-per-deg", required_px, "Minimum panorama angular resolution");
  validate_cmd->add_flag("--no-check-files", skip_files, "Do not require image files to exist");
  validate_cmd->callback([&] { result = cmd_validate(dataset, required_px, !skip_files); });

  // render
  auto* render_cmd = app.add_subcommand("render", "Render one view to an image file");
  add_dataset(render_cmd);
  std::string pose_text;
  fs::path out;
  render_cmd->add_option("--pose", pose_text, "x,y,z,yaw,pitch,roll (meters, radians)")->required();
  render_cmd->add_option("--out", out, "Output image (.png or .jpg)")->required();
  view.add_to(render_cmd);
  render_cmd->callback([&] { result = cmd_render(dataset, pose_text, out, view); });

  // trajectory
  auto* traj_cmd = app.add_subcommand("trajectory", "Render every pose of a CSV trajectory");
  add_dataset(traj_cmd);
  fs::path poses_csv, out_dir;
  CacheConfig cache_config;
  traj_cmd->add_option("--poses", poses_csv, "CSV t,x,y,z,yaw,pitch,roll")->required()->check(CLI::ExistingFile);
  traj_cmd->add_option("--out-dir", out_dir, "Directory for frame_NNNNN.png and frames.csv")->required();
  traj_cmd->add_option("--cache-capacity", cache_config.capacity, "Resident panoramas");
  traj_cmd->add_option("--prefetch-depth", cache_config.prefetch_depth, "Cells predicted ahead");
  view.add_to(traj_cmd);
  traj_cmd->callback([&] {
    cache_config.validate();
    result = cmd_trajectory(dataset, poses_csv, out_dir, view, cache_config);
  });

  // bench-render
  auto* bench_render_cmd = app.add_subcommand("bench-render", "Time rendering from a resident panorama");
  add_dataset(bench_render_cmd);
  int frames = 1000, threads = 1;
  std::string pano_id;
  bool as_json = false;
  bench_render_cmd->add_option("--frames", frames, "Frames to render")->check(CLI::PositiveNumber);
  bench_render_cmd->add_option("--threads", threads, "Row workers per frame")->check(CLI::Range(1, 256));
  bench_render_cmd->add_option("--pano", pano_id, "Record id (default: first record)");
  bench_render_cmd->add_flag("--json", as_json, "JSON on stdout, human summary on stderr");
  view.add_to(bench_render_cmd);
  bench_render_cmd->callback([&] { result = cmd_bench_render(dataset, frames, pano_id, threads, view, as_json); });

  // bench-load
  auto* bench_load_cmd = app.add_subcommand("bench-load", "Time panorama decoding");
  add_dataset(bench_load_cmd);
  int images = 20;
  bench_load_cmd->add_option("--images", images, "Decodes to time")->check(CLI::PositiveNumber);
  bench_load_cmd->add_flag("--json", as_json, "JSON on stdout, human summary on stderr");
  bench_load_cmd->callback([&] { result = cmd_bench_load(dataset, images, as_json); });

  // decimate-study
  auto* study_cmd = app.add_subcommand("decimate-study", "Compare sparser grids against the full grid");
  add_dataset(study_cmd);
  std::string factors = "1,5,10";
  study_cmd->add_option("--factors", factors, "Comma-separated decimation factors");
  study_cmd->add_option("--poses", poses_csv, "CSV t,x,y,z,yaw,pitch,roll")->required()->check(CLI::ExistingFile);
  study_cmd->add_option("--out", out, "Output CSV factor,pose_index,mae,psnr")->required();
  view.add_to(study_cmd);
  study_cmd->callback([&] { result = cmd_decimate_study(dataset, factors, poses_csv, out, view); });

  // max-speed
  auto* speed_cmd = app.add_subcommand("max-speed", "Fastest robot speed without cache stalls");
  double cell_size = 0.2, t_load = 0.2;
  std::size_t workers = 1;
  speed_cmd->add_option("--cell-size", cell_size, "Grid cell size, meters")->check(CLI::PositiveNumber);
  speed_cmd->add_option("--t-load", t_load, "Decode time per panorama, seconds")->check(CLI::PositiveNumber);
  speed_cmd->add_option("--workers", workers, "Decode workers")->check(CLI::PositiveNumber);
  speed_cmd->callback([&] { std::cout << speed_text(max_speed(cell_size, t_load, workers)) << " m/s\n"; });

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP and stream service");
  ServiceConfig svc;
  int overlay_timeout_ms = 50, poll_ms = 500;
  std::optional<int> stream_port;
  serve_cmd->add_option("--dataset", svc.dataset, "Dataset manifest.json")->envname("PANOSIM_DATASET");
  serve_cmd->add_option("--host", svc.host, "Bind address")->envname("PANOSIM_HOST");
  serve_cmd->add_option("--port", svc.port, "HTTP port (0: any free port)")
      ->envname("PANOSIM_PORT")
      ->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--stream-port", stream_port, "WebSocket port (default: HTTP port + 1)")
      ->envname("PANOSIM_STREAM_PORT")
      ->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--cache-capacity", svc.cache.capacity, "Resident panoramas")
      ->envname("PANOSIM_CACHE_CAPACITY");
  serve_cmd->add_option("--workers", svc.cache.workers, "Prefetch decode workers")->envname("PANOSIM_WORKERS");
  serve_cmd->add_option("--prefetch-depth", svc.cache.prefetch_depth, "Cells predicted ahead")
      ->envname("PANOSIM_PREFETCH_DEPTH");
  serve_cmd->add_option("--lambda", svc.lambda, "Default interpolation gain")->envname("PANOSIM_LAMBDA");
  serve_cmd->add_option("--render-threads", svc.render_threads, "Row workers per frame")
      ->check(CLI::Range(1, 256));
  serve_cmd->add_option("--overlay-url", svc.overlay_url, "Overlay provider endpoint")
      ->envname("PANOSIM_OVERLAY_URL");
  serve_cmd->add_option("--overlay-timeout-ms", overlay_timeout_ms, "Overlay provider timeout")
      ->envname("PANOSIM_OVERLAY_TIMEOUT_MS")
      ->check(CLI::PositiveNumber);
  serve_cmd->add_option("--session", svc.session_path, "Capture session file");
  serve_cmd->add_option("--camera-url", svc.camera_url, "OSC camera base URL")->envname("PANOSIM_CAMERA_URL");
  serve_cmd->add_option("--capture-dir", svc.capture_dir, "Directory receiving captured photos");
  serve_cmd->add_option("--camera-poll-ms", poll_ms, "Camera status poll interval")->check(CLI::PositiveNumber);
  serve_cmd->callback([&] {
    svc.stream_port = stream_port;
    svc.overlay_timeout = std::chrono::milliseconds(overlay_timeout_ms);
    svc.camera_poll_interval = std::chrono::milliseconds(poll_ms);
    svc.cache.validate();
    result = cmd_serve(svc);
  });

  // capture-init
  auto* init_cmd = app.add_subcommand("capture-init", "Create a capture session from a cell list");
  fs::path cells_csv;
  bool force = false;
  init_cmd->add_option("--cells", cells_csv, "CSV i,j")->required()->check(CLI::ExistingFile);
  init_cmd->add_option("--cell-size", cell_size, "Grid cell size, meters")->check(CLI::PositiveNumber);
  init_cmd->add_option("--out", out, "Session file to create")->required();
  init_cmd->add_flag("--force", force, "Replace an existing session file");
  init_cmd->callback([&] { result = cmd_capture_init(cells_csv, cell_size, out, force); });

  // synth-dataset
  auto* synth_cmd = app.add_subcommand("synth-dataset", "Write a synthetic dataset of rendered panoramas");
  int nx = 11, ny = 11, pano_w = 1024, pano_h = 512;
  std::string kind = "room";
  synth_cmd->add_option("--out-dir", out_dir, "Dataset directory")->required();
  synth_cmd->add_option("--nx", nx, "Cells along x")->check(CLI::Range(1, 1000));
  synth_cmd->add_option("--ny", ny, "Cells along y")->check(CLI::Range(1, 1000));
  synth_cmd->add_option("--cell-size", cell_size, "Grid cell size, meters")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--pano-width", pano_w, "Panorama width")->check(CLI::Range(2, 16384));
  synth_cmd->add_option("--pano-height", pano_h, "Panorama height")->check(CLI::Range(2, 8192));
  synth_cmd->add_option("--kind", kind, "room: content depends on position; direction: encodes the view ray")
      ->check(CLI::IsMember({"room", "direction"}));
  synth_cmd->callback([&] { result = cmd_synth_dataset(out_dir, nx, ny, cell_size, pano_w, pano_h, kind); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  } catch (const cli::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& d : e.diagnostics()) std::cerr << "  " << d << "\n";
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  }
  return result;
}
