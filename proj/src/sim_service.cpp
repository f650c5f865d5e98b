#include "panosim/sim_service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>

#include "panosim/image.hpp"
#include "service_internal.hpp"

namespace panosim {

using nlohmann::json;

// ---- LatencyWindow -------------------------------------------------------

void LatencyWindow::add(double v) {
  samples_.push_back(v);
  if (samples_.size() > size_) samples_.pop_front();
}

double LatencyWindow::percentile(double p) const {
  if (samples_.empty()) return 0.0;
  std::vector<double> sorted(samples_.begin(), samples_.end());
  std::sort(sorted.begin(), sorted.end());
  const double rank = std::ceil(std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(sorted.size()));
  const auto idx = static_cast<std::size_t>(std::max(1.0, rank)) - 1;
  return sorted[idx];
}

// ---- Service core --------------------------------------------------------

SimService::SimService(ServiceConfig config, PanoLoader loader)
    : config_(std::move(config)), loader_(std::move(loader)), capture_(std::make_unique<CaptureState>()) {
  config_.cache.validate();
  if (!config_.dataset.empty()) {
    try {
      manifest_ = load_manifest(config_.dataset);
      grid_ = std::make_unique<GridIndex>(*manifest_);
    } catch (const DatasetError& e) {
      manifest_.reset();
      dataset_errors_ = e.diagnostics();
    } catch (const std::exception& e) {
      manifest_.reset();
      dataset_errors_ = {e.what()};
    }
  } else {
    dataset_errors_ = {"no dataset configured"};
  }
  if (grid_) {
    if (!loader_) {
      loader_ = [this](const PanoRecord& r) { return load_panorama(*manifest_, r); };
    }
    cache_ = std::make_unique<PanoCache>(*grid_, loader_, config_.cache);
  }
  load_capture_session(*capture_, config_);
}

SimService::~SimService() { stop(); }

void SimService::record_frame(double ms) {
  const auto now = std::chrono::steady_clock::now();
  std::lock_guard lk(metrics_mu_);
  ++frames_;
  frame_ms_.add(ms);
  recent_frames_.push_back(now);
  while (!recent_frames_.empty() && now - recent_frames_.front() > std::chrono::seconds(1)) {
    recent_frames_.pop_front();
  }
}

void SimService::prefetch_for(const CameraPose& pose) {
  if (!grid_) return;
  cache_->prefetch(predict_cells(pose, *grid_, config_.cache.prefetch_depth, config_.cache.neighbor_k));
}

ProducedFrame SimService::produce(const RenderRequest& req, double t, bool prefetch) {
  if (!grid_) throw DatasetUnavailable("dataset not loaded");
  const auto start = std::chrono::steady_clock::now();
  const PanoSelection sel = select_panorama(*grid_, req.pose);
  if (sel.distance_m > 2.0 * grid_->cell_size()) {
    throw OutsideDataset("position is " + std::to_string(sel.distance_m) +
                         " m from the nearest panorama");
  }
  if (prefetch) prefetch_for(req.pose);
  const auto lookup = cache_->get(sel.cell, Access::kRender);

  ProducedFrame out;
  out.frame = render(req, *lookup.pano, grid_->cell_size(), manifest_->record_z(lookup.pano->record),
                     config_.render_threads);
  out.frame.stalled = !lookup.was_resident;
  if (!config_.overlay_url.empty()) {
    if (const auto overlay = fetch_overlay(req, t)) {
      out.frame.image = composite_over(out.frame.image, *overlay);
    } else {
      out.overlay_missing = true;
    }
  }
  out.frame_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  record_frame(out.frame_ms);
  return out;
}

std::optional<RgbaImage> SimService::fetch_overlay(const RenderRequest& req, double t) const {
  const auto scheme = config_.overlay_url.find("://");
  const auto slash = config_.overlay_url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  const std::string origin = config_.overlay_url.substr(0, slash);
  const std::string path = slash == std::string::npos ? "/" : config_.overlay_url.substr(slash);

  const auto& p = req.pose;
  const json body{{"t", t},
                  {"x", p.x_m},
                  {"y", p.y_m},
                  {"z", p.z_m},
                  {"yaw", p.orientation.yaw},
                  {"pitch", p.orientation.pitch},
                  {"roll", p.orientation.roll},
                  {"width", req.intrinsics.width()},
                  {"height", req.intrinsics.height()},
                  {"hfov_deg", rad_to_deg(req.intrinsics.hfov())},
                  {"vfov_deg", rad_to_deg(req.intrinsics.vfov())}};
  try {
    httplib::Client cli(origin);
    cli.set_connection_timeout(config_.overlay_timeout);
    cli.set_read_timeout(config_.overlay_timeout);
    cli.set_write_timeout(config_.overlay_timeout);
    const auto res = cli.Post(path, body.dump(), "application/json");
    if (!res || res->status != 200) return std::nullopt;
    const auto* data = reinterpret_cast<const std::uint8_t*>(res->body.data());
    RgbaImage img = decode_rgba({data, res->body.size()});
    if (img.width != req.intrinsics.width() || img.height != req.intrinsics.height()) return std::nullopt;
    return img;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string SimService::metrics_json() const {
  json j;
  {
    std::lock_guard lk(metrics_mu_);
    const auto now = std::chrono::steady_clock::now();
    const auto fresh = std::count_if(recent_frames_.begin(), recent_frames_.end(), [&](auto t) {
      return now - t <= std::chrono::seconds(1);
    });
    j["fps"] = fresh;
    j["frames"] = frames_;
    j["render_ms_p50"] = frame_ms_.percentile(50);
    j["render_ms_p99"] = frame_ms_.percentile(99);
  }
  const CacheStats s = cache_ ? cache_->stats() : CacheStats{};
  j["cache"] = {{"hits", s.hits},
                {"misses", s.misses},
                {"stalls", s.stalls},
                {"decodes", s.decodes},
                {"prefetch_loads", s.prefetch_loads},
                {"failures", s.failures},
                {"mean_decode_ms", s.mean_decode_ms},
                {"last_decode_ms", s.last_decode_ms},
                {"resident", s.resident},
                {"capacity", config_.cache.capacity}};
  return j.dump();
}

std::string SimService::dataset_info_json() const {
  if (!manifest_) return json{{"loaded", false}, {"errors", dataset_errors_}}.dump();
  const auto& m = *manifest_;
  return json{{"loaded", true},
              {"version", m.version},
              {"cell_size_m", m.cell_size_m},
              {"pano_width", m.pano_width},
              {"pano_height", m.pano_height},
              {"px_per_deg", angular_resolution(m.pano_width)},
              {"records", m.records.size()},
              {"min_cell", {grid_->min_cell().i, grid_->min_cell().j}},
              {"max_cell", {grid_->max_cell().i, grid_->max_cell().j}}}
      .dump();
}

// ---- HTTP ----------------------------------------------------------------

namespace {

class BadRequest : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

double number_param(const httplib::Request& req, const char* name, std::optional<double> fallback) {
  if (!req.has_param(name)) {
    if (fallback) return *fallback;
    throw BadRequest(std::string("missing parameter ") + name);
  }
  const std::string text = req.get_param_value(name);
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw BadRequest(std::string("parameter ") + name + " is not a finite number");
  }
  return v;
}

int int_param(const httplib::Request& req, const char* name, int fallback) {
  const double v = number_param(req, name, fallback);
  if (v != std::floor(v) || v < 1 || v > 8192) {
    throw BadRequest(std::string("parameter ") + name + " must be an integer in [1, 8192]");
  }
  return static_cast<int>(v);
}

bool flag_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return false;
  const std::string v = req.get_param_value(name);
  if (v == "1" || v == "true" || v.empty()) return true;
  if (v == "0" || v == "false") return false;
  throw BadRequest(std::string("parameter ") + name + " must be 0/1/true/false");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

void SimService::install_routes() {
  auto& srv = http_->server;
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Expose-Headers",
                            "X-Source-Pano-Id, X-Stalled, X-Overlay-Missing, X-Frame-Ms"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/render", [this](const httplib::Request& req, httplib::Response& res) {
    RenderRequest rr;
    try {
      rr.pose.x_m = number_param(req, "x", std::nullopt);
      rr.pose.y_m = number_param(req, "y", std::nullopt);
      rr.pose.z_m = number_param(req, "z", 0.0);
      rr.pose.orientation = {number_param(req, "yaw", 0.0), number_param(req, "pitch", 0.0),
                             number_param(req, "roll", 0.0)};
      const int w = int_param(req, "width", 640);
      const int h = int_param(req, "height", 480);
      const double hfov = number_param(req, "hfov", 60.0);
      rr.intrinsics = req.has_param("vfov")
                          ? CameraIntrinsics(w, h, deg_to_rad(hfov), deg_to_rad(number_param(req, "vfov", {})))
                          : CameraIntrinsics(w, h, deg_to_rad(hfov));
      rr.interpolation.enabled = flag_param(req, "interp");
      rr.interpolation.lambda = number_param(req, "lambda", config_.lambda);
      if (rr.interpolation.lambda < 0.0) throw BadRequest("lambda must be non-negative");
    } catch (const BadRequest& e) {
      return send_error(res, 400, e.what());
    } catch (const std::invalid_argument& e) {
      return send_error(res, 400, e.what());
    }
    try {
      const ProducedFrame f = produce(rr, 0.0, false);
      const auto png = encode(f.frame.image, ImageEncoding::kPng);
      res.set_header("X-Source-Pano-Id", f.frame.source_pano_id);
      res.set_header("X-Stalled", f.frame.stalled ? "1" : "0");
      res.set_header("X-Overlay-Missing", f.overlay_missing ? "1" : "0");
      res.set_header("X-Frame-Ms", std::to_string(f.frame_ms));
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    } catch (const DatasetUnavailable& e) {
      send_error(res, 503, e.what());
    } catch (const OutsideDataset& e) {
      send_error(res, 404, e.what());
    } catch (const DecodeError& e) {
      send_error(res, 500, e.what());
    }
  });

  srv.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(metrics_json(), "application/json");
  });

  srv.Get("/dataset/info", [this](const httplib::Request&, httplib::Response& res) {
    if (!manifest_) res.status = 503;
    res.set_content(dataset_info_json(), "application/json");
  });

  install_capture_routes(srv, *capture_, config_, manifest_ ? manifest_->cell_size_m : 0.2);
}

// ---- Lifecycle -----------------------------------------------------------

void SimService::start() {
  http_ = std::make_unique<Http>();
  install_routes();
  if (config_.port == 0) {
    http_port_ = http_->server.bind_to_any_port(config_.host);
  } else if (http_->server.bind_to_port(config_.host, config_.port)) {
    http_port_ = config_.port;
  } else {
    http_port_ = -1;
  }
  if (http_port_ <= 0) {
    throw std::runtime_error("cannot bind HTTP port " + std::to_string(config_.port) + " on " + config_.host);
  }
  const int want_stream = config_.stream_port.value_or(config_.port == 0 ? 0 : config_.port + 1);
  stream_ = std::make_unique<StreamServer>(*this, config_.host, want_stream);
  stream_port_ = stream_->port();

  http_thread_ = std::thread([this] { http_->server.listen_after_bind(); });
  http_->server.wait_until_ready();
  stream_->start(2);
  std::lock_guard lk(run_mu_);
  running_ = true;
}

void SimService::stop() {
  if (stream_) {
    stream_->stop();
  }
  if (http_) http_->server.stop();
  if (http_thread_.joinable()) http_thread_.join();
  stream_.reset();
  if (capture_ && capture_->completion.joinable()) {
    capture_->completion.request_stop();
    capture_->completion.join();
  }
  {
    std::lock_guard lk(run_mu_);
    running_ = false;
  }
  run_cv_.notify_all();
}

void SimService::wait() {
  std::unique_lock lk(run_mu_);
  run_cv_.wait(lk, [&] { return !running_; });
}

}  // namespace panosim
