// Network front-end of the simulator.
//
// HTTP (one port):
//   GET  /render        single frame as PNG
//   GET  /metrics       frame timing and cache counters
//   GET  /dataset/info  manifest summary
//   GET  /capture/session, POST /capture/plan, /capture/trigger, /capture/mark
// WebSocket (second port, path /stream): pose messages in, frames out.
//
// Wire formats are described in README.md.
#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "panosim/capture_osc.hpp"
#include "panosim/dataset.hpp"
#include "panosim/pano_cache.hpp"
#include "panosim/renderer.hpp"

namespace panosim {

struct ServiceConfig {
  std::filesystem::path dataset;  // manifest.json
  std::string host = "127.0.0.1";
  int port = 8080;                 // 0 picks a free port
  std::optional<int> stream_port;  // default: port + 1, or a free port when port is 0
  CacheConfig cache;
  double lambda = 0.5;
  int render_threads = 1;
  std::string overlay_url;  // empty disables the hook
  std::chrono::milliseconds overlay_timeout{50};
  std::filesystem::path session_path;  // empty keeps the capture session in memory
  std::string camera_url;              // OSC base URL
  std::filesystem::path capture_dir;   // receives imgs/ and manifest.json
  std::chrono::milliseconds camera_poll_interval{500};
};

/// Sliding window of recent samples with nearest-rank percentiles.
class LatencyWindow {
 public:
  explicit LatencyWindow(std::size_t size = 1000) : size_(size) {}
  void add(double v);
  /// p in [0, 100]; 0 when empty.
  double percentile(double p) const;
  std::size_t count() const { return samples_.size(); }

 private:
  std::size_t size_;
  std::deque<double> samples_;
};

/// Pose plus timing fields shared by the stream and the overlay hook.
struct PoseMessage {
  double t = 0.0;
  CameraPose pose;
  bool want_frame = false;
};

struct ProducedFrame {
  Frame frame;
  bool overlay_missing = false;
  double frame_ms = 0.0;
};

/// Position is farther than two cells from every panorama.
class OutsideDataset : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// The dataset failed to load at startup.
class DatasetUnavailable : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class StreamServer;

class SimService {
 public:
  /// A null loader reads panoramas from disk. A dataset that fails to load
  /// leaves the service up, answering 503 where a dataset is needed.
  explicit SimService(ServiceConfig config, PanoLoader loader = {});
  ~SimService();
  SimService(const SimService&) = delete;
  SimService& operator=(const SimService&) = delete;

  /// Binds both ports and serves on background threads.
  void start();
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

  int http_port() const { return http_port_; }
  int stream_port() const { return stream_port_; }
  const ServiceConfig& config() const { return config_; }

  bool dataset_loaded() const { return grid_ != nullptr; }
  const std::vector<std::string>& dataset_errors() const { return dataset_errors_; }

  /// Selects, decodes (through the cache) and renders one frame, then applies
  /// the overlay hook. With `prefetch`, the pose's velocity steers the cache.
  /// Throws DatasetUnavailable, OutsideDataset or DecodeError.
  ProducedFrame produce(const RenderRequest& req, double t, bool prefetch);
  /// Warms the cache for a pose without rendering.
  void prefetch_for(const CameraPose& pose);

  std::string metrics_json() const;
  std::string dataset_info_json() const;

  // Defined in the implementation.
  struct CaptureState;
  struct Http;

 private:
  void install_routes();
  void record_frame(double ms);
  std::optional<RgbaImage> fetch_overlay(const RenderRequest& req, double t) const;

  ServiceConfig config_;
  PanoLoader loader_;
  std::optional<DatasetManifest> manifest_;
  std::unique_ptr<GridIndex> grid_;
  std::unique_ptr<PanoCache> cache_;
  std::vector<std::string> dataset_errors_;

  mutable std::mutex metrics_mu_;
  LatencyWindow frame_ms_;
  std::deque<std::chrono::steady_clock::time_point> recent_frames_;
  std::uint64_t frames_ = 0;

  std::unique_ptr<CaptureState> capture_;
  std::unique_ptr<Http> http_;
  std::unique_ptr<StreamServer> stream_;
  std::thread http_thread_;
  int http_port_ = 0;
  int stream_port_ = 0;
  std::mutex run_mu_;
  std::condition_variable run_cv_;
  bool running_ = false;
};

}  // namespace panosim
