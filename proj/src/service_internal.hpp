// Pieces of SimService shared between its translation units.
#pragma once

#include <httplib.h>

#include <json.hpp>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "panosim/capture_osc.hpp"
#include "panosim/sim_service.hpp"

namespace panosim {

struct SimService::Http {
  httplib::Server server;
};

struct SimService::CaptureState {
  std::mutex mu;
  std::mutex trigger_mu;  // held for a whole trigger request
  std::optional<CaptureSession> session;
  bool trigger_busy = false;  // a takePicture call is on the wire
  std::jthread completion;    // polls and downloads the in-flight photo
};

void install_capture_routes(httplib::Server& server, SimService::CaptureState& state,
                            const ServiceConfig& config, double default_cell_size);
void load_capture_session(SimService::CaptureState& state, const ServiceConfig& config);

/// Length-prefixed binary message: 4-byte big-endian header size, JSON
/// header, payload.
std::string frame_message(const nlohmann::json& header, const std::vector<std::uint8_t>& payload = {});

class StreamServer {
 public:
  StreamServer(SimService& service, const std::string& host, int port);
  ~StreamServer();
  int port() const;
  void start(int threads);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace panosim
