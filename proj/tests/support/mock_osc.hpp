// Scriptable stand-in for an OSC camera, served on a loopback port.
#pragma once

#include <httplib.h>

#include <atomic>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "panosim/image.hpp"

namespace panosim::testing {

class MockOsc {
 public:
  struct Script {
    int in_progress_polls = 0;                 // status answers before "done"
    std::optional<std::string> execute_error;  // OSC error code for takePicture
    bool done_immediately = false;             // takePicture answers "done"
    std::optional<std::string> body_override;  // replaces the photo bytes
  };

  explicit MockOsc(int width = 64, int height = 32) {
    RgbImage img(width, height);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        img.set(x, y, {static_cast<std::uint8_t>(x * 4), static_cast<std::uint8_t>(y * 8), 90});
    const auto bytes = encode(img, ImageEncoding::kJpeg, 90);
    jpeg_.assign(bytes.begin(), bytes.end());

    server_.Post("/osc/commands/execute", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(mu_);
      ++execute_calls_;
      last_execute_body_ = req.body;
      const auto j = nlohmann::json::parse(req.body, nullptr, false);
      if (j.is_discarded() || j.value("name", "") != "camera.takePicture") {
        return error(res, 400, "invalidName");
      }
      if (script_.execute_error) return error(res, 503, *script_.execute_error);
      const std::string id = std::to_string(next_id_++);
      polls_left_[id] = script_.in_progress_polls;
      if (script_.done_immediately) return done(res, id);
      res.set_content(nlohmann::json{{"name", "camera.takePicture"}, {"state", "inProgress"}, {"id", id}}.dump(),
                      "application/json");
    });
    server_.Post("/osc/commands/status", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lk(mu_);
      ++status_calls_;
      const auto j = nlohmann::json::parse(req.body, nullptr, false);
      const std::string id = j.is_discarded() ? "" : j.value("id", "");
      const auto it = polls_left_.find(id);
      if (it == polls_left_.end()) return error(res, 400, "invalidParameterValue");
      if (it->second > 0) {
        --it->second;
        res.set_content(nlohmann::json{{"name", "camera.takePicture"}, {"state", "inProgress"}, {"id", id}}.dump(),
                        "application/json");
        return;
      }
      done(res, id);
    });
    server_.Get(R"(/files/(\w+)\.jpg)", [this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lk(mu_);
      ++download_calls_;
      res.set_content(script_.body_override.value_or(jpeg_), "image/jpeg");
    });

    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockOsc() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  void set_script(Script s) {
    std::lock_guard lk(mu_);
    script_ = std::move(s);
  }
  int execute_calls() const { std::lock_guard lk(mu_); return execute_calls_; }
  int status_calls() const { std::lock_guard lk(mu_); return status_calls_; }
  int download_calls() const { std::lock_guard lk(mu_); return download_calls_; }
  std::string last_execute_body() const { std::lock_guard lk(mu_); return last_execute_body_; }
  const std::string& jpeg() const { return jpeg_; }

 private:
  void error(httplib::Response& res, int status, const std::string& code) {
    res.status = status;
    res.set_content(nlohmann::json{{"state", "error"}, {"error", {{"code", code}, {"message", code}}}}.dump(),
                    "application/json");
  }
  void done(httplib::Response& res, const std::string& id) {
    res.set_content(nlohmann::json{{"name", "camera.takePicture"},
                                   {"state", "done"},
                                   {"id", id},
                                   {"results", {{"fileUrl", base_url() + "/files/p" + id + ".jpg"}}}}
                        .dump(),
                    "application/json");
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  mutable std::mutex mu_;
  Script script_;
  std::map<std::string, int> polls_left_;
  int next_id_ = 1;
  int execute_calls_ = 0, status_calls_ = 0, download_calls_ = 0;
  std::string last_execute_body_;
  std::string jpeg_;
};

}  // namespace panosim::testing
