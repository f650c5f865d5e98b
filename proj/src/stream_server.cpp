// WebSocket pose/frame channel.
//
// Each connection reads messages on its strand and keeps one pending frame
// request. A per-connection render thread takes the newest request, produces
// the frame and posts the encoded message back to the strand for writing.
// Requests that arrive while an older one is still waiting replace it.

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <json.hpp>
#include <list>

#include "panosim/image.hpp"
#include "service_internal.hpp"

namespace panosim {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

std::string frame_message(const json& header, const std::vector<std::uint8_t>& payload) {
  const std::string h = header.dump();
  const auto n = static_cast<std::uint32_t>(h.size());
  std::string out;
  out.reserve(4 + h.size() + payload.size());
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out += h;
  out.append(payload.begin(), payload.end());
  return out;
}

namespace {

struct FrameJob {
  std::uint64_t seq = 0;
  double t = 0.0;
  RenderRequest request;
};

// Shared between a connection and its render thread.
struct Pipeline {
  std::mutex mu;
  std::condition_variable cv;
  std::optional<FrameJob> pending;
  bool done = false;

  void shutdown() {
    {
      std::lock_guard lk(mu);
      done = true;
      pending.reset();
    }
    cv.notify_all();
  }
};

double field(const json& j, const char* key, std::optional<double> fallback = {}) {
  if (!j.contains(key)) {
    if (fallback) return *fallback;
    throw std::invalid_argument(std::string("missing field ") + key);
  }
  const auto& v = j[key];
  if (!v.is_number()) throw std::invalid_argument(std::string("field ") + key + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw std::invalid_argument(std::string("field ") + key + " must be finite");
  return d;
}

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, SimService& service) : ws_(std::move(socket)), service_(service) {}

  ~Connection() { join(); }

  void run() {
    net::dispatch(ws_.get_executor(), [self = shared_from_this()] { self->on_run(); });
  }

  /// Stops the render thread; safe to call from any thread but the render thread.
  void join() {
    pipeline_.shutdown();
    if (renderer_.joinable()) renderer_.join();
  }

 private:
  void on_run() {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.read_message_max(64 * 1024);
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->start_renderer();
      self->do_read();
    });
  }

  void start_renderer() {
    renderer_ = std::thread([this, weak = weak_from_this(), exec = ws_.get_executor()] {
      render_loop(weak, exec);
    });
  }

  // Runs on the render thread. Never holds a strong reference, so the
  // connection is always destroyed (and this thread joined) elsewhere.
  void render_loop(std::weak_ptr<Connection> weak, net::any_io_executor exec) {
    while (true) {
      FrameJob job;
      {
        std::unique_lock lk(pipeline_.mu);
        pipeline_.cv.wait(lk, [&] { return pipeline_.done || pipeline_.pending; });
        if (pipeline_.done) return;
        job = std::move(*pipeline_.pending);
        pipeline_.pending.reset();
      }
      std::string msg;
      bool fatal = false;
      try {
        const ProducedFrame f = service_.produce(job.request, job.t, true);
        const auto bytes = encode(f.frame.image, encoding_, 85);
        msg = frame_message({{"type", "frame"},
                             {"seq", job.seq},
                             {"t", job.t},
                             {"source_pano_id", f.frame.source_pano_id},
                             {"stalled", f.frame.stalled},
                             {"overlay_missing", f.overlay_missing},
                             {"encode", encoding_ == ImageEncoding::kJpeg ? "jpeg" : "png"},
                             {"width", f.frame.image.width},
                             {"height", f.frame.image.height},
                             {"frame_ms", f.frame_ms}},
                            bytes);
      } catch (const OutsideDataset& e) {
        // Recoverable: the client may steer back inside.
        msg = frame_message({{"type", "error"}, {"seq", job.seq}, {"t", job.t}, {"message", e.what()},
                             {"fatal", false}});
      } catch (const std::exception& e) {
        msg = frame_message({{"type", "error"}, {"seq", job.seq}, {"t", job.t}, {"message", e.what()},
                             {"fatal", true}});
        fatal = true;
      }
      net::post(exec, [weak, m = std::move(msg), fatal]() mutable {
        if (auto self = weak.lock()) {
          self->send(std::move(m));
          if (fatal) self->close_after_flush();
        }
      });
    }
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      pipeline_.shutdown();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      handle(text);
    } catch (const std::exception& e) {
      return fail(e.what());
    }
    if (!closing_) do_read();
  }

  void handle(const std::string& text) {
    const json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("message is not a JSON object");
    const std::string type = j.value("type", std::string(opened_ ? "pose" : ""));

    if (!opened_) {
      if (type != "open") throw std::invalid_argument("first message must be {\"type\":\"open\",...}");
      const int w = static_cast<int>(field(j, "width", 640));
      const int h = static_cast<int>(field(j, "height", 480));
      const double hfov = deg_to_rad(field(j, "hfov_deg", 60.0));
      intrinsics_ = j.contains("vfov_deg") ? CameraIntrinsics(w, h, hfov, deg_to_rad(field(j, "vfov_deg")))
                                           : CameraIntrinsics(w, h, hfov);
      interpolation_.enabled = j.value("interp", true);
      interpolation_.lambda = field(j, "lambda", service_.config().lambda);
      const std::string enc = j.value("encode", std::string("jpeg"));
      if (enc != "jpeg" && enc != "png") throw std::invalid_argument("encode must be jpeg or png");
      encoding_ = enc == "png" ? ImageEncoding::kPng : ImageEncoding::kJpeg;
      opened_ = true;
      send(frame_message({{"type", "ready"},
                          {"width", intrinsics_.width()},
                          {"height", intrinsics_.height()},
                          {"hfov_deg", rad_to_deg(intrinsics_.hfov())},
                          {"vfov_deg", rad_to_deg(intrinsics_.vfov())},
                          {"encode", enc}}));
      return;
    }
    if (type != "pose") throw std::invalid_argument("unknown message type '" + type + "'");

    const double t = field(j, "t");
    if (last_t_ && !(t > *last_t_)) {
      throw std::invalid_argument("non-monotonic t: " + std::to_string(t) + " after " +
                                  std::to_string(*last_t_));
    }
    last_t_ = t;
    CameraPose pose;
    pose.x_m = field(j, "x");
    pose.y_m = field(j, "y");
    pose.z_m = field(j, "z", 0.0);
    pose.orientation = {field(j, "yaw", 0.0), field(j, "pitch", 0.0), field(j, "roll", 0.0)};
    pose.vx = field(j, "vx", 0.0);
    pose.vy = field(j, "vy", 0.0);
    if (!j.value("want_frame", false)) {
      service_.prefetch_for(pose);
      return;
    }
    FrameJob job{++requests_, t, {pose, intrinsics_, interpolation_}};
    {
      std::lock_guard lk(pipeline_.mu);
      pipeline_.pending = std::move(job);  // latest wins
    }
    pipeline_.cv.notify_one();
  }

  void fail(const std::string& message) {
    if (closing_) return;
    send(frame_message({{"type", "error"}, {"message", message}, {"fatal", true}}));
    close_after_flush();
  }

  void close_after_flush() {
    closing_ = true;
    pipeline_.shutdown();
    if (outbox_.empty()) do_close();
  }

  void send(std::string msg) {
    if (closed_) return;
    outbox_.push_back(std::make_shared<std::string>(std::move(msg)));
    if (outbox_.size() == 1) do_write();
  }

  void do_write() {
    ws_.binary(true);
    ws_.async_write(net::buffer(*outbox_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_write(ec); });
  }

  void on_write(beast::error_code ec) {
    outbox_.pop_front();
    if (ec) {
      closed_ = true;
      outbox_.clear();
      pipeline_.shutdown();
      return;
    }
    if (!outbox_.empty()) return do_write();
    if (closing_) do_close();
  }

  void do_close() {
    if (closed_) return;
    closed_ = true;
    ws_.async_close(websocket::close_reason(websocket::close_code::policy_error),
                    [self = shared_from_this()](beast::error_code) {});
  }

  websocket::stream<beast::tcp_stream> ws_;
  SimService& service_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<std::string>> outbox_;
  bool opened_ = false;
  bool closing_ = false;
  bool closed_ = false;
  std::optional<double> last_t_;
  std::uint64_t requests_ = 0;
  CameraIntrinsics intrinsics_{640, 480, deg_to_rad(60.0)};
  InterpolationParams interpolation_;
  ImageEncoding encoding_ = ImageEncoding::kJpeg;

  Pipeline pipeline_;
  std::thread renderer_;
};

}  // namespace

struct StreamServer::Impl {
  SimService& service;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::vector<std::thread> threads;
  std::mutex mu;
  std::list<std::weak_ptr<Connection>> connections;

  explicit Impl(SimService& s) : service(s) {}

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      socket.set_option(tcp::no_delay(true), ec);
      auto conn = std::make_shared<Connection>(std::move(socket), service);
      {
        std::lock_guard lk(mu);
        connections.remove_if([](const auto& w) { return w.expired(); });
        connections.push_back(conn);
      }
      conn->run();
      do_accept();
    });
  }
};

StreamServer::StreamServer(SimService& service, const std::string& host, int port)
    : impl_(std::make_unique<Impl>(service)) {
  const tcp::endpoint ep{net::ip::make_address(host), static_cast<unsigned short>(port)};
  beast::error_code ec;
  impl_->acceptor.open(ep.protocol(), ec);
  if (!ec) impl_->acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) impl_->acceptor.bind(ep, ec);
  if (!ec) impl_->acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) {
    throw std::runtime_error("cannot bind stream port " + std::to_string(port) + " on " + host + ": " +
                             ec.message());
  }
}

StreamServer::~StreamServer() { stop(); }

int StreamServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void StreamServer::start(int threads) {
  impl_->do_accept();
  for (int k = 0; k < threads; ++k) impl_->threads.emplace_back([this] { impl_->ioc.run(); });
}

void StreamServer::stop() {
  if (!impl_) return;
  beast::error_code ec;
  impl_->acceptor.close(ec);
  impl_->ioc.stop();
  for (auto& t : impl_->threads) {
    if (t.joinable()) t.join();
  }
  impl_->threads.clear();
  // Render threads may still post to the context; join them while it exists.
  std::lock_guard lk(impl_->mu);
  for (auto& w : impl_->connections) {
    if (auto c = w.lock()) c->join();
  }
  impl_->connections.clear();
}

}  // namespace panosim
