// Blocking WebSocket client for the frame stream.
#pragma once

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <optional>
#include <string>

namespace panosim::testing {

struct StreamReply {
  nlohmann::json header;
  std::string payload;
};

/// Splits a length-prefixed frame message into header and payload.
inline StreamReply split_frame(const std::string& msg) {
  if (msg.size() < 4) throw std::runtime_error("short frame message");
  const auto b = [&](int k) { return static_cast<std::uint32_t>(static_cast<unsigned char>(msg[k])); };
  const std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
  if (msg.size() < 4 + n) throw std::runtime_error("frame header overruns message");
  return {nlohmann::json::parse(msg.substr(4, n)), msg.substr(4 + n)};
}

class WsClient {
 public:
  explicit WsClient(int port) : ws_(ioc_) {
    namespace net = boost::asio;
    net::ip::tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.next_layer().set_option(net::ip::tcp::no_delay(true));
    ws_.handshake("127.0.0.1:" + std::to_string(port), "/stream");
  }

  void send(const nlohmann::json& j) {
    ws_.text(true);
    ws_.write(boost::asio::buffer(j.dump()));
  }
  void send_raw(const std::string& s) {
    ws_.text(true);
    ws_.write(boost::asio::buffer(s));
  }

  /// nullopt once the server has closed the connection.
  std::optional<StreamReply> read() {
    boost::beast::flat_buffer buf;
    boost::beast::error_code ec;
    ws_.read(buf, ec);
    if (ec) return std::nullopt;
    return split_frame(boost::beast::buffers_to_string(buf.data()));
  }

 private:
  boost::asio::io_context ioc_;
  boost::beast::websocket::stream<boost::asio::ip::tcp::socket> ws_;
};

}  // namespace panosim::testing
