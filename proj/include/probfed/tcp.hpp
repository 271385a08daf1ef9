#pragma once

#include <atomic>
#include <cstdint>
#include <list>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>

#include "probfed/transport.hpp"

namespace probfed::transport {

// u32 little-endian length prefix followed by the serialized message.
Bytes frame(std::span<const std::uint8_t> payload);

// Incremental decoder for a stream of frames.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> chunk);
  // Next complete payload, if one is buffered.
  std::optional<Bytes> next();
  std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

 private:
  Bytes buffer_;
  std::size_t offset_ = 0;
};

// Accepts framed messages over loopback TCP and republishes them into a
// broker under their canonical topic. Each frame is acknowledged with the
// u32 delivery count (0xFFFFFFFF if the broker rejected it), which makes
// remote publishes synchronous.
class TcpRelay {
 public:
  explicit TcpRelay(Broker& broker, std::uint16_t port = 0);
  ~TcpRelay();
  TcpRelay(const TcpRelay&) = delete;
  TcpRelay& operator=(const TcpRelay&) = delete;

  std::uint16_t port() const noexcept { return port_; }

 private:
  void accept_loop();
  void serve(int fd);

  Broker& broker_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex mu_;
  std::list<std::thread> workers_;
  std::list<int> connections_;
  std::thread acceptor_;
};

// One stream per participant.
class TcpEndpoint final : public Endpoint {
 public:
  TcpEndpoint(std::uint16_t port, ClientId id, const std::string& host = "127.0.0.1");
  ~TcpEndpoint() override;
  TcpEndpoint(const TcpEndpoint&) = delete;
  TcpEndpoint& operator=(const TcpEndpoint&) = delete;

  // The topic must be the message's canonical topic (the frame carries no
  // topic of its own).
  std::size_t publish(std::string_view topic, const Message& msg) override;

 private:
  int fd_ = -1;
  ClientId id_;
};

}  // namespace probfed::transport
