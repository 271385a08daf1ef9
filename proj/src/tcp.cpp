#include "probfed/tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace probfed::transport {

namespace {

constexpr std::uint32_t kRejected = 0xFFFFFFFFu;
constexpr std::uint32_t kMaxFrame = 0x80000000u;

[[noreturn]] void throw_errno(const char* what) {
  throw Error(Errc::kIo, std::string(what) + ": " + std::strerror(errno));
}

bool write_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const auto n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

bool read_exact(int fd, std::uint8_t* out, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const auto n = ::recv(fd, out + got, len - got, 0);
    if (n == 0) return false;
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

std::uint32_t load_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 |
         std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

void store_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

Bytes frame(std::span<const std::uint8_t> payload) {
  if (payload.size() >= kMaxFrame) throw Error(Errc::kOversize, "frame too large");
  Bytes out(4 + payload.size());
  store_u32(out.data(), static_cast<std::uint32_t>(payload.size()));
  std::copy(payload.begin(), payload.end(), out.begin() + 4);
  return out;
}

void FrameDecoder::feed(std::span<const std::uint8_t> chunk) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
}

std::optional<Bytes> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  const std::uint32_t len = load_u32(buffer_.data() + offset_);
  if (len >= kMaxFrame) throw Error(Errc::kOversize, "frame too large");
  if (buffered() < 4 + std::size_t{len}) return std::nullopt;
  const auto begin = buffer_.begin() + static_cast<std::ptrdiff_t>(offset_ + 4);
  Bytes payload(begin, begin + len);
  offset_ += 4 + len;
  return payload;
}

TcpRelay::TcpRelay(Broker& broker, std::uint16_t port) : broker_(broker) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(listen_fd_, 64) < 0) {
    const int saved = errno;
    ::close(listen_fd_);
    errno = saved;
    throw_errno("bind/listen");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpRelay::~TcpRelay() {
  stopping_ = true;
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  {
    std::lock_guard lock(mu_);
    for (int fd : connections_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : workers_) t.join();
}

void TcpRelay::accept_loop() {
  while (!stopping_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 50);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(mu_);
    connections_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void TcpRelay::serve(int fd) {
  FrameDecoder decoder;
  std::uint8_t chunk[4096];
  while (!stopping_) {
    const auto n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n == 0) break;
    if (n < 0) {
      if (errno == EINTR) continue;
      break;
    }
    decoder.feed({chunk, static_cast<std::size_t>(n)});
    bool broken = false;
    while (auto payload = decoder.next()) {
      std::uint32_t ack = kRejected;
      try {
        const Message msg = deserialize(*payload);
        ack = static_cast<std::uint32_t>(broker_.publish_serialized(
            publisher_of(msg), topic_for(msg), std::move(*payload)));
      } catch (const Error&) {
        ack = kRejected;
      }
      std::uint8_t reply[4];
      store_u32(reply, ack);
      if (!write_all(fd, reply)) {
        broken = true;
        break;
      }
    }
    if (broken) break;
  }
  std::lock_guard lock(mu_);
  connections_.remove(fd);
  ::close(fd);
}

TcpEndpoint::TcpEndpoint(std::uint16_t port, ClientId id, const std::string& host)
    : id_(id) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw Error(Errc::kInvalidArgument, "bad host " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    const int saved = errno;
    ::close(fd_);
    errno = saved;
    throw Error(Errc::kBrokerUnavailable,
                std::string("connect: ") + std::strerror(errno));
  }
}

TcpEndpoint::~TcpEndpoint() {
  if (fd_ >= 0) ::close(fd_);
}

std::size_t TcpEndpoint::publish(std::string_view topic, const Message& msg) {
  if (publisher_of(msg) != id_) {
    throw Error(Errc::kInvalidArgument, "message publisher differs from endpoint");
  }
  if (topic != topic_for(msg)) {
    throw Error(Errc::kInvalidArgument,
                "topic " + std::string(topic) + " is not the canonical topic");
  }
  const Bytes framed = frame(serialize(msg));
  std::uint8_t reply[4];
  if (!write_all(fd_, framed) || !read_exact(fd_, reply, sizeof(reply))) {
    throw Error(Errc::kBrokerUnavailable, "relay connection lost");
  }
  const std::uint32_t ack = load_u32(reply);
  if (ack == kRejected) throw Error(Errc::kBrokerUnavailable, "relay rejected message");
  return ack;
}

}  // namespace probfed::transport
