#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "probfed/core.hpp"

namespace probfed::transport {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kHeaderSize = 20;
inline constexpr std::uint8_t kWireVersion = 0x01;
// Probabilities are re-validated at this tolerance after the 32-bit decode.
inline constexpr double kWireSimplexTolerance = 1e-4;

enum class MessageKind : std::uint8_t {
  kContribution = 0x01,
  kBroadcast = 0x02,
  kParameters = 0x03,
};

std::string_view kind_name(MessageKind kind);

struct ProbabilityEntry {
  SampleId sample_id = 0;
  ProbabilityVector probs;

  friend bool operator==(const ProbabilityEntry&, const ProbabilityEntry&) = default;
};

// One client's probabilities over the reference set for one round.
struct ContributionMessage {
  ClientId client_id = 0;
  std::uint32_t round = 0;
  std::uint16_t n_classes = 0;
  std::vector<ProbabilityEntry> entries;  // sample ids strictly increasing

  friend bool operator==(const ContributionMessage&, const ContributionMessage&) = default;
};

// Per-sample ensemble distributions sent back to the clients.
struct EnsembleBroadcast {
  std::uint32_t round = 0;
  std::uint16_t n_classes = 0;
  std::vector<ProbabilityEntry> entries;

  friend bool operator==(const EnsembleBroadcast&, const EnsembleBroadcast&) = default;
};

// Full parameter vector, for the parameter-averaging baseline.
struct ParameterMessage {
  ClientId client_id = 0;
  std::uint32_t round = 0;
  std::vector<double> params;

  friend bool operator==(const ParameterMessage&, const ParameterMessage&) = default;
};

using Message = std::variant<ContributionMessage, EnsembleBroadcast, ParameterMessage>;

MessageKind kind_of(const Message& msg);
std::uint32_t round_of(const Message& msg);
// Contribution and parameter messages carry their sender; broadcasts come
// from the server.
ClientId publisher_of(const Message& msg);

// Size in bytes of a serialized message, computed from the field sizes only.
std::uint64_t probability_message_size(std::uint64_t n_samples,
                                       std::uint64_t n_classes);
std::uint64_t parameter_message_size(std::uint64_t n_params);
std::uint64_t wire_size(const Message& msg);

// Throws Errc::kOversize past 2^31 bytes and Errc::kMalformed when a
// message invariant (sorted ids, matching class count) is broken.
Bytes serialize(const Message& msg);

// Inverse of serialize. Probabilities come back at 32-bit precision; a
// vector whose sum drifts past kSimplexTolerance (but within the wire
// tolerance) is renormalized.
Message deserialize(std::span<const std::uint8_t> bytes);

// Topic naming.
std::string contribution_topic(std::uint32_t round);
std::string ensemble_topic(std::uint32_t round);
std::string parameter_topic(std::uint32_t round);
std::string global_parameter_topic(std::uint32_t round);
// Canonical topic of a message: derived from its kind, round and publisher.
std::string topic_for(const Message& msg);

enum class Direction : std::uint8_t { kUp, kDown };
std::string_view direction_name(Direction d);

// Cumulative bytes per (publisher, direction, kind). Publishing credits the
// publisher with the serialized size; delivery counters track what each
// subscriber received.
class ByteLedger {
 public:
  struct Key {
    ClientId client = 0;
    Direction direction = Direction::kUp;
    MessageKind kind = MessageKind::kContribution;
    auto operator<=>(const Key&) const = default;
  };

  void credit(ClientId publisher, MessageKind kind, std::uint64_t bytes);
  void credit_delivery(ClientId subscriber, MessageKind kind, std::uint64_t bytes);

  const std::map<Key, std::uint64_t>& published() const noexcept { return published_; }
  const std::map<Key, std::uint64_t>& delivered() const noexcept { return delivered_; }

  std::uint64_t total() const;
  std::uint64_t total(MessageKind kind) const;
  std::uint64_t uploaded_by(ClientId client) const;
  std::uint64_t delivered_to(ClientId client) const;

 private:
  std::map<Key, std::uint64_t> published_;
  std::map<Key, std::uint64_t> delivered_;
};

// One published message, as logged by the broker.
struct MessageRecord {
  std::uint64_t sequence = 0;
  std::uint32_t round = 0;
  ClientId publisher = 0;
  std::string topic;
  MessageKind kind = MessageKind::kContribution;
  std::uint32_t items = 0;  // samples or parameters
  std::uint16_t n_classes = 0;
  std::uint64_t bytes = 0;
  std::size_t deliveries = 0;
};

struct Delivery {
  std::string topic;
  Message message;
  std::uint64_t wire_bytes = 0;
};

struct SubscriptionHandle {
  std::uint64_t id = 0;
  auto operator<=>(const SubscriptionHandle&) const = default;
};

// In-process topic broker with at-most-once fan-out. Queues hold the
// serialized bytes; poll decodes them, so every delivery crosses the wire
// format. Thread-safe.
class Broker {
 public:
  Broker() = default;
  Broker(const Broker&) = delete;
  Broker& operator=(const Broker&) = delete;

  // `owner` is the subscribing participant; kServerId for the coordinator.
  SubscriptionHandle subscribe(std::string topic, ClientId owner);
  void unsubscribe(SubscriptionHandle handle);

  // Returns the number of subscription queues that received a copy.
  std::size_t publish(ClientId publisher, std::string_view topic,
                      const Message& msg);
  // Same, with bytes already produced by serialize (used by the TCP relay).
  std::size_t publish_serialized(ClientId publisher, std::string_view topic,
                                 Bytes bytes);

  // std::nullopt means the timeout elapsed with the queue empty.
  std::optional<Delivery> poll(SubscriptionHandle handle,
                               std::chrono::milliseconds timeout);

  void shutdown();
  bool running() const;

  ByteLedger ledger() const;
  std::vector<MessageRecord> log() const;

 private:
  struct Queued {
    std::string topic;
    std::shared_ptr<const Bytes> bytes;
  };
  struct Subscription {
    std::string topic;
    ClientId owner = 0;
    std::deque<Queued> queue;
  };

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool running_ = true;
  std::uint64_t next_id_ = 1;
  std::uint64_t next_sequence_ = 0;
  std::map<std::uint64_t, Subscription> subscriptions_;
  ByteLedger ledger_;
  std::vector<MessageRecord> log_;
};

// Sending side used by simulated participants; inproc endpoints call the
// broker directly, TCP endpoints frame the bytes over a socket.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual std::size_t publish(std::string_view topic, const Message& msg) = 0;
};

class InprocEndpoint final : public Endpoint {
 public:
  InprocEndpoint(Broker& broker, ClientId id) : broker_(broker), id_(id) {}
  std::size_t publish(std::string_view topic, const Message& msg) override {
    return broker_.publish(id_, topic, msg);
  }

 private:
  Broker& broker_;
  ClientId id_;
};

}  // namespace probfed::transport
