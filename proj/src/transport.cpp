#include "probfed/transport.hpp"

#include <bit>
#include <cmath>

namespace probfed::transport {

namespace {

constexpr std::uint8_t kMagic0 = 0x50;  // 'P'
constexpr std::uint8_t kMagic1 = 0x45;  // 'E'
constexpr std::uint64_t kMaxMessageBytes = std::uint64_t{1} << 31;

class Writer {
 public:
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() { need(1); return in_[pos_++]; }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw Error(Errc::kTruncated, "message ends early");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{in_[pos_++]} << (8 * i);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

struct Header {
  MessageKind kind;
  std::uint32_t client_id;
  std::uint32_t round;
  std::uint32_t count;
  std::uint16_t n_classes;
};

Header read_header(Reader& r, std::size_t total) {
  if (total >= 1 && r.u8() != kMagic0) throw Error(Errc::kBadMagic, "bad magic");
  if (total < 2) throw Error(Errc::kTruncated, "header ends early");
  if (r.u8() != kMagic1) throw Error(Errc::kBadMagic, "bad magic");
  if (total < 3) throw Error(Errc::kTruncated, "header ends early");
  if (r.u8() != kWireVersion) throw Error(Errc::kBadVersion, "unsupported version");
  if (total < 4) throw Error(Errc::kTruncated, "header ends early");
  const std::uint8_t kind = r.u8();
  if (kind < 0x01 || kind > 0x03) throw Error(Errc::kBadKind, "unknown message kind");
  Header h{};
  h.kind = static_cast<MessageKind>(kind);
  h.client_id = r.u32();
  h.round = r.u32();
  h.count = r.u32();
  h.n_classes = r.u16();
  r.u16();  // reserved
  return h;
}

void write_header(Writer& w, MessageKind kind, std::uint32_t client_id,
                  std::uint32_t round, std::uint32_t count,
                  std::uint16_t n_classes) {
  w.u8(kMagic0);
  w.u8(kMagic1);
  w.u8(kWireVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u32(client_id);
  w.u32(round);
  w.u32(count);
  w.u16(n_classes);
  w.u16(0);
}

void check_entries(const std::vector<ProbabilityEntry>& entries,
                   std::uint16_t n_classes) {
  if (n_classes < 2) throw Error(Errc::kMalformed, "n_classes must be at least 2");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].probs.size() != n_classes) {
      throw Error(Errc::kMalformed, "entry length differs from n_classes");
    }
    if (i > 0 && entries[i].sample_id <= entries[i - 1].sample_id) {
      throw Error(Errc::kMalformed, "sample ids must be strictly increasing");
    }
  }
}

void write_entries(Writer& w, const std::vector<ProbabilityEntry>& entries) {
  for (const auto& e : entries) {
    w.u64(e.sample_id);
    for (double p : e.probs) w.f32(p);
  }
}

std::vector<ProbabilityEntry> read_entries(Reader& r, std::uint32_t count,
                                           std::uint16_t n_classes) {
  if (n_classes < 2) throw Error(Errc::kMalformed, "n_classes must be at least 2");
  const std::uint64_t body = std::uint64_t{count} * (8 + 4ull * n_classes);
  if (r.remaining() < body) throw Error(Errc::kTruncated, "body ends early");
  if (r.remaining() > body) throw Error(Errc::kMalformed, "trailing bytes");
  std::vector<ProbabilityEntry> entries;
  entries.reserve(count);
  std::vector<double> probs(n_classes);
  for (std::uint32_t i = 0; i < count; ++i) {
    const SampleId id = r.u64();
    if (!entries.empty() && id <= entries.back().sample_id) {
      throw Error(Errc::kMalformed, "sample ids must be strictly increasing");
    }
    double sum = 0.0;
    for (auto& p : probs) {
      p = r.f32();
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw Error(Errc::kSimplexViolation, "negative or non-finite probability");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kWireSimplexTolerance) {
      throw Error(Errc::kSimplexViolation,
                  "probabilities of sample " + std::to_string(id) +
                      " sum to " + std::to_string(sum));
    }
    if (std::abs(sum - 1.0) > kSimplexTolerance) {
      entries.push_back({id, ProbabilityVector::from_scores(probs)});
    } else {
      entries.push_back({id, ProbabilityVector(probs)});
    }
  }
  return entries;
}

std::uint32_t checked_count(std::size_t n) {
  if (n > 0xFFFFFFFFull) throw Error(Errc::kOversize, "too many items");
  return static_cast<std::uint32_t>(n);
}

}  // namespace

std::string_view kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::kContribution: return "contribution";
    case MessageKind::kBroadcast: return "broadcast";
    case MessageKind::kParameters: return "parameters";
  }
  return "unknown";
}

std::string_view direction_name(Direction d) {
  return d == Direction::kUp ? "up" : "down";
}

MessageKind kind_of(const Message& msg) {
  return static_cast<MessageKind>(msg.index() + 1);
}

std::uint32_t round_of(const Message& msg) {
  return std::visit([](const auto& m) { return m.round; }, msg);
}

ClientId publisher_of(const Message& msg) {
  if (const auto* c = std::get_if<ContributionMessage>(&msg)) return c->client_id;
  if (const auto* p = std::get_if<ParameterMessage>(&msg)) return p->client_id;
  return kServerId;
}

std::uint64_t probability_message_size(std::uint64_t n_samples,
                                       std::uint64_t n_classes) {
  return kHeaderSize + n_samples * (8 + 4 * n_classes);
}

std::uint64_t parameter_message_size(std::uint64_t n_params) {
  return kHeaderSize + 4 * n_params;
}

std::uint64_t wire_size(const Message& msg) {
  if (const auto* c = std::get_if<ContributionMessage>(&msg)) {
    return probability_message_size(c->entries.size(), c->n_classes);
  }
  if (const auto* b = std::get_if<EnsembleBroadcast>(&msg)) {
    return probability_message_size(b->entries.size(), b->n_classes);
  }
  return parameter_message_size(std::get<ParameterMessage>(msg).params.size());
}

Bytes serialize(const Message& msg) {
  const std::uint64_t size = wire_size(msg);
  if (size > kMaxMessageBytes) {
    throw Error(Errc::kOversize, std::to_string(size) + " bytes");
  }
  Writer w(static_cast<std::size_t>(size));
  if (const auto* c = std::get_if<ContributionMessage>(&msg)) {
    check_entries(c->entries, c->n_classes);
    write_header(w, MessageKind::kContribution, c->client_id, c->round,
                 checked_count(c->entries.size()), c->n_classes);
    write_entries(w, c->entries);
  } else if (const auto* b = std::get_if<EnsembleBroadcast>(&msg)) {
    check_entries(b->entries, b->n_classes);
    write_header(w, MessageKind::kBroadcast, kServerId, b->round,
                 checked_count(b->entries.size()), b->n_classes);
    write_entries(w, b->entries);
  } else {
    const auto& p = std::get<ParameterMessage>(msg);
    write_header(w, MessageKind::kParameters, p.client_id, p.round,
                 checked_count(p.params.size()), 0);
    for (double v : p.params) w.f32(v);
  }
  return w.take();
}

Message deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const Header h = read_header(r, bytes.size());
  switch (h.kind) {
    case MessageKind::kContribution: {
      ContributionMessage m;
      m.client_id = h.client_id;
      m.round = h.round;
      m.n_classes = h.n_classes;
      m.entries = read_entries(r, h.count, h.n_classes);
      return m;
    }
    case MessageKind::kBroadcast: {
      EnsembleBroadcast m;
      m.round = h.round;
      m.n_classes = h.n_classes;
      m.entries = read_entries(r, h.count, h.n_classes);
      return m;
    }
    case MessageKind::kParameters: {
      const std::uint64_t body = 4ull * h.count;
      if (r.remaining() < body) throw Error(Errc::kTruncated, "body ends early");
      if (r.remaining() > body) throw Error(Errc::kMalformed, "trailing bytes");
      ParameterMessage m;
      m.client_id = h.client_id;
      m.round = h.round;
      m.params.resize(h.count);
      for (auto& v : m.params) v = r.f32();
      return m;
    }
  }
  throw Error(Errc::kBadKind, "unknown message kind");
}

std::string contribution_topic(std::uint32_t round) {
  return "contrib/" + std::to_string(round);
}
std::string ensemble_topic(std::uint32_t round) {
  return "ensemble/" + std::to_string(round);
}
std::string parameter_topic(std::uint32_t round) {
  return "params/" + std::to_string(round);
}
std::string global_parameter_topic(std::uint32_t round) {
  return "params/" + std::to_string(round) + "/global";
}

std::string topic_for(const Message& msg) {
  const auto round = round_of(msg);
  switch (kind_of(msg)) {
    case MessageKind::kContribution: return contribution_topic(round);
    case MessageKind::kBroadcast: return ensemble_topic(round);
    case MessageKind::kParameters:
      return publisher_of(msg) == kServerId ? global_parameter_topic(round)
                                            : parameter_topic(round);
  }
  return {};
}

void ByteLedger::credit(ClientId publisher, MessageKind kind, std::uint64_t bytes) {
  const auto dir = publisher == kServerId ? Direction::kDown : Direction::kUp;
  published_[{publisher, dir, kind}] += bytes;
}

void ByteLedger::credit_delivery(ClientId subscriber, MessageKind kind,
                                 std::uint64_t bytes) {
  delivered_[{subscriber, Direction::kDown, kind}] += bytes;
}

std::uint64_t ByteLedger::total() const {
  std::uint64_t t = 0;
  for (const auto& [k, v] : published_) t += v;
  return t;
}

std::uint64_t ByteLedger::total(MessageKind kind) const {
  std::uint64_t t = 0;
  for (const auto& [k, v] : published_) {
    if (k.kind == kind) t += v;
  }
  return t;
}

std::uint64_t ByteLedger::uploaded_by(ClientId client) const {
  std::uint64_t t = 0;
  for (const auto& [k, v] : published_) {
    if (k.client == client) t += v;
  }
  return t;
}

std::uint64_t ByteLedger::delivered_to(ClientId client) const {
  std::uint64_t t = 0;
  for (const auto& [k, v] : delivered_) {
    if (k.client == client) t += v;
  }
  return t;
}

SubscriptionHandle Broker::subscribe(std::string topic, ClientId owner) {
  std::lock_guard lock(mu_);
  if (!running_) throw Error(Errc::kBrokerUnavailable, "broker is shut down");
  if (topic.empty()) throw Error(Errc::kInvalidArgument, "empty topic");
  const auto id = next_id_++;
  subscriptions_[id] = Subscription{std::move(topic), owner, {}};
  return {id};
}

void Broker::unsubscribe(SubscriptionHandle handle) {
  std::lock_guard lock(mu_);
  subscriptions_.erase(handle.id);
}

std::size_t Broker::publish(ClientId publisher, std::string_view topic,
                            const Message& msg) {
  {
    std::lock_guard lock(mu_);
    if (!running_) throw Error(Errc::kBrokerUnavailable, "broker is shut down");
  }
  return publish_serialized(publisher, topic, serialize(msg));
}

std::size_t Broker::publish_serialized(ClientId publisher, std::string_view topic,
                                       Bytes bytes) {
  if (topic.empty()) throw Error(Errc::kInvalidArgument, "empty topic");
  Reader r(bytes);
  const Header h = read_header(r, bytes.size());
  auto shared = std::make_shared<const Bytes>(std::move(bytes));
  const std::uint64_t size = shared->size();

  std::size_t deliveries = 0;
  {
    std::lock_guard lock(mu_);
    if (!running_) throw Error(Errc::kBrokerUnavailable, "broker is shut down");
    for (auto& [id, sub] : subscriptions_) {
      if (sub.topic != topic) continue;
      sub.queue.push_back({std::string(topic), shared});
      ledger_.credit_delivery(sub.owner, h.kind, size);
      ++deliveries;
    }
    ledger_.credit(publisher, h.kind, size);
    log_.push_back(MessageRecord{next_sequence_++, h.round, publisher,
                                 std::string(topic), h.kind, h.count,
                                 h.n_classes, size, deliveries});
  }
  cv_.notify_all();
  return deliveries;
}

std::optional<Delivery> Broker::poll(SubscriptionHandle handle,
                                     std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  auto ready = [&] {
    if (!running_) return true;
    auto it = subscriptions_.find(handle.id);
    return it == subscriptions_.end() || !it->second.queue.empty();
  };
  if (!cv_.wait_for(lock, timeout, ready)) return std::nullopt;
  if (!running_) throw Error(Errc::kBrokerUnavailable, "broker is shut down");
  auto it = subscriptions_.find(handle.id);
  if (it == subscriptions_.end()) {
    throw Error(Errc::kInvalidArgument, "unknown subscription");
  }
  Queued q = std::move(it->second.queue.front());
  it->second.queue.pop_front();
  lock.unlock();
  return Delivery{std::move(q.topic), deserialize(*q.bytes), q.bytes->size()};
}

void Broker::shutdown() {
  {
    std::lock_guard lock(mu_);
    running_ = false;
  }
  cv_.notify_all();
}

bool Broker::running() const {
  std::lock_guard lock(mu_);
  return running_;
}

ByteLedger Broker::ledger() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

std::vector<MessageRecord> Broker::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

}  // namespace probfed::transport
