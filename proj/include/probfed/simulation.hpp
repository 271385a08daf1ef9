#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probfed/coordinator.hpp"
#include "probfed/distillation.hpp"
#include "probfed/fleet.hpp"
#include "probfed/tcp.hpp"
#include "probfed/transport.hpp"

namespace probfed::simulation {

enum class TransportMode { kInproc, kTcp };
enum class Schedule { kDeterministic, kLive };

// The broker plus, in TCP mode, a loopback relay that participants publish
// through.
class Network {
 public:
  explicit Network(TransportMode mode);
  ~Network();
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  transport::Broker& broker() noexcept { return broker_; }
  TransportMode mode() const noexcept { return mode_; }
  std::unique_ptr<transport::Endpoint> endpoint(ClientId id);

 private:
  TransportMode mode_;
  transport::Broker broker_;
  std::unique_ptr<transport::TcpRelay> relay_;
};

struct Participant {
  std::unique_ptr<fleet::Client> client;
  std::uint32_t drop_at_round = 0;  // 0 = never; otherwise silent from this round on

  bool active(std::uint32_t round) const noexcept {
    return drop_at_round == 0 || round < drop_at_round;
  }
};

struct RunConfig {
  distillation::DistillationConfig distill;
  TransportMode transport = TransportMode::kInproc;
  Schedule schedule = Schedule::kDeterministic;
  std::chrono::milliseconds wait_budget{5000};
  std::chrono::milliseconds grace{200};
  std::uint64_t rng_seed = 0;
  std::string scenario;  // identifies the scenario for comparisons
};

struct ClientRound {
  coordinator::Metrics test;  // at contribution time
  std::optional<double> kd_before;  // per reference sample
  std::optional<double> kd_after;
};

struct RoundRecord {
  std::uint32_t round = 0;
  std::string strategy;
  std::vector<ClientId> contributors;
  std::size_t stale = 0;
  std::size_t replaced = 0;
  std::size_t dropped_samples = 0;
  coordinator::Metrics ensemble;  // test split
  std::optional<coordinator::Metrics> reference;  // labeled reference set
  std::map<ClientId, ClientRound> clients;
  std::optional<double> mean_kd_before;
  std::optional<double> mean_kd;  // after distillation, trainable clients only
  std::uint64_t bytes_probability = 0;
  std::uint64_t bytes_parameters = 0;
  std::size_t messages = 0;
};

struct RunReport {
  std::string paradigm;  // "ensemble" or "fedavg"
  std::string strategy;
  std::string scenario;
  std::uint64_t rng_seed = 0;
  std::vector<ClientId> roster;
  std::vector<RoundRecord> rounds;
  bool converged = false;
  std::vector<coordinator::TraceRow> trace;
  std::vector<transport::MessageRecord> messages;
  transport::ByteLedger ledger;

  std::uint64_t total_bytes() const { return ledger.total(); }
  std::uint64_t uploaded_bytes() const;
};

// Probability-level feedback loop: clients train, publish reference-set
// probabilities, the server fuses them and broadcasts per-sample targets,
// and reachable trainable clients distill toward them. Stops after
// cfg.distill.rounds or once the mean KD changes by less than the
// convergence tolerance. Test-set metrics are computed out of band from each
// contributor's predictions at contribution time.
RunReport run_feedback_loop(std::span<Participant> fleet,
                            const coordinator::StrategyChoice& strategy,
                            const distillation::ReferenceSet& ref,
                            std::span<const LabeledSample> test, const RunConfig& cfg);

// Parameter-exchange comparator. Every client must be a TrainableClient with
// the same classes and feature columns (Errc::kShapeMismatch otherwise).
RunReport run_fedavg_baseline(std::span<Participant> fleet, std::uint32_t rounds,
                              std::span<const LabeledSample> test, const RunConfig& cfg);

struct ComparisonRow {
  std::string label;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::uint64_t total_bytes = 0;
  std::uint64_t upload_bytes = 0;
  double byte_ratio = 0.0;  // total_bytes relative to the last row
};

// Final-round figures of both runs; the ratio is relative to `b`. Throws
// Errc::kScenarioMismatch unless both come from the same scenario and seed.
std::vector<ComparisonRow> compare_paradigms(const RunReport& a, const RunReport& b);

}  // namespace probfed::simulation
