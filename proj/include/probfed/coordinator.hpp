#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probfed/aggregation.hpp"
#include "probfed/core.hpp"
#include "probfed/optimizers.hpp"
#include "probfed/transport.hpp"

namespace probfed::coordinator {

enum class RoundStatus { kCollecting, kEligible, kAggregated, kAbandoned };
std::string_view status_name(RoundStatus s);

// Contributions received for one round. At most one message per client is
// kept (latest wins) and the status only moves forward.
class RoundState {
 public:
  RoundState(std::uint32_t round, std::size_t min_contributions);

  // Messages from earlier rounds, or arriving after the round closed, are
  // counted as stale and dropped. Throws Errc::kFutureRound for a later round.
  void collect(transport::ContributionMessage msg);

  void mark_aggregated();
  void abandon();

  std::uint32_t round() const noexcept { return round_; }
  std::size_t min_contributions() const noexcept { return min_contributions_; }
  RoundStatus status() const noexcept { return status_; }
  bool eligible() const noexcept { return status_ == RoundStatus::kEligible; }
  std::size_t count() const noexcept { return received_.size(); }
  std::size_t stale() const noexcept { return stale_; }
  std::size_t replaced() const noexcept { return replaced_; }
  const std::map<ClientId, transport::ContributionMessage>& received() const noexcept {
    return received_;
  }
  std::vector<ClientId> contributors() const;
  std::vector<transport::ContributionMessage> contributions() const;

 private:
  std::uint32_t round_;
  std::size_t min_contributions_;
  RoundStatus status_ = RoundStatus::kCollecting;
  std::map<ClientId, transport::ContributionMessage> received_;
  std::size_t stale_ = 0;
  std::size_t replaced_ = 0;
};

enum class StrategyKind { kMean, kWeighted, kStacking, kGa, kPso, kFedavgBaseline };
std::string_view strategy_name(StrategyKind kind);
// Throws Errc::kValidationError for unknown names.
StrategyKind parse_strategy(std::string_view name);

struct StrategyChoice {
  StrategyKind kind = StrategyKind::kMean;
  std::map<ClientId, double> fixed_weights;  // kWeighted only
  aggregation::StackingConfig stacking;
  optimizers::GaConfig ga;
  optimizers::PsoConfig pso;

  friend bool operator==(const StrategyChoice&, const StrategyChoice&) = default;
};

// One row of an algorithm trace (optimizer generations, stacking loss,
// distillation steps).
struct TraceRow {
  std::string record;
  std::uint32_t round = 0;
  std::uint64_t step = 0;
  std::string subject;
  std::string key;
  double a = 0.0;
  std::optional<double> b;
};

// Server-side fusion rule. Weights and stacking models are fit on the first
// labeled alignment they see and then frozen; a fit is repeated only when
// the set of contributing clients changes.
class EnsembleStrategy {
 public:
  // Throws Errc::kInvalidSpec for kFedavgBaseline, which fuses parameters.
  explicit EnsembleStrategy(StrategyChoice choice);

  StrategyKind kind() const noexcept { return choice_.kind; }
  bool fitted_for(std::span<const ClientId> model_order) const;

  // Needs labels for stacking, GA and PSO. Appends rows to fit_trace().
  void fit(const aggregation::AlignedProbabilities& labeled, std::uint32_t round);

  // Throws Errc::kOrderMismatch if the models differ from the fitted set.
  std::vector<ProbabilityVector> fuse(const aggregation::AlignedProbabilities& a) const;

  const std::optional<WeightVector>& weights() const noexcept { return weights_; }
  const std::optional<aggregation::StackingModel>& stacking_model() const noexcept {
    return stacking_;
  }
  std::size_t fit_count() const noexcept { return fit_count_; }
  const std::vector<TraceRow>& fit_trace() const noexcept { return trace_; }

 private:
  StrategyChoice choice_;
  std::optional<std::vector<ClientId>> fitted_order_;
  std::optional<WeightVector> weights_;
  std::optional<aggregation::StackingModel> stacking_;
  std::size_t fit_count_ = 0;
  std::vector<TraceRow> trace_;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

Metrics evaluate(std::span<const ProbabilityVector> fused, std::span<const ClassIndex> labels,
                 std::size_t n_classes);

struct RoundAggregate {
  transport::EnsembleBroadcast broadcast;
  aggregation::AlignedProbabilities aligned;
  std::optional<Metrics> ensemble;           // against reference labels
  std::map<ClientId, Metrics> clients;       // same samples, per contributor
  std::size_t deliveries = 0;
  bool refit = false;
};

// Aligns the received contributions, fuses them and publishes the result on
// ensemble/<round>. `labels` (possibly empty) are the public reference
// labels used for fitting and metrics. Throws Errc::kNotEligible unless the
// state reached its contribution threshold.
RoundAggregate aggregate_round(RoundState& state, EnsembleStrategy& strategy,
                               transport::Endpoint& server,
                               const std::map<SampleId, ClassIndex>& labels);

struct GatherPolicy {
  // Deterministic mode drains what is queued and never waits.
  bool drain_only = true;
  std::chrono::milliseconds wait_budget{5000};
  // Live mode: once eligible, stop after this long without a new message.
  std::chrono::milliseconds grace{200};
  std::size_t expected = 0;  // stop early once this many clients reported
};

// Consumes contribution topics for the server. Subscriptions to earlier
// rounds stay open so late messages are seen and counted as stale.
class Coordinator {
 public:
  Coordinator(transport::Broker& broker, std::size_t min_contributions);
  ~Coordinator();
  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  // Subscribes to contrib/<round>; call before clients publish.
  void open_round(std::uint32_t round);

  // Throws Errc::kInsufficientContributions when the threshold is not met
  // within the policy's budget.
  RoundState gather(std::uint32_t round, const GatherPolicy& policy);

  std::size_t min_contributions() const noexcept { return min_contributions_; }

 private:
  transport::Broker& broker_;
  std::size_t min_contributions_;
  std::map<std::uint32_t, transport::SubscriptionHandle> subscriptions_;
};

}  // namespace probfed::coordinator
