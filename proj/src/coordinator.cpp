#include "probfed/coordinator.hpp"

#include <algorithm>
#include <string>

namespace probfed::coordinator {

std::string_view status_name(RoundStatus s) {
  switch (s) {
    case RoundStatus::kCollecting: return "collecting";
    case RoundStatus::kEligible: return "eligible";
    case RoundStatus::kAggregated: return "aggregated";
    case RoundStatus::kAbandoned: return "abandoned";
  }
  return "?";
}

RoundState::RoundState(std::uint32_t round, std::size_t min_contributions)
    : round_(round), min_contributions_(min_contributions) {
  if (min_contributions == 0) {
    throw Error(Errc::kInvalidArgument, "min_contributions must be positive");
  }
}

void RoundState::collect(transport::ContributionMessage msg) {
  if (msg.round > round_) {
    throw Error(Errc::kFutureRound, "contribution for round " + std::to_string(msg.round) +
                                        " during round " + std::to_string(round_));
  }
  const bool closed = status_ == RoundStatus::kAggregated || status_ == RoundStatus::kAbandoned;
  if (msg.round < round_ || closed) {
    ++stale_;
    return;
  }
  const ClientId id = msg.client_id;
  auto [it, inserted] = received_.try_emplace(id, std::move(msg));
  if (!inserted) {
    it->second = std::move(msg);
    ++replaced_;
  }
  if (received_.size() >= min_contributions_) status_ = RoundStatus::kEligible;
}

void RoundState::mark_aggregated() {
  if (status_ != RoundStatus::kEligible) {
    throw Error(Errc::kNotEligible, "round " + std::to_string(round_) + " is " +
                                        std::string(status_name(status_)));
  }
  status_ = RoundStatus::kAggregated;
}

void RoundState::abandon() {
  if (status_ != RoundStatus::kAggregated) status_ = RoundStatus::kAbandoned;
}

std::vector<ClientId> RoundState::contributors() const {
  std::vector<ClientId> out;
  for (const auto& [id, msg] : received_) out.push_back(id);
  return out;
}

std::vector<transport::ContributionMessage> RoundState::contributions() const {
  std::vector<transport::ContributionMessage> out;
  out.reserve(received_.size());
  for (const auto& [id, msg] : received_) out.push_back(msg);
  return out;
}

std::string_view strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::kMean: return "mean";
    case StrategyKind::kWeighted: return "weighted";
    case StrategyKind::kStacking: return "stacking";
    case StrategyKind::kGa: return "ga";
    case StrategyKind::kPso: return "pso";
    case StrategyKind::kFedavgBaseline: return "fedavg-baseline";
  }
  return "?";
}

StrategyKind parse_strategy(std::string_view name) {
  for (auto k : {StrategyKind::kMean, StrategyKind::kWeighted, StrategyKind::kStacking,
                 StrategyKind::kGa, StrategyKind::kPso, StrategyKind::kFedavgBaseline}) {
    if (strategy_name(k) == name) return k;
  }
  throw Error(Errc::kValidationError, "unknown strategy '" + std::string(name) + "'");
}

EnsembleStrategy::EnsembleStrategy(StrategyChoice choice) : choice_(std::move(choice)) {
  switch (choice_.kind) {
    case StrategyKind::kFedavgBaseline:
      throw Error(Errc::kInvalidSpec, "fedavg-baseline does not fuse probabilities");
    case StrategyKind::kGa: optimizers::validate(choice_.ga); break;
    case StrategyKind::kPso: optimizers::validate(choice_.pso); break;
    case StrategyKind::kWeighted:
      if (choice_.fixed_weights.empty()) {
        throw Error(Errc::kInvalidSpec, "weighted strategy without weights");
      }
      for (const auto& [id, w] : choice_.fixed_weights) {
        if (!(w >= 0.0)) throw Error(Errc::kInvalidSpec, "negative strategy weight");
      }
      break;
    default: break;
  }
}

bool EnsembleStrategy::fitted_for(std::span<const ClientId> model_order) const {
  return fitted_order_ &&
         std::equal(fitted_order_->begin(), fitted_order_->end(), model_order.begin(),
                    model_order.end());
}

void EnsembleStrategy::fit(const aggregation::AlignedProbabilities& labeled,
                           std::uint32_t round) {
  const std::size_t m = labeled.n_models();
  if (m == 0) throw Error(Errc::kEmptyAlignment, "nothing to fit");
  const std::string name(strategy_name(choice_.kind));
  weights_.reset();
  stacking_.reset();

  auto record_optimizer = [&](const optimizers::OptimizeResult& r) {
    for (const auto& p : r.trace) {
      trace_.push_back({name, round, p.step, name, "fitness", p.best, p.mean});
    }
    weights_ = r.weights;
  };

  switch (choice_.kind) {
    case StrategyKind::kMean:
      break;
    case StrategyKind::kWeighted: {
      std::vector<double> w;
      for (ClientId id : labeled.model_order) {
        auto it = choice_.fixed_weights.find(id);
        w.push_back(it == choice_.fixed_weights.end() ? 0.0 : it->second);
      }
      weights_ = WeightVector::from_scores(w);
      break;
    }
    case StrategyKind::kStacking: {
      auto fit = aggregation::train_stacking(labeled, choice_.stacking);
      for (std::size_t i = 0; i < fit.loss_trace.size(); ++i) {
        trace_.push_back({name, round, i, name, "loss", fit.loss_trace[i], std::nullopt});
      }
      stacking_ = std::move(fit.model);
      break;
    }
    case StrategyKind::kGa:
    case StrategyKind::kPso: {
      // A single remaining model needs no search.
      if (m == 1) {
        weights_ = WeightVector::uniform(1);
        break;
      }
      optimizers::FitnessContext ctx(labeled);
      if (choice_.kind == StrategyKind::kGa) {
        record_optimizer(optimizers::ga_optimize(ctx, choice_.ga));
      } else {
        record_optimizer(optimizers::pso_optimize(ctx, choice_.pso));
      }
      break;
    }
    case StrategyKind::kFedavgBaseline:
      break;
  }
  if (weights_) {
    for (std::size_t i = 0; i < m; ++i) {
      trace_.push_back({name, round, i, std::to_string(labeled.model_order[i]), "weight",
                        (*weights_)[i], std::nullopt});
    }
  }
  fitted_order_ = labeled.model_order;
  ++fit_count_;
}

std::vector<ProbabilityVector> EnsembleStrategy::fuse(
    const aggregation::AlignedProbabilities& a) const {
  if (!fitted_for(a.model_order)) {
    throw Error(Errc::kOrderMismatch, "strategy was fitted on a different set of clients");
  }
  if (stacking_) return aggregation::predict_stacking(*stacking_, a);
  if (weights_) return aggregation::weighted_fuse(a, *weights_);
  return aggregation::mean_fuse(a);
}

Metrics evaluate(std::span<const ProbabilityVector> fused, std::span<const ClassIndex> labels,
                 std::size_t n_classes) {
  const auto preds = aggregation::predictions(fused);
  return {accuracy(preds, labels),
          macro_f1(ConfusionMatrix::from_predictions(n_classes, preds, labels))};
}

RoundAggregate aggregate_round(RoundState& state, EnsembleStrategy& strategy,
                               transport::Endpoint& server,
                               const std::map<SampleId, ClassIndex>& labels) {
  if (!state.eligible()) {
    throw Error(Errc::kNotEligible, "round " + std::to_string(state.round()) + " has " +
                                        std::to_string(state.count()) + " of " +
                                        std::to_string(state.min_contributions()) +
                                        " contributions");
  }
  const auto contributions = state.contributions();
  RoundAggregate out;
  out.aligned = aggregation::align(contributions);
  if (out.aligned.n_samples() == 0) {
    throw Error(Errc::kEmptyAlignment, "contributions share no sample ids");
  }
  if (!labels.empty()) aggregation::attach_labels(out.aligned, labels);

  if (!strategy.fitted_for(out.aligned.model_order)) {
    strategy.fit(out.aligned, state.round());
    out.refit = true;
  }
  const auto fused = strategy.fuse(out.aligned);

  if (out.aligned.has_labels()) {
    const std::size_t c = out.aligned.n_classes;
    out.ensemble = evaluate(fused, out.aligned.labels, c);
    for (std::size_t m = 0; m < out.aligned.n_models(); ++m) {
      std::vector<ProbabilityVector> single;
      single.reserve(out.aligned.n_samples());
      for (const auto& row : out.aligned.probs) single.push_back(row[m]);
      out.clients[out.aligned.model_order[m]] = evaluate(single, out.aligned.labels, c);
    }
  }

  out.broadcast.round = state.round();
  out.broadcast.n_classes = static_cast<std::uint16_t>(out.aligned.n_classes);
  out.broadcast.entries.reserve(fused.size());
  for (std::size_t i = 0; i < fused.size(); ++i) {
    out.broadcast.entries.push_back({out.aligned.sample_ids[i], fused[i]});
  }
  state.mark_aggregated();
  out.deliveries =
      server.publish(transport::ensemble_topic(state.round()), transport::Message{out.broadcast});
  return out;
}

Coordinator::Coordinator(transport::Broker& broker, std::size_t min_contributions)
    : broker_(broker), min_contributions_(min_contributions) {
  if (min_contributions == 0) {
    throw Error(Errc::kInvalidArgument, "min_contributions must be positive");
  }
}

Coordinator::~Coordinator() {
  for (const auto& [round, handle] : subscriptions_) broker_.unsubscribe(handle);
}

void Coordinator::open_round(std::uint32_t round) {
  if (subscriptions_.count(round) == 0) {
    subscriptions_[round] = broker_.subscribe(transport::contribution_topic(round), kServerId);
  }
}

RoundState Coordinator::gather(std::uint32_t round, const GatherPolicy& policy) {
  using Clock = std::chrono::steady_clock;
  using std::chrono::milliseconds;
  open_round(round);
  RoundState state(round, min_contributions_);

  auto take = [&](const transport::Delivery& d) {
    if (const auto* c = std::get_if<transport::ContributionMessage>(&d.message)) {
      state.collect(*c);
    }
  };
  // Late traffic for rounds already closed.
  for (const auto& [r, handle] : subscriptions_) {
    if (r == round) continue;
    while (auto d = broker_.poll(handle, milliseconds(0))) take(*d);
  }

  const auto current = subscriptions_.at(round);
  if (policy.drain_only) {
    while (auto d = broker_.poll(current, milliseconds(0))) take(*d);
  } else {
    const auto deadline = Clock::now() + policy.wait_budget;
    auto last_arrival = Clock::now();
    while (policy.expected == 0 || state.count() < policy.expected) {
      const auto now = Clock::now();
      if (now >= deadline) break;
      if (state.eligible() && now - last_arrival >= policy.grace) break;
      auto wait = std::chrono::duration_cast<milliseconds>(deadline - now);
      if (state.eligible()) {
        wait = std::min(wait, std::chrono::duration_cast<milliseconds>(
                                  policy.grace - (now - last_arrival)));
      }
      if (auto d = broker_.poll(current, std::max(wait, milliseconds(1)))) {
        take(*d);
        last_arrival = Clock::now();
      }
    }
  }

  if (!state.eligible()) {
    state.abandon();
    throw Error(Errc::kInsufficientContributions,
                "round " + std::to_string(round) + " received " + std::to_string(state.count()) +
                    " of " + std::to_string(min_contributions_) + " required contributions");
  }
  return state;
}

}  // namespace probfed::coordinator
