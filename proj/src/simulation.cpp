#include "probfed/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <set>
#include <string>
#include <thread>

#include "probfed/random.hpp"

namespace probfed::simulation {

using std::chrono::milliseconds;

Network::Network(TransportMode mode) : mode_(mode) {
  if (mode_ == TransportMode::kTcp) relay_ = std::make_unique<transport::TcpRelay>(broker_);
}

Network::~Network() {
  relay_.reset();
  broker_.shutdown();
}

std::unique_ptr<transport::Endpoint> Network::endpoint(ClientId id) {
  if (relay_) return std::make_unique<transport::TcpEndpoint>(relay_->port(), id);
  return std::make_unique<transport::InprocEndpoint>(broker_, id);
}

std::uint64_t RunReport::uploaded_bytes() const {
  std::uint64_t total = 0;
  for (const auto& [key, bytes] : ledger.published()) {
    if (key.direction == transport::Direction::kUp) total += bytes;
  }
  return total;
}

namespace {

void check_roster(std::span<Participant> fleet) {
  if (fleet.empty()) throw Error(Errc::kInvalidArgument, "no clients");
  std::set<ClientId> seen;
  for (const auto& p : fleet) {
    if (!p.client) throw Error(Errc::kInvalidArgument, "empty participant slot");
    if (p.client->id() == kServerId) {
      throw Error(Errc::kInvalidArgument, "client id collides with the server id");
    }
    if (!seen.insert(p.client->id()).second) {
      throw Error(Errc::kDuplicateClient, "client " + std::to_string(p.client->id()) +
                                              " appears twice");
    }
    if (p.client->n_classes() != fleet.front().client->n_classes()) {
      throw Error(Errc::kInconsistentC, "clients disagree on the number of classes");
    }
  }
}

std::vector<ClassIndex> labels_of(std::span<const LabeledSample> samples) {
  std::vector<ClassIndex> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

// Deterministic per-round ordering of the active participants.
std::vector<std::size_t> schedule_order(std::span<Participant> fleet, std::uint32_t round,
                                        std::uint64_t seed) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    if (fleet[i].active(round)) order.push_back(i);
  }
  Rng rng(mix_seed(seed, 0x7363686564ULL + round));  // "sched"
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// The reference samples named by a broadcast, in its order.
distillation::ReferenceSet restrict_to(const distillation::ReferenceSet& ref,
                                       std::span<const transport::ProbabilityEntry> entries) {
  distillation::ReferenceSet out;
  out.version = ref.version;
  out.samples.reserve(entries.size());
  std::size_t j = 0;
  for (const auto& e : entries) {
    while (j < ref.samples.size() && ref.samples[j].sample_id < e.sample_id) ++j;
    if (j == ref.samples.size() || ref.samples[j].sample_id != e.sample_id) {
      throw Error(Errc::kSampleMismatch,
                  "broadcast names unknown sample " + std::to_string(e.sample_id));
    }
    out.samples.push_back(ref.samples[j]);
  }
  return out;
}

void tally_bytes(RunReport& report) {
  std::map<std::uint32_t, RoundRecord*> by_round;
  for (auto& rec : report.rounds) by_round[rec.round] = &rec;
  for (const auto& m : report.messages) {
    auto it = by_round.find(m.round);
    if (it == by_round.end()) continue;
    if (m.kind == transport::MessageKind::kParameters) {
      it->second->bytes_parameters += m.bytes;
    } else {
      it->second->bytes_probability += m.bytes;
    }
    ++it->second->messages;
  }
}

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Per-round client-side state; each slot is written only by its own client.
struct Slot {
  bool contributed = false;
  std::vector<transport::ProbabilityEntry> test_probs;
  coordinator::Metrics test;
  std::optional<double> kd_before;
  std::optional<double> kd_after;
  std::vector<coordinator::TraceRow> trace;
  std::exception_ptr error;
};

}  // namespace

RunReport run_feedback_loop(std::span<Participant> fleet,
                            const coordinator::StrategyChoice& choice,
                            const distillation::ReferenceSet& ref,
                            std::span<const LabeledSample> test, const RunConfig& cfg) {
  distillation::validate(cfg.distill);
  check_roster(fleet);
  if (ref.size() == 0) throw Error(Errc::kInvalidArgument, "empty reference set");
  const std::size_t n_classes = fleet.front().client->n_classes();

  coordinator::EnsembleStrategy strategy(choice);
  Network net(cfg.transport);
  auto server = net.endpoint(kServerId);
  std::vector<std::unique_ptr<transport::Endpoint>> endpoints;
  for (auto& p : fleet) endpoints.push_back(net.endpoint(p.client->id()));
  coordinator::Coordinator coord(net.broker(), cfg.distill.min_contributions);

  std::map<SampleId, ClassIndex> ref_labels;
  for (const auto& s : ref.samples) ref_labels[s.sample_id] = s.label;
  const auto test_labels = labels_of(test);

  RunReport report;
  report.paradigm = "ensemble";
  report.strategy = std::string(coordinator::strategy_name(choice.kind));
  report.scenario = cfg.scenario;
  report.rng_seed = cfg.rng_seed;
  for (const auto& p : fleet) report.roster.push_back(p.client->id());

  std::optional<double> previous_kd;
  for (std::uint32_t round = 1; round <= cfg.distill.rounds; ++round) {
    // The reference ids are announced out of band; only the version moves.
    distillation::ReferenceSet round_ref = ref;
    round_ref.version = round;
    coord.open_round(round);

    std::vector<Slot> slots(fleet.size());
    std::map<std::size_t, transport::SubscriptionHandle> inbox;
    for (std::size_t i = 0; i < fleet.size(); ++i) {
      if (!fleet[i].active(round)) continue;
      inbox[i] = net.broker().subscribe(transport::ensemble_topic(round), fleet[i].client->id());
    }

    auto contribute = [&](std::size_t i) {
      auto& client = *fleet[i].client;
      auto& slot = slots[i];
      client.train_round(round);
      if (auto* t = dynamic_cast<fleet::TrainableClient*>(&client)) {
        const auto& loss = t->last_training_trace();
        for (std::size_t s = 0; s < loss.size(); ++s) {
          slot.trace.push_back({"train", round, s, std::to_string(client.id()), "loss", loss[s],
                                std::nullopt});
        }
      }
      slot.test_probs = client.predict_all(test);
      std::vector<ProbabilityVector> probs;
      for (const auto& e : slot.test_probs) probs.push_back(e.probs);
      slot.test = coordinator::evaluate(probs, test_labels, n_classes);
      const auto msg = client.contribution(round, round_ref);
      endpoints[i]->publish(transport::contribution_topic(round), transport::Message{msg});
      slot.contributed = true;
    };

    auto receive = [&](std::size_t i, milliseconds timeout) {
      auto& client = *fleet[i].client;
      auto& slot = slots[i];
      auto delivery = net.broker().poll(inbox.at(i), timeout);
      if (!delivery) return;
      const auto* bc = std::get_if<transport::EnsembleBroadcast>(&delivery->message);
      if (bc == nullptr) return;
      const auto view = restrict_to(round_ref, bc->entries);
      auto result = client.distill(view, bc->entries, cfg.distill);
      const std::string subject = std::to_string(client.id());
      if (!result) {
        slot.trace.push_back({"kd", round, 0, subject, "skipped", 0.0, std::nullopt});
        return;
      }
      const double n = static_cast<double>(view.size());
      const auto& loss = result->loss_trace;
      for (std::size_t s = 0; s < loss.size(); ++s) {
        slot.trace.push_back({"kd", round, s, subject, "kd_loss", loss[s], loss[s] / n});
      }
      slot.kd_before = loss.front() / n;
      slot.kd_after = loss.back() / n;
    };

    std::optional<coordinator::RoundState> state;
    std::optional<coordinator::RoundAggregate> agg;
    auto serve = [&](const coordinator::GatherPolicy& policy) {
      state.emplace(coord.gather(round, policy));
      agg.emplace(coordinator::aggregate_round(*state, strategy, *server, ref_labels));
    };

    const auto order = schedule_order(fleet, round, cfg.rng_seed);
    coordinator::GatherPolicy policy;
    policy.wait_budget = cfg.wait_budget;
    policy.grace = cfg.grace;
    policy.expected = fleet.size();  // the server cannot tell a dead client from a slow one
    if (cfg.schedule == Schedule::kDeterministic) {
      policy.drain_only = true;
      for (std::size_t i : order) contribute(i);
      try {
        serve(policy);
      } catch (...) {
        for (auto& [i, h] : inbox) net.broker().unsubscribe(h);
        throw;
      }
      for (std::size_t i : order) receive(i, milliseconds(0));
    } else {
      policy.drain_only = false;
      std::vector<std::thread> workers;
      for (std::size_t i : order) {
        workers.emplace_back([&, i] {
          try {
            contribute(i);
            receive(i, cfg.wait_budget + cfg.grace);
          } catch (...) {
            slots[i].error = std::current_exception();
          }
        });
      }
      std::exception_ptr server_error;
      try {
        serve(policy);
      } catch (...) {
        server_error = std::current_exception();
      }
      for (auto& w : workers) w.join();
      if (server_error) {
        for (auto& [i, h] : inbox) net.broker().unsubscribe(h);
        std::rethrow_exception(server_error);
      }
      for (const auto& s : slots) {
        if (s.error) std::rethrow_exception(s.error);
      }
    }
    for (auto& [i, h] : inbox) net.broker().unsubscribe(h);

    RoundRecord rec;
    rec.round = round;
    rec.strategy = report.strategy;
    rec.contributors = state->contributors();
    rec.stale = state->stale();
    rec.replaced = state->replaced();
    rec.dropped_samples = agg->aligned.dropped;
    rec.reference = agg->ensemble;

    // Out-of-band evaluation: the frozen strategy applied to the
    // contributors' test-set predictions.
    std::vector<transport::ContributionMessage> test_contributions;
    for (std::size_t i = 0; i < fleet.size(); ++i) {
      const ClientId id = fleet[i].client->id();
      if (!state->received().count(id)) continue;
      test_contributions.push_back({id, round, static_cast<std::uint16_t>(n_classes),
                                    slots[i].test_probs});
    }
    const auto test_aligned = aggregation::align(test_contributions);
    rec.ensemble = coordinator::evaluate(strategy.fuse(test_aligned), test_labels, n_classes);

    std::vector<double> kd_before, kd_after;
    for (std::size_t i = 0; i < fleet.size(); ++i) {
      const auto& slot = slots[i];
      if (!slot.contributed) continue;
      rec.clients[fleet[i].client->id()] = {slot.test, slot.kd_before, slot.kd_after};
      if (slot.kd_after) {
        kd_before.push_back(*slot.kd_before);
        kd_after.push_back(*slot.kd_after);
      }
    }
    rec.mean_kd_before = mean_of(kd_before);
    rec.mean_kd = mean_of(kd_after);
    for (std::size_t i : order) {
      report.trace.insert(report.trace.end(), slots[i].trace.begin(), slots[i].trace.end());
    }
    report.rounds.push_back(std::move(rec));

    const auto& mean_kd = report.rounds.back().mean_kd;
    if (previous_kd && mean_kd &&
        std::abs(*mean_kd - *previous_kd) < cfg.distill.convergence_tolerance) {
      report.converged = true;
      break;
    }
    if (mean_kd) previous_kd = mean_kd;
  }

  // Optimizer and stacking traces go first, ahead of the per-round rows.
  auto fit_rows = strategy.fit_trace();
  report.trace.insert(report.trace.begin(), fit_rows.begin(), fit_rows.end());
  report.messages = net.broker().log();
  report.ledger = net.broker().ledger();
  tally_bytes(report);
  return report;
}

RunReport run_fedavg_baseline(std::span<Participant> fleet, std::uint32_t rounds,
                              std::span<const LabeledSample> test, const RunConfig& cfg) {
  check_roster(fleet);
  std::vector<fleet::TrainableClient*> clients;
  for (auto& p : fleet) {
    auto* t = dynamic_cast<fleet::TrainableClient*>(p.client.get());
    if (t == nullptr) {
      throw Error(Errc::kShapeMismatch,
                  "client " + std::to_string(p.client->id()) + " has no parameters to average");
    }
    clients.push_back(t);
  }
  const auto& first = *clients.front();
  for (const auto* c : clients) {
    if (c->n_classes() != first.n_classes() || c->feature_index() != first.feature_index()) {
      throw Error(Errc::kShapeMismatch, "parameter averaging needs identical model shapes");
    }
  }
  const std::size_t n_classes = first.n_classes();
  const std::size_t dim = first.feature_index().size();
  const auto test_labels = labels_of(test);

  Network net(cfg.transport);
  auto server = net.endpoint(kServerId);
  std::vector<std::unique_ptr<transport::Endpoint>> endpoints;
  for (auto& p : fleet) endpoints.push_back(net.endpoint(p.client->id()));

  RunReport report;
  report.paradigm = "fedavg";
  report.strategy =
      std::string(coordinator::strategy_name(coordinator::StrategyKind::kFedavgBaseline));
  report.scenario = cfg.scenario;
  report.rng_seed = cfg.rng_seed;
  for (const auto& p : fleet) report.roster.push_back(p.client->id());

  auto test_metrics = [&](const fleet::Client& c) {
    std::vector<ProbabilityVector> probs;
    probs.reserve(test.size());
    for (const auto& s : test) probs.push_back(c.predict(s));
    return coordinator::evaluate(probs, test_labels, n_classes);
  };

  for (std::uint32_t round = 1; round <= rounds; ++round) {
    const auto uplink = net.broker().subscribe(transport::parameter_topic(round), kServerId);
    std::map<std::size_t, transport::SubscriptionHandle> inbox;
    for (std::size_t i = 0; i < fleet.size(); ++i) {
      if (!fleet[i].active(round)) continue;
      inbox[i] = net.broker().subscribe(transport::global_parameter_topic(round),
                                        fleet[i].client->id());
    }

    RoundRecord rec;
    rec.round = round;
    rec.strategy = report.strategy;
    const auto order = schedule_order(fleet, round, cfg.rng_seed);
    for (std::size_t i : order) {
      auto& c = *clients[i];
      c.train_round(round);
      rec.clients[c.id()] = {test_metrics(c), std::nullopt, std::nullopt};
      transport::ParameterMessage msg{c.id(), round, c.model().flatten()};
      endpoints[i]->publish(transport::parameter_topic(round), transport::Message{msg});
    }

    std::map<ClientId, std::vector<double>> received;
    while (auto d = net.broker().poll(uplink, milliseconds(0))) {
      if (const auto* p = std::get_if<transport::ParameterMessage>(&d->message)) {
        if (p->round != round) {
          ++rec.stale;
          continue;
        }
        if (!received.insert_or_assign(p->client_id, p->params).second) ++rec.replaced;
      }
    }
    net.broker().unsubscribe(uplink);
    if (received.size() < cfg.distill.min_contributions) {
      for (auto& [i, h] : inbox) net.broker().unsubscribe(h);
      throw Error(Errc::kInsufficientContributions,
                  "round " + std::to_string(round) + " received " +
                      std::to_string(received.size()) + " parameter vectors");
    }
    std::vector<learners::SoftmaxLinearModel> models;
    for (const auto& [id, params] : received) {
      rec.contributors.push_back(id);
      models.push_back(learners::SoftmaxLinearModel::from_flat(n_classes, dim, params));
    }
    const auto global = learners::fedavg_aggregate(models);
    server->publish(
        transport::global_parameter_topic(round),
        transport::Message{transport::ParameterMessage{kServerId, round, global.flatten()}});

    for (std::size_t i : order) {
      if (auto d = net.broker().poll(inbox.at(i), milliseconds(0))) {
        if (const auto* p = std::get_if<transport::ParameterMessage>(&d->message)) {
          clients[i]->set_model(learners::SoftmaxLinearModel::from_flat(n_classes, dim, p->params));
        }
      }
    }
    for (auto& [i, h] : inbox) net.broker().unsubscribe(h);

    // Every client now holds the same global model.
    rec.ensemble = test_metrics(*clients[order.front()]);
    report.rounds.push_back(std::move(rec));
  }

  report.messages = net.broker().log();
  report.ledger = net.broker().ledger();
  tally_bytes(report);
  return report;
}

std::vector<ComparisonRow> compare_paradigms(const RunReport& a, const RunReport& b) {
  if (a.scenario != b.scenario || a.rng_seed != b.rng_seed) {
    throw Error(Errc::kScenarioMismatch, "reports come from '" + a.scenario + "' and '" +
                                             b.scenario + "' or different seeds");
  }
  auto row = [&](const RunReport& r) {
    ComparisonRow out;
    out.label = r.paradigm + "/" + r.strategy;
    if (!r.rounds.empty()) {
      out.accuracy = r.rounds.back().ensemble.accuracy;
      out.macro_f1 = r.rounds.back().ensemble.macro_f1;
    }
    out.total_bytes = r.total_bytes();
    out.upload_bytes = r.uploaded_bytes();
    return out;
  };
  std::vector<ComparisonRow> rows{row(a), row(b)};
  const double base = static_cast<double>(rows.back().total_bytes);
  for (auto& r : rows) {
    r.byte_ratio = base > 0.0 ? static_cast<double>(r.total_bytes) / base
                              : (r.total_bytes == 0 ? 1.0 : 0.0);
  }
  return rows;
}

}  // namespace probfed::simulation
