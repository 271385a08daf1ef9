#include <chrono>
#include <numeric>

#include "doctest.h"
#include "probfed/fleet.hpp"
#include "probfed/simulation.hpp"
#include "test_support.hpp"

using namespace probfed;
using namespace probfed::simulation;
using probfed::testing::pv;

namespace {

constexpr std::size_t kClasses = 5;

learners::Dataset dataset(std::size_t dim, std::uint64_t seed, std::size_t n_val = 100) {
  learners::DatasetSpec spec;
  spec.n_classes = kClasses;
  spec.feature_dim = dim;
  spec.class_proportions = WeightVector::uniform(kClasses);
  spec.n_train = 200;
  spec.n_val = n_val;
  spec.n_test = 100;
  spec.cluster_separation = 4.0;
  spec.rng_seed = seed;
  return learners::generate_dataset(spec);
}

std::vector<std::size_t> all_columns(std::size_t dim) {
  std::vector<std::size_t> cols(dim);
  std::iota(cols.begin(), cols.end(), 0);
  return cols;
}

// Trainable clients splitting the training data round-robin.
std::vector<Participant> trainable_fleet(const learners::Dataset& ds, std::size_t n_clients,
                                         std::vector<std::size_t> cols) {
  std::vector<std::vector<LabeledSample>> parts(n_clients);
  for (std::size_t i = 0; i < ds.train.size(); ++i) parts[i % n_clients].push_back(ds.train[i]);
  std::vector<Participant> fleet;
  for (std::size_t k = 0; k < n_clients; ++k) {
    fleet.push_back({std::make_unique<fleet::TrainableClient>(
                         static_cast<ClientId>(k + 1), "c" + std::to_string(k + 1), kClasses, cols,
                         parts[k], fleet::TrainingConfig{50, 0, 0.1, 1e-3}),
                     0});
  }
  return fleet;
}

std::unique_ptr<fleet::Client> identity_client(ClientId id) {
  learners::SyntheticClassifier model;
  for (std::size_t c = 0; c < kClasses; ++c) {
    model.confusion_rows.push_back(ProbabilityVector::one_hot(kClasses, c));
  }
  return std::make_unique<fleet::SyntheticClient>(id, "s" + std::to_string(id), model);
}

distillation::ReferenceSet reference(const learners::Dataset& ds, std::size_t n) {
  return distillation::make_reference_set({ds.val.begin(), ds.val.begin() + n});
}

RunConfig config(std::size_t rounds, std::size_t min_contributions) {
  RunConfig cfg;
  cfg.distill.rounds = rounds;
  cfg.distill.min_contributions = min_contributions;
  cfg.rng_seed = 17;
  cfg.scenario = "unit";
  return cfg;
}

}  // namespace

TEST_CASE("clients project features and report contributions") {
  const auto ds = dataset(6, 1);
  const std::vector<std::size_t> cols{1, 3};
  fleet::TrainableClient client(4, "c4", kClasses, cols, {ds.train.begin(), ds.train.begin() + 20},
                                fleet::TrainingConfig{});
  CHECK(client.local_data().front().features.size() == 2);
  CHECK(client.local_data().front().features[1] == ds.train.front().features[3]);
  CHECK(client.model().parameter_count() == kClasses * 2 + kClasses);

  const auto ref = reference(ds, 10);
  const auto before = client.contribution(1, ref);
  CHECK(before.entries.size() == 10);
  CHECK(before.entries.front().probs == ProbabilityVector::uniform(kClasses));
  client.train_round(1);
  CHECK(client.last_training_trace().size() == 201);
  client.train_round(2);  // round_epochs = 0
  CHECK(client.last_training_trace().empty());

  CHECK_THROWS_AS(client.set_model(learners::SoftmaxLinearModel(kClasses, 3)), Error);
  CHECK_THROWS_AS(fleet::TrainableClient(1, "x", kClasses, {}, {}, {}), Error);
  const std::vector<std::size_t> too_wide{9};
  CHECK_THROWS_AS(fleet::TrainableClient(1, "x", kClasses, too_wide, ds.train, {}), Error);

  auto synthetic = identity_client(2);
  CHECK_FALSE(synthetic->trainable());
  const auto targets = synthetic->contribution(1, ref).entries;
  CHECK_FALSE(synthetic->distill(ref, targets, {}));
  CHECK(client.distill(ref, targets, {}).has_value());
}

TEST_CASE("two clients over three rounds give three round records") {
  const auto ds = dataset(5, 2);
  auto fleet = trainable_fleet(ds, 2, all_columns(5));
  const auto ref = reference(ds, 100);
  const auto report = run_feedback_loop(fleet, {}, ref, ds.test, config(3, 2));
  REQUIRE(report.rounds.size() == 3);
  for (const auto& rec : report.rounds) {
    CHECK(rec.contributors == std::vector<ClientId>{1, 2});
    CHECK(rec.bytes_probability == 2 * 2820 + 2820);
    CHECK(rec.messages == 3);
    CHECK(rec.mean_kd.has_value());
    CHECK(*rec.mean_kd <= *rec.mean_kd_before);
    CHECK(rec.reference.has_value());
  }
  CHECK(report.paradigm == "ensemble");
  CHECK(report.roster == std::vector<ClientId>{1, 2});

  // Every contribution is one 100-sample, C=5 message of 2820 bytes.
  for (const auto& m : report.messages) {
    CHECK(m.bytes == transport::probability_message_size(100, kClasses));
    CHECK(m.bytes == 2820);
  }
  CHECK(report.uploaded_bytes() == 3 * 2 * 2820);
  CHECK(report.total_bytes() == 3 * 3 * 2820);
}

TEST_CASE("a dropped client leaves the remaining rounds running") {
  const auto ds = dataset(5, 3);
  auto fleet = trainable_fleet(ds, 3, all_columns(5));
  fleet[2].drop_at_round = 2;
  const auto report = run_feedback_loop(fleet, {}, reference(ds, 50), ds.test, config(3, 1));
  REQUIRE(report.rounds.size() == 3);
  CHECK(report.rounds[0].contributors.size() == 3);
  CHECK(report.rounds[1].contributors == std::vector<ClientId>{1, 2});
  CHECK(report.rounds[2].contributors == std::vector<ClientId>{1, 2});
}

TEST_CASE("too few clients stop the run") {
  const auto ds = dataset(5, 4);
  auto fleet = trainable_fleet(ds, 1, all_columns(5));
  auto cfg = config(3, 2);
  cfg.wait_budget = std::chrono::milliseconds(0);
  try {
    run_feedback_loop(fleet, {}, reference(ds, 20), ds.test, cfg);
    FAIL("expected InsufficientContributions");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kInsufficientContributions);
  }
  cfg.schedule = Schedule::kLive;
  auto fleet2 = trainable_fleet(ds, 1, all_columns(5));
  CHECK_THROWS_AS(run_feedback_loop(fleet2, {}, reference(ds, 20), ds.test, cfg), Error);
}

TEST_CASE("fleet rosters are checked") {
  const auto ds = dataset(5, 5);
  std::vector<Participant> dup;
  dup.push_back({identity_client(1), 0});
  dup.push_back({identity_client(1), 0});
  try {
    run_feedback_loop(dup, {}, reference(ds, 10), ds.test, config(1, 1));
    FAIL("expected DuplicateClient");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kDuplicateClient);
  }
  std::vector<Participant> empty;
  CHECK_THROWS_AS(run_feedback_loop(empty, {}, reference(ds, 10), ds.test, config(1, 1)), Error);
}

TEST_CASE("TCP transport and live scheduling reproduce the in-process result") {
  const auto ds = dataset(5, 6);
  const auto ref = reference(ds, 40);
  auto run = [&](TransportMode mode, Schedule schedule) {
    auto fleet = trainable_fleet(ds, 2, all_columns(5));
    auto cfg = config(2, 2);
    cfg.transport = mode;
    cfg.schedule = schedule;
    return run_feedback_loop(fleet, {}, ref, ds.test, cfg);
  };
  const auto inproc = run(TransportMode::kInproc, Schedule::kDeterministic);
  const auto tcp = run(TransportMode::kTcp, Schedule::kDeterministic);
  const auto live = run(TransportMode::kInproc, Schedule::kLive);
  for (const auto* other : {&tcp, &live}) {
    REQUIRE(other->rounds.size() == inproc.rounds.size());
    for (std::size_t r = 0; r < inproc.rounds.size(); ++r) {
      CHECK(other->rounds[r].ensemble.accuracy == inproc.rounds[r].ensemble.accuracy);
      CHECK(*other->rounds[r].mean_kd == *inproc.rounds[r].mean_kd);
    }
    CHECK(other->total_bytes() == inproc.total_bytes());
  }
}

TEST_CASE("parameter averaging moves 4020-byte messages") {
  // C=5 and D=199 give P = 5*199 + 5 = 1000 parameters.
  const auto ds = dataset(199, 7);
  auto fleet = trainable_fleet(ds, 2, all_columns(199));
  const auto report = run_fedavg_baseline(fleet, 3, ds.test, config(3, 2));
  REQUIRE(report.rounds.size() == 3);
  for (const auto& m : report.messages) CHECK(m.bytes == 4020);
  for (ClientId id : {1u, 2u}) {
    CHECK(report.ledger.uploaded_by(id) == 3 * 4020);
    CHECK(report.ledger.delivered_to(id) == 3 * 4020);
  }
  CHECK(report.uploaded_bytes() == 24120);
  CHECK(report.rounds[0].bytes_parameters == 3 * 4020);

  // After averaging both clients hold the same model.
  const auto& a = dynamic_cast<fleet::TrainableClient&>(*fleet[0].client).model();
  const auto& b = dynamic_cast<fleet::TrainableClient&>(*fleet[1].client).model();
  CHECK(a == b);

  auto idle = trainable_fleet(ds, 2, all_columns(199));
  const auto none = run_fedavg_baseline(idle, 0, ds.test, config(3, 2));
  CHECK(none.rounds.empty());
  CHECK(none.total_bytes() == 0);
}

TEST_CASE("parameter averaging needs matching trainable clients") {
  const auto ds = dataset(5, 8);
  std::vector<Participant> mixed = trainable_fleet(ds, 1, all_columns(5));
  mixed.push_back({identity_client(9), 0});
  try {
    run_fedavg_baseline(mixed, 1, ds.test, config(1, 1));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kShapeMismatch);
  }
  auto uneven = trainable_fleet(ds, 1, {0, 1});
  auto other = trainable_fleet(ds, 1, {2, 3});
  uneven.push_back({std::move(other.front().client), 0});
  CHECK_THROWS_AS(run_fedavg_baseline(uneven, 1, ds.test, config(1, 1)), Error);
}

TEST_CASE("compare_paradigms") {
  RunReport a;
  a.paradigm = "ensemble";
  a.strategy = "mean";
  a.scenario = "s";
  a.ledger.credit(1, transport::MessageKind::kContribution, 2820);
  CHECK(compare_paradigms(a, a)[0].byte_ratio == 1.0);

  // Per-round upload of a probability contribution against a parameter vector.
  RunReport b = a;
  b.paradigm = "fedavg";
  b.ledger = {};
  b.ledger.credit(1, transport::MessageKind::kParameters, 4020);
  const auto rows = compare_paradigms(a, b);
  CHECK(rows[0].byte_ratio == doctest::Approx(2820.0 / 4020.0));
  CHECK(rows[1].byte_ratio == 1.0);
  CHECK(rows[0].upload_bytes == 2820);

  b.ledger = {};
  b.ledger.credit(1, transport::MessageKind::kParameters,
                  transport::parameter_message_size(10000));
  CHECK(compare_paradigms(a, b)[0].byte_ratio == doctest::Approx(0.07).epsilon(0.01));

  b.rng_seed = 1;
  try {
    compare_paradigms(a, b);
    FAIL("expected ScenarioMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kScenarioMismatch);
  }
}
