#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "probfed/distillation.hpp"

using namespace probfed;
using namespace probfed::distillation;
using probfed::testing::pv;
using probfed::testing::oracle_kl;
using probfed::testing::random_kd_instance;

namespace {

std::vector<ProbabilityVector> local_predictions(const learners::SoftmaxLinearModel& m,
                                                 const ReferenceSet& ref) {
  std::vector<ProbabilityVector> out;
  for (const auto& s : ref.samples) out.push_back(learners::predict_proba(m, s.features));
  return out;
}

}  // namespace

TEST_CASE("kl_divergence examples") {
  CHECK(kl_divergence(pv({0.3, 0.7}), pv({0.3, 0.7})) == 0.0);
  CHECK(kl_divergence(pv({1, 0}), pv({0.5, 0.5})) == doctest::Approx(std::log(2.0)));
  const double direct = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
  CHECK(kl_divergence(pv({0.5, 0.5}), pv({0.25, 0.75})) == doctest::Approx(direct));
  CHECK(direct == doctest::Approx(0.1438).epsilon(1e-3));
  CHECK(std::isfinite(kl_divergence(pv({0.5, 0.5}), pv({1.0, 0.0}))));
  CHECK_THROWS_AS(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0, 0}),
                  Error);
}

TEST_CASE("kl_divergence matches direct summation on 1000 random pairs") {
  Rng rng(1234);
  std::uniform_int_distribution<std::size_t> c_dist(2, 10);
  for (int i = 0; i < 1000; ++i) {
    const auto c = c_dist(rng);
    const auto p = testing::random_simplex(rng, c);
    const auto q = testing::random_simplex(rng, c);
    const double kl = kl_divergence(p, q);
    CHECK(std::abs(kl - oracle_kl(p, q)) <= 1e-12);
    CHECK(kl >= 0.0);
  }
}

TEST_CASE("kd_loss sums per-sample divergences") {
  Rng rng(8);
  std::vector<ProbabilityVector> ens, local;
  for (int i = 0; i < 20; ++i) {
    ens.push_back(testing::random_simplex(rng, 4));
    local.push_back(testing::random_simplex(rng, 4));
  }
  CHECK(kd_loss(ens, ens) == 0.0);
  CHECK(kd_loss(std::span(ens).first(1), std::span(local).first(1)) ==
        kl_divergence(ens[0], local[0]));
  const double whole = kd_loss(ens, local);
  const double halves = kd_loss(std::span(ens).first(7), std::span(local).first(7)) +
                        kd_loss(std::span(ens).subspan(7), std::span(local).subspan(7));
  CHECK(whole == doctest::Approx(halves).epsilon(1e-12));
  try {
    kd_loss(ens, std::span(local).first(3));
    FAIL("expected SampleMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kSampleMismatch);
  }
}

TEST_CASE("KD gradient matches central differences on 100 random instances") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_kd_instance(rng);
    const auto analytic = kd_objective(inst.model, inst.ref, inst.targets);
    CHECK(analytic.loss ==
          doctest::Approx(kd_loss(inst.targets, local_predictions(inst.model, inst.ref))));
    CHECK(testing::kd_gradient_error(inst) <= 1e-4);
  }
}

TEST_CASE("a small KD step never increases the loss") {
  Rng rng(2718);
  DistillationConfig cfg;
  cfg.kd_learning_rate = 1e-4;
  cfg.kd_steps = 1;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto inst = random_kd_instance(rng);
    const auto r = client_distill_update(inst.model, inst.ref, inst.entries, cfg);
    REQUIRE(r.loss_trace.size() == 2);
    CHECK(r.loss_trace[1] <= r.loss_trace[0]);
  }
}

TEST_CASE("client_distill_update") {
  Rng rng(5);
  const auto inst = random_kd_instance(rng);
  DistillationConfig cfg;

  // Targets equal to the model's own predictions form a stationary point.
  std::vector<transport::ProbabilityEntry> own;
  const auto preds = local_predictions(inst.model, inst.ref);
  for (std::size_t i = 0; i < preds.size(); ++i)
    own.push_back({inst.ref.samples[i].sample_id, preds[i]});
  const auto still = client_distill_update(inst.model, inst.ref, own, cfg);
  CHECK(still.model == inst.model);
  CHECK(still.loss_trace.front() == 0.0);

  cfg.kd_steps = 0;
  const auto idle = client_distill_update(inst.model, inst.ref, inst.entries, cfg);
  CHECK(idle.model == inst.model);
  CHECK(idle.loss_trace.size() == 1);

  cfg = DistillationConfig{};
  const auto moved = client_distill_update(inst.model, inst.ref, inst.entries, cfg);
  CHECK(moved.loss_trace.size() == cfg.kd_steps + 1);
  for (std::size_t i = 1; i < moved.loss_trace.size(); ++i) {
    CHECK(moved.loss_trace[i] < moved.loss_trace[i - 1]);
  }
  const auto again = client_distill_update(inst.model, inst.ref, inst.entries, cfg);
  CHECK(again.model == moved.model);

  auto short_targets = inst.entries;
  short_targets.pop_back();
  if (!short_targets.empty()) {
    CHECK_THROWS_AS(client_distill_update(inst.model, inst.ref, short_targets, cfg), Error);
  }
  auto shifted = inst.entries;
  shifted.back().sample_id += 1000;
  CHECK_THROWS_AS(client_distill_update(inst.model, inst.ref, shifted, cfg), Error);

  cfg.kd_learning_rate = 1e300;
  cfg.kd_steps = 50;
  try {
    client_distill_update(inst.model, inst.ref, inst.entries, cfg);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kDivergence);
  }
}

TEST_CASE("reference sets") {
  auto ref = make_reference_set({{5, {1, 2, 3}, 0}, {2, {4, 5, 6}, 1}}, 7);
  CHECK(ref.ids() == std::vector<SampleId>{2, 5});
  CHECK(ref.version == 7);
  const std::vector<std::size_t> cols{2, 0};
  const auto proj = project(ref, cols);
  CHECK(proj.samples[0].features == std::vector<double>{6, 4});
  CHECK(proj.samples[0].label == 1);
  CHECK_THROWS_AS(make_reference_set({{1, {}, 0}, {1, {}, 0}}), Error);
  const std::vector<std::size_t> out_of_range{3};
  CHECK_THROWS_AS(project(ref, out_of_range), Error);
}

TEST_CASE("distillation config validation") {
  DistillationConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.kd_learning_rate = 0.0;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = DistillationConfig{};
  cfg.ce_mix = 1.5;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = DistillationConfig{};
  cfg.min_contributions = 0;
  CHECK_THROWS_AS(validate(cfg), Error);
}
