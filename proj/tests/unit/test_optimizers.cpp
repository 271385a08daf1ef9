#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "probfed/optimizers.hpp"

using namespace probfed;
using namespace probfed::optimizers;
using namespace probfed::testing;

namespace {

constexpr std::size_t kClasses = 5;

aggregation::AlignedProbabilities random_context(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<transport::ContributionMessage> msgs;
  for (ClientId k = 1; k <= 3; ++k) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(sample_flat_dirichlet(rng, kClasses));
    msgs.push_back(contribution(k, 1, rows));
  }
  auto a = aggregation::align(msgs);
  std::uniform_int_distribution<ClassIndex> label(0, kClasses - 1);
  for (std::size_t i = 0; i < n; ++i) a.labels.push_back(label(rng));
  return a;
}

GaConfig ga_seeded(std::uint64_t seed) {
  GaConfig cfg;
  cfg.rng_seed = seed;
  return cfg;
}

PsoConfig pso_seeded(std::uint64_t seed) {
  PsoConfig cfg;
  cfg.rng_seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("fitness matches the direct weighted-vote oracle") {
  const auto data = random_context(3, 120);
  const FitnessContext ctx(data);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto w = sample_flat_dirichlet(rng, 3);
    CHECK(ctx.fitness(WeightVector(w)) == oracle_fitness(data, w));
  }
  CHECK_THROWS_AS(FitnessContext(aggregation::AlignedProbabilities{}), Error);
  auto unlabeled = data;
  unlabeled.labels.clear();
  try {
    FitnessContext bad(unlabeled);
    FAIL("expected EmptyContext");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::kEmptyContext);
  }
}

TEST_CASE("ga_crossover") {
  const WeightVector a(std::vector<double>{0.2, 0.3, 0.5});
  const WeightVector b(std::vector<double>{0.5, 0.4, 0.1});
  const auto child = ga_crossover(a, b, 1);
  const auto expected = normalize_to_simplex(std::vector<double>{0.2, 0.4, 0.1});
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(child[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  CHECK(child[0] == doctest::Approx(0.2857).epsilon(1e-4));
  CHECK(child[1] == doctest::Approx(0.5714).epsilon(1e-4));
  CHECK(child[2] == doctest::Approx(0.1429).epsilon(1e-3));

  const auto same = ga_crossover(a, a, 2);
  for (std::size_t i = 0; i < 3; ++i) CHECK(same[i] == doctest::Approx(a[i]).epsilon(1e-15));

  const auto last = ga_crossover(a, b, 2);
  const auto expected_last = normalize_to_simplex(std::vector<double>{0.2, 0.3, 0.1});
  for (std::size_t i = 0; i < 3; ++i) CHECK(last[i] == doctest::Approx(expected_last[i]));

  for (std::size_t cut : {0, 3}) {
    try {
      ga_crossover(a, b, cut);
      FAIL("expected BadCut");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::kBadCut);
    }
  }
  CHECK_THROWS_AS(ga_crossover(a, WeightVector::uniform(2), 1), Error);
}

TEST_CASE("repair_to_simplex") {
  bool fell_back = false;
  const auto w = repair_to_simplex({-0.5, 1.0, 3.0}, &fell_back);
  CHECK_FALSE(fell_back);
  CHECK(w[0] == 0.0);
  CHECK(w[2] == 0.75);
  const auto u = repair_to_simplex({-1.0, -2.0}, &fell_back);
  CHECK(fell_back);
  CHECK(u == WeightVector::uniform(2));
}

TEST_CASE("pso_velocity") {
  const std::vector<double> v{0.1, -0.2, 0.3};
  const std::vector<double> x{0.2, 0.3, 0.5};
  const std::vector<double> p{0.6, 0.2, 0.2};
  const std::vector<double> g{0.1, 0.1, 0.8};
  const PsoConfig cfg;
  const auto damped = pso_velocity(v, x, p, g, cfg, 0.0, 0.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(damped[i] == 0.7 * v[i]);

  const std::vector<double> zero(3, 0.0);
  const auto still = pso_velocity(zero, g, g, g, cfg, 0.0, 0.0);
  CHECK(still == zero);
  const auto still_random = pso_velocity(zero, g, g, g, cfg, 0.3, 0.9);
  CHECK(still_random == zero);

  const auto full = pso_velocity(v, x, p, g, cfg, 0.5, 0.25);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(full[i] == doctest::Approx(0.7 * v[i] + 1.5 * 0.5 * (p[i] - x[i]) +
                                     1.5 * 0.25 * (g[i] - x[i])));
  }
}

TEST_CASE("GA and PSO find the informative member") {
  const auto data = testing::perfect_vs_random(2024, 200);
  const FitnessContext ctx(data);
  const double perfect_accuracy = oracle_fitness(data, {1.0, 0.0, 0.0});
  const double grid = grid_optimum(data, 20);
  REQUIRE(perfect_accuracy == 1.0);

  const auto ga = ga_optimize(ctx, ga_seeded(11));
  CHECK(ga.weights[0] >= 0.9);
  CHECK(ga.fitness >= perfect_accuracy - 0.01);
  CHECK(ga.fitness >= grid - 0.02);
  CHECK(non_decreasing(ga.trace));
  CHECK(ga.trace.size() == 101);
  CHECK(ga.fitness == oracle_fitness(data, {ga.weights.begin(), ga.weights.end()}));

  const auto pso = pso_optimize(ctx, pso_seeded(11));
  CHECK(pso.weights[0] >= 0.9);
  CHECK(pso.fitness >= grid - 0.02);
  CHECK(non_decreasing(pso.trace));
  CHECK(pso.trace.size() == 101);
}

TEST_CASE("optimizers stay near the grid optimum on random contexts") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = random_context(100 + seed, 150);
    const FitnessContext ctx(data);
    const double grid = grid_optimum(data, 10);
    const auto ga = ga_optimize(ctx, ga_seeded(seed));
    const auto pso = pso_optimize(ctx, pso_seeded(seed));
    CHECK(ga.fitness >= grid - 0.02);
    CHECK(pso.fitness >= grid - 0.02);
    CHECK(non_decreasing(ga.trace));
    CHECK(non_decreasing(pso.trace));
    CHECK(validate_simplex(ga.weights.values()));
    CHECK(validate_simplex(pso.weights.values()));
  }
}

TEST_CASE("identical members make every weighting equally fit") {
  const auto base = random_context(9, 100);
  auto same = base;
  for (auto& row : same.probs) row = {row[0], row[0], row[0]};
  const FitnessContext ctx(same);
  const double individual = oracle_fitness(same, {1.0, 0.0, 0.0});
  CHECK(ga_optimize(ctx, ga_seeded(1)).fitness == individual);
  CHECK(pso_optimize(ctx, pso_seeded(1)).fitness == individual);
}

TEST_CASE("optimizer runs are deterministic per seed") {
  const FitnessContext ctx(random_context(21, 100));
  const auto a = ga_optimize(ctx, ga_seeded(5));
  const auto b = ga_optimize(ctx, ga_seeded(5));
  CHECK(a.weights == b.weights);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].best == b.trace[i].best);
    CHECK(a.trace[i].mean == b.trace[i].mean);
  }
  const auto p = pso_optimize(ctx, pso_seeded(5));
  const auto q = pso_optimize(ctx, pso_seeded(5));
  CHECK(p.weights == q.weights);
  CHECK(p.fitness == q.fitness);
}

TEST_CASE("zero generations return the best initial individual") {
  const FitnessContext ctx(random_context(33, 80));
  auto cfg = ga_seeded(8);
  cfg.generations = 0;
  const auto r = ga_optimize(ctx, cfg);
  CHECK(r.trace.size() == 1);
  CHECK(r.evaluations == cfg.population_size);
  CHECK(r.fitness == r.trace.front().best);
  CHECK(r.fitness == ctx.fitness(r.weights));
}

TEST_CASE("optimizer configuration is validated") {
  GaConfig ga;
  ga.elite_count = ga.population_size;
  CHECK_THROWS_AS(validate(ga), Error);
  ga = GaConfig{};
  ga.mutation_prob = 1.5;
  CHECK_THROWS_AS(validate(ga), Error);
  PsoConfig pso;
  pso.swarm_size = 1;
  CHECK_THROWS_AS(validate(pso), Error);
  pso = PsoConfig{};
  pso.social = -1.0;
  CHECK_THROWS_AS(validate(pso), Error);

  const auto single = select_models(random_context(1, 20), std::vector<ClientId>{1});
  const FitnessContext one(single);
  CHECK_THROWS_AS(ga_optimize(one, GaConfig{}), Error);
  CHECK_THROWS_AS(pso_optimize(one, PsoConfig{}), Error);
}
