#pragma once

#include <cstdint>
#include <vector>

#include "probfed/aggregation.hpp"
#include "probfed/core.hpp"
#include "probfed/random.hpp"

namespace probfed::optimizers {

struct GaConfig {
  std::size_t population_size = 40;
  std::size_t generations = 100;
  std::size_t elite_count = 5;
  double mutation_prob = 0.3;
  double mutation_sigma = 0.1;
  std::size_t diversity_period = 10;
  std::size_t diversity_count = 5;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const GaConfig&, const GaConfig&) = default;
};

struct PsoConfig {
  std::size_t swarm_size = 20;
  std::size_t iterations = 100;
  double inertia = 0.7;
  double cognitive = 1.5;
  double social = 1.5;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const PsoConfig&, const PsoConfig&) = default;
};

void validate(const GaConfig& cfg);
void validate(const PsoConfig& cfg);

// Labeled, aligned validation probabilities; fitness of a weight vector is
// the accuracy of argmax over the weighted fusion.
class FitnessContext {
 public:
  // Throws Errc::kEmptyContext without samples, models or labels.
  explicit FitnessContext(aggregation::AlignedProbabilities data);

  double fitness(const WeightVector& w) const;
  std::size_t n_models() const noexcept { return data_.n_models(); }
  const aggregation::AlignedProbabilities& data() const noexcept { return data_; }

 private:
  aggregation::AlignedProbabilities data_;
};

struct TracePoint {
  std::size_t step = 0;
  double best = 0.0;  // best-ever fitness so far
  double mean = 0.0;  // mean fitness of the current population / swarm
};

struct OptimizeResult {
  WeightVector weights;
  double fitness = 0.0;
  std::vector<TracePoint> trace;
  std::size_t evaluations = 0;
  std::size_t uniform_fallbacks = 0;  // repairs that hit the all-zero case
};

// Clip negatives to zero and renormalize; an all-zero vector becomes
// uniform (reported through `fell_back`).
WeightVector repair_to_simplex(std::vector<double> v, bool* fell_back = nullptr);

// a[0..cut) ++ b[cut..M), renormalized. Throws Errc::kBadCut unless
// 1 <= cut < M, Errc::kLengthMismatch on unequal lengths.
WeightVector ga_crossover(const WeightVector& a, const WeightVector& b, std::size_t cut);

OptimizeResult ga_optimize(const FitnessContext& ctx, const GaConfig& cfg);

// v' = ω·v + c1·r1·(p − x) + c2·r2·(g − x)
std::vector<double> pso_velocity(std::span<const double> velocity,
                                 std::span<const double> position,
                                 std::span<const double> personal_best,
                                 std::span<const double> global_best,
                                 const PsoConfig& cfg, double r1, double r2);

OptimizeResult pso_optimize(const FitnessContext& ctx, const PsoConfig& cfg);

}  // namespace probfed::optimizers
