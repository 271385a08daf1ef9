#include "probfed/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace probfed::optimizers {

void validate(const GaConfig& cfg) {
  if (cfg.population_size < 2) throw Error(Errc::kInvalidArgument, "population_size < 2");
  if (cfg.elite_count >= cfg.population_size) {
    throw Error(Errc::kInvalidArgument, "elite_count must be below population_size");
  }
  if (!(cfg.mutation_prob >= 0.0 && cfg.mutation_prob <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "mutation_prob outside [0, 1]");
  }
  if (!(cfg.mutation_sigma > 0.0))
    throw Error(Errc::kInvalidArgument, "mutation_sigma must be positive");
  if (cfg.diversity_count > cfg.population_size - cfg.elite_count) {
    throw Error(Errc::kInvalidArgument, "diversity_count would replace elites");
  }
}

void validate(const PsoConfig& cfg) {
  if (cfg.swarm_size < 2) throw Error(Errc::kInvalidArgument, "swarm_size < 2");
  if (!(cfg.inertia >= 0.0 && cfg.cognitive >= 0.0 && cfg.social >= 0.0)) {
    throw Error(Errc::kInvalidArgument, "PSO coefficients must be non-negative");
  }
}

FitnessContext::FitnessContext(aggregation::AlignedProbabilities data)
    : data_(std::move(data)) {
  if (data_.n_models() == 0 || data_.n_samples() == 0) {
    throw Error(Errc::kEmptyContext, "fitness context has no models or samples");
  }
  if (!data_.has_labels()) throw Error(Errc::kEmptyContext, "fitness context has no labels");
}

double FitnessContext::fitness(const WeightVector& w) const {
  const auto fused = aggregation::weighted_fuse(data_, w);
  return accuracy(aggregation::predictions(fused), data_.labels);
}

WeightVector repair_to_simplex(std::vector<double> v, bool* fell_back) {
  double sum = 0.0;
  for (double& x : v) {
    if (!(x > 0.0)) x = 0.0;  // also clears NaN
    sum += x;
  }
  if (fell_back != nullptr) *fell_back = sum == 0.0;
  if (sum == 0.0) return WeightVector::uniform(v.size());
  for (double& x : v) x /= sum;
  return WeightVector(std::move(v));
}

WeightVector ga_crossover(const WeightVector& a, const WeightVector& b, std::size_t cut) {
  if (a.size() != b.size()) throw Error(Errc::kLengthMismatch, "parents differ in length");
  if (cut < 1 || cut >= a.size()) {
    throw Error(Errc::kBadCut, "cut " + std::to_string(cut) + " outside [1, " +
                                   std::to_string(a.size()) + ")");
  }
  std::vector<double> child(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(cut));
  child.insert(child.end(), b.begin() + static_cast<std::ptrdiff_t>(cut), b.end());
  // Re-dividing an already-normalized child would only add rounding noise.
  double sum = std::accumulate(child.begin(), child.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-12) {
    if (sum == 0.0) return WeightVector::uniform(child.size());
    for (double& x : child) x /= sum;
  }
  return WeightVector(std::move(child));
}

namespace {

struct Individual {
  WeightVector weights;
  double fitness = 0.0;
  std::uint64_t birth = 0;  // creation order, for earliest-found tie-breaks
};

bool fitter(const Individual& a, const Individual& b) {
  if (a.fitness != b.fitness) return a.fitness > b.fitness;
  return a.birth < b.birth;
}

double mean_fitness(const std::vector<Individual>& pop) {
  double s = 0.0;
  for (const auto& ind : pop) s += ind.fitness;
  return s / static_cast<double>(pop.size());
}

void require_models(const FitnessContext& ctx) {
  if (ctx.n_models() < 2) {
    throw Error(Errc::kInvalidArgument, "weight search needs at least two models");
  }
}

}  // namespace

OptimizeResult ga_optimize(const FitnessContext& ctx, const GaConfig& cfg) {
  validate(cfg);
  require_models(ctx);
  const std::size_t m = ctx.n_models();
  Rng rng(mix_seed(cfg.rng_seed, 0x6761));  // "ga"
  OptimizeResult result;
  std::uint64_t births = 0;

  auto evaluate = [&](WeightVector w) {
    Individual ind{std::move(w), 0.0, births++};
    ind.fitness = ctx.fitness(ind.weights);
    ++result.evaluations;
    return ind;
  };
  auto fresh = [&] {
    bool fell_back = false;
    auto w = repair_to_simplex(sample_flat_dirichlet(rng, m), &fell_back);
    result.uniform_fallbacks += fell_back;
    return evaluate(std::move(w));
  };

  std::vector<Individual> pop;
  pop.reserve(cfg.population_size);
  for (std::size_t i = 0; i < cfg.population_size; ++i) pop.push_back(fresh());

  Individual best = *std::min_element(pop.begin(), pop.end(), fitter);
  result.trace.push_back({0, best.fitness, mean_fitness(pop)});

  std::uniform_int_distribution<std::size_t> pick(0, cfg.population_size - 1);
  std::uniform_int_distribution<std::size_t> cut_at(1, m - 1);
  std::uniform_int_distribution<std::size_t> coordinate(0, m - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.mutation_sigma);

  for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
    std::sort(pop.begin(), pop.end(), fitter);
    if (cfg.diversity_period > 0 && gen % cfg.diversity_period == 0) {
      for (std::size_t k = 0; k < cfg.diversity_count; ++k) {
        pop[pop.size() - 1 - k] = fresh();
      }
      std::sort(pop.begin(), pop.end(), fitter);
    }

    std::vector<Individual> next(pop.begin(),
                                 pop.begin() + static_cast<std::ptrdiff_t>(cfg.elite_count));
    while (next.size() < cfg.population_size) {
      const auto& a = pop[pick(rng)].weights;
      const auto& b = pop[pick(rng)].weights;
      WeightVector child = ga_crossover(a, b, cut_at(rng));
      if (unit(rng) < cfg.mutation_prob) {
        std::vector<double> raw(child.begin(), child.end());
        raw[coordinate(rng)] += noise(rng);
        bool fell_back = false;
        child = repair_to_simplex(std::move(raw), &fell_back);
        result.uniform_fallbacks += fell_back;
      }
      next.push_back(evaluate(std::move(child)));
    }
    pop = std::move(next);

    for (const auto& ind : pop) {
      if (ind.fitness > best.fitness) best = ind;
    }
    result.trace.push_back({gen, best.fitness, mean_fitness(pop)});
  }

  result.weights = best.weights;
  result.fitness = best.fitness;
  return result;
}

std::vector<double> pso_velocity(std::span<const double> velocity,
                                 std::span<const double> position,
                                 std::span<const double> personal_best,
                                 std::span<const double> global_best,
                                 const PsoConfig& cfg, double r1, double r2) {
  const std::size_t n = velocity.size();
  if (position.size() != n || personal_best.size() != n || global_best.size() != n) {
    throw Error(Errc::kLengthMismatch, "PSO vectors differ in length");
  }
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = cfg.inertia * velocity[j] +
             cfg.cognitive * r1 * (personal_best[j] - position[j]) +
             cfg.social * r2 * (global_best[j] - position[j]);
  }
  return out;
}

OptimizeResult pso_optimize(const FitnessContext& ctx, const PsoConfig& cfg) {
  validate(cfg);
  require_models(ctx);
  const std::size_t m = ctx.n_models();
  Rng rng(mix_seed(cfg.rng_seed, 0x70736f));  // "pso"
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  OptimizeResult result;

  struct Particle {
    WeightVector position;
    std::vector<double> velocity;
    WeightVector best;
    double best_fitness = 0.0;
    double fitness = 0.0;
  };

  std::vector<Particle> swarm;
  swarm.reserve(cfg.swarm_size);
  for (std::size_t i = 0; i < cfg.swarm_size; ++i) {
    bool fell_back = false;
    auto x = repair_to_simplex(sample_flat_dirichlet(rng, m), &fell_back);
    result.uniform_fallbacks += fell_back;
    const double f = ctx.fitness(x);
    ++result.evaluations;
    swarm.push_back({x, std::vector<double>(m, 0.0), x, f, f});
  }
  auto mean = [&] {
    double s = 0.0;
    for (const auto& p : swarm) s += p.fitness;
    return s / static_cast<double>(swarm.size());
  };

  std::size_t leader = 0;
  for (std::size_t i = 1; i < swarm.size(); ++i) {
    if (swarm[i].best_fitness > swarm[leader].best_fitness) leader = i;
  }
  WeightVector global = swarm[leader].best;
  double global_fitness = swarm[leader].best_fitness;
  result.trace.push_back({0, global_fitness, mean()});

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    for (auto& p : swarm) {
      const double r1 = unit(rng);
      const double r2 = unit(rng);
      p.velocity = pso_velocity(p.velocity, p.position.values(), p.best.values(),
                                global.values(), cfg, r1, r2);
      std::vector<double> moved(m);
      for (std::size_t j = 0; j < m; ++j) moved[j] = p.position[j] + p.velocity[j];
      bool fell_back = false;
      p.position = repair_to_simplex(std::move(moved), &fell_back);
      result.uniform_fallbacks += fell_back;
      p.fitness = ctx.fitness(p.position);
      ++result.evaluations;
      if (p.fitness > p.best_fitness) {
        p.best = p.position;
        p.best_fitness = p.fitness;
      }
      if (p.fitness > global_fitness) {
        global = p.position;
        global_fitness = p.fitness;
      }
    }
    result.trace.push_back({it, global_fitness, mean()});
  }

  result.weights = global;
  result.fitness = global_fitness;
  return result;
}

}  // namespace probfed::optimizers
