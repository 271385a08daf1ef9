#include "probfed/random.hpp"

#include "probfed/core.hpp"

namespace probfed {

std::vector<double> sample_dirichlet(Rng& rng, std::span<const double> alpha) {
  std::vector<double> draw(alpha.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (alpha[i] <= 0.0) continue;
    std::gamma_distribution<double> gamma(alpha[i], 1.0);
    draw[i] = gamma(rng);
    sum += draw[i];
  }
  if (sum > 0.0) {
    for (double& x : draw) x /= sum;
    return draw;
  }
  return normalize_to_simplex(alpha);
}

std::vector<double> sample_flat_dirichlet(Rng& rng, std::size_t n) {
  const std::vector<double> ones(n, 1.0);
  return sample_dirichlet(rng, ones);
}

}  // namespace probfed
