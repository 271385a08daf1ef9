#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace probfed {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from a
// scenario seed plus a stream key (sample id, client id, round...).
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (key + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// One Dirichlet draw. Zero concentrations yield zero components; if every
// gamma draw underflows the result is the normalized concentration vector.
std::vector<double> sample_dirichlet(Rng& rng, std::span<const double> alpha);

// Dirichlet(1, ..., 1), i.e. uniform on the simplex.
std::vector<double> sample_flat_dirichlet(Rng& rng, std::size_t n);

}  // namespace probfed
