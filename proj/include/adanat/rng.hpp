#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace adanat {

// mt19937_64 is bit-specified by the standard; the helpers below avoid
// std::*_distribution so draws are identical across standard libraries.
using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

// Deterministic child seed for stream `index` of `parent`.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b);

// Uniform in [0, 1).
double uniform01(Rng& rng);
// Uniform in (0, 1), never hits either end.
double uniform_open01(Rng& rng);
double standard_normal(Rng& rng);
double standard_gumbel(Rng& rng);
int uniform_int(Rng& rng, int n);

// Draw an index from unnormalised non-negative weights.
int sample_categorical(const std::vector<double>& weights, Rng& rng);

std::vector<Rng> make_streams(std::uint64_t seed, std::size_t count);

}  // namespace adanat
