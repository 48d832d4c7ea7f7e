#include "adanat/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace adanat {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(parent, a), b);
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double uniform_open01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  // Box-Muller, one output per pair; no cached state between calls.
  const double u1 = uniform_open01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double standard_gumbel(Rng& rng) {
  return -std::log(-std::log(uniform_open01(rng)));
}

int uniform_int(Rng& rng, int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  return static_cast<int>(uniform01(rng) * n);
}

int sample_categorical(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw std::invalid_argument("sample_categorical: weights must have a positive finite sum");
  }
  const double u = uniform01(rng) * total;
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return last_positive;
  }
  return last_positive;
}

std::vector<Rng> make_streams(std::uint64_t seed, std::size_t count) {
  std::vector<Rng> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.emplace_back(derive_seed(seed, i));
  return out;
}

}  // namespace adanat
