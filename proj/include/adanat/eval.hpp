#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adanat/smallnet.hpp"
#include "adanat/token_world.hpp"

namespace adanat {

inline constexpr int kToyFeatureDim = 32;
inline constexpr std::uint64_t kEmbeddingSeed = 0x70F1D5EEDULL;
inline constexpr double kCovJitter = 1e-6;

// Frozen map image -> tanh(W x + b) with W, b drawn once from a fixed seed.
class FeatureEmbedding {
 public:
  FeatureEmbedding(int input_dim, int output_dim = kToyFeatureDim, std::uint64_t seed = kEmbeddingSeed);

  int input_dim() const { return static_cast<int>(weights_.cols()); }
  int output_dim() const { return static_cast<int>(weights_.rows()); }
  std::uint64_t seed() const { return seed_; }

  Vector embed(const Image& image) const;
  // output_dim x n
  Matrix embed_batch(const std::vector<Image>& images) const;

 private:
  Matrix weights_;
  Vector bias_;
  std::uint64_t seed_;
};

// Embedding with the default seed and D = 32 for this image's pixel count (cached per size).
const FeatureEmbedding& default_embedding(int input_dim);
Vector feature_embed(const Image& image);
Matrix feature_embed_batch(const std::vector<Image>& images);

struct GaussianStats {
  Vector mean;
  Matrix cov;
  long count = 0;
  std::uint64_t embedding_seed = kEmbeddingSeed;
};

// Sample mean and unbiased covariance of feature columns (D x n), plus jitter * I.
GaussianStats fit_stats_features(const Matrix& features);
GaussianStats fit_stats(const std::vector<Image>& images);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the trace of the square root taken
// from the eigenvalues of the symmetric S_a^(1/2) S_b S_a^(1/2).
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct Divergence {
  double tv = 0.0;
  double kl = 0.0;  // KL(exact || empirical), empirical add-one smoothed
};

// Compares MASK-free samples of class `cls` against the exact enumeration table.
Divergence exact_divergence(const std::vector<TokenSequence>& samples, const WorldSpec& spec, int cls);

// Mean Euclidean feature distance over unordered pairs.
double diversity_from_features(const Matrix& features);
double diversity_metric(const std::vector<Image>& images);

// JSON stats file with a sha256 over the payload; load() verifies it.
void save_stats(const GaussianStats& stats, const std::string& path);
GaussianStats load_stats(const std::string& path);

}  // namespace adanat
