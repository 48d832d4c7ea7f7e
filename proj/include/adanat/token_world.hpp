#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adanat/rng.hpp"

namespace adanat {

inline constexpr int kMask = -1;

// Fixed token -> pixel patch table. Patches are P x P x C, values in [0, 1].
class Codebook {
 public:
  Codebook(int size, int patch_size, int channels, std::vector<double> patches);

  // K - 2 distinct flat colours followed by two textured patches.
  static Codebook make_default(int size, int patch_size = 4, int channels = 3);

  int size() const { return size_; }
  int patch_size() const { return patch_size_; }
  int channels() const { return channels_; }
  // Pixel (y, x, c) of token k's patch.
  double pixel(int k, int y, int x, int c) const;
  const std::vector<double>& data() const { return patches_; }

 private:
  int size_;
  int patch_size_;
  int channels_;
  std::vector<double> patches_;
};

struct TokenSequence {
  std::vector<int> tokens;
  int height = 0;
  int width = 0;

  TokenSequence() = default;
  TokenSequence(std::vector<int> toks, int h, int w);
  static TokenSequence all_masked(int height, int width);

  int size() const { return static_cast<int>(tokens.size()); }
  int masked_count() const;
  bool has_mask() const { return masked_count() > 0; }
  // Throws std::invalid_argument if any entry is neither MASK nor in [0, K).
  void validate(int codebook_size) const;

  bool operator==(const TokenSequence&) const = default;
};

// Row-major H x W x C pixel buffer.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  std::size_t size() const { return pixels.size(); }
  bool operator==(const Image&) const = default;
};

enum class ProcessKind { kMarkov, kPattern };

// Class-conditional generative process. Markov chains run in raster order; with
// row_restart each grid row is an independent chain starting from `start`.
struct ClassProcess {
  ProcessKind kind = ProcessKind::kMarkov;
  std::vector<double> start;
  std::vector<std::vector<double>> transition;
  bool row_restart = false;
  std::vector<int> pattern;
};

struct WorldSpec {
  int n_tokens = 16;
  int grid_height = 4;
  int grid_width = 4;
  int codebook_size = 8;
  int n_classes = 4;
  std::uint64_t seed = 0;
  std::vector<ClassProcess> processes;

  void validate() const;
  // sha256 over the canonical serialisation; guards checkpoint reuse.
  std::string fingerprint() const;
  std::string to_yaml() const;
};

WorldSpec parse_world_spec(const std::string& yaml_text);
WorldSpec load_world_spec(const std::string& path);
void save_world_spec(const WorldSpec& spec, const std::string& path);

// Desk-scale default: 4x4 grid, K = 8, four heterogeneous classes.
WorldSpec default_toy_world();
// N = 4 (2x2), K = 2 Markov chain, start (0.5, 0.5), transition [[0.9,0.1],[0.2,0.8]].
WorldSpec tiny_markov_world();
WorldSpec iid_uniform_world(int n_tokens, int codebook_size, int n_classes = 1);
WorldSpec pattern_world(std::vector<int> pattern, int codebook_size);

TokenSequence sample_world(const WorldSpec& spec, int cls, Rng& rng);

Image decode_tokens(const TokenSequence& v, const Codebook& cb);

void write_ppm(const Image& image, const std::string& path);

// Index of a MASK-free sequence in the enumeration table (position 0 most significant).
std::size_t sequence_index(const std::vector<int>& tokens, int codebook_size);
std::vector<int> index_to_tokens(std::size_t index, int n_tokens, int codebook_size);

inline constexpr std::size_t kMaxEnumeration = 10'000'000;

struct ExactStatistics {
  int n_tokens = 0;
  int codebook_size = 0;
  // Per class, K^N probabilities; empty when the world is too large to enumerate.
  std::vector<std::vector<double>> table;
  // Per class, per position, per token marginal probabilities (closed form).
  std::vector<std::vector<std::vector<double>>> marginals;

  bool enumerable() const { return !table.empty(); }
};

// Enumerates when K^N <= kMaxEnumeration, otherwise returns closed-form marginals only.
// Throws CapabilityError when `require_table` is set and the world is too large.
ExactStatistics exact_statistics(const WorldSpec& spec, bool require_table = false);

// Probability of one sequence under class `cls`, by direct chain product.
double sequence_probability(const WorldSpec& spec, int cls, const std::vector<int>& tokens);

}  // namespace adanat
