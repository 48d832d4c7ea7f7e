#include "adanat/token_world.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adanat/error.hpp"
#include "adanat/hash.hpp"

namespace adanat {

namespace {

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

void check_distribution(const std::vector<double>& p, std::size_t k, const std::string& what) {
  if (p.size() != k) throw ConfigError(what + ": expected " + std::to_string(k) + " entries");
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(what + ": entries must be finite and >= 0");
    total += x;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw ConfigError(what + ": entries must sum to 1");
}

std::pair<int, int> default_grid(int n) {
  int h = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
  while (h > 1 && n % h != 0) --h;
  return {h, n / h};
}

// Whether position i starts a fresh chain.
bool chain_restarts(const WorldSpec& spec, const ClassProcess& p, int i) {
  return i == 0 || (p.row_restart && i % spec.grid_width == 0);
}

}  // namespace

Codebook::Codebook(int size, int patch_size, int channels, std::vector<double> patches)
    : size_(size), patch_size_(patch_size), channels_(channels), patches_(std::move(patches)) {
  if (size_ < 2) throw std::invalid_argument("Codebook: size must be >= 2");
  if (patch_size_ < 1 || channels_ < 1) throw std::invalid_argument("Codebook: bad patch shape");
  const auto expected = static_cast<std::size_t>(size_) * patch_size_ * patch_size_ * channels_;
  if (patches_.size() != expected) throw std::invalid_argument("Codebook: patch table has wrong length");
  for (double x : patches_) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("Codebook: pixel values must lie in [0, 1]");
  }
}

Codebook Codebook::make_default(int size, int patch_size, int channels) {
  const int p = patch_size;
  std::vector<double> data(static_cast<std::size_t>(size) * p * p * channels);
  auto at = [&](int k, int y, int x, int c) -> double& {
    return data[((static_cast<std::size_t>(k) * p + y) * p + x) * channels + c];
  };
  const int n_flat = std::max(0, size - 2);
  for (int k = 0; k < size; ++k) {
    for (int y = 0; y < p; ++y) {
      for (int x = 0; x < p; ++x) {
        double rgb[3];
        if (k < n_flat) {
          hsv_to_rgb(static_cast<double>(k) / n_flat, 0.8, 0.9, rgb);
        } else if (k == n_flat) {
          // checkerboard
          const double v = ((x + y) % 2 == 0) ? 0.95 : 0.05;
          rgb[0] = rgb[1] = rgb[2] = v;
        } else {
          // horizontal stripes with a blue tint
          const double v = (y % 2 == 0) ? 0.8 : 0.2;
          rgb[0] = 0.5 * v;
          rgb[1] = 0.5 * v;
          rgb[2] = v;
        }
        for (int c = 0; c < channels; ++c) at(k, y, x, c) = rgb[c % 3];
      }
    }
  }
  return Codebook(size, patch_size, channels, std::move(data));
}

double Codebook::pixel(int k, int y, int x, int c) const {
  return patches_[((static_cast<std::size_t>(k) * patch_size_ + y) * patch_size_ + x) * channels_ + c];
}

TokenSequence::TokenSequence(std::vector<int> toks, int h, int w) : tokens(std::move(toks)), height(h), width(w) {
  if (tokens.empty()) throw std::invalid_argument("TokenSequence: N must be positive");
  if (height * width != static_cast<int>(tokens.size())) {
    throw std::invalid_argument("TokenSequence: grid layout does not match length");
  }
}

TokenSequence TokenSequence::all_masked(int height, int width) {
  return TokenSequence(std::vector<int>(static_cast<std::size_t>(height) * width, kMask), height, width);
}

int TokenSequence::masked_count() const {
  return static_cast<int>(std::count(tokens.begin(), tokens.end(), kMask));
}

void TokenSequence::validate(int codebook_size) const {
  if (tokens.empty() || height * width != size()) {
    throw std::invalid_argument("TokenSequence: malformed grid layout");
  }
  for (int t : tokens) {
    if (t != kMask && (t < 0 || t >= codebook_size)) {
      throw std::invalid_argument("TokenSequence: token out of codebook range");
    }
  }
}

void WorldSpec::validate() const {
  if (n_tokens <= 0) throw ConfigError("world: n_tokens must be positive");
  if (grid_height * grid_width != n_tokens) throw ConfigError("world: grid_height * grid_width must equal n_tokens");
  if (codebook_size < 2) throw ConfigError("world: codebook_size must be >= 2");
  if (n_classes < 1) throw ConfigError("world: n_classes must be >= 1");
  if (static_cast<int>(processes.size()) != n_classes) {
    throw ConfigError("world: expected one process per class");
  }
  const auto k = static_cast<std::size_t>(codebook_size);
  for (std::size_t c = 0; c < processes.size(); ++c) {
    const auto& p = processes[c];
    const std::string where = "world: process " + std::to_string(c);
    if (p.kind == ProcessKind::kPattern) {
      if (static_cast<int>(p.pattern.size()) != n_tokens) throw ConfigError(where + ": pattern length must equal n_tokens");
      for (int t : p.pattern) {
        if (t < 0 || t >= codebook_size) throw ConfigError(where + ": pattern token out of range");
      }
    } else {
      check_distribution(p.start, k, where + " start");
      if (p.transition.size() != k) throw ConfigError(where + ": transition must be K x K");
      for (std::size_t r = 0; r < k; ++r) check_distribution(p.transition[r], k, where + " transition row");
    }
  }
}

std::string WorldSpec::to_yaml() const {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "n_tokens" << YAML::Value << n_tokens;
  out << YAML::Key << "grid_height" << YAML::Value << grid_height;
  out << YAML::Key << "codebook_size" << YAML::Value << codebook_size;
  out << YAML::Key << "n_classes" << YAML::Value << n_classes;
  out << YAML::Key << "seed" << YAML::Value << seed;
  out << YAML::Key << "process" << YAML::Value << YAML::BeginSeq;
  for (const auto& p : processes) {
    out << YAML::BeginMap;
    if (p.kind == ProcessKind::kPattern) {
      out << YAML::Key << "kind" << YAML::Value << "pattern";
      out << YAML::Key << "pattern" << YAML::Value << YAML::Flow << p.pattern;
    } else {
      out << YAML::Key << "kind" << YAML::Value << "markov";
      out << YAML::Key << "row_restart" << YAML::Value << p.row_restart;
      out << YAML::Key << "start" << YAML::Value << YAML::Flow << p.start;
      out << YAML::Key << "transition" << YAML::Value << YAML::BeginSeq;
      for (const auto& row : p.transition) out << YAML::Flow << row;
      out << YAML::EndSeq;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

std::string WorldSpec::fingerprint() const { return sha256_hex(to_yaml()); }

WorldSpec parse_world_spec(const std::string& yaml_text) {
  WorldSpec spec;
  try {
    const YAML::Node root = YAML::Load(yaml_text);
    spec.n_tokens = root["n_tokens"].as<int>();
    spec.codebook_size = root["codebook_size"].as<int>();
    spec.n_classes = root["n_classes"].as<int>();
    spec.seed = root["seed"] ? root["seed"].as<std::uint64_t>() : 0;
    if (spec.n_tokens <= 0) throw ConfigError("world: n_tokens must be positive");
    if (root["grid_height"]) {
      spec.grid_height = root["grid_height"].as<int>();
      if (spec.grid_height <= 0 || spec.n_tokens % spec.grid_height != 0) {
        throw ConfigError("world: grid_height must divide n_tokens");
      }
      spec.grid_width = spec.n_tokens / spec.grid_height;
    } else {
      std::tie(spec.grid_height, spec.grid_width) = default_grid(spec.n_tokens);
    }
    const YAML::Node procs = root["process"];
    if (!procs || !procs.IsSequence()) throw ConfigError("world: 'process' must be a list with one entry per class");
    for (const auto& node : procs) {
      ClassProcess p;
      const auto kind = node["kind"] ? node["kind"].as<std::string>() : std::string("markov");
      if (kind == "pattern") {
        p.kind = ProcessKind::kPattern;
        p.pattern = node["pattern"].as<std::vector<int>>();
      } else if (kind == "markov") {
        p.kind = ProcessKind::kMarkov;
        p.start = node["start"].as<std::vector<double>>();
        p.transition = node["transition"].as<std::vector<std::vector<double>>>();
        p.row_restart = node["row_restart"] ? node["row_restart"].as<bool>() : false;
      } else {
        throw ConfigError("world: unknown process kind '" + kind + "'");
      }
      spec.processes.push_back(std::move(p));
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("world: malformed spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

WorldSpec load_world_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("world spec not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_world_spec(ss.str());
}

void save_world_spec(const WorldSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << spec.to_yaml();
}

WorldSpec default_toy_world() {
  WorldSpec spec;
  spec.n_tokens = 16;
  spec.grid_height = 4;
  spec.grid_width = 4;
  spec.codebook_size = 8;
  spec.n_classes = 4;
  spec.seed = 2024;
  const int k = spec.codebook_size;
  auto uniform_over = [k](std::initializer_list<int> support) {
    std::vector<double> p(k, 0.0);
    for (int s : support) p[s] = 1.0 / static_cast<double>(support.size());
    return p;
  };

  // 0: sticky runs of flat colours, each row an independent chain.
  ClassProcess sticky;
  sticky.row_restart = true;
  sticky.start = uniform_over({0, 1, 2, 3, 4, 5});
  sticky.transition.assign(k, std::vector<double>(k, 0.0));
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < 6; ++b) sticky.transition[a][b] = (a == b) ? 0.85 : 0.15 / (a < 6 ? 5.0 : 6.0);
    if (a >= 6) {
      double s = 0.0;
      for (int b = 0; b < 6; ++b) s += sticky.transition[a][b];
      for (int b = 0; b < 6; ++b) sticky.transition[a][b] /= s;
    }
  }

  // 1: colour cycle 0 -> 1 -> ... -> 5 -> 0 across the whole raster.
  ClassProcess cycle;
  cycle.start = uniform_over({0, 1, 2, 3, 4, 5});
  cycle.transition.assign(k, std::vector<double>(k, 0.0));
  for (int a = 0; a < k; ++a) {
    if (a < 6) {
      cycle.transition[a][(a + 1) % 6] = 0.8;
      cycle.transition[a][a] = 0.1;
      cycle.transition[a][(a + 3) % 6] = 0.1;
    } else {
      cycle.transition[a] = uniform_over({0, 1, 2, 3, 4, 5});
    }
  }

  // 2: alternating textures with occasional colour 0.
  ClassProcess texture;
  texture.row_restart = true;
  texture.start = uniform_over({6, 7});
  texture.transition.assign(k, std::vector<double>(k, 0.0));
  for (int a = 0; a < k; ++a) {
    if (a == 6) {
      texture.transition[a][7] = 0.9;
      texture.transition[a][0] = 0.1;
    } else if (a == 7) {
      texture.transition[a][6] = 0.9;
      texture.transition[a][0] = 0.1;
    } else {
      texture.transition[a] = uniform_over({6, 7});
    }
  }

  // 3: i.i.d. over a four-token subset.
  ClassProcess iid;
  iid.start = uniform_over({1, 3, 5, 7});
  iid.transition.assign(k, iid.start);

  spec.processes = {sticky, cycle, texture, iid};
  spec.validate();
  return spec;
}

WorldSpec tiny_markov_world() {
  WorldSpec spec;
  spec.n_tokens = 4;
  spec.grid_height = 2;
  spec.grid_width = 2;
  spec.codebook_size = 2;
  spec.n_classes = 1;
  spec.seed = 7;
  ClassProcess p;
  p.start = {0.5, 0.5};
  p.transition = {{0.9, 0.1}, {0.2, 0.8}};
  spec.processes = {p};
  spec.validate();
  return spec;
}

WorldSpec iid_uniform_world(int n_tokens, int codebook_size, int n_classes) {
  WorldSpec spec;
  spec.n_tokens = n_tokens;
  std::tie(spec.grid_height, spec.grid_width) = default_grid(n_tokens);
  spec.codebook_size = codebook_size;
  spec.n_classes = n_classes;
  ClassProcess p;
  p.start.assign(codebook_size, 1.0 / codebook_size);
  p.transition.assign(codebook_size, p.start);
  spec.processes.assign(n_classes, p);
  spec.validate();
  return spec;
}

WorldSpec pattern_world(std::vector<int> pattern, int codebook_size) {
  WorldSpec spec;
  spec.n_tokens = static_cast<int>(pattern.size());
  std::tie(spec.grid_height, spec.grid_width) = default_grid(spec.n_tokens);
  spec.codebook_size = codebook_size;
  spec.n_classes = 1;
  ClassProcess p;
  p.kind = ProcessKind::kPattern;
  p.pattern = std::move(pattern);
  spec.processes = {p};
  spec.validate();
  return spec;
}

TokenSequence sample_world(const WorldSpec& spec, int cls, Rng& rng) {
  if (cls < 0 || cls >= spec.n_classes) throw std::out_of_range("sample_world: class out of range");
  const auto& p = spec.processes[cls];
  std::vector<int> tokens(spec.n_tokens);
  if (p.kind == ProcessKind::kPattern) {
    tokens = p.pattern;
  } else {
    for (int i = 0; i < spec.n_tokens; ++i) {
      const auto& dist = chain_restarts(spec, p, i) ? p.start : p.transition[tokens[i - 1]];
      tokens[i] = sample_categorical(dist, rng);
    }
  }
  return TokenSequence(std::move(tokens), spec.grid_height, spec.grid_width);
}

Image decode_tokens(const TokenSequence& v, const Codebook& cb) {
  v.validate(cb.size());
  if (v.has_mask()) throw std::invalid_argument("decode_tokens: sequence contains MASK");
  const int p = cb.patch_size();
  Image img;
  img.height = v.height * p;
  img.width = v.width * p;
  img.channels = cb.channels();
  img.pixels.resize(static_cast<std::size_t>(img.height) * img.width * img.channels);
  for (int gy = 0; gy < v.height; ++gy) {
    for (int gx = 0; gx < v.width; ++gx) {
      const int k = v.tokens[gy * v.width + gx];
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          for (int c = 0; c < img.channels; ++c) {
            img.pixels[((static_cast<std::size_t>(gy * p + y) * img.width) + gx * p + x) * img.channels + c] =
                cb.pixel(k, y, x, c);
          }
        }
      }
    }
  }
  return img;
}

void write_ppm(const Image& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int src = std::min(c, image.channels - 1);
        const double v = image.pixels[(static_cast<std::size_t>(y) * image.width + x) * image.channels + src];
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
      }
    }
  }
}

std::size_t sequence_index(const std::vector<int>& tokens, int codebook_size) {
  std::size_t idx = 0;
  for (int t : tokens) {
    if (t < 0 || t >= codebook_size) throw std::invalid_argument("sequence_index: token out of range");
    idx = idx * codebook_size + static_cast<std::size_t>(t);
  }
  return idx;
}

std::vector<int> index_to_tokens(std::size_t index, int n_tokens, int codebook_size) {
  std::vector<int> tokens(n_tokens);
  for (int i = n_tokens - 1; i >= 0; --i) {
    tokens[i] = static_cast<int>(index % codebook_size);
    index /= codebook_size;
  }
  return tokens;
}

double sequence_probability(const WorldSpec& spec, int cls, const std::vector<int>& tokens) {
  const auto& p = spec.processes.at(cls);
  if (static_cast<int>(tokens.size()) != spec.n_tokens) throw std::invalid_argument("sequence_probability: wrong length");
  if (p.kind == ProcessKind::kPattern) return tokens == p.pattern ? 1.0 : 0.0;
  double prob = 1.0;
  for (int i = 0; i < spec.n_tokens; ++i) {
    prob *= chain_restarts(spec, p, i) ? p.start[tokens[i]] : p.transition[tokens[i - 1]][tokens[i]];
  }
  return prob;
}

ExactStatistics exact_statistics(const WorldSpec& spec, bool require_table) {
  spec.validate();
  ExactStatistics stats;
  stats.n_tokens = spec.n_tokens;
  stats.codebook_size = spec.codebook_size;
  const int k = spec.codebook_size;
  const int n = spec.n_tokens;

  double outcomes = std::pow(static_cast<double>(k), n);
  const bool enumerable = outcomes <= static_cast<double>(kMaxEnumeration);
  if (!enumerable && require_table) {
    throw CapabilityError("exact_statistics: K^N = " + std::to_string(outcomes) +
                          " exceeds the enumeration limit of " + std::to_string(kMaxEnumeration));
  }

  for (int c = 0; c < spec.n_classes; ++c) {
    const auto& p = spec.processes[c];
    std::vector<std::vector<double>> marg(n, std::vector<double>(k, 0.0));
    if (p.kind == ProcessKind::kPattern) {
      for (int i = 0; i < n; ++i) marg[i][p.pattern[i]] = 1.0;
    } else {
      for (int i = 0; i < n; ++i) {
        if (chain_restarts(spec, p, i)) {
          marg[i] = p.start;
        } else {
          for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) marg[i][b] += marg[i - 1][a] * p.transition[a][b];
          }
        }
      }
    }
    stats.marginals.push_back(std::move(marg));

    if (!enumerable) continue;
    const auto total = static_cast<std::size_t>(outcomes);
    std::vector<double> table(total, 0.0);
    if (p.kind == ProcessKind::kPattern) {
      table[sequence_index(p.pattern, k)] = 1.0;
    } else {
      // Depth-first over prefixes; prob[i] is the probability of the first i + 1 tokens.
      std::vector<int> tokens(n, 0);
      std::vector<double> prob(n, 0.0);
      int depth = 0;
      tokens[0] = -1;
      while (depth >= 0) {
        if (++tokens[depth] >= k) {
          --depth;
          continue;
        }
        const double prev = depth == 0 ? 1.0 : prob[depth - 1];
        const double step = chain_restarts(spec, p, depth) ? p.start[tokens[depth]]
                                                           : p.transition[tokens[depth - 1]][tokens[depth]];
        prob[depth] = prev * step;
        if (depth == n - 1) {
          table[sequence_index(tokens, k)] = prob[depth];
        } else {
          ++depth;
          tokens[depth] = -1;
        }
      }
    }
    stats.table.push_back(std::move(table));
  }
  return stats;
}

}  // namespace adanat
