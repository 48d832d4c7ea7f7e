#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adanat/backbone.hpp"
#include "adanat/policy.hpp"
#include "adanat/ppo.hpp"
#include "adanat/sampler.hpp"

namespace adanat {

enum class PolicyMode { kAdaptive, kLearnableNonAdaptive, kStaticCosine, kStaticCustom };

std::string to_string(PolicyMode m);
PolicyMode parse_policy_mode(const std::string& name);
inline bool is_learnable(PolicyMode m) { return m == PolicyMode::kAdaptive || m == PolicyMode::kLearnableNonAdaptive; }

struct EvalConfig {
  int fid_every = 100;
  int fid_samples_train = 5000;
  int fid_samples_final = 50000;
  int reference_samples = 10000;
  int checkpoint_every = 100;
  std::string reference_stats;  // empty: fit from the world and cache in the output directory
};

struct SampleConfig {
  int n = 16;
  int cls = -1;  // -1: classes drawn uniformly
};

struct AblateConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct RunConfig {
  std::string world;     // world spec file; empty: built-in toy world
  std::string backbone;  // checkpoint path, or "tabular" for the exact predictor; empty: <out>/backbone.ckpt
  int horizon = 4;
  PolicyMode mode = PolicyMode::kAdaptive;
  int policy_hidden = 128;
  SquashBounds bounds;
  ScheduleConfig schedule;
  PPOConfig ppo;
  RewardModelConfig reward;
  PretrainConfig pretrain;
  EvalConfig eval;
  SampleConfig sample;
  AblateConfig ablate;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
  int workers = 0;  // 0: all available cores

  // Throws ConfigError naming the first invalid field or combination.
  void validate() const;
  int effective_workers() const;
  std::string backbone_path() const;
};

// Relative paths inside the file resolve against the file's directory.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& yaml_text, const std::string& base_dir = "");
// Every field, defaults included, as YAML that parse_run_config reads back.
std::string dump_run_config(const RunConfig& cfg);

WorldSpec resolve_world(const RunConfig& cfg);

}  // namespace adanat
