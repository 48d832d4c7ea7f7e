#include "adanat/run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <sstream>
#include <thread>

#include "adanat/error.hpp"

namespace adanat {

namespace fs = std::filesystem;

std::string to_string(PolicyMode m) {
  switch (m) {
    case PolicyMode::kAdaptive: return "adaptive";
    case PolicyMode::kLearnableNonAdaptive: return "learnable-non-adaptive";
    case PolicyMode::kStaticCosine: return "static-cosine";
    case PolicyMode::kStaticCustom: return "static-custom";
  }
  return "adaptive";
}

PolicyMode parse_policy_mode(const std::string& name) {
  if (name == "adaptive") return PolicyMode::kAdaptive;
  if (name == "learnable-non-adaptive") return PolicyMode::kLearnableNonAdaptive;
  if (name == "static-cosine") return PolicyMode::kStaticCosine;
  if (name == "static-custom") return PolicyMode::kStaticCustom;
  throw ConfigError("unknown policy mode '" + name + "'");
}

void RunConfig::validate() const {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (policy_hidden < 1) throw ConfigError("policy.hidden must be >= 1");
  if (!(bounds.tau_min > 0.0 && bounds.tau_max > bounds.tau_min)) {
    throw ConfigError("policy bounds need 0 < tau_min < tau_max");
  }
  if (!(bounds.w_max >= 0.0)) throw ConfigError("policy.w_max must be >= 0");
  ppo.validate();
  reward.validate();
  try {
    ScheduleConfig s = schedule;
    s.horizon = horizon;
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  if (reward.kind == RewardKind::kFidBatch && mode == PolicyMode::kAdaptive) {
    throw ConfigError("fid-batch reward cannot train the adaptive policy: it gives one reward per batch, "
                      "so use learnable-non-adaptive");
  }
  if (workers < 0) throw ConfigError("workers must be >= 0");
  if (eval.fid_every < 0) throw ConfigError("eval.fid_every must be >= 0");
  if (eval.fid_samples_train < 2 || eval.fid_samples_final < 2 || eval.reference_samples < 2) {
    throw ConfigError("eval sample counts must be >= 2");
  }
  if (eval.checkpoint_every < 1) throw ConfigError("eval.checkpoint_every must be >= 1");
  if (sample.n < 0) throw ConfigError("sample.n must be >= 0");
  if (pretrain.steps < 0 || pretrain.batch < 1 || pretrain.hidden < 1 || !(pretrain.lr > 0.0)) {
    throw ConfigError("pretrain: steps >= 0, batch >= 1, hidden >= 1 and lr > 0 required");
  }
  if (!(pretrain.class_dropout >= 0.0 && pretrain.class_dropout <= 1.0)) {
    throw ConfigError("pretrain.class_dropout must lie in [0, 1]");
  }
  if (ablate.seeds.empty()) throw ConfigError("ablate.seeds must not be empty");
}

int RunConfig::effective_workers() const {
  if (workers > 0) return workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string RunConfig::backbone_path() const {
  if (!backbone.empty()) return backbone;
  return (fs::path(out) / "backbone.ckpt").string();
}

namespace {

template <typename T>
void read(const YAML::Node& node, const char* key, T& dst, const std::string& where) {
  const YAML::Node v = node[key];
  if (!v) return;
  try {
    dst = v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config: bad value for " + where + key);
  }
}

void check_keys(const YAML::Node& node, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!node) return;
  if (!node.IsMap()) throw ConfigError("config: " + (where.empty() ? std::string("top level") : where) + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("config: unknown key '" + where + key + "'");
  }
}

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty() || p == "tabular" || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

void read_schedule(const YAML::Node& node, const char* key, ParamSchedule& s) {
  const YAML::Node n = node[key];
  if (!n) return;
  const std::string where = std::string("schedule.") + key + ".";
  check_keys(n, {"family", "scale"}, where);
  if (n["family"]) {
    try {
      s.family = parse_schedule_family(n["family"].as<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + "family: " + e.what());
    }
  }
  read(n, "scale", s.scale, where);
}

}  // namespace

RunConfig parse_run_config(const std::string& yaml_text, const std::string& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: YAML parse error: ") + e.what());
  }
  RunConfig c;
  if (!root || root.IsNull()) return c;
  check_keys(root, {"seed", "out", "workers", "world", "backbone", "horizon", "policy", "schedule", "ppo", "reward",
                    "pretrain", "eval", "sample", "ablate"},
             "");
  read(root, "seed", c.seed, "");
  read(root, "out", c.out, "");
  read(root, "workers", c.workers, "");
  read(root, "world", c.world, "");
  read(root, "backbone", c.backbone, "");
  read(root, "horizon", c.horizon, "");
  c.world = resolve(c.world, base_dir);
  c.backbone = resolve(c.backbone, base_dir);

  if (const YAML::Node p = root["policy"]) {
    check_keys(p, {"mode", "hidden", "tau_min", "tau_max", "w_max"}, "policy.");
    if (p["mode"]) c.mode = parse_policy_mode(p["mode"].as<std::string>());
    read(p, "hidden", c.policy_hidden, "policy.");
    read(p, "tau_min", c.bounds.tau_min, "policy.");
    read(p, "tau_max", c.bounds.tau_max, "policy.");
    read(p, "w_max", c.bounds.w_max, "policy.");
  }
  if (const YAML::Node s = root["schedule"]) {
    check_keys(s, {"m", "tau1", "tau2", "w"}, "schedule.");
    read_schedule(s, "m", c.schedule.m);
    read_schedule(s, "tau1", c.schedule.tau1);
    read_schedule(s, "tau2", c.schedule.tau2);
    read_schedule(s, "w", c.schedule.w);
  }
  c.schedule.horizon = c.horizon;
  if (const YAML::Node p = root["ppo"]) {
    check_keys(p, {"clip_epsilon", "value_coef", "lr", "beta1", "beta2", "updates_per_loop", "batch_size", "loops",
                   "sigma_initial", "sigma_final", "sigma_switch_loop", "normalize_advantages", "max_log_ratio"},
               "ppo.");
    read(p, "clip_epsilon", c.ppo.clip_epsilon, "ppo.");
    read(p, "value_coef", c.ppo.value_coef, "ppo.");
    read(p, "lr", c.ppo.lr, "ppo.");
    read(p, "beta1", c.ppo.beta1, "ppo.");
    read(p, "beta2", c.ppo.beta2, "ppo.");
    read(p, "updates_per_loop", c.ppo.updates_per_loop, "ppo.");
    read(p, "batch_size", c.ppo.batch_size, "ppo.");
    read(p, "loops", c.ppo.loops, "ppo.");
    read(p, "sigma_initial", c.ppo.sigma_initial, "ppo.");
    read(p, "sigma_final", c.ppo.sigma_final, "ppo.");
    read(p, "sigma_switch_loop", c.ppo.sigma_switch_loop, "ppo.");
    read(p, "normalize_advantages", c.ppo.normalize_advantages, "ppo.");
    read(p, "max_log_ratio", c.ppo.max_log_ratio, "ppo.");
  }
  if (const YAML::Node r = root["reward"]) {
    check_keys(r, {"kind", "lr", "beta1", "beta2", "updates_per_loop", "hidden", "real_batch", "fid_group_size",
                   "loss", "external_command"},
               "reward.");
    if (r["kind"]) c.reward.kind = parse_reward_kind(r["kind"].as<std::string>());
    read(r, "lr", c.reward.lr, "reward.");
    read(r, "beta1", c.reward.beta1, "reward.");
    read(r, "beta2", c.reward.beta2, "reward.");
    read(r, "updates_per_loop", c.reward.updates_per_loop, "reward.");
    read(r, "hidden", c.reward.hidden, "reward.");
    read(r, "real_batch", c.reward.real_batch, "reward.");
    read(r, "fid_group_size", c.reward.fid_group_size, "reward.");
    if (r["loss"]) c.reward.loss = parse_disc_loss_form(r["loss"].as<std::string>());
    read(r, "external_command", c.reward.external_command, "reward.");
  }
  if (const YAML::Node p = root["pretrain"]) {
    check_keys(p, {"steps", "batch", "lr", "hidden", "class_dropout", "heldout", "log_every"}, "pretrain.");
    read(p, "steps", c.pretrain.steps, "pretrain.");
    read(p, "batch", c.pretrain.batch, "pretrain.");
    read(p, "lr", c.pretrain.lr, "pretrain.");
    read(p, "hidden", c.pretrain.hidden, "pretrain.");
    read(p, "class_dropout", c.pretrain.class_dropout, "pretrain.");
    read(p, "heldout", c.pretrain.heldout, "pretrain.");
    read(p, "log_every", c.pretrain.log_every, "pretrain.");
  }
  if (const YAML::Node e = root["eval"]) {
    check_keys(e, {"fid_every", "fid_samples_train", "fid_samples_final", "reference_samples", "checkpoint_every",
                   "reference_stats"},
               "eval.");
    read(e, "fid_every", c.eval.fid_every, "eval.");
    read(e, "fid_samples_train", c.eval.fid_samples_train, "eval.");
    read(e, "fid_samples_final", c.eval.fid_samples_final, "eval.");
    read(e, "reference_samples", c.eval.reference_samples, "eval.");
    read(e, "checkpoint_every", c.eval.checkpoint_every, "eval.");
    read(e, "reference_stats", c.eval.reference_stats, "eval.");
    c.eval.reference_stats = resolve(c.eval.reference_stats, base_dir);
  }
  if (const YAML::Node s = root["sample"]) {
    check_keys(s, {"n", "class"}, "sample.");
    read(s, "n", c.sample.n, "sample.");
    read(s, "class", c.sample.cls, "sample.");
  }
  if (const YAML::Node a = root["ablate"]) {
    check_keys(a, {"seeds"}, "ablate.");
    read(a, "seeds", c.ablate.seeds, "ablate.");
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), fs::path(path).parent_path().string());
}

std::string dump_run_config(const RunConfig& c) {
  std::string s;
  auto line = [&s](const std::string& text) { s += text + "\n"; };
  auto str = [](const std::string& v) { return "\"" + v + "\""; };
  line(fmt::format("seed: {}", c.seed));
  line(fmt::format("out: {}", str(c.out)));
  line(fmt::format("workers: {}", c.workers));
  line(fmt::format("world: {}", str(c.world)));
  line(fmt::format("backbone: {}", str(c.backbone)));
  line(fmt::format("horizon: {}", c.horizon));
  line("policy:");
  line(fmt::format("  mode: {}", to_string(c.mode)));
  line(fmt::format("  hidden: {}", c.policy_hidden));
  line(fmt::format("  tau_min: {}", c.bounds.tau_min));
  line(fmt::format("  tau_max: {}", c.bounds.tau_max));
  line(fmt::format("  w_max: {}", c.bounds.w_max));
  line("schedule:");
  for (const auto& [name, p] : {std::pair<const char*, const ParamSchedule&>{"m", c.schedule.m},
                                {"tau1", c.schedule.tau1},
                                {"tau2", c.schedule.tau2},
                                {"w", c.schedule.w}}) {
    line(fmt::format("  {}: {{family: {}, scale: {}}}", name, to_string(p.family), p.scale));
  }
  line("ppo:");
  line(fmt::format("  clip_epsilon: {}", c.ppo.clip_epsilon));
  line(fmt::format("  value_coef: {}", c.ppo.value_coef));
  line(fmt::format("  lr: {}", c.ppo.lr));
  line(fmt::format("  beta1: {}", c.ppo.beta1));
  line(fmt::format("  beta2: {}", c.ppo.beta2));
  line(fmt::format("  updates_per_loop: {}", c.ppo.updates_per_loop));
  line(fmt::format("  batch_size: {}", c.ppo.batch_size));
  line(fmt::format("  loops: {}", c.ppo.loops));
  line(fmt::format("  sigma_initial: {}", c.ppo.sigma_initial));
  line(fmt::format("  sigma_final: {}", c.ppo.sigma_final));
  line(fmt::format("  sigma_switch_loop: {}", c.ppo.sigma_switch_loop));
  line(fmt::format("  normalize_advantages: {}", c.ppo.normalize_advantages));
  line(fmt::format("  max_log_ratio: {}", c.ppo.max_log_ratio));
  line("reward:");
  line(fmt::format("  kind: {}", to_string(c.reward.kind)));
  line(fmt::format("  lr: {}", c.reward.lr));
  line(fmt::format("  beta1: {}", c.reward.beta1));
  line(fmt::format("  beta2: {}", c.reward.beta2));
  line(fmt::format("  updates_per_loop: {}", c.reward.updates_per_loop));
  line(fmt::format("  hidden: {}", c.reward.hidden));
  line(fmt::format("  real_batch: {}", c.reward.real_batch));
  line(fmt::format("  fid_group_size: {}", c.reward.fid_group_size));
  line(fmt::format("  loss: {}", to_string(c.reward.loss)));
  line(fmt::format("  external_command: {}", str(c.reward.external_command)));
  line("pretrain:");
  line(fmt::format("  steps: {}", c.pretrain.steps));
  line(fmt::format("  batch: {}", c.pretrain.batch));
  line(fmt::format("  lr: {}", c.pretrain.lr));
  line(fmt::format("  hidden: {}", c.pretrain.hidden));
  line(fmt::format("  class_dropout: {}", c.pretrain.class_dropout));
  line(fmt::format("  heldout: {}", c.pretrain.heldout));
  line(fmt::format("  log_every: {}", c.pretrain.log_every));
  line("eval:");
  line(fmt::format("  fid_every: {}", c.eval.fid_every));
  line(fmt::format("  fid_samples_train: {}", c.eval.fid_samples_train));
  line(fmt::format("  fid_samples_final: {}", c.eval.fid_samples_final));
  line(fmt::format("  reference_samples: {}", c.eval.reference_samples));
  line(fmt::format("  checkpoint_every: {}", c.eval.checkpoint_every));
  line(fmt::format("  reference_stats: {}", str(c.eval.reference_stats)));
  line("sample:");
  line(fmt::format("  n: {}", c.sample.n));
  line(fmt::format("  class: {}", c.sample.cls));
  line("ablate:");
  std::string seeds;
  for (std::size_t i = 0; i < c.ablate.seeds.size(); ++i) seeds += (i ? ", " : "") + std::to_string(c.ablate.seeds[i]);
  line("  seeds: [" + seeds + "]");
  return s;
}

WorldSpec resolve_world(const RunConfig& cfg) {
  if (cfg.world.empty()) return default_toy_world();
  if (!fs::exists(cfg.world)) throw MissingArtifactError("world spec not found: " + cfg.world);
  try {
    return load_world_spec(cfg.world);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("world spec ") + cfg.world + ": " + e.what());
  }
}

}  // namespace adanat
