#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "adanat/backbone.hpp"
#include "adanat/eval.hpp"
#include "adanat/policy.hpp"
#include "adanat/reward.hpp"
#include "adanat/sampler.hpp"

namespace adanat {

struct PPOConfig {
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int updates_per_loop = 5;
  int batch_size = 256;
  int loops = 1000;
  double sigma_initial = 0.6;
  double sigma_final = 0.3;
  int sigma_switch_loop = 500;
  bool normalize_advantages = true;
  double max_log_ratio = 20.0;

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, 1e-8}; }
};

double anneal_sigma(int loop, const PPOConfig& cfg);

// A_t = R - V(s_t) using the values stored at collection time.
std::vector<double> advantage(const Trajectory& traj);

// min(rho A, clip(rho, 1 - eps, 1 + eps) A)
double clipped_surrogate(double rho, double adv, double eps);

// Flattened (trajectory, step) samples for the update phase.
struct PPOBatch {
  Matrix features;  // feature_dim x S
  std::vector<int> steps;
  std::vector<RawAction> raw;
  std::vector<double> old_logprob;
  std::vector<double> advantage;
  std::vector<double> reward;

  std::size_t size() const { return steps.size(); }
};

// Steps without recorded features (non-adaptive collection) get zero features.
PPOBatch make_ppo_batch(const std::vector<Trajectory>& trajs, int feature_dim, bool normalize_advantages);
void normalize_advantages(std::vector<double>& adv);

struct PPOObjective {
  double objective = 0.0;
  double surrogate = 0.0;
  double value_loss = 0.0;  // mean (V - R)^2
  double mean_ratio = 1.0;
  int clamped = 0;          // log-ratios clamped to +-max_log_ratio
  Vector grad;              // d objective / d params, filled when requested
};

// mean over samples of [min(rho A, clip(rho) A) - c (V - R)^2].
PPOObjective ppo_objective(const PPOBatch& batch, const PolicyNet& net, const PPOConfig& cfg, bool with_grad = true);

// Ascent steps on the objective; returns the objective before each step.
std::vector<PPOObjective> ppo_update(const PPOBatch& batch, PolicyNet& net, Adam& optimizer, const PPOConfig& cfg);

// Scores finished trajectories. Per-image scorers return one value per trajectory;
// a NaN entry marks an unavailable reward and the trajectory is dropped.
using BatchReward = std::function<std::vector<double>(const std::vector<Trajectory>&)>;

struct CollectResult {
  std::vector<Trajectory> trajectories;
  int dropped = 0;
};

struct CollectOptions {
  int workers = 1;
  // When > 0, consecutive groups of this size share their exploration noise.
  int noise_group = 0;
  bool record_features = true;
};

// Generates n trajectories with the stochastic policy. Sample i draws its class and all its noise
// from derive_seed(seed, i), so the batch does not depend on the worker count.
CollectResult collect(const PolicyNet& net, const MaskedPredictor& pred, const BatchReward& reward, int n,
                      std::uint64_t seed, const CollectOptions& opts = {});

// Runs a generator over n samples in worker chunks; per-sample streams come from derive_seed(seed, i).
std::vector<Trajectory> generate_parallel(const MaskedPredictor& pred, const StepProvider& provider, int horizon,
                                          int n, std::uint64_t seed, int workers, bool record_features = false,
                                          const std::vector<int>* classes = nullptr);

// Classes drawn uniformly from per-sample streams.
std::vector<int> draw_classes(int n, int n_classes, std::uint64_t seed);

struct RewardModelConfig {
  RewardKind kind = RewardKind::kAdversarial;
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int updates_per_loop = 5;
  int hidden = 128;
  int real_batch = 256;
  int fid_group_size = 64;
  DiscLossForm loss = DiscLossForm::kBce;
  std::string external_command;

  void validate() const;
  AdamConfig adam() const { return {lr, beta1, beta2, 1e-8}; }
};

struct LoopLog {
  int loop = 0;
  double mean_reward = 0.0;
  double ppo_objective = 0.0;
  double value_loss = 0.0;
  double disc_acc = std::numeric_limits<double>::quiet_NaN();
  double sigma = 0.0;
  double toy_fid = std::numeric_limits<double>::quiet_NaN();
  int dropped = 0;
  int clamped = 0;
};

struct TrainerOptions {
  PPOConfig ppo;
  RewardModelConfig reward;
  std::uint64_t seed = 0;
  int workers = 1;
  int fid_every = 100;       // 0 disables toy-FID tracking
  int fid_samples = 5000;
};

// Algorithm-1 alternation: collect under phi_old, PPO ascent steps, phi_old <- phi, then reward-model
// steps on a fresh fake batch from the current policy against a real batch.
class Trainer {
 public:
  Trainer(const MaskedPredictor& pred, const WorldSpec& world, PolicyNet& net, TrainerOptions opts,
          const GaussianStats* reference);

  LoopLog run_loop(int loop);

  Discriminator* discriminator() { return disc_ ? &*disc_ : nullptr; }
  const Discriminator* discriminator() const { return disc_ ? &*disc_ : nullptr; }
  void set_discriminator(Discriminator d);
  void set_hook(ScoreHook hook) { hook_ = std::move(hook); }
  PolicyNet& net() { return net_; }
  const TrainerOptions& options() const { return opts_; }

  // Deterministic-policy samples scored against the reference.
  double toy_fid(int n_samples, std::uint64_t seed) const;

  std::vector<Image> real_batch(int n, std::uint64_t seed) const;

 private:
  std::vector<double> score(const std::vector<Trajectory>& trajs) const;
  std::vector<Image> decode(const std::vector<Trajectory>& trajs) const;

  const MaskedPredictor& pred_;
  const WorldSpec& world_;
  Codebook codebook_;
  PolicyNet& net_;
  TrainerOptions opts_;
  const GaussianStats* reference_;
  Adam policy_opt_;
  std::optional<Discriminator> disc_;
  Adam disc_opt_;
  ScoreHook hook_;
};

// Deterministic-policy (or static) samples for evaluation.
std::vector<Image> sample_images(const MaskedPredictor& pred, const StepProvider& provider, const WorldSpec& world,
                                 int horizon, int n, std::uint64_t seed, int workers,
                                 std::vector<Trajectory>* trajectories = nullptr);

std::vector<Image> real_images(const WorldSpec& world, int n, std::uint64_t seed);

}  // namespace adanat
