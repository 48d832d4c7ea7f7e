#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "adanat/backbone.hpp"
#include "adanat/sampler.hpp"
#include "adanat/smallnet.hpp"

namespace adanat {

// Squash ranges for the four action dimensions.
struct SquashBounds {
  double tau_min = 0.05;
  double tau_max = 4.0;
  double w_max = 8.0;
};

using RawAction = std::array<double, 4>;

double logistic(double x);

// m = logistic(r0); tau1, tau2 = tau_min + (tau_max - tau_min) logistic(r1|r2); w = w_max logistic(r3).
PolicyStepParams squash(const RawAction& raw, const SquashBounds& bounds = {});

// Sum of four independent N(mean_d, sigma^2) log-densities.
double gaussian_logprob(const RawAction& raw, const RawAction& mean, double sigma);

struct GenerationState {
  int t = 0;
  Vector features;
  TokenSequence v;
};

GenerationState encode_state(const MaskedPredictor& pred, const TokenSequence& v, int cls, int t);

struct PolicyNetConfig {
  int hidden = 128;
  int horizon = 4;
  // Non-adaptive ("learnable only") variant: features are zeroed, so actions depend on t alone.
  bool adaptive = true;
  double sigma = 0.6;
  SquashBounds bounds;
};

// Shared trunk  affine -> AdaLN(t) -> SiLU -> affine -> AdaLN(t) -> SiLU  feeding a zero-initialised
// five-output head: rows 0..3 are the pre-squash action mean, row 4 is the state value.
class PolicyNet {
 public:
  PolicyNet(int feature_dim, PolicyNetConfig cfg, Rng& init_rng);
  PolicyNet(SmallNet net, PolicyNetConfig cfg);

  static constexpr int kOutputs = 5;
  static constexpr int kValueRow = 4;

  int feature_dim() const { return net_.input_dim(); }
  int horizon() const { return cfg_.horizon; }
  bool adaptive() const { return cfg_.adaptive; }
  double sigma() const { return cfg_.sigma; }
  void set_sigma(double sigma);
  const SquashBounds& bounds() const { return cfg_.bounds; }
  const PolicyNetConfig& config() const { return cfg_; }

  SmallNet& net() { return net_; }
  const SmallNet& net() const { return net_; }

  // Network inputs for a batch of states: features (zeroed when non-adaptive), one-hot t.
  Matrix inputs(const Matrix& features) const;
  Matrix timestep_onehot(std::span<const int> steps) const;
  ForwardTrace forward(const Matrix& features, std::span<const int> steps) const;

  RawAction mean(const GenerationState& s) const;

  void save(const std::string& path) const;
  static PolicyNet load(const std::string& path);

 private:
  PolicyNetConfig cfg_;
  SmallNet net_;
};

struct StochasticAction {
  PolicyStepParams action;
  double logprob = 0.0;
  RawAction raw{};
};

// raw ~ N(eta(s), sigma^2 I) in pre-squash space; logprob is the density of raw.
StochasticAction act_stochastic(const PolicyNet& net, const GenerationState& state, Rng& rng);
// Test-time rule: squash of the mean.
PolicyStepParams act_deterministic(const PolicyNet& net, const GenerationState& state);
double value(const PolicyNet& net, const GenerationState& state);

// Adapts a PolicyNet to the sampler. In stochastic mode the exploration noise comes from the
// per-sample generator, or from `noise` (standard normals indexed [sample][t]) when supplied.
class PolicyProvider final : public StepProvider {
 public:
  PolicyProvider(const PolicyNet& net, bool stochastic, const std::vector<std::vector<RawAction>>* noise = nullptr);

  bool needs_features() const override { return net_.adaptive(); }
  std::vector<StepDecision> decide(int t, int horizon, const Matrix& features, std::span<Rng> rngs) const override;

 private:
  const PolicyNet& net_;
  bool stochastic_;
  const std::vector<std::vector<RawAction>>* noise_;
};

}  // namespace adanat
