#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adanat/eval.hpp"
#include "adanat/smallnet.hpp"
#include "adanat/token_world.hpp"

namespace adanat {

inline constexpr double kScoreClamp = 1e-7;

// r(x) = logistic(MLP(x)) on flattened pixels: the probability that x is real.
class Discriminator {
 public:
  Discriminator(int input_dim, int hidden, Rng& init_rng);
  explicit Discriminator(SmallNet net);

  static SmallNet make_net(int input_dim, int hidden);

  int input_dim() const { return net_.input_dim(); }
  SmallNet& net() { return net_; }
  const SmallNet& net() const { return net_; }

  Matrix pixels(const std::vector<Image>& images) const;  // input_dim x n
  Vector logits(const std::vector<Image>& images) const;
  std::vector<double> scores(const std::vector<Image>& images) const;

  void save(const std::string& path) const;
  static Discriminator load(const std::string& path);

 private:
  SmallNet net_;
};

double disc_score(const Discriminator& d, const Image& image);

// mean(log r(fake)) + mean(log(1 - r(real))) with scores clamped to [1e-7, 1 - 1e-7]. Minimised in psi.
double disc_loss(std::span<const double> fake_scores, std::span<const double> real_scores);

// Objective actually descended by disc_update. kLiteral descends disc_loss itself; kBce descends the
// usual GAN discriminator loss -mean log r(real) - mean log(1 - r(fake)), which has the same optimum.
enum class DiscLossForm { kBce, kLiteral };
std::string to_string(DiscLossForm f);
DiscLossForm parse_disc_loss_form(const std::string& name);

// -mean log r(real) - mean log(1 - r(fake)) from logits, computed stably.
double disc_bce_loss(std::span<const double> fake_logits, std::span<const double> real_logits);

struct DiscUpdateResult {
  double loss = 0.0;       // disc_loss before the step
  double objective = 0.0;  // the descended objective before the step
  // 0.5 * (fraction of fakes scored < 0.5 + fraction of reals scored > 0.5), before the step
  double accuracy = 0.0;
};

struct DiscGradient {
  DiscUpdateResult result;
  Vector grad;  // d objective / d params
};

DiscGradient disc_gradient(const Discriminator& d, const std::vector<Image>& real_batch,
                           const std::vector<Image>& fake_batch, DiscLossForm form = DiscLossForm::kBce);

DiscUpdateResult disc_update(Discriminator& d, const std::vector<Image>& real_batch,
                             const std::vector<Image>& fake_batch, Adam& optimizer,
                             DiscLossForm form = DiscLossForm::kBce);

// -d_F^2(fit_stats(images), ref); one number for the whole batch.
double fid_batch_reward(const std::vector<Image>& images, const GaussianStats& ref);

using ScoreHook = std::function<double(const Image&)>;

// Runs the hook; any failure or non-finite result becomes RewardUnavailable.
double external_scorer(const Image& image, const ScoreHook& hook);

// Spawns `/bin/sh -c command` per image. stdin receives the line "ADANAT-IMAGE <h> <w> <c>\n"
// followed by h*w*c little-endian float64 pixels; stdout must hold one decimal scalar.
ScoreHook make_subprocess_hook(std::string command);

// Mean pixel intensity; a simple in-process hook for tests and demos.
double brightness_score(const Image& image);

enum class RewardKind { kAdversarial, kFidBatch, kExternal };
std::string to_string(RewardKind k);
RewardKind parse_reward_kind(const std::string& name);

}  // namespace adanat
