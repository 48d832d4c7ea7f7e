#include <doctest.h>

#include <cmath>

#include "adanat/backbone.hpp"
#include "adanat/error.hpp"
#include "adanat/ppo.hpp"
#include "unit/test_util.hpp"

using namespace adanat;

namespace {

PolicyNet small_policy(const MaskedPredictor& pred, int horizon, std::uint64_t seed, bool randomize = true) {
  Rng init(seed);
  PolicyNetConfig cfg;
  cfg.hidden = 8;
  cfg.horizon = horizon;
  PolicyNet net(pred.feature_dim(), cfg, init);
  if (randomize) {
    net.net().params() = testutil::random_vector(static_cast<Eigen::Index>(net.net().num_params()), init, 0.3);
  }
  return net;
}

BatchReward constant_reward(double r) {
  return [r](const std::vector<Trajectory>& t) { return std::vector<double>(t.size(), r); };
}

}  // namespace

TEST_CASE("clipped surrogate worked values") {
  CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_surrogate(1.3, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(clipped_surrogate(0.5, 1.0, 0.2) == doctest::Approx(0.5));
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  CHECK(clipped_surrogate(1.5, -1.0, 0.2) == doctest::Approx(-1.5));
  CHECK(clipped_surrogate(1.0, 2.5, 0.2) == 2.5);
}

TEST_CASE("clipped surrogate never exceeds the unclipped one") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double rho = std::exp(standard_normal(rng));
    const double a = standard_normal(rng);
    CHECK(clipped_surrogate(rho, a, 0.2) <= rho * a + 1e-15);
  }
}

TEST_CASE("advantage is the terminal reward minus stored values") {
  Trajectory t;
  t.reward = 0.8;
  t.steps.resize(3);
  t.steps[0].value = 0.1;
  t.steps[1].value = 0.5;
  t.steps[2].value = 1.0;
  const auto a = advantage(t);
  CHECK(a[0] == doctest::Approx(0.7));
  CHECK(a[1] == doctest::Approx(0.3));
  CHECK(a[2] == doctest::Approx(-0.2));
}

TEST_CASE("advantage normalisation") {
  std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  normalize_advantages(a);
  double mean = 0.0, sq = 0.0;
  for (double v : a) mean += v / 4;
  for (double v : a) sq += (v - mean) * (v - mean) / 4;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(sq == doctest::Approx(1.0).epsilon(1e-6));
  std::vector<double> flat{2.0, 2.0};
  normalize_advantages(flat);
  CHECK(flat[0] == 0.0);
}

TEST_CASE("sigma annealing switches at the configured loop") {
  PPOConfig c;
  CHECK(anneal_sigma(0, c) == 0.6);
  CHECK(anneal_sigma(499, c) == 0.6);
  CHECK(anneal_sigma(500, c) == 0.3);
  CHECK(anneal_sigma(999, c) == 0.3);
}

TEST_CASE("config validation") {
  PPOConfig c;
  CHECK_NOTHROW(c.validate());
  c.clip_epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PPOConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = PPOConfig{};
  c.sigma_final = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  RewardModelConfig r;
  r.fid_group_size = 1;
  CHECK_THROWS_AS(r.validate(), ConfigError);
}

TEST_CASE("objective gradient matches finite differences") {
  const TabularPredictor tab(tiny_markov_world());
  PolicyNet net = small_policy(tab, 3, 2);
  const auto res = collect(net, tab, [](const std::vector<Trajectory>& t) {
    std::vector<double> r(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) r[i] = t[i].final_tokens.tokens[0] * 0.5;
    return r;
  }, 12, 3);
  PPOBatch batch = make_ppo_batch(res.trajectories, tab.feature_dim(), true);
  // move the policy so ratios differ from one, some of them clipped
  Rng rng(4);
  PolicyNet moved = net;
  moved.net().params() += testutil::random_vector(static_cast<Eigen::Index>(net.net().num_params()), rng, 0.05);
  PPOConfig cfg;
  const PPOObjective o = ppo_objective(batch, moved, cfg, true);
  CHECK(o.mean_ratio != doctest::Approx(1.0));
  auto f = [&](const Vector& p) {
    PolicyNet c = moved;
    c.net().set_params(p);
    return ppo_objective(batch, c, cfg, false).objective;
  };
  const Vector fd = testutil::central_fd(f, moved.net().params(), 1e-6);
  // the clip boundary makes the objective piecewise smooth; allow a sparse set of kinks
  int bad = 0;
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    const double den = std::max({std::abs(fd[i]), std::abs(o.grad[i]), 1e-5});
    if (std::abs(fd[i] - o.grad[i]) / den > 1e-3) ++bad;
  }
  CHECK(bad <= fd.size() / 100);
}

TEST_CASE("first update after collection sees unit ratios") {
  const TabularPredictor tab(tiny_markov_world());
  PolicyNet net = small_policy(tab, 2, 5);
  const auto res = collect(net, tab, constant_reward(1.0), 16, 6);
  const PPOBatch batch = make_ppo_batch(res.trajectories, tab.feature_dim(), false);
  const PPOObjective o = ppo_objective(batch, net, PPOConfig{}, false);
  CHECK(o.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(o.clamped == 0);
}

TEST_CASE("constant reward leaves the mean head unchanged under normalised advantages") {
  const TabularPredictor tab(tiny_markov_world());
  PolicyNet net = small_policy(tab, 2, 7, false);
  const auto res = collect(net, tab, constant_reward(0.0), 32, 8);
  const PPOBatch batch = make_ppo_batch(res.trajectories, tab.feature_dim(), false);
  const PPOObjective o = ppo_objective(batch, net, PPOConfig{}, true);
  CHECK(o.surrogate == 0.0);
  CHECK(o.value_loss == 0.0);
  CHECK(o.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("ppo update raises the objective on a fixed batch") {
  const TabularPredictor tab(tiny_markov_world());
  PolicyNet net = small_policy(tab, 2, 9);
  const auto res = collect(net, tab, [](const std::vector<Trajectory>& t) {
    std::vector<double> r(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) r[i] = t[i].steps[0].action.m;
    return r;
  }, 64, 10);
  const PPOBatch batch = make_ppo_batch(res.trajectories, tab.feature_dim(), true);
  PPOConfig cfg;
  cfg.lr = 1e-3;
  cfg.updates_per_loop = 20;
  Adam opt(net.net().num_params(), cfg.adam());
  const auto hist = ppo_update(batch, net, opt, cfg);
  REQUIRE(hist.size() == 20);
  CHECK(ppo_objective(batch, net, cfg, false).objective > hist.front().objective);
}

TEST_CASE("collect: empty batch, dropped rewards, determinism, worker independence") {
  const TabularPredictor tab(tiny_markov_world());
  const PolicyNet net = small_policy(tab, 3, 11);
  CHECK(collect(net, tab, constant_reward(1.0), 0, 1).trajectories.empty());

  const auto drop_odd = [](const std::vector<Trajectory>& t) {
    std::vector<double> r(t.size(), 1.0);
    for (std::size_t i = 1; i < t.size(); i += 2) r[i] = std::nan("");
    return r;
  };
  const auto d = collect(net, tab, drop_odd, 10, 2);
  CHECK(d.dropped == 5);
  CHECK(d.trajectories.size() == 5);

  CollectOptions one, three;
  one.workers = 1;
  three.workers = 3;
  const auto a = collect(net, tab, constant_reward(0.5), 25, 12, one);
  const auto b = collect(net, tab, constant_reward(0.5), 25, 12, three);
  const auto c = collect(net, tab, constant_reward(0.5), 25, 12, one);
  REQUIRE(a.trajectories.size() == 25);
  for (int i = 0; i < 25; ++i) {
    CHECK(a.trajectories[i].final_tokens == b.trajectories[i].final_tokens);
    CHECK(a.trajectories[i].final_tokens == c.trajectories[i].final_tokens);
    CHECK(a.trajectories[i].steps[0].raw == b.trajectories[i].steps[0].raw);
  }
}

TEST_CASE("collect: noise groups share exploration noise") {
  const TabularPredictor tab(tiny_markov_world());
  const PolicyNet net = small_policy(tab, 2, 13, false);
  CollectOptions o;
  o.noise_group = 4;
  const auto r = collect(net, tab, constant_reward(0.0), 8, 14, o);
  // a zero-initialised head gives equal means, so shared noise gives equal raw actions within a group
  CHECK(r.trajectories[0].steps[0].raw == r.trajectories[3].steps[0].raw);
  CHECK(r.trajectories[0].steps[0].raw != r.trajectories[4].steps[0].raw);
}

TEST_CASE("training never touches the backbone") {
  const WorldSpec w = tiny_markov_world();
  Rng init(15);
  SmallNet backbone_net = NeuralPredictor::make_net(w.n_tokens, w.codebook_size, w.n_classes, 16);
  backbone_net.initialize(init);
  const NeuralPredictor nn(backbone_net, w.n_tokens, w.codebook_size, w.n_classes, w.fingerprint(), w.grid_height);
  const Vector before = nn.net().params();
  PolicyNet net = small_policy(nn, 2, 16);
  TrainerOptions opts;
  opts.ppo.batch_size = 16;
  opts.ppo.loops = 2;
  opts.reward.real_batch = 16;
  opts.reward.hidden = 8;
  opts.fid_every = 0;
  Trainer trainer(nn, w, net, opts, nullptr);
  const Vector policy_before = net.net().params();
  for (int l = 0; l < 2; ++l) {
    const LoopLog log = trainer.run_loop(l);
    CHECK(std::isfinite(log.mean_reward));
    CHECK(log.disc_acc >= 0.0);
  }
  CHECK(nn.net().params() == before);
  CHECK(net.net().params() != policy_before);
}
