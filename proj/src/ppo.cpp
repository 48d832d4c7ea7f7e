#include "adanat/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "adanat/error.hpp"

namespace adanat {

void PPOConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw ConfigError("ppo.clip_epsilon must lie in (0, 1)");
  if (!(value_coef >= 0.0)) throw ConfigError("ppo.value_coef must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("ppo.lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("ppo betas must lie in [0, 1)");
  if (updates_per_loop < 1) throw ConfigError("ppo.updates_per_loop must be >= 1");
  if (batch_size < 1) throw ConfigError("ppo.batch_size must be >= 1");
  if (loops < 0) throw ConfigError("ppo.loops must be >= 0");
  if (!(sigma_initial > 0.0) || !(sigma_final > 0.0)) throw ConfigError("ppo sigma values must be > 0");
  if (!(max_log_ratio > 0.0)) throw ConfigError("ppo.max_log_ratio must be > 0");
}

double anneal_sigma(int loop, const PPOConfig& cfg) {
  return loop < cfg.sigma_switch_loop ? cfg.sigma_initial : cfg.sigma_final;
}

std::vector<double> advantage(const Trajectory& traj) {
  std::vector<double> a;
  a.reserve(traj.steps.size());
  for (const auto& s : traj.steps) a.push_back(traj.reward - s.value);
  return a;
}

double clipped_surrogate(double rho, double adv, double eps) {
  return std::min(rho * adv, std::clamp(rho, 1.0 - eps, 1.0 + eps) * adv);
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.size() < 2) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  for (double& a : adv) a = (a - mean) / (sd + 1e-8);
}

PPOBatch make_ppo_batch(const std::vector<Trajectory>& trajs, int feature_dim, bool normalize) {
  PPOBatch b;
  std::size_t total = 0;
  for (const auto& tr : trajs) total += tr.steps.size();
  b.features = Matrix::Zero(feature_dim, static_cast<Eigen::Index>(total));
  std::size_t j = 0;
  for (const auto& tr : trajs) {
    const std::vector<double> adv = advantage(tr);
    for (std::size_t s = 0; s < tr.steps.size(); ++s, ++j) {
      const StepRecord& r = tr.steps[s];
      if (r.features.size() > 0) {
        if (r.features.size() != feature_dim) throw ShapeError("ppo: recorded features have the wrong dimension");
        b.features.col(static_cast<Eigen::Index>(j)) = r.features;
      }
      if (!std::isfinite(r.logprob)) throw NumericalError("ppo: non-finite stored logprob");
      b.steps.push_back(r.t);
      b.raw.push_back(r.raw);
      b.old_logprob.push_back(r.logprob);
      b.advantage.push_back(adv[s]);
      b.reward.push_back(tr.reward);
    }
  }
  if (normalize) normalize_advantages(b.advantage);
  return b;
}

PPOObjective ppo_objective(const PPOBatch& batch, const PolicyNet& net, const PPOConfig& cfg, bool with_grad) {
  PPOObjective res;
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) {
    if (with_grad) res.grad = Vector::Zero(static_cast<Eigen::Index>(net.net().num_params()));
    return res;
  }
  const ForwardTrace tr = net.forward(batch.features, batch.steps);
  const double sigma = net.sigma();
  const double inv_var = 1.0 / (sigma * sigma);
  const double eps = cfg.clip_epsilon;
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix upstream = Matrix::Zero(PolicyNet::kOutputs, n);
  double ratio_sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto js = static_cast<std::size_t>(j);
    RawAction mu;
    for (int d = 0; d < 4; ++d) mu[d] = tr.output(d, j);
    const double lp = gaussian_logprob(batch.raw[js], mu, sigma);
    double diff = lp - batch.old_logprob[js];
    bool clamped = false;
    if (!(std::abs(diff) <= cfg.max_log_ratio)) {
      if (std::isnan(diff)) throw NumericalError("ppo: NaN log-ratio");
      diff = std::clamp(diff, -cfg.max_log_ratio, cfg.max_log_ratio);
      clamped = true;
      ++res.clamped;
    }
    const double rho = std::exp(diff);
    const double adv = batch.advantage[js];
    const double unclipped = rho * adv;
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps) * adv;
    const double v = tr.output(PolicyNet::kValueRow, j);
    const double err = v - batch.reward[js];
    res.surrogate += std::min(unclipped, clipped);
    res.value_loss += err * err;
    ratio_sum += rho;
    // Only the unclipped branch depends on phi; when the clipped branch is strictly smaller rho sits
    // outside the trust region and the term is locally constant.
    if (!clamped && unclipped <= clipped) {
      for (int d = 0; d < 4; ++d) upstream(d, j) = adv * rho * (batch.raw[js][d] - mu[d]) * inv_var * inv_n;
    }
    upstream(PolicyNet::kValueRow, j) = -2.0 * cfg.value_coef * err * inv_n;
  }
  res.surrogate *= inv_n;
  res.value_loss *= inv_n;
  res.mean_ratio = ratio_sum * inv_n;
  res.objective = res.surrogate - cfg.value_coef * res.value_loss;
  if (!std::isfinite(res.objective)) throw NumericalError("ppo: non-finite objective");
  if (with_grad) res.grad = net.net().backward(tr, upstream);
  return res;
}

std::vector<PPOObjective> ppo_update(const PPOBatch& batch, PolicyNet& net, Adam& optimizer, const PPOConfig& cfg) {
  std::vector<PPOObjective> out;
  for (int u = 0; u < cfg.updates_per_loop; ++u) {
    PPOObjective obj = ppo_objective(batch, net, cfg, true);
    optimizer.step(net.net().params(), -obj.grad);
    obj.grad.resize(0);
    out.push_back(std::move(obj));
  }
  return out;
}

namespace {

constexpr std::uint64_t kClassStream = 0xC1A55;
constexpr std::uint64_t kNoiseStream = 0x4015E;

// Splits [0, n) into contiguous chunks and runs fn(begin, end) on up to `workers` threads.
template <typename Fn>
void parallel_chunks(int n, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers <= 1) {
    if (n > 0) fn(0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int begin = static_cast<int>(static_cast<long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long>(n) * (w + 1) / workers);
    threads.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

std::vector<int> draw_classes(int n, int n_classes, std::uint64_t seed) {
  std::vector<int> classes(static_cast<std::size_t>(std::max(n, 0)));
  const std::uint64_t base = derive_seed(seed, kClassStream);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(i)));
    classes[static_cast<std::size_t>(i)] = uniform_int(rng, n_classes);
  }
  return classes;
}

namespace {

std::vector<Trajectory> generate_range(const MaskedPredictor& pred, const StepProvider& provider, int horizon,
                                       const std::vector<int>& classes, int begin, int end, std::uint64_t seed,
                                       bool record_features) {
  std::vector<Rng> rngs;
  rngs.reserve(static_cast<std::size_t>(end - begin));
  for (int i = begin; i < end; ++i) rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
  std::vector<int> cls(classes.begin() + begin, classes.begin() + end);
  return generate_batch(pred, provider, horizon, cls, rngs, record_features);
}

}  // namespace

std::vector<Trajectory> generate_parallel(const MaskedPredictor& pred, const StepProvider& provider, int horizon,
                                          int n, std::uint64_t seed, int workers, bool record_features,
                                          const std::vector<int>* classes) {
  const std::vector<int> drawn = classes != nullptr ? *classes : draw_classes(n, pred.n_classes(), seed);
  if (static_cast<int>(drawn.size()) != n) throw ShapeError("generate: class list does not match n");
  std::vector<Trajectory> out(static_cast<std::size_t>(std::max(n, 0)));
  parallel_chunks(n, workers, [&](int begin, int end) {
    auto part = generate_range(pred, provider, horizon, drawn, begin, end, seed, record_features);
    std::move(part.begin(), part.end(), out.begin() + begin);
  });
  return out;
}

CollectResult collect(const PolicyNet& net, const MaskedPredictor& pred, const BatchReward& reward, int n,
                      std::uint64_t seed, const CollectOptions& opts) {
  CollectResult res;
  if (n <= 0) return res;
  const int horizon = net.horizon();
  const std::vector<int> classes = draw_classes(n, pred.n_classes(), seed);

  std::vector<std::vector<RawAction>> noise;
  if (opts.noise_group > 0) {
    const std::uint64_t base = derive_seed(seed, kNoiseStream);
    noise.resize(static_cast<std::size_t>(n));
    for (int g = 0; g * opts.noise_group < n; ++g) {
      Rng rng(derive_seed(base, static_cast<std::uint64_t>(g)));
      std::vector<RawAction> z(static_cast<std::size_t>(horizon));
      for (auto& a : z) {
        for (double& x : a) x = standard_normal(rng);
      }
      for (int i = g * opts.noise_group; i < std::min(n, (g + 1) * opts.noise_group); ++i) {
        noise[static_cast<std::size_t>(i)] = z;
      }
    }
  }

  std::vector<Trajectory> trajs(static_cast<std::size_t>(n));
  parallel_chunks(n, opts.workers, [&](int begin, int end) {
    std::vector<std::vector<RawAction>> slice;
    if (!noise.empty()) slice.assign(noise.begin() + begin, noise.begin() + end);
    const PolicyProvider provider(net, true, noise.empty() ? nullptr : &slice);
    auto part = generate_range(pred, provider, horizon, classes, begin, end, seed, opts.record_features);
    std::move(part.begin(), part.end(), trajs.begin() + begin);
  });

  const std::vector<double> r = reward(trajs);
  if (r.size() != trajs.size()) throw std::logic_error("collect: reward function returned the wrong count");
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    if (!std::isfinite(r[i])) {
      ++res.dropped;
      continue;
    }
    trajs[i].reward = r[i];
    res.trajectories.push_back(std::move(trajs[i]));
  }
  return res;
}

void RewardModelConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("reward.lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("reward betas must lie in [0, 1)");
  }
  if (updates_per_loop < 0) throw ConfigError("reward.updates_per_loop must be >= 0");
  if (hidden < 1) throw ConfigError("reward.hidden must be >= 1");
  if (real_batch < 1) throw ConfigError("reward.real_batch must be >= 1");
  if (fid_group_size < 2) throw ConfigError("reward.fid_group_size must be >= 2");
  if (kind == RewardKind::kExternal && external_command.empty()) {
    throw ConfigError("reward.external_command is required for the external reward");
  }
}

std::vector<Image> real_images(const WorldSpec& world, int n, std::uint64_t seed) {
  const Codebook cb = Codebook::make_default(world.codebook_size);
  const std::vector<int> classes = draw_classes(n, world.n_classes, seed);
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(decode_tokens(sample_world(world, classes[static_cast<std::size_t>(i)], rng), cb));
  }
  return out;
}

std::vector<Image> sample_images(const MaskedPredictor& pred, const StepProvider& provider, const WorldSpec& world,
                                 int horizon, int n, std::uint64_t seed, int workers,
                                 std::vector<Trajectory>* trajectories) {
  const Codebook cb = Codebook::make_default(world.codebook_size);
  std::vector<Trajectory> trajs = generate_parallel(pred, provider, horizon, n, seed, workers);
  std::vector<Image> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back(decode_tokens(t.final_tokens, cb));
  if (trajectories != nullptr) *trajectories = std::move(trajs);
  return out;
}

Trainer::Trainer(const MaskedPredictor& pred, const WorldSpec& world, PolicyNet& net, TrainerOptions opts,
                 const GaussianStats* reference)
    : pred_(pred),
      world_(world),
      codebook_(Codebook::make_default(world.codebook_size)),
      net_(net),
      opts_(std::move(opts)),
      reference_(reference),
      policy_opt_(net.net().num_params(), opts_.ppo.adam()) {
  opts_.ppo.validate();
  opts_.reward.validate();
  if (pred.n_tokens() != world.n_tokens || pred.codebook_size() != world.codebook_size) {
    throw ConfigError("trainer: backbone does not match the world spec");
  }
  if (opts_.reward.kind == RewardKind::kFidBatch && net.adaptive()) {
    throw ConfigError("fid-batch reward requires the non-adaptive policy");
  }
  if (opts_.reward.kind == RewardKind::kFidBatch && reference_ == nullptr) {
    throw ConfigError("fid-batch reward requires reference statistics");
  }
  if (opts_.reward.kind == RewardKind::kAdversarial) {
    const int dim = world.n_tokens * codebook_.patch_size() * codebook_.patch_size() * codebook_.channels();
    Rng init(derive_seed(opts_.seed, 0xD15C));
    disc_.emplace(dim, opts_.reward.hidden, init);
    disc_opt_ = Adam(disc_->net().num_params(), opts_.reward.adam());
  }
  if (opts_.reward.kind == RewardKind::kExternal) hook_ = make_subprocess_hook(opts_.reward.external_command);
}

void Trainer::set_discriminator(Discriminator d) {
  disc_.emplace(std::move(d));
  disc_opt_ = Adam(disc_->net().num_params(), opts_.reward.adam());
}

std::vector<Image> Trainer::decode(const std::vector<Trajectory>& trajs) const {
  std::vector<Image> out;
  out.reserve(trajs.size());
  for (const auto& t : trajs) out.push_back(decode_tokens(t.final_tokens, codebook_));
  return out;
}

std::vector<Image> Trainer::real_batch(int n, std::uint64_t seed) const { return real_images(world_, n, seed); }

std::vector<double> Trainer::score(const std::vector<Trajectory>& trajs) const {
  const std::vector<Image> images = decode(trajs);
  std::vector<double> r(images.size(), std::numeric_limits<double>::quiet_NaN());
  switch (opts_.reward.kind) {
    case RewardKind::kAdversarial:
      if (!images.empty()) r = disc_->scores(images);
      break;
    case RewardKind::kFidBatch: {
      const int g = opts_.reward.fid_group_size;
      const int n = static_cast<int>(images.size());
      for (int begin = 0; begin < n; begin += g) {
        int end = std::min(n, begin + g);
        // A trailing group too small for a covariance joins its predecessor.
        if (n - end < 2) end = n;
        const std::vector<Image> group(images.begin() + begin, images.begin() + end);
        const double value = group.size() >= 2 ? fid_batch_reward(group, *reference_)
                                                : std::numeric_limits<double>::quiet_NaN();
        std::fill(r.begin() + begin, r.begin() + end, value);
        if (end == n) break;
      }
      break;
    }
    case RewardKind::kExternal:
      for (std::size_t i = 0; i < images.size(); ++i) {
        try {
          r[i] = external_scorer(images[i], hook_);
        } catch (const RewardUnavailable&) {
          r[i] = std::numeric_limits<double>::quiet_NaN();
        }
      }
      break;
  }
  return r;
}

double Trainer::toy_fid(int n_samples, std::uint64_t seed) const {
  if (reference_ == nullptr) throw ConfigError("toy-FID requires reference statistics");
  const PolicyProvider provider(net_, false);
  const auto images = sample_images(pred_, provider, world_, net_.horizon(), n_samples, seed, opts_.workers);
  return frechet_distance(fit_stats(images), *reference_);
}

LoopLog Trainer::run_loop(int loop) {
  LoopLog log;
  log.loop = loop;
  log.sigma = anneal_sigma(loop, opts_.ppo);
  net_.set_sigma(log.sigma);
  const std::uint64_t loop_seed = derive_seed(opts_.seed, static_cast<std::uint64_t>(loop) + 1);

  CollectOptions copts;
  copts.workers = opts_.workers;
  copts.noise_group = opts_.reward.kind == RewardKind::kFidBatch ? opts_.reward.fid_group_size : 0;
  copts.record_features = net_.adaptive();
  const CollectResult batch =
      collect(net_, pred_, [this](const std::vector<Trajectory>& t) { return score(t); }, opts_.ppo.batch_size,
              derive_seed(loop_seed, 1), copts);
  log.dropped = batch.dropped;
  if (batch.trajectories.empty()) throw RewardUnavailable("every trajectory in the batch lost its reward");
  double reward_sum = 0.0;
  for (const auto& t : batch.trajectories) reward_sum += t.reward;
  log.mean_reward = reward_sum / static_cast<double>(batch.trajectories.size());

  // phi_old is implicit: the stored logprobs were produced by the pre-update parameters.
  const PPOBatch ppo_batch = make_ppo_batch(batch.trajectories, net_.feature_dim(), opts_.ppo.normalize_advantages);
  const std::vector<PPOObjective> steps = ppo_update(ppo_batch, net_, policy_opt_, opts_.ppo);
  log.ppo_objective = steps.front().objective;
  log.value_loss = steps.front().value_loss;
  for (const auto& s : steps) log.clamped += s.clamped;

  if (disc_ && opts_.reward.updates_per_loop > 0) {
    const PolicyProvider current(net_, true);
    const std::vector<Trajectory> fresh =
        generate_parallel(pred_, current, net_.horizon(), opts_.reward.real_batch, derive_seed(loop_seed, 2),
                          opts_.workers);
    const std::vector<Image> fake = decode(fresh);
    const std::vector<Image> real = real_batch(opts_.reward.real_batch, derive_seed(loop_seed, 3));
    for (int u = 0; u < opts_.reward.updates_per_loop; ++u) {
      const DiscUpdateResult r = disc_update(*disc_, real, fake, disc_opt_, opts_.reward.loss);
      if (u == 0) log.disc_acc = r.accuracy;
    }
  }

  if (reference_ != nullptr && opts_.fid_every > 0 &&
      (loop % opts_.fid_every == 0 || loop + 1 == opts_.ppo.loops)) {
    log.toy_fid = toy_fid(opts_.fid_samples, derive_seed(opts_.seed, 0xF1D));
  }
  return log;
}

}  // namespace adanat
