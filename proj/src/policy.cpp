#include "adanat/policy.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "adanat/checkpoint.hpp"
#include "adanat/error.hpp"

namespace adanat {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

PolicyStepParams squash(const RawAction& raw, const SquashBounds& b) {
  PolicyStepParams p;
  p.m = logistic(raw[0]);
  p.tau1 = b.tau_min + (b.tau_max - b.tau_min) * logistic(raw[1]);
  p.tau2 = b.tau_min + (b.tau_max - b.tau_min) * logistic(raw[2]);
  p.w = b.w_max * logistic(raw[3]);
  return p;
}

double gaussian_logprob(const RawAction& raw, const RawAction& mean, double sigma) {
  const double norm = -std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (int d = 0; d < 4; ++d) {
    const double z = (raw[d] - mean[d]) / sigma;
    lp += norm - 0.5 * z * z;
  }
  return lp;
}

GenerationState encode_state(const MaskedPredictor& pred, const TokenSequence& v, int cls, int t) {
  GenerationState s;
  s.t = t;
  s.features = pred.features(v, cls);
  s.v = v;
  return s;
}

namespace {

SmallNet make_policy_net(int feature_dim, int hidden, int horizon) {
  std::vector<LayerSpec> layers = {
      {LayerKind::kAffine, feature_dim, hidden},
      {LayerKind::kAdaLN, hidden, hidden},
      {LayerKind::kActivation, hidden, hidden, Activation::kSilu},
      {LayerKind::kAffine, hidden, hidden},
      {LayerKind::kAdaLN, hidden, hidden},
      {LayerKind::kActivation, hidden, hidden, Activation::kSilu},
      {LayerKind::kAffine, hidden, PolicyNet::kOutputs, Activation::kIdentity, /*zero_init=*/true},
  };
  return SmallNet(std::move(layers), horizon);
}

}  // namespace

PolicyNet::PolicyNet(int feature_dim, PolicyNetConfig cfg, Rng& init_rng)
    : cfg_(cfg), net_(make_policy_net(feature_dim, cfg.hidden, cfg.horizon)) {
  if (cfg_.horizon < 1) throw ConfigError("policy: horizon must be >= 1");
  set_sigma(cfg_.sigma);
  net_.initialize(init_rng);
}

PolicyNet::PolicyNet(SmallNet net, PolicyNetConfig cfg) : cfg_(cfg), net_(std::move(net)) {
  if (net_.output_dim() != kOutputs || net_.cond_dim() != cfg_.horizon) {
    throw ShapeError("policy: network shape does not match the configuration");
  }
  set_sigma(cfg_.sigma);
}

void PolicyNet::set_sigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("policy: sigma must be positive");
  cfg_.sigma = sigma;
}

Matrix PolicyNet::inputs(const Matrix& features) const {
  if (features.rows() != feature_dim()) throw ShapeError("policy: feature dimension mismatch");
  if (cfg_.adaptive) return features;
  return Matrix::Zero(features.rows(), features.cols());
}

Matrix PolicyNet::timestep_onehot(std::span<const int> steps) const {
  Matrix c = Matrix::Zero(cfg_.horizon, static_cast<Eigen::Index>(steps.size()));
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (steps[s] < 0 || steps[s] >= cfg_.horizon) throw std::out_of_range("policy: timestep out of range");
    c(steps[s], static_cast<Eigen::Index>(s)) = 1.0;
  }
  return c;
}

ForwardTrace PolicyNet::forward(const Matrix& features, std::span<const int> steps) const {
  if (static_cast<std::size_t>(features.cols()) != steps.size()) throw ShapeError("policy: batch size mismatch");
  const Matrix cond = timestep_onehot(steps);
  return net_.forward_trace(inputs(features), &cond);
}

RawAction PolicyNet::mean(const GenerationState& s) const {
  const int t = s.t;
  const ForwardTrace tr = forward(s.features, std::span<const int>(&t, 1));
  RawAction mu;
  for (int d = 0; d < 4; ++d) mu[d] = tr.output(d, 0);
  return mu;
}

void PolicyNet::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "policy";
  ckpt.meta["sigma"] = std::to_string(cfg_.sigma);
  ckpt.meta["tau_min"] = std::to_string(cfg_.bounds.tau_min);
  ckpt.meta["tau_max"] = std::to_string(cfg_.bounds.tau_max);
  ckpt.meta["w_max"] = std::to_string(cfg_.bounds.w_max);
  ckpt.meta["horizon"] = std::to_string(cfg_.horizon);
  ckpt.meta["hidden"] = std::to_string(cfg_.hidden);
  ckpt.meta["adaptive"] = cfg_.adaptive ? "1" : "0";
  ckpt.nets.push_back(net_);
  save_checkpoint(path, ckpt);
}

PolicyNet PolicyNet::load(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta["kind"] != "policy" || ckpt.nets.size() != 1) throw MissingArtifactError(path + " is not a policy checkpoint");
  PolicyNetConfig cfg;
  try {
    cfg.sigma = std::stod(ckpt.meta.at("sigma"));
    cfg.bounds.tau_min = std::stod(ckpt.meta.at("tau_min"));
    cfg.bounds.tau_max = std::stod(ckpt.meta.at("tau_max"));
    cfg.bounds.w_max = std::stod(ckpt.meta.at("w_max"));
    cfg.horizon = std::stoi(ckpt.meta.at("horizon"));
    cfg.hidden = std::stoi(ckpt.meta.at("hidden"));
    cfg.adaptive = ckpt.meta.at("adaptive") == "1";
  } catch (const std::exception& e) {
    throw MissingArtifactError(path + ": policy metadata incomplete");
  }
  return PolicyNet(std::move(ckpt.nets[0]), cfg);
}

StochasticAction act_stochastic(const PolicyNet& net, const GenerationState& state, Rng& rng) {
  const RawAction mu = net.mean(state);
  StochasticAction out;
  for (int d = 0; d < 4; ++d) out.raw[d] = mu[d] + net.sigma() * standard_normal(rng);
  out.logprob = gaussian_logprob(out.raw, mu, net.sigma());
  out.action = squash(out.raw, net.bounds());
  return out;
}

PolicyStepParams act_deterministic(const PolicyNet& net, const GenerationState& state) {
  return squash(net.mean(state), net.bounds());
}

double value(const PolicyNet& net, const GenerationState& state) {
  const int t = state.t;
  return net.forward(state.features, std::span<const int>(&t, 1)).output(PolicyNet::kValueRow, 0);
}

PolicyProvider::PolicyProvider(const PolicyNet& net, bool stochastic, const std::vector<std::vector<RawAction>>* noise)
    : net_(net), stochastic_(stochastic), noise_(noise) {}

std::vector<StepDecision> PolicyProvider::decide(int t, int horizon, const Matrix& features,
                                                 std::span<Rng> rngs) const {
  if (horizon != net_.horizon()) throw ConfigError("policy: trained for a different horizon T");
  const auto b = static_cast<Eigen::Index>(rngs.size());
  const Matrix feats = net_.adaptive() ? features : Matrix::Zero(net_.feature_dim(), b);
  if (feats.cols() != b) throw ShapeError("policy: feature batch does not match generator count");
  const std::vector<int> steps(static_cast<std::size_t>(b), t);
  const ForwardTrace tr = net_.forward(feats, steps);
  std::vector<StepDecision> out(static_cast<std::size_t>(b));
  for (Eigen::Index s = 0; s < b; ++s) {
    RawAction mu;
    for (int d = 0; d < 4; ++d) mu[d] = tr.output(d, s);
    auto& dec = out[static_cast<std::size_t>(s)];
    dec.value = tr.output(PolicyNet::kValueRow, s);
    if (stochastic_) {
      for (int d = 0; d < 4; ++d) {
        const double z = noise_ != nullptr ? (*noise_)[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)][d]
                                           : standard_normal(rngs[static_cast<std::size_t>(s)]);
        dec.raw[d] = mu[d] + net_.sigma() * z;
      }
      dec.logprob = gaussian_logprob(dec.raw, mu, net_.sigma());
    } else {
      dec.raw = mu;
      dec.logprob = gaussian_logprob(mu, mu, net_.sigma());
    }
    dec.params = squash(dec.raw, net_.bounds());
  }
  return out;
}

}  // namespace adanat
