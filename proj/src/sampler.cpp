#include "adanat/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "adanat/error.hpp"

namespace adanat {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double eval_family(const ParamSchedule& s, int t, int horizon) {
  const double T = horizon;
  switch (s.family) {
    case ScheduleFamily::kCosine: return s.scale * std::cos(std::numbers::pi * (t + 1) / (2.0 * T));
    case ScheduleFamily::kConstant: return s.scale;
    case ScheduleFamily::kDecay: return s.scale * (T - t) / T;
    case ScheduleFamily::kRamp: return s.scale * (t + 1) / T;
  }
  return s.scale;
}

}  // namespace

bool PolicyStepParams::valid() const {
  return std::isfinite(m) && std::isfinite(tau1) && std::isfinite(tau2) && std::isfinite(w) && m >= 0.0 && m <= 1.0 &&
         tau1 > 0.0 && tau2 > 0.0 && w >= 0.0;
}

void PolicyStepParams::validate() const {
  if (!std::isfinite(m) || m < 0.0 || m > 1.0) throw std::invalid_argument(fmt::format("invalid m = {}", m));
  if (!std::isfinite(tau1) || tau1 <= 0.0) throw std::invalid_argument(fmt::format("invalid tau1 = {}", tau1));
  if (!std::isfinite(tau2) || tau2 <= 0.0) throw std::invalid_argument(fmt::format("invalid tau2 = {}", tau2));
  if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument(fmt::format("invalid w = {}", w));
}

std::string to_string(ScheduleFamily f) {
  switch (f) {
    case ScheduleFamily::kCosine: return "cosine";
    case ScheduleFamily::kConstant: return "constant";
    case ScheduleFamily::kDecay: return "decay";
    case ScheduleFamily::kRamp: return "ramp";
  }
  return "constant";
}

ScheduleFamily parse_schedule_family(const std::string& name) {
  if (name == "cosine") return ScheduleFamily::kCosine;
  if (name == "constant") return ScheduleFamily::kConstant;
  if (name == "decay") return ScheduleFamily::kDecay;
  if (name == "ramp") return ScheduleFamily::kRamp;
  throw ConfigError("unknown schedule family '" + name + "'");
}

void ScheduleConfig::validate() const {
  if (horizon < 1) throw ConfigError("schedule: T must be >= 1");
  if (tau2.scale < 0.0 || w.scale < 0.0) throw ConfigError("schedule: lambda and k must be >= 0");
  if (tau1.scale <= 0.0) throw ConfigError("schedule: tau1 scale must be positive");
  if (m.scale < 0.0 || m.scale > 1.0) throw ConfigError("schedule: m scale must lie in [0, 1]");
}

PolicyStepParams static_schedule(const ScheduleConfig& cfg, int t) {
  if (t < 0 || t >= cfg.horizon) throw std::out_of_range("static_schedule: t out of range");
  PolicyStepParams p;
  // cos(pi/2) evaluates to ~6e-17; clamp into [0, 1].
  p.m = std::clamp(eval_family(cfg.m, t, cfg.horizon), 0.0, 1.0);
  p.tau1 = std::max(eval_family(cfg.tau1, t, cfg.horizon), kMinTemperature);
  p.tau2 = std::max(eval_family(cfg.tau2, t, cfg.horizon), kMinTemperature);
  p.w = std::max(eval_family(cfg.w, t, cfg.horizon), 0.0);
  return p;
}

Matrix cfg_logits(const Matrix& l_cond, const Matrix& l_uncond, double w) {
  if (l_cond.rows() != l_uncond.rows() || l_cond.cols() != l_uncond.cols()) {
    throw ShapeError("cfg_logits: conditional and unconditional logits differ in shape");
  }
  if (!(w >= 0.0)) throw std::invalid_argument("cfg_logits: w must be >= 0");
  return l_cond + w * (l_cond - l_uncond);
}

int remask_count(double m, int n) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("remask_count: m must lie in [0, 1]");
  constexpr long long kScale = 1'000'000'000'000LL;
  const auto num = static_cast<__int128>(std::llround(m * static_cast<double>(kScale))) * n;
  return static_cast<int>((num + kScale - 1) / kScale);
}

DecodeResult parallel_decode(const TokenSequence& v, const Matrix& logits, double tau1, Rng& rng) {
  if (!(tau1 > 0.0) || !std::isfinite(tau1)) throw std::invalid_argument("parallel_decode: tau1 must be positive");
  if (logits.rows() != v.size()) throw ShapeError("parallel_decode: logits must be N x K");
  if (!logits.allFinite()) throw NumericalError("parallel_decode: non-finite logits");
  const auto k = logits.cols();
  DecodeResult out{v, std::vector<double>(v.size(), kInf)};
  std::vector<double> weights(static_cast<std::size_t>(k));
  for (int i = 0; i < v.size(); ++i) {
    if (v.tokens[i] != kMask) continue;
    const auto row = logits.row(i);
    const double mx = row.maxCoeff();
    const double log_z = mx + std::log((row.array() - mx).exp().sum());
    for (Eigen::Index j = 0; j < k; ++j) weights[j] = std::exp((row[j] - mx) / tau1);
    const int tok = sample_categorical(weights, rng);
    out.guess.tokens[i] = tok;
    out.confidence[i] = row[tok] - log_z;
  }
  return out;
}

StepOutcome remask(const TokenSequence& guess, std::span<const double> confidence, double m, double tau2, Rng& rng) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("remask: m must lie in [0, 1]");
  if (!(tau2 > 0.0) || !std::isfinite(tau2)) throw std::invalid_argument("remask: tau2 must be positive");
  if (static_cast<int>(confidence.size()) != guess.size()) throw ShapeError("remask: confidence length mismatch");
  const int n = guess.size();
  std::vector<int> fresh;
  for (int i = 0; i < n; ++i) {
    if (!(confidence[i] == kInf)) fresh.push_back(i);
  }
  const int n_fresh = static_cast<int>(fresh.size());
  const int n_remask = std::min(remask_count(m, n), n_fresh);
  const int keep_fresh = n_fresh - n_remask;

  StepOutcome out;
  out.guess = guess;
  out.confidence.assign(confidence.begin(), confidence.end());
  out.next = guess;
  out.remasked = n_remask;

  std::vector<char> kept(n, 0);
  for (int i = 0; i < n; ++i) {
    if (confidence[i] == kInf) kept[i] = 1;
  }
  if (n_remask > 0 && keep_fresh > 0) {
    std::vector<std::pair<double, int>> keys;
    keys.reserve(fresh.size());
    for (int i : fresh) keys.emplace_back(confidence[i] + tau2 * standard_gumbel(rng), i);
    std::partial_sort(keys.begin(), keys.begin() + keep_fresh, keys.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    for (int j = 0; j < keep_fresh; ++j) kept[keys[j].second] = 1;
  } else if (n_remask == 0) {
    for (int i : fresh) kept[i] = 1;
  }
  for (int i = 0; i < n; ++i) {
    if (kept[i]) {
      out.keep.push_back(i);
    } else {
      out.next.tokens[i] = kMask;
    }
  }
  return out;
}

std::vector<StepDecision> StaticScheduleProvider::decide(int t, int horizon, const Matrix&, std::span<Rng> rngs) const {
  ScheduleConfig cfg = cfg_;
  cfg.horizon = horizon;
  StepDecision d;
  d.params = static_schedule(cfg, t);
  return std::vector<StepDecision>(rngs.size(), d);
}

std::vector<Trajectory> generate_batch(const MaskedPredictor& pred, const StepProvider& provider, int horizon,
                                       const std::vector<int>& classes, std::span<Rng> rngs, bool record_features) {
  if (horizon < 1) throw std::invalid_argument("generate: T must be >= 1");
  if (classes.size() != rngs.size()) throw ShapeError("generate: need one generator per sample");
  const std::size_t b = classes.size();
  const int n = pred.n_tokens();
  const int k = pred.codebook_size();
  std::vector<TokenSequence> canvas(b, TokenSequence::all_masked(pred.grid_height(), pred.grid_width()));
  std::vector<Trajectory> out(b);
  for (std::size_t s = 0; s < b; ++s) out[s].cls = classes[s];
  if (b == 0) return out;

  std::vector<const TokenSequence*> ptrs(b);
  for (int t = 0; t < horizon; ++t) {
    for (std::size_t s = 0; s < b; ++s) ptrs[s] = &canvas[s];
    PredictorOutput cond = pred.predict(ptrs, classes, provider.needs_features());
    std::vector<StepDecision> decisions = provider.decide(t, horizon, cond.features, rngs);
    if (decisions.size() != b) throw std::logic_error("generate: provider returned the wrong number of decisions");
    for (auto& d : decisions) {
      d.params.validate();
      if (t == horizon - 1) d.params.m = 0.0;
    }

    // Unconditional branch only for samples that use guidance.
    std::vector<std::size_t> guided;
    for (std::size_t s = 0; s < b; ++s) {
      if (decisions[s].params.w != 0.0) guided.push_back(s);
    }
    Matrix uncond_logits;
    if (!guided.empty()) {
      std::vector<const TokenSequence*> gp;
      for (std::size_t s : guided) gp.push_back(&canvas[s]);
      uncond_logits = pred.predict(gp, std::vector<int>(guided.size(), kNullClass), false).logits;
    }

    std::size_t gi = 0;
    for (std::size_t s = 0; s < b; ++s) {
      Matrix l_cond = Eigen::Map<const Matrix>(cond.logits.col(static_cast<Eigen::Index>(s)).data(), k, n).transpose();
      Matrix logits;
      if (gi < guided.size() && guided[gi] == s) {
        Matrix l_unc =
            Eigen::Map<const Matrix>(uncond_logits.col(static_cast<Eigen::Index>(gi)).data(), k, n).transpose();
        logits = cfg_logits(l_cond, l_unc, decisions[s].params.w);
        ++gi;
      } else {
        logits = std::move(l_cond);
      }
      const DecodeResult dec = parallel_decode(canvas[s], logits, decisions[s].params.tau1, rngs[s]);
      StepOutcome step = remask(dec.guess, dec.confidence, decisions[s].params.m, decisions[s].params.tau2, rngs[s]);
      canvas[s] = std::move(step.next);

      StepRecord rec;
      rec.t = t;
      rec.action = decisions[s].params;
      rec.raw = decisions[s].raw;
      rec.logprob = decisions[s].logprob;
      rec.value = decisions[s].value;
      rec.masked_count = canvas[s].masked_count();
      if (record_features && cond.features.size() > 0) rec.features = cond.features.col(static_cast<Eigen::Index>(s));
      out[s].steps.push_back(std::move(rec));
    }
  }
  for (std::size_t s = 0; s < b; ++s) out[s].final_tokens = std::move(canvas[s]);
  return out;
}

std::pair<TokenSequence, Trajectory> generate(const MaskedPredictor& pred, const StepProvider& provider, int horizon,
                                              int cls, Rng& rng) {
  auto trajs = generate_batch(pred, provider, horizon, {cls}, std::span<Rng>(&rng, 1));
  TokenSequence final_tokens = trajs[0].final_tokens;
  return {std::move(final_tokens), std::move(trajs[0])};
}

void write_trajectory_csv(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  out << "sample,t,m,tau1,tau2,w,masked_count,logprob,value\n";
  for (std::size_t s = 0; s < trajectories.size(); ++s) {
    for (const auto& r : trajectories[s].steps) {
      out << fmt::format("{},{},{},{},{},{},{},{},{}\n", s, r.t, r.action.m, r.action.tau1, r.action.tau2, r.action.w,
                         r.masked_count, r.logprob, r.value);
    }
  }
}

}  // namespace adanat
