#pragma once

#include <array>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adanat/backbone.hpp"
#include "adanat/rng.hpp"
#include "adanat/smallnet.hpp"
#include "adanat/token_world.hpp"

namespace adanat {

// One decoding step's generation policy: re-masking ratio, sampling temperature,
// re-masking temperature, guidance scale.
struct PolicyStepParams {
  double m = 0.0;
  double tau1 = 1.0;
  double tau2 = 1.0;
  double w = 0.0;

  bool valid() const;
  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

inline constexpr double kMinTemperature = 1e-6;

// cosine: scale * cos(pi (t + 1) / 2T)   constant: scale
// decay:  scale * (T - t) / T            ramp:     scale * (t + 1) / T
enum class ScheduleFamily { kCosine, kConstant, kDecay, kRamp };

struct ParamSchedule {
  ScheduleFamily family = ScheduleFamily::kConstant;
  double scale = 1.0;
};

std::string to_string(ScheduleFamily f);
ScheduleFamily parse_schedule_family(const std::string& name);

// Defaults are the MaskGIT-style baseline: cosine m, tau1 = 1, tau2 = lambda (T - t) / T,
// w = k (t + 1) / T with lambda = 1 and k = 3.
struct ScheduleConfig {
  int horizon = 4;
  ParamSchedule m{ScheduleFamily::kCosine, 1.0};
  ParamSchedule tau1{ScheduleFamily::kConstant, 1.0};
  ParamSchedule tau2{ScheduleFamily::kDecay, 1.0};
  ParamSchedule w{ScheduleFamily::kRamp, 3.0};

  double lambda() const { return tau2.scale; }
  double k() const { return w.scale; }
  void validate() const;
};

PolicyStepParams static_schedule(const ScheduleConfig& cfg, int t);

// l_cond + w (l_cond - l_uncond).
Matrix cfg_logits(const Matrix& l_cond, const Matrix& l_uncond, double w);

// ceil(m * N) with m first rounded to 12 decimals, computed in exact integer arithmetic.
int remask_count(double m, int n);

struct DecodeResult {
  TokenSequence guess;
  // log softmax(logits) of the drawn token at masked positions, +inf at committed ones.
  std::vector<double> confidence;
};

// Samples every MASK position from softmax(logits / tau1); committed positions are copied.
DecodeResult parallel_decode(const TokenSequence& v, const Matrix& logits, double tau1, Rng& rng);

struct StepOutcome {
  TokenSequence next;
  TokenSequence guess;
  std::vector<double> confidence;
  std::vector<int> keep;  // ascending
  int remasked = 0;
};

// Keeps every committed (+inf) position and N - ceil(mN) positions overall; when ceil(mN)
// exceeds the number of freshly decoded positions only those are re-masked. Fresh positions
// are kept by Gumbel-top-k on c_i + tau2 * g_i, i.e. sampled without replacement from
// softmax(c / tau2).
StepOutcome remask(const TokenSequence& guess, std::span<const double> confidence, double m, double tau2, Rng& rng);

struct StepDecision {
  PolicyStepParams params;
  std::array<double, 4> raw{};
  double logprob = 0.0;
  double value = 0.0;
};

// Supplies per-step generation parameters. decide() must be safe to call concurrently.
class StepProvider {
 public:
  virtual ~StepProvider() = default;
  virtual bool needs_features() const { return false; }
  // features is (feature_dim x B) when needs_features(), otherwise empty with B columns unknown;
  // rngs has one stream per sample.
  virtual std::vector<StepDecision> decide(int t, int horizon, const Matrix& features, std::span<Rng> rngs) const = 0;
};

class StaticScheduleProvider final : public StepProvider {
 public:
  explicit StaticScheduleProvider(ScheduleConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
  std::vector<StepDecision> decide(int t, int horizon, const Matrix& features, std::span<Rng> rngs) const override;
  const ScheduleConfig& config() const { return cfg_; }

 private:
  ScheduleConfig cfg_;
};

struct StepRecord {
  int t = 0;
  PolicyStepParams action;
  std::array<double, 4> raw{};
  double logprob = 0.0;
  double value = 0.0;
  int masked_count = 0;  // MASK count after this step
  Vector features;       // policy state features at the start of the step (when recorded)
};

struct Trajectory {
  int cls = 0;
  std::vector<StepRecord> steps;
  TokenSequence final_tokens;
  double reward = 0.0;
};

// Runs T decode-and-remask steps from the all-MASK canvas for every sample in lockstep.
// m is forced to 0 on the last step so the output is MASK-free.
std::vector<Trajectory> generate_batch(const MaskedPredictor& pred, const StepProvider& provider, int horizon,
                                       const std::vector<int>& classes, std::span<Rng> rngs,
                                       bool record_features = false);

std::pair<TokenSequence, Trajectory> generate(const MaskedPredictor& pred, const StepProvider& provider, int horizon,
                                              int cls, Rng& rng);

// Columns: sample,t,m,tau1,tau2,w,masked_count,logprob,value
void write_trajectory_csv(std::ostream& out, const std::vector<Trajectory>& trajectories);

}  // namespace adanat
