#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adanat/backbone.hpp"
#include "adanat/eval.hpp"
#include "adanat/policy.hpp"
#include "adanat/ppo.hpp"
#include "adanat/run_config.hpp"

namespace adanat {

// Seed of the real sample set behind cached reference statistics; independent of the run seed
// so every arm and seed is scored against the same reference.
inline constexpr std::uint64_t kReferenceSeed = 0x5EFE2E4CE;

std::unique_ptr<MaskedPredictor> load_backbone(const RunConfig& cfg, const WorldSpec& world);

// Loads eval.reference_stats when set (naming the file if it is missing); otherwise fits
// reference_samples real images and caches them at <out>/reference_stats.json.
GaussianStats reference_stats(const RunConfig& cfg, const WorldSpec& world);

PolicyNet make_policy(const RunConfig& cfg, int feature_dim);

std::unique_ptr<StepProvider> static_provider(const RunConfig& cfg);

struct EvalReport {
  std::string mode;
  int n = 0;
  double toy_fid = 0.0;
  double diversity = 0.0;
  std::optional<double> tv;
  std::optional<double> kl;
};

// Pairwise diversity uses at most this many samples.
inline constexpr int kDiversitySamples = 2000;

EvalReport evaluate_images(const std::vector<Image>& images, const std::vector<Trajectory>& trajs,
                           const WorldSpec& world, const GaussianStats& ref);

struct TrainOutcome {
  std::vector<LoopLog> logs;
  EvalReport final_eval;
};

// Trains the configured policy (or evaluates the static schedule), writing logs, checkpoints and
// curves into out_dir. A numerical abort dumps the current networks before rethrowing.
TrainOutcome run_training(const RunConfig& cfg, const MaskedPredictor& pred, const WorldSpec& world,
                          const GaussianStats& ref, const std::string& out_dir, std::ostream* progress);

// Entry points of the command-line tool. Each writes its artifacts under cfg.out.
void cmd_pretrain(const RunConfig& cfg, std::ostream* progress);
void cmd_train(const RunConfig& cfg, std::ostream* progress);
void cmd_sample(const RunConfig& cfg, std::ostream* progress);
// samples_path: tokens CSV written by cmd_sample; empty samples on the fly.
EvalReport cmd_eval(const RunConfig& cfg, const std::string& samples_path, std::ostream* progress);
void cmd_ablate(const RunConfig& cfg, std::ostream* progress);

// Tokens CSV: class,t0,t1,...
void write_tokens_csv(const std::string& path, const std::vector<Trajectory>& trajs);
std::vector<std::pair<int, TokenSequence>> read_tokens_csv(const std::string& path, const WorldSpec& world);

std::string eval_report_json(const EvalReport& r);
EvalReport eval_report_from_json(const std::string& text);

// The report of a run already completed in out_dir with the same configuration, if any.
std::optional<EvalReport> finished_run(const RunConfig& cfg, const std::string& out_dir);

}  // namespace adanat
