#include "adanat/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "adanat/error.hpp"
#include "adanat/svg_plot.hpp"

namespace adanat {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPolicyInitStream = 0x9011C7;
constexpr std::uint64_t kPretrainStream = 0x9E7;
constexpr std::uint64_t kEvalStream = 0xE7A1;
constexpr std::uint64_t kSampleStream = 0x5A3F1E;

void say(std::ostream* out, const std::string& text) {
  if (out != nullptr) *out << text << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string csv_number(double v) { return std::isfinite(v) ? fmt::format("{}", v) : std::string(); }

fs::path policy_path(const std::string& dir) { return fs::path(dir) / "policy.ckpt"; }
fs::path disc_path(const std::string& dir) { return fs::path(dir) / "discriminator.ckpt"; }

}  // namespace

std::unique_ptr<MaskedPredictor> load_backbone(const RunConfig& cfg, const WorldSpec& world) {
  if (cfg.backbone == "tabular") return std::make_unique<TabularPredictor>(world);
  const std::string path = cfg.backbone_path();
  if (!fs::exists(path)) throw MissingArtifactError("backbone checkpoint not found: " + path + " (run pretrain first)");
  return std::make_unique<NeuralPredictor>(NeuralPredictor::load(path, world));
}

GaussianStats reference_stats(const RunConfig& cfg, const WorldSpec& world) {
  if (!cfg.eval.reference_stats.empty()) {
    if (!fs::exists(cfg.eval.reference_stats)) {
      throw MissingArtifactError("reference statistics file not found: " + cfg.eval.reference_stats);
    }
    return load_stats(cfg.eval.reference_stats);
  }
  GaussianStats ref = fit_stats(real_images(world, cfg.eval.reference_samples, kReferenceSeed));
  fs::create_directories(cfg.out);
  save_stats(ref, (fs::path(cfg.out) / "reference_stats.json").string());
  return ref;
}

PolicyNet make_policy(const RunConfig& cfg, int feature_dim) {
  PolicyNetConfig pc;
  pc.hidden = cfg.policy_hidden;
  pc.horizon = cfg.horizon;
  pc.adaptive = cfg.mode == PolicyMode::kAdaptive;
  pc.sigma = cfg.ppo.sigma_initial;
  pc.bounds = cfg.bounds;
  Rng init(derive_seed(cfg.seed, kPolicyInitStream));
  return PolicyNet(feature_dim, pc, init);
}

std::unique_ptr<StepProvider> static_provider(const RunConfig& cfg) {
  ScheduleConfig s = cfg.mode == PolicyMode::kStaticCustom ? cfg.schedule : ScheduleConfig{};
  s.horizon = cfg.horizon;
  return std::make_unique<StaticScheduleProvider>(s);
}

EvalReport evaluate_images(const std::vector<Image>& images, const std::vector<Trajectory>& trajs,
                           const WorldSpec& world, const GaussianStats& ref) {
  if (images.size() < 2) throw ConfigError("evaluation needs at least 2 samples");
  EvalReport r;
  r.n = static_cast<int>(images.size());
  r.toy_fid = frechet_distance(fit_stats(images), ref);
  const std::size_t nd = std::min<std::size_t>(images.size(), kDiversitySamples);
  r.diversity = diversity_metric(std::vector<Image>(images.begin(), images.begin() + static_cast<long>(nd)));

  double cells = 1.0;
  for (int i = 0; i < world.n_tokens; ++i) cells *= world.codebook_size;
  if (cells <= static_cast<double>(kMaxEnumeration) && !trajs.empty()) {
    std::map<int, std::vector<TokenSequence>> by_class;
    for (const auto& t : trajs) by_class[t.cls].push_back(t.final_tokens);
    double tv = 0.0;
    double kl = 0.0;
    for (const auto& [cls, seqs] : by_class) {
      const Divergence d = exact_divergence(seqs, world, cls);
      const double w = static_cast<double>(seqs.size()) / static_cast<double>(trajs.size());
      tv += w * d.tv;
      kl += w * d.kl;
    }
    r.tv = tv;
    r.kl = kl;
  }
  return r;
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["n"] = r.n;
  j["toy_fid"] = r.toy_fid;
  j["diversity"] = r.diversity;
  j["tv"] = r.tv ? nlohmann::ordered_json(*r.tv) : nlohmann::ordered_json(nullptr);
  j["kl"] = r.kl ? nlohmann::ordered_json(*r.kl) : nlohmann::ordered_json(nullptr);
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.mode = j.at("mode").get<std::string>();
  r.n = j.at("n").get<int>();
  r.toy_fid = j.at("toy_fid").get<double>();
  r.diversity = j.at("diversity").get<double>();
  if (j.at("tv").is_number()) r.tv = j["tv"].get<double>();
  if (j.at("kl").is_number()) r.kl = j["kl"].get<double>();
  return r;
}

std::optional<EvalReport> finished_run(const RunConfig& cfg, const std::string& out_dir) {
  const fs::path report = fs::path(out_dir) / "eval_report.json";
  const fs::path config = fs::path(out_dir) / "config.yaml";
  if (!fs::exists(report) || !fs::exists(config)) return std::nullopt;
  try {
    // results depend on neither the worker count nor the output location
    RunConfig stored = parse_run_config(read_text(config), "");
    RunConfig wanted = cfg;
    stored.workers = wanted.workers = 0;
    stored.out = wanted.out = "";
    if (dump_run_config(stored) != dump_run_config(wanted)) return std::nullopt;
    return eval_report_from_json(read_text(report));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

TrainOutcome run_training(const RunConfig& cfg, const MaskedPredictor& pred, const WorldSpec& world,
                          const GaussianStats& ref, const std::string& out_dir, std::ostream* progress) {
  cfg.validate();
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "config.yaml", dump_run_config(cfg));
  const int workers = cfg.effective_workers();
  TrainOutcome outcome;
  const auto started = std::chrono::steady_clock::now();
  auto finish = [&] {
    const std::chrono::duration<double> wall = std::chrono::steady_clock::now() - started;
    write_text(fs::path(out_dir) / "timing.json", fmt::format("{{\"wall_seconds\": {:.3f}}}\n", wall.count()));
    write_text(fs::path(out_dir) / "eval_report.json", eval_report_json(outcome.final_eval));
  };

  if (!is_learnable(cfg.mode)) {
    say(progress, fmt::format("{}: static schedule, nothing to train; evaluating", to_string(cfg.mode)));
    const auto provider = static_provider(cfg);
    std::vector<Trajectory> trajs;
    const auto images = sample_images(pred, *provider, world, cfg.horizon, cfg.eval.fid_samples_final,
                                      derive_seed(cfg.seed, kEvalStream), workers, &trajs);
    outcome.final_eval = evaluate_images(images, trajs, world, ref);
    outcome.final_eval.mode = to_string(cfg.mode);
    finish();
    return outcome;
  }

  PolicyNet net = make_policy(cfg, pred.feature_dim());
  TrainerOptions opts;
  opts.ppo = cfg.ppo;
  opts.reward = cfg.reward;
  opts.seed = cfg.seed;
  opts.workers = workers;
  opts.fid_every = cfg.eval.fid_every;
  opts.fid_samples = cfg.eval.fid_samples_train;
  Trainer trainer(pred, world, net, opts, &ref);

  const fs::path ckpt_dir = fs::path(out_dir) / "checkpoints";
  fs::create_directories(ckpt_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.csv", std::ios::binary);
  if (!log) throw Error("cannot write " + (fs::path(out_dir) / "train_log.csv").string());
  log << "loop,mean_reward,ppo_objective,value_loss,disc_acc,sigma,toy_fid_every_k\n" << std::flush;

  for (int loop = 0; loop < cfg.ppo.loops; ++loop) {
    LoopLog row;
    try {
      row = trainer.run_loop(loop);
    } catch (const NumericalError&) {
      net.save((fs::path(out_dir) / "abort_policy.ckpt").string());
      if (const auto* d = trainer.discriminator()) d->save((fs::path(out_dir) / "abort_discriminator.ckpt").string());
      throw;
    }
    log << fmt::format("{},{},{},{},{},{},{}\n", row.loop, csv_number(row.mean_reward), csv_number(row.ppo_objective),
                       csv_number(row.value_loss), csv_number(row.disc_acc), csv_number(row.sigma),
                       csv_number(row.toy_fid))
        << std::flush;
    outcome.logs.push_back(row);
    if ((loop + 1) % cfg.eval.checkpoint_every == 0) {
      net.save((ckpt_dir / fmt::format("policy_{:04d}.ckpt", loop + 1)).string());
      if (const auto* d = trainer.discriminator()) {
        d->save((ckpt_dir / fmt::format("discriminator_{:04d}.ckpt", loop + 1)).string());
      }
    }
    if (progress != nullptr && (loop % 10 == 0 || std::isfinite(row.toy_fid))) {
      say(progress, fmt::format("loop {:4d}  reward {:.4f}  objective {:.4f}  disc_acc {:.3f}  sigma {}{}", loop,
                                row.mean_reward, row.ppo_objective, row.disc_acc, row.sigma,
                                std::isfinite(row.toy_fid) ? fmt::format("  toy-FID {:.4f}", row.toy_fid) : ""));
    }
  }
  net.save(policy_path(out_dir).string());
  if (const auto* d = trainer.discriminator()) d->save(disc_path(out_dir).string());

  PlotPanel reward_panel{"Mean reward per loop", "loop", "reward", {{"mean reward", {}}}};
  PlotPanel fid_panel{"Toy-FID (deterministic policy)", "loop", "toy-FID", {{"toy-FID", {}}}};
  for (const auto& r : outcome.logs) {
    reward_panel.series[0].points.emplace_back(r.loop, r.mean_reward);
    if (std::isfinite(r.toy_fid)) fid_panel.series[0].points.emplace_back(r.loop, r.toy_fid);
  }
  write_svg((fs::path(out_dir) / "training_curves.svg").string(), {reward_panel, fid_panel});

  const PolicyProvider provider(net, false);
  std::vector<Trajectory> trajs;
  const auto images = sample_images(pred, provider, world, cfg.horizon, cfg.eval.fid_samples_final,
                                    derive_seed(cfg.seed, kEvalStream), workers, &trajs);
  outcome.final_eval = evaluate_images(images, trajs, world, ref);
  outcome.final_eval.mode = to_string(cfg.mode);
  finish();
  say(progress, fmt::format("final toy-FID {:.5f}  diversity {:.5f}", outcome.final_eval.toy_fid,
                            outcome.final_eval.diversity));
  return outcome;
}

void cmd_pretrain(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  if (cfg.backbone == "tabular") throw ConfigError("the tabular backbone is exact and needs no pretraining");
  const WorldSpec world = resolve_world(cfg);
  fs::create_directories(cfg.out);
  write_text(fs::path(cfg.out) / "config.yaml", dump_run_config(cfg));
  save_world_spec(world, (fs::path(cfg.out) / "world.yaml").string());
  Rng rng(derive_seed(cfg.seed, kPretrainStream));
  PretrainReport report;
  say(progress, fmt::format("pretraining backbone: {} steps, batch {}", cfg.pretrain.steps, cfg.pretrain.batch));
  const NeuralPredictor pred = mlm_pretrain(world, cfg.pretrain, rng, &report);
  const std::string path = cfg.backbone_path();
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  pred.save(path);

  std::string csv = "step,loss\n";
  for (const auto& [step, loss] : report.loss_curve) csv += fmt::format("{},{}\n", step, loss);
  write_text(fs::path(cfg.out) / "pretrain_loss.csv", csv);
  nlohmann::ordered_json j;
  j["backbone"] = path;
  j["heldout_cross_entropy"] = report.heldout_cross_entropy;
  j["unigram_cross_entropy"] = report.unigram_entropy;
  j["world_fingerprint"] = world.fingerprint();
  write_text(fs::path(cfg.out) / "pretrain_report.json", j.dump(2) + "\n");
  say(progress, fmt::format("held-out masked cross-entropy {:.4f} nats (context-free {:.4f})",
                            report.heldout_cross_entropy, report.unigram_entropy));
}

void cmd_train(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const WorldSpec world = resolve_world(cfg);
  const auto pred = load_backbone(cfg, world);
  const GaussianStats ref = reference_stats(cfg, world);
  run_training(cfg, *pred, world, ref, cfg.out, progress);
}

namespace {

// Deterministic (test-time) provider for the configured mode; learnable modes need a trained policy.
struct ProviderHandle {
  std::optional<PolicyNet> net;
  std::unique_ptr<StepProvider> provider;
};

ProviderHandle test_time_provider(const RunConfig& cfg, const MaskedPredictor& pred) {
  ProviderHandle h;
  if (!is_learnable(cfg.mode)) {
    h.provider = static_provider(cfg);
    return h;
  }
  const fs::path path = policy_path(cfg.out);
  if (!fs::exists(path)) throw MissingArtifactError("policy checkpoint not found: " + path.string() + " (run train first)");
  h.net.emplace(PolicyNet::load(path.string()));
  if (h.net->horizon() != cfg.horizon) throw ConfigError("policy checkpoint was trained for a different horizon");
  if (h.net->feature_dim() != pred.feature_dim()) throw ConfigError("policy checkpoint does not match the backbone");
  h.provider = std::make_unique<PolicyProvider>(*h.net, false);
  return h;
}

}  // namespace

void write_tokens_csv(const std::string& path, const std::vector<Trajectory>& trajs) {
  std::string csv = "class";
  const int n = trajs.empty() ? 0 : trajs[0].final_tokens.size();
  for (int i = 0; i < n; ++i) csv += fmt::format(",t{}", i);
  csv += "\n";
  for (const auto& t : trajs) {
    csv += std::to_string(t.cls);
    for (int tok : t.final_tokens.tokens) csv += "," + std::to_string(tok);
    csv += "\n";
  }
  write_text(path, csv);
}

std::vector<std::pair<int, TokenSequence>> read_tokens_csv(const std::string& path, const WorldSpec& world) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("samples file not found: " + path);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<int, TokenSequence>> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<int> values;
    try {
      while (std::getline(ss, cell, ',')) values.push_back(std::stoi(cell));
    } catch (const std::exception&) {
      throw MissingArtifactError(fmt::format("{}:{}: malformed row", path, lineno));
    }
    if (static_cast<int>(values.size()) != world.n_tokens + 1) {
      throw MissingArtifactError(fmt::format("{}:{}: expected {} columns", path, lineno, world.n_tokens + 1));
    }
    TokenSequence v(std::vector<int>(values.begin() + 1, values.end()), world.grid_height,
                    world.n_tokens / world.grid_height);
    try {
      v.validate(world.codebook_size);
    } catch (const std::invalid_argument& e) {
      throw MissingArtifactError(fmt::format("{}:{}: {}", path, lineno, e.what()));
    }
    if (v.has_mask()) throw MissingArtifactError(fmt::format("{}:{}: sample contains MASK", path, lineno));
    if (values[0] < 0 || values[0] >= world.n_classes) {
      throw MissingArtifactError(fmt::format("{}:{}: class out of range", path, lineno));
    }
    out.emplace_back(values[0], std::move(v));
  }
  return out;
}

void cmd_sample(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const WorldSpec world = resolve_world(cfg);
  const auto pred = load_backbone(cfg, world);
  if (cfg.sample.cls >= world.n_classes) throw ConfigError("sample.class is out of range for this world");
  const ProviderHandle h = test_time_provider(cfg, *pred);
  const std::uint64_t seed = derive_seed(cfg.seed, kSampleStream);
  std::vector<int> classes = cfg.sample.cls >= 0 ? std::vector<int>(static_cast<std::size_t>(cfg.sample.n), cfg.sample.cls)
                                                 : draw_classes(cfg.sample.n, world.n_classes, seed);
  const auto trajs = generate_parallel(*pred, *h.provider, cfg.horizon, cfg.sample.n, seed, cfg.effective_workers(),
                                       false, &classes);
  const fs::path dir = fs::path(cfg.out) / "samples";
  fs::create_directories(dir);
  const Codebook cb = Codebook::make_default(world.codebook_size);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    write_ppm(decode_tokens(trajs[i].final_tokens, cb), (dir / fmt::format("sample_{:04d}.ppm", i)).string());
  }
  std::ostringstream traces;
  write_trajectory_csv(traces, trajs);
  write_text(fs::path(cfg.out) / "trajectories.csv", traces.str());
  write_tokens_csv((fs::path(cfg.out) / "tokens.csv").string(), trajs);
  say(progress, fmt::format("wrote {} samples to {}", trajs.size(), dir.string()));
}

EvalReport cmd_eval(const RunConfig& cfg, const std::string& samples_path, std::ostream* progress) {
  cfg.validate();
  const WorldSpec world = resolve_world(cfg);
  const GaussianStats ref = reference_stats(cfg, world);
  std::vector<Image> images;
  std::vector<Trajectory> trajs;
  if (!samples_path.empty()) {
    const Codebook cb = Codebook::make_default(world.codebook_size);
    for (auto& [cls, v] : read_tokens_csv(samples_path, world)) {
      images.push_back(decode_tokens(v, cb));
      Trajectory t;
      t.cls = cls;
      t.final_tokens = std::move(v);
      trajs.push_back(std::move(t));
    }
  } else {
    const auto pred = load_backbone(cfg, world);
    const ProviderHandle h = test_time_provider(cfg, *pred);
    images = sample_images(*pred, *h.provider, world, cfg.horizon, cfg.eval.fid_samples_final,
                           derive_seed(cfg.seed, kEvalStream), cfg.effective_workers(), &trajs);
  }
  if (images.size() < 2) throw ConfigError(fmt::format("evaluation needs at least 2 samples, got {}", images.size()));
  EvalReport r = evaluate_images(images, trajs, world, ref);
  r.mode = samples_path.empty() ? to_string(cfg.mode) : "samples-file";
  fs::create_directories(cfg.out);
  write_text(fs::path(cfg.out) / "eval_report.json", eval_report_json(r));
  say(progress, eval_report_json(r));
  return r;
}

void cmd_ablate(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const WorldSpec world = resolve_world(cfg);
  const auto pred = load_backbone(cfg, world);
  const GaussianStats ref = reference_stats(cfg, world);

  struct Arm {
    std::string name;
    PolicyMode mode;
    RewardKind reward;
  };
  std::vector<Arm> arms = {
      {"static-cosine", PolicyMode::kStaticCosine, RewardKind::kAdversarial},
      {"learnable-non-adaptive", PolicyMode::kLearnableNonAdaptive, RewardKind::kAdversarial},
      {"adaptive", PolicyMode::kAdaptive, RewardKind::kAdversarial},
      {"fid-batch-reward", PolicyMode::kLearnableNonAdaptive, RewardKind::kFidBatch},
  };
  if (!cfg.reward.external_command.empty()) {
    arms.push_back({"external-reward", PolicyMode::kAdaptive, RewardKind::kExternal});
  } else {
    say(progress, "external-reward arm skipped: reward.external_command is not set");
  }

  std::string csv = "arm,seed,toy_fid,diversity,tv,kl\n";
  std::map<std::string, std::vector<EvalReport>> results;
  for (const Arm& arm : arms) {
    for (std::uint64_t seed : cfg.ablate.seeds) {
      RunConfig run = cfg;
      run.mode = arm.mode;
      run.reward.kind = arm.reward;
      run.seed = seed;
      const std::string dir = (fs::path(cfg.out) / "ablate" / arm.name / fmt::format("seed{}", seed)).string();
      EvalReport r;
      if (const auto done = finished_run(run, dir)) {
        say(progress, fmt::format("== {} seed {}: reusing finished run in {}", arm.name, seed, dir));
        r = *done;
      } else {
        say(progress, fmt::format("== {} seed {}", arm.name, seed));
        r = run_training(run, *pred, world, ref, dir, progress).final_eval;
      }
      results[arm.name].push_back(r);
      csv += fmt::format("{},{},{},{},{},{}\n", arm.name, seed, r.toy_fid, r.diversity, r.tv ? csv_number(*r.tv) : "",
                         r.kl ? csv_number(*r.kl) : "");
      write_text(fs::path(cfg.out) / "ablation.csv", csv);
    }
  }

  std::string md = "| arm | best toy-FID | mean toy-FID | mean diversity |\n|---|---|---|---|\n";
  for (const Arm& arm : arms) {
    const auto& rs = results[arm.name];
    double best = rs.front().toy_fid;
    double fid = 0.0;
    double div = 0.0;
    for (const auto& r : rs) {
      best = std::min(best, r.toy_fid);
      fid += r.toy_fid;
      div += r.diversity;
    }
    const double n = static_cast<double>(rs.size());
    md += fmt::format("| {} | {:.5f} | {:.5f} | {:.5f} |\n", arm.name, best, fid / n, div / n);
  }
  write_text(fs::path(cfg.out) / "ablation.md", md);
  say(progress, md);
}

}  // namespace adanat
