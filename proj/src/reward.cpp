#include "adanat/reward.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csignal>
#include <cstring>
#include <string>

#include "adanat/checkpoint.hpp"
#include "adanat/error.hpp"
#include "adanat/policy.hpp"

namespace adanat {

Discriminator::Discriminator(int input_dim, int hidden, Rng& init_rng) : net_(make_net(input_dim, hidden)) {
  net_.initialize(init_rng);
}

Discriminator::Discriminator(SmallNet net) : net_(std::move(net)) {
  if (net_.output_dim() != 1) throw ShapeError("Discriminator: network must have one output");
}

SmallNet Discriminator::make_net(int input_dim, int hidden) {
  return SmallNet::mlp(input_dim, {hidden, hidden}, 1, Activation::kLeakyRelu);
}

Matrix Discriminator::pixels(const std::vector<Image>& images) const {
  Matrix x(input_dim(), static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<int>(images[i].size()) != input_dim()) throw ShapeError("Discriminator: image shape mismatch");
    x.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Vector>(images[i].pixels.data(), static_cast<Eigen::Index>(images[i].size()));
  }
  return x;
}

Vector Discriminator::logits(const std::vector<Image>& images) const {
  return net_.forward(pixels(images)).row(0).transpose();
}

std::vector<double> Discriminator::scores(const std::vector<Image>& images) const {
  const Vector z = logits(images);
  std::vector<double> out(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) out[static_cast<std::size_t>(i)] = logistic(z[i]);
  return out;
}

void Discriminator::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "discriminator";
  ckpt.nets.push_back(net_);
  save_checkpoint(path, ckpt);
}

Discriminator Discriminator::load(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta["kind"] != "discriminator" || ckpt.nets.size() != 1) {
    throw MissingArtifactError(path + " is not a discriminator checkpoint");
  }
  return Discriminator(std::move(ckpt.nets[0]));
}

double disc_score(const Discriminator& d, const Image& image) { return d.scores({image})[0]; }

double disc_loss(std::span<const double> fake_scores, std::span<const double> real_scores) {
  if (fake_scores.empty() || real_scores.empty()) throw std::invalid_argument("disc_loss: empty batch");
  auto clamp = [](double s) { return std::clamp(s, kScoreClamp, 1.0 - kScoreClamp); };
  double fake = 0.0;
  for (double s : fake_scores) fake += std::log(clamp(s));
  double real = 0.0;
  for (double s : real_scores) real += std::log(1.0 - clamp(s));
  return fake / static_cast<double>(fake_scores.size()) + real / static_cast<double>(real_scores.size());
}

std::string to_string(DiscLossForm f) { return f == DiscLossForm::kBce ? "bce" : "literal"; }

DiscLossForm parse_disc_loss_form(const std::string& name) {
  if (name == "bce") return DiscLossForm::kBce;
  if (name == "literal") return DiscLossForm::kLiteral;
  throw ConfigError("unknown discriminator loss '" + name + "'");
}

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double disc_bce_loss(std::span<const double> fake_logits, std::span<const double> real_logits) {
  if (fake_logits.empty() || real_logits.empty()) throw std::invalid_argument("disc_bce_loss: empty batch");
  double fake = 0.0;
  for (double z : fake_logits) fake += softplus(z);  // -log(1 - sigmoid z)
  double real = 0.0;
  for (double z : real_logits) real += softplus(-z);  // -log sigmoid z
  return fake / static_cast<double>(fake_logits.size()) + real / static_cast<double>(real_logits.size());
}

DiscGradient disc_gradient(const Discriminator& d, const std::vector<Image>& real_batch,
                           const std::vector<Image>& fake_batch, DiscLossForm form) {
  if (real_batch.empty() || fake_batch.empty()) throw std::invalid_argument("disc_update: empty batch");
  std::vector<Image> all;
  all.reserve(real_batch.size() + fake_batch.size());
  all.insert(all.end(), fake_batch.begin(), fake_batch.end());
  all.insert(all.end(), real_batch.begin(), real_batch.end());
  const auto n_fake = static_cast<Eigen::Index>(fake_batch.size());
  const auto n_real = static_cast<Eigen::Index>(real_batch.size());
  const double inv_fake = 1.0 / static_cast<double>(n_fake);
  const double inv_real = 1.0 / static_cast<double>(n_real);

  const ForwardTrace tr = d.net().forward_trace(d.pixels(all));
  std::vector<double> fake_s(static_cast<std::size_t>(n_fake));
  std::vector<double> real_s(static_cast<std::size_t>(n_real));
  std::vector<double> fake_z(static_cast<std::size_t>(n_fake));
  std::vector<double> real_z(static_cast<std::size_t>(n_real));
  Matrix upstream(1, n_fake + n_real);
  double fake_right = 0.0;
  double real_right = 0.0;
  for (Eigen::Index i = 0; i < n_fake + n_real; ++i) {
    const double z = tr.output(0, i);
    const double s = logistic(z);
    const bool clamped = s < kScoreClamp || s > 1.0 - kScoreClamp;
    const bool is_fake = i < n_fake;
    if (is_fake) {
      fake_s[static_cast<std::size_t>(i)] = s;
      fake_z[static_cast<std::size_t>(i)] = z;
      fake_right += s < 0.5 ? 1.0 : 0.0;
    } else {
      real_s[static_cast<std::size_t>(i - n_fake)] = s;
      real_z[static_cast<std::size_t>(i - n_fake)] = z;
      real_right += s > 0.5 ? 1.0 : 0.0;
    }
    if (form == DiscLossForm::kLiteral) {
      // d/dz log sigmoid z = 1 - s;  d/dz log(1 - sigmoid z) = -s; zero where the clamp is active.
      upstream(0, i) = clamped ? 0.0 : (is_fake ? (1.0 - s) * inv_fake : -s * inv_real);
    } else {
      upstream(0, i) = is_fake ? s * inv_fake : -(1.0 - s) * inv_real;
    }
  }
  DiscGradient g;
  g.result.loss = disc_loss(fake_s, real_s);
  g.result.objective = form == DiscLossForm::kLiteral ? g.result.loss : disc_bce_loss(fake_z, real_z);
  g.result.accuracy = 0.5 * (fake_right * inv_fake + real_right * inv_real);
  if (!std::isfinite(g.result.loss) || !std::isfinite(g.result.objective)) {
    throw NumericalError("disc_update: non-finite loss");
  }
  g.grad = d.net().backward(tr, upstream);
  return g;
}

DiscUpdateResult disc_update(Discriminator& d, const std::vector<Image>& real_batch,
                             const std::vector<Image>& fake_batch, Adam& optimizer, DiscLossForm form) {
  const DiscGradient g = disc_gradient(d, real_batch, fake_batch, form);
  optimizer.step(d.net().params(), g.grad);
  return g.result;
}

double fid_batch_reward(const std::vector<Image>& images, const GaussianStats& ref) {
  if (images.size() < 2) throw std::invalid_argument("fid_batch_reward: need a batch of at least 2 images");
  return -frechet_distance(fit_stats(images), ref);
}

double external_scorer(const Image& image, const ScoreHook& hook) {
  if (!hook) throw RewardUnavailable("external scorer: no hook registered");
  double v = 0.0;
  try {
    v = hook(image);
  } catch (const RewardUnavailable&) {
    throw;
  } catch (const std::exception& e) {
    throw RewardUnavailable(std::string("external scorer failed: ") + e.what());
  }
  if (!std::isfinite(v)) throw RewardUnavailable("external scorer returned a non-finite value");
  return v;
}

namespace {

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw RewardUnavailable(std::string("hook: write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

double run_hook_process(const std::string& command, const Image& image) {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) throw RewardUnavailable("hook: pipe failed");
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw RewardUnavailable("hook: pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw RewardUnavailable("hook: fork failed");
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);

  // A hook that exits without reading stdin must not kill us with SIGPIPE.
  struct sigaction ignore {};
  struct sigaction previous {};
  ignore.sa_handler = SIG_IGN;
  ::sigaction(SIGPIPE, &ignore, &previous);

  std::string payload = "ADANAT-IMAGE " + std::to_string(image.height) + " " + std::to_string(image.width) + " " +
                        std::to_string(image.channels) + "\n";
  payload.reserve(payload.size() + 8 * image.pixels.size());
  for (double v : image.pixels) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) payload.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  bool write_failed = false;
  try {
    write_all(in_pipe[1], payload.data(), payload.size());
  } catch (const RewardUnavailable&) {
    write_failed = true;
  }
  ::close(in_pipe[1]);

  std::string reply;
  char buf[256];
  ssize_t r;
  while ((r = ::read(out_pipe[0], buf, sizeof buf)) > 0) reply.append(buf, static_cast<std::size_t>(r));
  ::close(out_pipe[0]);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ::sigaction(SIGPIPE, &previous, nullptr);

  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw RewardUnavailable("hook '" + command + "' exited abnormally");
  }
  if (write_failed) throw RewardUnavailable("hook '" + command + "' did not read its input");
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(reply, &used);
  } catch (const std::exception&) {
    throw RewardUnavailable("hook '" + command + "' did not print a number");
  }
  return v;
}

}  // namespace

ScoreHook make_subprocess_hook(std::string command) {
  return [command = std::move(command)](const Image& image) { return run_hook_process(command, image); };
}

double brightness_score(const Image& image) {
  if (image.pixels.empty()) return 0.0;
  double s = 0.0;
  for (double v : image.pixels) s += v;
  return s / static_cast<double>(image.pixels.size());
}

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::kAdversarial: return "adversarial";
    case RewardKind::kFidBatch: return "fid-batch";
    case RewardKind::kExternal: return "external";
  }
  return "adversarial";
}

RewardKind parse_reward_kind(const std::string& name) {
  if (name == "adversarial") return RewardKind::kAdversarial;
  if (name == "fid-batch") return RewardKind::kFidBatch;
  if (name == "external") return RewardKind::kExternal;
  throw ConfigError("unknown reward kind '" + name + "'");
}

}  // namespace adanat
