#include "adanat/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "adanat/checkpoint.hpp"
#include "adanat/error.hpp"

namespace adanat {

namespace {

constexpr double kLogFloor = 1e-300;

Vector log_softmax(const Eigen::Ref<const Vector>& logits) {
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return logits.array() - lse;
}

// Number of masked positions for one training example.
int draw_mask_count(int n, Rng& rng) {
  const double ratio = std::cos(0.5 * std::numbers::pi * uniform01(rng));
  return std::clamp(static_cast<int>(std::ceil(ratio * n)), 1, n);
}

// Masks `count` distinct positions of `v` in place.
void mask_random(TokenSequence& v, int count, Rng& rng) {
  std::vector<int> order(v.size());
  for (int i = 0; i < v.size(); ++i) order[i] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + uniform_int(rng, v.size() - i);
    std::swap(order[i], order[j]);
    v.tokens[order[i]] = kMask;
  }
}

}  // namespace

void MaskedPredictor::check_input(const TokenSequence& v, int cls) const {
  if (v.size() != n_tokens()) throw ShapeError("predictor: sequence length does not match");
  v.validate(codebook_size());
  if (cls != kNullClass && (cls < 0 || cls >= n_classes())) throw std::out_of_range("predictor: class out of range");
}

Matrix MaskedPredictor::predict_logits(const TokenSequence& v, int cls) const {
  const auto out = predict({&v}, {cls}, false);
  Matrix l(n_tokens(), codebook_size());
  for (int i = 0; i < n_tokens(); ++i) {
    for (int k = 0; k < codebook_size(); ++k) l(i, k) = out.logits(i * codebook_size() + k, 0);
  }
  return l;
}

Vector MaskedPredictor::features(const TokenSequence& v, int cls) const {
  return predict({&v}, {cls}, true).features.col(0);
}

TabularPredictor::TabularPredictor(WorldSpec spec) : spec_(std::move(spec)) {
  stats_ = exact_statistics(spec_, /*require_table=*/true);
}

Matrix TabularPredictor::posterior(const TokenSequence& v, int cls) const {
  check_input(v, cls);
  const int n = spec_.n_tokens;
  const int k = spec_.codebook_size;
  std::vector<int> masked;
  for (int i = 0; i < n; ++i) {
    if (v.tokens[i] == kMask) masked.push_back(i);
  }
  Matrix post = Matrix::Zero(n, k);
  std::vector<int> tokens = v.tokens;
  for (int i : masked) tokens[i] = 0;
  double total = 0.0;
  // Odometer over the masked positions.
  while (true) {
    const std::size_t idx = sequence_index(tokens, k);
    double p = 0.0;
    if (cls == kNullClass) {
      for (const auto& table : stats_.table) p += table[idx];
      p /= static_cast<double>(stats_.table.size());
    } else {
      p = stats_.table[cls][idx];
    }
    if (p > 0.0) {
      total += p;
      for (int i = 0; i < n; ++i) post(i, tokens[i]) += p;
    }
    std::size_t j = 0;
    for (; j < masked.size(); ++j) {
      if (++tokens[masked[j]] < k) break;
      tokens[masked[j]] = 0;
    }
    if (j == masked.size()) break;
  }
  if (!(total > 0.0)) {
    throw std::invalid_argument("TabularPredictor: observed tokens have zero probability under this class");
  }
  return post / total;
}

PredictorOutput TabularPredictor::predict(const std::vector<const TokenSequence*>& batch,
                                          const std::vector<int>& classes, bool want_features) const {
  if (batch.size() != classes.size()) throw ShapeError("predict: batch/class size mismatch");
  const int n = spec_.n_tokens;
  const int k = spec_.codebook_size;
  const auto b = static_cast<Eigen::Index>(batch.size());
  PredictorOutput out;
  out.logits.resize(static_cast<Eigen::Index>(n) * k, b);
  if (want_features) out.features.resize(feature_dim(), b);
  for (Eigen::Index s = 0; s < b; ++s) {
    const Matrix post = posterior(*batch[s], classes[s]);
    for (int i = 0; i < n; ++i) {
      double entropy = 0.0;
      double max_p = 0.0;
      for (int t = 0; t < k; ++t) {
        const double p = post(i, t);
        out.logits(i * k + t, s) = std::log(std::max(p, kLogFloor));
        if (p > 0.0) entropy -= p * std::log(p);
        max_p = std::max(max_p, p);
      }
      if (want_features) {
        out.features(i, s) = entropy;
        out.features(n + i, s) = max_p;
      }
    }
  }
  return out;
}

NeuralPredictor::NeuralPredictor(SmallNet net, int n_tokens, int codebook_size, int n_classes,
                                 std::string world_fingerprint, int grid_height)
    : net_(std::move(net)),
      n_tokens_(n_tokens),
      codebook_size_(codebook_size),
      n_classes_(n_classes),
      fingerprint_(std::move(world_fingerprint)),
      grid_height_(grid_height) {
  if (grid_height_ <= 0 || n_tokens % grid_height_ != 0) throw ShapeError("NeuralPredictor: bad grid height");
  if (net_.input_dim() != input_dim(n_tokens, codebook_size, n_classes) ||
      net_.output_dim() != n_tokens * codebook_size) {
    throw ShapeError("NeuralPredictor: network shape does not match the world");
  }
}

int NeuralPredictor::input_dim(int n_tokens, int codebook_size, int n_classes) {
  return n_tokens * (codebook_size + 1) + n_classes + 1;
}

SmallNet NeuralPredictor::make_net(int n_tokens, int codebook_size, int n_classes, int hidden) {
  return SmallNet::mlp(input_dim(n_tokens, codebook_size, n_classes), {hidden, hidden}, n_tokens * codebook_size,
                       Activation::kRelu);
}

int NeuralPredictor::feature_dim() const { return net_.layers().back().in; }

Matrix NeuralPredictor::encode_inputs(const std::vector<const TokenSequence*>& batch,
                                      const std::vector<int>& classes) const {
  if (batch.size() != classes.size()) throw ShapeError("predict: batch/class size mismatch");
  const int sym = codebook_size_ + 1;
  Matrix x = Matrix::Zero(input_dim(n_tokens_, codebook_size_, n_classes_), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t s = 0; s < batch.size(); ++s) {
    check_input(*batch[s], classes[s]);
    const auto col = static_cast<Eigen::Index>(s);
    for (int i = 0; i < n_tokens_; ++i) {
      const int t = batch[s]->tokens[i];
      x(i * sym + (t == kMask ? codebook_size_ : t), col) = 1.0;
    }
    const int c = classes[s] == kNullClass ? n_classes_ : classes[s];
    x(n_tokens_ * sym + c, col) = 1.0;
  }
  return x;
}

PredictorOutput NeuralPredictor::predict(const std::vector<const TokenSequence*>& batch,
                                         const std::vector<int>& classes, bool want_features) const {
  const Matrix x = encode_inputs(batch, classes);
  PredictorOutput out;
  if (want_features) {
    ForwardTrace tr = net_.forward_trace(x);
    out.features = std::move(tr.inputs.back());
    out.logits = std::move(tr.output);
  } else {
    out.logits = net_.forward(x);
  }
  if (!out.logits.allFinite()) throw NumericalError("NeuralPredictor: non-finite logits");
  return out;
}

void NeuralPredictor::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "backbone";
  ckpt.meta["world_fingerprint"] = fingerprint_;
  ckpt.meta["n_tokens"] = std::to_string(n_tokens_);
  ckpt.meta["codebook_size"] = std::to_string(codebook_size_);
  ckpt.meta["n_classes"] = std::to_string(n_classes_);
  ckpt.meta["grid_height"] = std::to_string(grid_height_);
  ckpt.nets.push_back(net_);
  save_checkpoint(path, ckpt);
}

NeuralPredictor NeuralPredictor::load(const std::string& path, const WorldSpec& expected_world) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta["kind"] != "backbone" || ckpt.nets.size() != 1) {
    throw MissingArtifactError(path + " is not a backbone checkpoint");
  }
  if (ckpt.meta["world_fingerprint"] != expected_world.fingerprint()) {
    throw ConfigError("backbone checkpoint " + path + " was trained on a different world spec");
  }
  return NeuralPredictor(std::move(ckpt.nets[0]), expected_world.n_tokens, expected_world.codebook_size,
                         expected_world.n_classes, ckpt.meta["world_fingerprint"], expected_world.grid_height);
}

double unigram_cross_entropy(const WorldSpec& spec) {
  const auto stats = exact_statistics(spec);
  const int k = spec.codebook_size;
  std::vector<double> unigram(k, 0.0);
  const double w = 1.0 / (static_cast<double>(spec.n_classes) * spec.n_tokens);
  for (const auto& cls : stats.marginals) {
    for (const auto& pos : cls) {
      for (int t = 0; t < k; ++t) unigram[t] += w * pos[t];
    }
  }
  double ce = 0.0;
  for (const auto& cls : stats.marginals) {
    for (const auto& pos : cls) {
      for (int t = 0; t < k; ++t) {
        if (pos[t] > 0.0) ce -= w * pos[t] * std::log(unigram[t]);
      }
    }
  }
  return ce;
}

double masked_cross_entropy(const MaskedPredictor& pred, const WorldSpec& spec, int n_samples, Rng& rng) {
  const int k = spec.codebook_size;
  double total = 0.0;
  long count = 0;
  constexpr int kChunk = 256;
  for (int start = 0; start < n_samples; start += kChunk) {
    const int b = std::min(kChunk, n_samples - start);
    std::vector<TokenSequence> clean(b);
    std::vector<TokenSequence> masked(b);
    std::vector<int> classes(b);
    for (int s = 0; s < b; ++s) {
      classes[s] = uniform_int(rng, spec.n_classes);
      clean[s] = sample_world(spec, classes[s], rng);
      masked[s] = clean[s];
      mask_random(masked[s], draw_mask_count(spec.n_tokens, rng), rng);
    }
    std::vector<const TokenSequence*> ptrs;
    for (const auto& m : masked) ptrs.push_back(&m);
    const auto out = pred.predict(ptrs, classes, false);
    for (int s = 0; s < b; ++s) {
      for (int i = 0; i < spec.n_tokens; ++i) {
        if (masked[s].tokens[i] != kMask) continue;
        const Vector lsm = log_softmax(out.logits.col(s).segment(i * k, k));
        total -= lsm[clean[s].tokens[i]];
        ++count;
      }
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

NeuralPredictor mlm_pretrain(const WorldSpec& spec, const PretrainConfig& cfg, Rng& rng, PretrainReport* report) {
  spec.validate();
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("pretrain: steps must be >= 0 and batch >= 1");
  const int n = spec.n_tokens;
  const int k = spec.codebook_size;
  SmallNet net = NeuralPredictor::make_net(n, k, spec.n_classes, cfg.hidden);
  net.initialize(rng);
  NeuralPredictor shell(net, n, k, spec.n_classes, spec.fingerprint(), spec.grid_height);
  Adam opt(net.num_params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  std::vector<TokenSequence> clean(cfg.batch);
  std::vector<TokenSequence> masked(cfg.batch);
  std::vector<int> classes(cfg.batch);
  std::vector<const TokenSequence*> ptrs(cfg.batch);
  double running = 0.0;
  int running_n = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    for (int s = 0; s < cfg.batch; ++s) {
      const int cls = uniform_int(rng, spec.n_classes);
      clean[s] = sample_world(spec, cls, rng);
      masked[s] = clean[s];
      mask_random(masked[s], draw_mask_count(n, rng), rng);
      classes[s] = uniform01(rng) < cfg.class_dropout ? kNullClass : cls;
      ptrs[s] = &masked[s];
    }
    const Matrix x = shell.encode_inputs(ptrs, classes);
    const ForwardTrace tr = net.forward_trace(x);
    Matrix upstream = Matrix::Zero(tr.output.rows(), tr.output.cols());
    double loss = 0.0;
    long count = 0;
    for (int s = 0; s < cfg.batch; ++s) {
      for (int i = 0; i < n; ++i) {
        if (masked[s].tokens[i] != kMask) continue;
        const Vector lsm = log_softmax(tr.output.col(s).segment(i * k, k));
        loss -= lsm[clean[s].tokens[i]];
        upstream.col(s).segment(i * k, k) = lsm.array().exp().matrix();
        upstream(i * k + clean[s].tokens[i], s) -= 1.0;
        ++count;
      }
    }
    loss /= static_cast<double>(count);
    if (!std::isfinite(loss)) {
      throw NumericalError("mlm_pretrain: non-finite loss at step " + std::to_string(step) +
                           " (lr=" + std::to_string(cfg.lr) + ", batch=" + std::to_string(cfg.batch) + ")");
    }
    upstream /= static_cast<double>(count);
    const Vector grad = net.backward(tr, upstream);
    // cosine decay to 5% of the base rate
    const double progress = static_cast<double>(step) / static_cast<double>(cfg.steps);
    opt.config().lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    opt.step(net.params(), grad);
    running += loss;
    ++running_n;
    if (report != nullptr && (step + 1) % std::max(1, cfg.log_every) == 0) {
      report->loss_curve.emplace_back(step + 1, running / running_n);
      running = 0.0;
      running_n = 0;
    }
  }
  NeuralPredictor trained(std::move(net), n, k, spec.n_classes, spec.fingerprint(), spec.grid_height);
  if (report != nullptr) {
    Rng eval_rng(derive_seed(spec.seed, 0xE7A1));
    report->heldout_cross_entropy = masked_cross_entropy(trained, spec, cfg.heldout, eval_rng);
    report->unigram_entropy = unigram_cross_entropy(spec);
  }
  return trained;
}

}  // namespace adanat
