#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "adanat/smallnet.hpp"
#include "adanat/token_world.hpp"

namespace adanat {

// Class label for the unconditional branch used by classifier-free guidance.
inline constexpr int kNullClass = -1;

struct PredictorOutput {
  Matrix logits;    // (N * K) x B; row i * K + k is the logit of token k at position i
  Matrix features;  // feature_dim x B, empty unless requested
};

// Frozen masked-token predictor p(v_i | v). Read-only after construction, so
// concurrent predict() calls are safe.
class MaskedPredictor {
 public:
  virtual ~MaskedPredictor() = default;

  virtual int n_tokens() const = 0;
  virtual int codebook_size() const = 0;
  virtual int n_classes() const = 0;
  virtual int feature_dim() const = 0;
  virtual int grid_height() const = 0;
  int grid_width() const { return n_tokens() / grid_height(); }

  virtual PredictorOutput predict(const std::vector<const TokenSequence*>& batch, const std::vector<int>& classes,
                                  bool want_features) const = 0;

  // N x K logits for one sequence; cls may be kNullClass.
  Matrix predict_logits(const TokenSequence& v, int cls) const;
  Vector features(const TokenSequence& v, int cls) const;

 protected:
  void check_input(const TokenSequence& v, int cls) const;
};

// Exact conditionals from the enumeration table. Unmasked positions condition on
// themselves, so their posterior is a point mass. The null class is the uniform
// mixture over classes. Features: per-position posterior entropy, then per-position max probability.
class TabularPredictor final : public MaskedPredictor {
 public:
  explicit TabularPredictor(WorldSpec spec);

  int n_tokens() const override { return spec_.n_tokens; }
  int codebook_size() const override { return spec_.codebook_size; }
  int n_classes() const override { return spec_.n_classes; }
  int feature_dim() const override { return 2 * spec_.n_tokens; }
  int grid_height() const override { return spec_.grid_height; }

  PredictorOutput predict(const std::vector<const TokenSequence*>& batch, const std::vector<int>& classes,
                          bool want_features) const override;

  // N x K posterior marginals.
  Matrix posterior(const TokenSequence& v, int cls) const;

  const WorldSpec& world() const { return spec_; }

 private:
  WorldSpec spec_;
  ExactStatistics stats_;
};

// MLP over the flattened one-hot grid (K + 1 symbols per position, the last is MASK)
// concatenated with a one-hot class (C + 1 entries, the last is the null class).
// Features are the penultimate activation.
class NeuralPredictor final : public MaskedPredictor {
 public:
  NeuralPredictor(SmallNet net, int n_tokens, int codebook_size, int n_classes, std::string world_fingerprint,
                  int grid_height);

  static SmallNet make_net(int n_tokens, int codebook_size, int n_classes, int hidden);
  static int input_dim(int n_tokens, int codebook_size, int n_classes);

  int n_tokens() const override { return n_tokens_; }
  int codebook_size() const override { return codebook_size_; }
  int n_classes() const override { return n_classes_; }
  int feature_dim() const override;
  int grid_height() const override { return grid_height_; }

  PredictorOutput predict(const std::vector<const TokenSequence*>& batch, const std::vector<int>& classes,
                          bool want_features) const override;

  Matrix encode_inputs(const std::vector<const TokenSequence*>& batch, const std::vector<int>& classes) const;

  const SmallNet& net() const { return net_; }
  const std::string& world_fingerprint() const { return fingerprint_; }

  void save(const std::string& path) const;
  // Rejects checkpoints trained on a different world.
  static NeuralPredictor load(const std::string& path, const WorldSpec& expected_world);

 private:
  SmallNet net_;
  int n_tokens_;
  int codebook_size_;
  int n_classes_;
  std::string fingerprint_;
  int grid_height_;
};

struct PretrainConfig {
  int steps = 4000;
  int batch = 128;
  double lr = 1e-3;
  int hidden = 256;
  double class_dropout = 0.1;
  int heldout = 2000;
  int log_every = 50;
};

struct PretrainReport {
  std::vector<std::pair<int, double>> loss_curve;
  double heldout_cross_entropy = 0.0;
  double unigram_entropy = 0.0;
};

// Masked-token training: per example, mask ratio cos(pi/2 * u) with u ~ U(0, 1) (at least one
// token), class dropped to null with probability class_dropout, cross-entropy on masked positions.
// Throws NumericalError if the loss goes non-finite.
NeuralPredictor mlm_pretrain(const WorldSpec& spec, const PretrainConfig& cfg, Rng& rng,
                             PretrainReport* report = nullptr);

// Held-out masked cross-entropy (nats per masked token) with the same masking law as training.
double masked_cross_entropy(const MaskedPredictor& pred, const WorldSpec& spec, int n_samples, Rng& rng);

// Cross-entropy of the best context-free predictor: the class- and position-averaged token marginal.
double unigram_cross_entropy(const WorldSpec& spec);

}  // namespace adanat
