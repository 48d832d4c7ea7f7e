#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "adanat/rng.hpp"

namespace adanat {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kIdentity = 0, kRelu = 1, kLeakyRelu = 2, kTanh = 3, kSilu = 4 };

enum class LayerKind { kAffine = 0, kActivation = 1, kAdaLN = 2 };

// Affine: in -> out, W (out x in) then b (out).
// Activation: elementwise, in == out.
// AdaLN: layer norm over features, then scale (1 + gamma) and shift beta, with
// gamma, beta affine in the conditioning vector. in == out.
struct LayerSpec {
  LayerKind kind = LayerKind::kAffine;
  int in = 0;
  int out = 0;
  Activation act = Activation::kIdentity;
  bool zero_init = false;

  bool operator==(const LayerSpec&) const = default;
};

// Cached activations of one batched forward pass. Columns are samples.
struct ForwardTrace {
  std::vector<Matrix> inputs;     // input to each layer
  std::vector<Matrix> normalized; // AdaLN only: normalised input
  std::vector<Matrix> scale;      // AdaLN only: 1 + gamma
  std::vector<Eigen::RowVectorXd> inv_std;
  Matrix cond;
  Matrix output;

  bool empty() const { return inputs.empty(); }
};

// A small differentiable network over a flat parameter vector. All arithmetic is double.
// Inputs are (input_dim x batch); the optional conditioning matrix is (cond_dim x batch).
class SmallNet {
 public:
  SmallNet() = default;
  SmallNet(std::vector<LayerSpec> layers, int cond_dim = 0);

  // Affine/activation stack; the final affine is zero-initialised when `zero_last` is set.
  static SmallNet mlp(int in, const std::vector<int>& hidden, int out, Activation act, bool zero_last = false);

  int input_dim() const;
  int output_dim() const;
  int cond_dim() const { return cond_dim_; }
  std::size_t num_params() const { return static_cast<std::size_t>(params_.size()); }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  void set_params(const Vector& p);

  // Weights and biases uniform in +-1/sqrt(fan_in); zero_init layers and AdaLN modulation start at 0.
  void initialize(Rng& rng);

  ForwardTrace forward_trace(const Matrix& input, const Matrix* cond = nullptr) const;
  Matrix forward(const Matrix& input, const Matrix* cond = nullptr) const;

  // Gradient of sum(upstream .* output) with respect to the parameters, summed over the batch.
  // When input_grad is non-null it receives d/d(input).
  Vector backward(const ForwardTrace& trace, const Matrix& upstream, Matrix* input_grad = nullptr) const;

  // Offset of layer `i`'s parameters in the flat vector.
  std::size_t param_offset(std::size_t i) const { return offsets_.at(i); }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  int cond_dim_ = 0;
  Vector params_;
};

std::size_t layer_param_count(const LayerSpec& spec, int cond_dim);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive-moment optimiser with bias correction. step() descends: params -= lr * m_hat / (sqrt(v_hat) + eps).
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n_params, AdamConfig config);

  // Throws NumericalError and leaves everything untouched if any gradient is non-finite.
  void step(Vector& params, const Vector& grads);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  const Vector& first_moment() const { return m_; }
  const Vector& second_moment() const { return v_; }
  long step_count() const { return step_; }

 private:
  AdamConfig config_;
  Vector m_;
  Vector v_;
  long step_ = 0;
};

}  // namespace adanat
