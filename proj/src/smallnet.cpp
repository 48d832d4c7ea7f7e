#include "adanat/smallnet.hpp"

#include <cmath>
#include <stdexcept>

#include "adanat/error.hpp"

namespace adanat {

namespace {

constexpr double kLeakySlope = 0.2;
constexpr double kLayerNormEps = 1e-5;

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
    case Activation::kLeakyRelu: return x > 0.0 ? x : kLeakySlope * x;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kSilu: return x / (1.0 + std::exp(-x));
  }
  return x;
}

double activate_grad(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::kLeakyRelu: return x > 0.0 ? 1.0 : kLeakySlope;
    case Activation::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::kSilu: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 + x * (1.0 - s));
    }
  }
  return 1.0;
}

}  // namespace

std::size_t layer_param_count(const LayerSpec& spec, int cond_dim) {
  switch (spec.kind) {
    case LayerKind::kAffine: return static_cast<std::size_t>(spec.out) * spec.in + spec.out;
    case LayerKind::kActivation: return 0;
    case LayerKind::kAdaLN: return 2 * (static_cast<std::size_t>(spec.out) * cond_dim + spec.out);
  }
  return 0;
}

SmallNet::SmallNet(std::vector<LayerSpec> layers, int cond_dim) : layers_(std::move(layers)), cond_dim_(cond_dim) {
  if (layers_.empty()) throw std::invalid_argument("SmallNet: no layers");
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.in <= 0 || l.out <= 0) throw std::invalid_argument("SmallNet: layer dimensions must be positive");
    if (l.kind != LayerKind::kAffine && l.in != l.out) {
      throw std::invalid_argument("SmallNet: non-affine layers must preserve width");
    }
    if (l.kind == LayerKind::kAdaLN && cond_dim_ <= 0) {
      throw std::invalid_argument("SmallNet: AdaLN layer needs a conditioning input");
    }
    if (i > 0 && layers_[i - 1].out != l.in) throw std::invalid_argument("SmallNet: layer widths do not chain");
    offsets_.push_back(total);
    total += layer_param_count(l, cond_dim_);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(total));
}

SmallNet SmallNet::mlp(int in, const std::vector<int>& hidden, int out, Activation act, bool zero_last) {
  std::vector<LayerSpec> layers;
  int prev = in;
  for (int h : hidden) {
    layers.push_back({LayerKind::kAffine, prev, h});
    layers.push_back({LayerKind::kActivation, h, h, act});
    prev = h;
  }
  layers.push_back({LayerKind::kAffine, prev, out, Activation::kIdentity, zero_last});
  return SmallNet(std::move(layers));
}

int SmallNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
int SmallNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }

void SmallNet::set_params(const Vector& p) {
  if (p.size() != params_.size()) throw ShapeError("SmallNet: parameter vector length mismatch");
  params_ = p;
}

void SmallNet::initialize(Rng& rng) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::size_t n = layer_param_count(l, cond_dim_);
    double* p = params_.data() + offsets_[i];
    if (l.kind == LayerKind::kAffine && !l.zero_init) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
      for (std::size_t j = 0; j < n; ++j) p[j] = (2.0 * uniform01(rng) - 1.0) * bound;
    } else {
      for (std::size_t j = 0; j < n; ++j) p[j] = 0.0;
    }
  }
}

ForwardTrace SmallNet::forward_trace(const Matrix& input, const Matrix* cond) const {
  if (layers_.empty()) throw std::logic_error("SmallNet: empty network");
  if (input.rows() != input_dim()) {
    throw ShapeError("SmallNet: input has " + std::to_string(input.rows()) + " rows, expected " +
                     std::to_string(input_dim()));
  }
  const Eigen::Index batch = input.cols();
  ForwardTrace tr;
  if (cond_dim_ > 0) {
    if (cond == nullptr || cond->rows() != cond_dim_ || cond->cols() != batch) {
      throw ShapeError("SmallNet: conditioning input has the wrong shape");
    }
    tr.cond = *cond;
  }
  tr.inputs.reserve(layers_.size());
  tr.normalized.resize(layers_.size());
  tr.scale.resize(layers_.size());
  tr.inv_std.resize(layers_.size());

  Matrix x = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const double* p = params_.data() + offsets_[i];
    tr.inputs.push_back(x);
    switch (l.kind) {
      case LayerKind::kAffine: {
        Eigen::Map<const Matrix> w(p, l.out, l.in);
        Eigen::Map<const Vector> b(p + static_cast<std::size_t>(l.out) * l.in, l.out);
        Matrix y = w * x;
        y.colwise() += b;
        x = std::move(y);
        break;
      }
      case LayerKind::kActivation:
        x = x.unaryExpr([a = l.act](double v) { return activate(a, v); });
        break;
      case LayerKind::kAdaLN: {
        const int d = l.out;
        const std::size_t wsz = static_cast<std::size_t>(d) * cond_dim_;
        Eigen::Map<const Matrix> wg(p, d, cond_dim_);
        Eigen::Map<const Vector> bg(p + wsz, d);
        Eigen::Map<const Matrix> wb(p + wsz + d, d, cond_dim_);
        Eigen::Map<const Vector> bb(p + 2 * wsz + d, d);
        const Eigen::RowVectorXd mean = x.colwise().mean();
        Matrix centered = x.rowwise() - mean;
        const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
        const Eigen::RowVectorXd inv = (var.array() + kLayerNormEps).rsqrt();
        Matrix xhat = centered.array().rowwise() * inv.array();
        Matrix scale = wg * tr.cond;
        scale.colwise() += bg;
        scale.array() += 1.0;
        Matrix shift = wb * tr.cond;
        shift.colwise() += bb;
        x = xhat.cwiseProduct(scale) + shift;
        tr.normalized[i] = std::move(xhat);
        tr.scale[i] = std::move(scale);
        tr.inv_std[i] = inv;
        break;
      }
    }
  }
  tr.output = std::move(x);
  return tr;
}

Matrix SmallNet::forward(const Matrix& input, const Matrix* cond) const {
  return forward_trace(input, cond).output;
}

Vector SmallNet::backward(const ForwardTrace& trace, const Matrix& upstream, Matrix* input_grad) const {
  if (trace.empty() || trace.inputs.size() != layers_.size()) {
    throw std::logic_error("SmallNet::backward: no forward trace for this network");
  }
  if (upstream.rows() != trace.output.rows() || upstream.cols() != trace.output.cols()) {
    throw ShapeError("SmallNet::backward: upstream gradient shape does not match output");
  }
  Vector grad = Vector::Zero(params_.size());
  Matrix g = upstream;
  for (std::size_t idx = layers_.size(); idx-- > 0;) {
    const auto& l = layers_[idx];
    const double* p = params_.data() + offsets_[idx];
    double* gp = grad.data() + offsets_[idx];
    const Matrix& x = trace.inputs[idx];
    switch (l.kind) {
      case LayerKind::kAffine: {
        Eigen::Map<const Matrix> w(p, l.out, l.in);
        Eigen::Map<Matrix> gw(gp, l.out, l.in);
        Eigen::Map<Vector> gb(gp + static_cast<std::size_t>(l.out) * l.in, l.out);
        gw.noalias() += g * x.transpose();
        gb += g.rowwise().sum();
        if (idx > 0 || input_grad != nullptr) g = w.transpose() * g;
        break;
      }
      case LayerKind::kActivation:
        g = g.cwiseProduct(x.unaryExpr([a = l.act](double v) { return activate_grad(a, v); }));
        break;
      case LayerKind::kAdaLN: {
        const int d = l.out;
        const std::size_t wsz = static_cast<std::size_t>(d) * cond_dim_;
        const Matrix& xhat = trace.normalized[idx];
        const Matrix& scale = trace.scale[idx];
        Eigen::Map<Matrix> gwg(gp, d, cond_dim_);
        Eigen::Map<Vector> gbg(gp + wsz, d);
        Eigen::Map<Matrix> gwb(gp + wsz + d, d, cond_dim_);
        Eigen::Map<Vector> gbb(gp + 2 * wsz + d, d);
        const Matrix dgamma = g.cwiseProduct(xhat);
        gwg.noalias() += dgamma * trace.cond.transpose();
        gbg += dgamma.rowwise().sum();
        gwb.noalias() += g * trace.cond.transpose();
        gbb += g.rowwise().sum();
        const Matrix dxhat = g.cwiseProduct(scale);
        const Eigen::RowVectorXd mean_dxhat = dxhat.colwise().mean();
        const Eigen::RowVectorXd mean_dxhat_xhat = dxhat.cwiseProduct(xhat).colwise().mean();
        Matrix dx = (dxhat.rowwise() - mean_dxhat) - (xhat.array().rowwise() * mean_dxhat_xhat.array()).matrix();
        g = dx.array().rowwise() * trace.inv_std[idx].array();
        break;
      }
    }
  }
  if (input_grad != nullptr) *input_grad = std::move(g);
  return grad;
}

Adam::Adam(std::size_t n_params, AdamConfig config)
    : config_(config),
      m_(Vector::Zero(static_cast<Eigen::Index>(n_params))),
      v_(Vector::Zero(static_cast<Eigen::Index>(n_params))) {}

void Adam::step(Vector& params, const Vector& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("Adam::step: parameter/gradient length mismatch");
  }
  if (!grads.allFinite()) throw NumericalError("Adam::step: non-finite gradient, step rejected");
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  m_ = b1 * m_ + (1.0 - b1) * grads;
  v_ = b2 * v_ + (1.0 - b2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  params.array() -= config_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + config_.eps);
}

}  // namespace adanat
