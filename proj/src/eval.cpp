#include "adanat/eval.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include "adanat/error.hpp"
#include "adanat/hash.hpp"
#include "adanat/rng.hpp"

namespace adanat {

FeatureEmbedding::FeatureEmbedding(int input_dim, int output_dim, std::uint64_t seed) : seed_(seed) {
  if (input_dim <= 0 || output_dim <= 0) throw std::invalid_argument("FeatureEmbedding: dimensions must be positive");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(input_dim), static_cast<std::uint64_t>(output_dim)));
  const double gain = 2.0 / std::sqrt(static_cast<double>(input_dim));
  weights_.resize(output_dim, input_dim);
  // Column-major fill keeps the draw order independent of Eigen's storage choice.
  for (int c = 0; c < input_dim; ++c) {
    for (int r = 0; r < output_dim; ++r) weights_(r, c) = gain * standard_normal(rng);
  }
  bias_.resize(output_dim);
  for (int r = 0; r < output_dim; ++r) bias_[r] = 0.5 * standard_normal(rng);
}

Vector FeatureEmbedding::embed(const Image& image) const {
  if (static_cast<Eigen::Index>(image.size()) != weights_.cols()) {
    throw ShapeError("feature_embed: image size does not match the embedding");
  }
  const Eigen::Map<const Vector> x(image.pixels.data(), static_cast<Eigen::Index>(image.size()));
  return (weights_ * x + bias_).array().tanh();
}

Matrix FeatureEmbedding::embed_batch(const std::vector<Image>& images) const {
  Matrix x(weights_.cols(), static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (static_cast<Eigen::Index>(images[i].size()) != weights_.cols()) {
      throw ShapeError("feature_embed: image size does not match the embedding");
    }
    x.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Vector>(images[i].pixels.data(), static_cast<Eigen::Index>(images[i].size()));
  }
  Matrix y = weights_ * x;
  y.colwise() += bias_;
  return y.array().tanh();
}

const FeatureEmbedding& default_embedding(int input_dim) {
  static std::mutex mu;
  static std::map<int, FeatureEmbedding> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(input_dim);
  if (it == cache.end()) it = cache.emplace(input_dim, FeatureEmbedding(input_dim)).first;
  return it->second;
}

Vector feature_embed(const Image& image) { return default_embedding(static_cast<int>(image.size())).embed(image); }

Matrix feature_embed_batch(const std::vector<Image>& images) {
  if (images.empty()) return Matrix(kToyFeatureDim, 0);
  return default_embedding(static_cast<int>(images.front().size())).embed_batch(images);
}

GaussianStats fit_stats_features(const Matrix& features) {
  if (features.cols() < 2) throw std::invalid_argument("fit_stats: need at least 2 samples");
  GaussianStats s;
  s.count = features.cols();
  s.mean = features.rowwise().mean();
  const Matrix centered = features.colwise() - s.mean;
  s.cov = centered * centered.transpose() / static_cast<double>(features.cols() - 1);
  s.cov.diagonal().array() += kCovJitter;
  return s;
}

GaussianStats fit_stats(const std::vector<Image>& images) {
  if (images.size() < 2) throw std::invalid_argument("fit_stats: need at least 2 images");
  return fit_stats_features(feature_embed_batch(images));
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() || b.cov.rows() != b.mean.size()) {
    throw ShapeError("frechet_distance: dimension mismatch");
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Matrix sa = 0.5 * (a.cov + a.cov.transpose());
  const Matrix sb = 0.5 * (b.cov + b.cov.transpose());

  Eigen::SelfAdjointEigenSolver<Matrix> ea(sa);
  const Vector root_vals = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Matrix sa_half = ea.eigenvectors() * root_vals.asDiagonal() * ea.eigenvectors().transpose();
  Matrix inner = sa_half * sb * sa_half;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> ei(inner, Eigen::EigenvaluesOnly);
  const double trace_sqrt = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  const double scale = 1.0 + sa.trace() + sb.trace();
  const double d2 = mean_term + sa.trace() + sb.trace() - 2.0 * trace_sqrt;
  if (!std::isfinite(d2)) throw NumericalError("frechet_distance: non-finite result");
  return d2 < 1e-9 * scale ? 0.0 : d2;
}

Divergence exact_divergence(const std::vector<TokenSequence>& samples, const WorldSpec& spec, int cls) {
  if (cls < 0 || cls >= spec.n_classes) throw std::out_of_range("exact_divergence: class out of range");
  if (samples.empty()) throw std::invalid_argument("exact_divergence: no samples");
  const ExactStatistics stats = exact_statistics(spec, /*require_table=*/true);
  const auto& p = stats.table[cls];
  std::vector<double> counts(p.size(), 0.0);
  for (const auto& s : samples) {
    if (s.has_mask()) throw std::invalid_argument("exact_divergence: sample contains MASK");
    counts[sequence_index(s.tokens, spec.codebook_size)] += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  const double m = static_cast<double>(p.size());
  Divergence d;
  for (std::size_t i = 0; i < p.size(); ++i) {
    d.tv += std::fabs(counts[i] / n - p[i]);
    if (p[i] > 0.0) d.kl += p[i] * std::log(p[i] / ((counts[i] + 1.0) / (n + m)));
  }
  d.tv *= 0.5;
  return d;
}

double diversity_from_features(const Matrix& f) {
  const Eigen::Index n = f.cols();
  if (n < 2) throw std::invalid_argument("diversity_metric: need at least 2 samples");
  const Vector sq = f.colwise().squaredNorm().transpose();
  const Matrix gram = f.transpose() * f;
  double total = 0.0;
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) total += std::sqrt(std::max(0.0, sq[i] + sq[j] - 2.0 * gram(i, j)));
  }
  return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double diversity_metric(const std::vector<Image>& images) {
  if (images.size() < 2) throw std::invalid_argument("diversity_metric: need at least 2 images");
  return diversity_from_features(feature_embed_batch(images));
}

namespace {

nlohmann::json stats_payload(const GaussianStats& s) {
  nlohmann::json j;
  j["format"] = "adanat-stats-v1";
  j["dim"] = s.mean.size();
  j["count"] = s.count;
  j["embedding_seed"] = s.embedding_seed;
  j["mean"] = std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size());
  std::vector<std::vector<double>> cov(static_cast<std::size_t>(s.cov.rows()));
  for (Eigen::Index r = 0; r < s.cov.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.cov.cols(); ++c) cov[static_cast<std::size_t>(r)].push_back(s.cov(r, c));
  }
  j["cov"] = cov;
  return j;
}

}  // namespace

void save_stats(const GaussianStats& stats, const std::string& path) {
  nlohmann::json j = stats_payload(stats);
  const std::string digest = sha256_hex(j.dump());
  j["sha256"] = digest;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(1) << "\n";
}

GaussianStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("reference stats file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw MissingArtifactError("reference stats file " + path + " is not valid JSON");
  }
  if (!j.contains("sha256") || j.value("format", "") != "adanat-stats-v1") {
    throw MissingArtifactError("reference stats file " + path + " has an unknown format");
  }
  const std::string digest = j["sha256"].get<std::string>();
  j.erase("sha256");
  if (sha256_hex(j.dump()) != digest) throw MissingArtifactError("reference stats file " + path + " failed its integrity check");
  GaussianStats s;
  const auto dim = j["dim"].get<Eigen::Index>();
  s.count = j["count"].get<long>();
  s.embedding_seed = j["embedding_seed"].get<std::uint64_t>();
  const auto mean = j["mean"].get<std::vector<double>>();
  const auto cov = j["cov"].get<std::vector<std::vector<double>>>();
  s.mean = Eigen::Map<const Vector>(mean.data(), dim);
  s.cov.resize(dim, dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) s.cov(r, c) = cov[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  }
  return s;
}

}  // namespace adanat
