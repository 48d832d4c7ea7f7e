#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "adanat/smallnet.hpp"

namespace testutil {

// Central differences of f at p, step h per coordinate.
inline adanat::Vector central_fd(const std::function<double(const adanat::Vector&)>& f, adanat::Vector p,
                                 double h = 1e-5) {
  adanat::Vector g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = f(p);
    p[i] = keep - h;
    const double down = f(p);
    p[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest elementwise |a - b| / max(|a|, |b|, floor).
inline double max_rel_err(const adanat::Vector& a, const adanat::Vector& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double den = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / den);
  }
  return worst;
}

template <typename Key>
double tv_distance(const std::map<Key, double>& p, const std::map<Key, double>& q) {
  double tv = 0.0;
  for (const auto& [k, v] : p) {
    auto it = q.find(k);
    tv += std::abs(v - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : q) {
    if (!p.count(k)) tv += std::abs(v);
  }
  return 0.5 * tv;
}

inline adanat::Vector random_vector(Eigen::Index n, adanat::Rng& rng, double scale = 1.0) {
  adanat::Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * adanat::standard_normal(rng);
  return v;
}

inline adanat::Matrix random_matrix(Eigen::Index r, Eigen::Index c, adanat::Rng& rng, double scale = 1.0) {
  adanat::Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * adanat::standard_normal(rng);
  }
  return m;
}

}  // namespace testutil
