#pragma once

// Brute-force references used by unit and acceptance tests. Nothing here calls the sampler.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "adanat/backbone.hpp"
#include "adanat/sampler.hpp"

namespace oracle {

using adanat::kMask;

inline std::vector<double> softmax(const std::vector<double>& x) {
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> p(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) z += p[i] = std::exp(x[i] - mx);
  for (double& v : p) v /= z;
  return p;
}

// Probability that sequential sampling without replacement from softmax(scores) picks exactly
// the set `chosen` (bitmask over `items`) in its first |chosen| draws: sum over pick orders.
inline double without_replacement_set_prob(const std::vector<double>& scores, unsigned chosen, unsigned available) {
  if (chosen == 0) return 1.0;
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (available & (1u << i)) z += std::exp(scores[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!(chosen & (1u << i))) continue;
    total += std::exp(scores[i]) / z *
             without_replacement_set_prob(scores, chosen & ~(1u << i), available & ~(1u << i));
  }
  return total;
}

// Exact law of the final sequences produced by T decode-and-remask steps driven by `params`
// (indexed by t) on a small world. Token sequences are keyed by their token vectors.
inline std::map<std::vector<int>, double> process_law(const adanat::MaskedPredictor& pred, int cls,
                                                      const std::vector<adanat::PolicyStepParams>& params) {
  const int n = pred.n_tokens();
  const int k = pred.codebook_size();
  const int horizon = static_cast<int>(params.size());
  std::map<std::vector<int>, double> states{{std::vector<int>(n, kMask), 1.0}};
  for (int t = 0; t < horizon; ++t) {
    const auto& a = params[t];
    const double m = t == horizon - 1 ? 0.0 : a.m;
    std::map<std::vector<int>, double> next;
    for (const auto& [toks, p_state] : states) {
      const adanat::TokenSequence v(toks, pred.grid_height(), pred.grid_width());
      const adanat::Matrix lc = pred.predict_logits(v, cls);
      const adanat::Matrix lu = pred.predict_logits(v, adanat::kNullClass);
      std::vector<int> fresh;
      for (int i = 0; i < n; ++i) {
        if (toks[i] == kMask) fresh.push_back(i);
      }
      const int nf = static_cast<int>(fresh.size());
      // per fresh position: sampling law at temperature tau1 and unscaled log-probabilities
      std::vector<std::vector<double>> sample_p(nf), log_p(nf);
      for (int f = 0; f < nf; ++f) {
        std::vector<double> l(k);
        for (int j = 0; j < k; ++j) {
          const int i = fresh[f];
          l[j] = lc(i, j) + a.w * (lc(i, j) - lu(i, j));
        }
        std::vector<double> scaled(k);
        for (int j = 0; j < k; ++j) scaled[j] = l[j] / a.tau1;
        sample_p[f] = softmax(scaled);
        const std::vector<double> unscaled = softmax(l);
        log_p[f].resize(k);
        for (int j = 0; j < k; ++j) log_p[f][j] = std::log(unscaled[j]);
      }
      const int remask = std::min(static_cast<int>(std::ceil(m * n - 1e-9)), nf);
      const int keep_fresh = nf - remask;
      int combos = 1;
      for (int f = 0; f < nf; ++f) combos *= k;
      for (int code = 0; code < combos; ++code) {
        std::vector<int> guess = toks;
        double p_guess = 1.0;
        std::vector<double> scores(nf);
        int c = code;
        for (int f = 0; f < nf; ++f) {
          const int tok = c % k;
          c /= k;
          guess[fresh[f]] = tok;
          p_guess *= sample_p[f][tok];
          scores[f] = log_p[f][tok] / a.tau2;
        }
        if (p_guess == 0.0) continue;
        const unsigned all = nf == 0 ? 0u : (1u << nf) - 1u;
        for (unsigned set = 0; set <= all; ++set) {
          if (__builtin_popcount(set) != keep_fresh) continue;
          const double p_keep = without_replacement_set_prob(scores, set, all);
          std::vector<int> out = guess;
          for (int f = 0; f < nf; ++f) {
            if (!(set & (1u << f))) out[fresh[f]] = kMask;
          }
          next[out] += p_state * p_guess * p_keep;
        }
      }
    }
    states = std::move(next);
  }
  return states;
}

}  // namespace oracle
