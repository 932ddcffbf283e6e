#pragma once

// Test-only helpers: seeded random instances and reference computations that
// deliberately avoid the library code paths they are used to check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "safetune/model.hpp"
#include "safetune/prob.hpp"
#include "safetune/scenario.hpp"

namespace safetune::testing {

inline std::vector<double> random_probs(std::mt19937_64& rng, std::size_t n, double zero_prob = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& v : p) {
    v = u(rng) < zero_prob ? 0.0 : u(rng) + 1e-3;
    s += v;
  }
  if (s == 0.0) {
    p[0] = 1.0;
    s = 1.0;
  }
  for (auto& v : p) v /= s;
  return p;
}

inline Categorical random_categorical(std::mt19937_64& rng, std::size_t n, double zero_prob = 0.0) {
  return Categorical(random_probs(rng, n, zero_prob));
}

inline ConditionalTable random_table(std::mt19937_64& rng, std::size_t c, std::size_t m) {
  std::vector<double> flat;
  for (std::size_t x = 0; x < c; ++x) {
    auto r = random_probs(rng, m);
    flat.insert(flat.end(), r.begin(), r.end());
  }
  return ConditionalTable(c, m, flat);
}

inline Params random_params(std::mt19937_64& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Params p(n);
  for (auto& v : p) v = u(rng);
  return p;
}

inline LogitModel random_tabular(std::mt19937_64& rng, Alphabet a, double box, double scale) {
  return LogitModel::tabular(a, box, random_params(rng, a.contexts * a.outputs, scale));
}

inline LogitModel random_low_rank(std::mt19937_64& rng, Alphabet a, std::size_t rank, double scale) {
  return LogitModel::low_rank(a, rank, random_params(rng, (a.contexts + a.outputs) * rank, scale));
}

// Plain double loops written independently of prob.hpp.
inline double naive_tv(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] > q[i] ? p[i] - q[i] : q[i] - p[i];
  return s / 2.0;
}

inline double naive_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] != 0.0) s += p[i] * (std::log(p[i]) - std::log(q[i]));
  return s;
}

inline std::vector<double> row_of(const ConditionalTable& t, std::size_t x) {
  std::vector<double> r;
  for (std::size_t y = 0; y < t.outputs(); ++y) r.push_back(t(x, y));
  return r;
}

/// exp/normalize from scratch for one logit row.
inline std::vector<double> naive_softmax(const std::vector<double>& z) {
  std::vector<double> e(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i]);
    s += e[i];
  }
  for (auto& v : e) v /= s;
  return e;
}

/// Logit row computed from the raw parameter layout.
inline std::vector<double> naive_logits(const LogitModel& m, std::size_t x) {
  const auto p = m.params();
  const std::size_t c = m.alphabet().contexts, k = m.alphabet().outputs;
  std::vector<double> z(k, 0.0);
  if (m.is_tabular()) {
    for (std::size_t y = 0; y < k; ++y) z[y] = p[x * k + y];
  } else {
    const std::size_t r = m.rank();
    for (std::size_t y = 0; y < k; ++y)
      for (std::size_t j = 0; j < r; ++j) z[y] += p[x * r + j] * p[c * r + y * r + j];
  }
  return z;
}

inline double naive_nll(const LogitModel& m, const Categorical& d, const ConditionalTable& mu) {
  double s = 0.0;
  for (std::size_t x = 0; x < d.size(); ++x) {
    const auto p = naive_softmax(naive_logits(m, x));
    for (std::size_t y = 0; y < mu.outputs(); ++y)
      if (mu(x, y) > 0.0) s += d[x] * mu(x, y) * -std::log(p[y]);
  }
  return s;
}

/// Central finite differences of the library's expected_nll.
inline Params fd_gradient(const LogitModel& m, const Categorical& d, const ConditionalTable& mu, double h = 1e-5) {
  Params base(m.params().begin(), m.params().end());
  Params g(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    Params p = base;
    p[i] = base[i] + h;
    const double fp = naive_nll(m.with_params(p), d, mu);
    p[i] = base[i] - h;
    const double fm = naive_nll(m.with_params(p), d, mu);
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace safetune::testing
