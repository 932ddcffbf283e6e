#pragma once

// Exact finite-alphabet probability primitives. Every expectation here is a
// plain weighted sum over a finite support; natural logarithms throughout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "safetune/errors.hpp"

namespace safetune {

/// Normalization tolerance shared by every probability-valued type.
inline constexpr double kProbTolerance = 1e-12;

struct Alphabet {
  std::size_t contexts = 1;
  std::size_t outputs = 2;

  void validate() const {
    if (contexts < 1) throw InvalidInput("alphabet: context_count must be >= 1");
    if (outputs < 2) throw InvalidInput("alphabet: output_count must be >= 2");
  }

  friend bool operator==(const Alphabet&, const Alphabet&) = default;
};

namespace detail {

// Checks entries and renormalizes a vector that sums to 1 within tolerance.
inline void normalize_in_place(std::span<double> p, const std::string& where) {
  if (p.empty()) throw InvalidInput(where + ": empty probability vector");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i]) || p[i] < 0.0) {
      throw InvalidInput(where + "[" + std::to_string(i) + "]: entry must be finite and nonnegative");
    }
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > kProbTolerance) {
    throw InvalidInput(where + ": entries sum to " + std::to_string(sum) + ", expected 1");
  }
  // Sums already at rounding level are left alone so that renormalization is idempotent.
  const double rounding = 4.0 * static_cast<double>(p.size()) * std::numeric_limits<double>::epsilon();
  if (std::abs(sum - 1.0) > rounding) {
    for (double& v : p) v /= sum;
  }
}

inline void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw InvalidInput(std::string(op) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                       std::to_string(b) + ")");
  }
}

}  // namespace detail

/// Probability vector over a finite alphabet.
class Categorical {
 public:
  Categorical() = default;

  /// Validates and renormalizes; throws InvalidInput naming `where` on failure.
  explicit Categorical(std::vector<double> probs, const std::string& where = "categorical")
      : probs_(std::move(probs)) {
    detail::normalize_in_place(probs_, where);
  }

  static Categorical point_mass(std::size_t size, std::size_t index) {
    if (index >= size) throw InvalidInput("point_mass: index out of range");
    std::vector<double> p(size, 0.0);
    p[index] = 1.0;
    return Categorical(std::move(p));
  }

  static Categorical uniform(std::size_t size) {
    return Categorical(std::vector<double>(size, 1.0 / static_cast<double>(size)));
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }

  /// Indices with strictly positive mass, ascending.
  std::vector<std::size_t> support() const {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < probs_.size(); ++i)
      if (probs_[i] > 0.0) s.push_back(i);
    return s;
  }

  bool in_support(std::size_t i) const { return probs_[i] > 0.0; }

  friend bool operator==(const Categorical&, const Categorical&) = default;

 private:
  std::vector<double> probs_;
};

/// Row-stochastic matrix: one output distribution per context.
class ConditionalTable {
 public:
  ConditionalTable() = default;

  ConditionalTable(std::size_t contexts, std::size_t outputs, std::vector<double> data,
                   const std::string& where = "table")
      : contexts_(contexts), outputs_(outputs), data_(std::move(data)) {
    if (contexts_ == 0 || outputs_ == 0) throw InvalidInput(where + ": empty table");
    if (data_.size() != contexts_ * outputs_) {
      throw InvalidInput(where + ": expected " + std::to_string(contexts_ * outputs_) + " entries, got " +
                         std::to_string(data_.size()));
    }
    for (std::size_t x = 0; x < contexts_; ++x) {
      detail::normalize_in_place(std::span<double>(data_).subspan(x * outputs_, outputs_),
                                 where + "[" + std::to_string(x) + "]");
    }
  }

  static ConditionalTable from_rows(const std::vector<std::vector<double>>& rows,
                                    const std::string& where = "table") {
    if (rows.empty()) throw InvalidInput(where + ": no rows");
    const std::size_t m = rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * m);
    for (std::size_t x = 0; x < rows.size(); ++x) {
      if (rows[x].size() != m) {
        throw InvalidInput(where + "[" + std::to_string(x) + "]: ragged row");
      }
      flat.insert(flat.end(), rows[x].begin(), rows[x].end());
    }
    return ConditionalTable(rows.size(), m, std::move(flat), where);
  }

  static ConditionalTable uniform(std::size_t contexts, std::size_t outputs) {
    return ConditionalTable(contexts, outputs,
                            std::vector<double>(contexts * outputs, 1.0 / static_cast<double>(outputs)));
  }

  std::size_t contexts() const { return contexts_; }
  std::size_t outputs() const { return outputs_; }
  std::span<const double> row(std::size_t x) const {
    return std::span<const double>(data_).subspan(x * outputs_, outputs_);
  }
  double operator()(std::size_t x, std::size_t y) const { return data_[x * outputs_ + y]; }
  std::span<const double> data() const { return data_; }

  double min_entry() const { return *std::min_element(data_.begin(), data_.end()); }

  friend bool operator==(const ConditionalTable&, const ConditionalTable&) = default;

 private:
  std::size_t contexts_ = 0;
  std::size_t outputs_ = 0;
  std::vector<double> data_;
};

/// Half the L1 distance.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  detail::require_same_size(p.size(), q.size(), "tv_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_distance(const Categorical& p, const Categorical& q) {
  return tv_distance(p.probs(), q.probs());
}

/// KL(p || q) in nats, with 0 ln(0/q) = 0. Returns +inf when p is not
/// absolutely continuous with respect to q.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  detail::require_same_size(p.size(), q.size(), "kl_divergence");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    s += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave a tiny negative residue when p == q up to the last ulp.
  return std::max(s, 0.0);
}

inline double kl_divergence(const Categorical& p, const Categorical& q) {
  return kl_divergence(p.probs(), q.probs());
}

namespace detail {

inline void require_compatible(const Categorical& d, const ConditionalTable& a, const char* op) {
  require_same_size(d.size(), a.contexts(), op);
}

inline void require_compatible(const Categorical& d, const ConditionalTable& a, const ConditionalTable& b,
                               const char* op) {
  require_same_size(d.size(), a.contexts(), op);
  require_same_size(d.size(), b.contexts(), op);
  require_same_size(a.outputs(), b.outputs(), op);
}

}  // namespace detail

/// E_{x~d} TV(a(x), b(x)).
inline double expected_conditional_tv(const Categorical& d, const ConditionalTable& a,
                                      const ConditionalTable& b) {
  detail::require_compatible(d, a, b, "expected_conditional_tv");
  double s = 0.0;
  for (std::size_t x = 0; x < d.size(); ++x) {
    if (d[x] > 0.0) s += d[x] * tv_distance(a.row(x), b.row(x));
  }
  return s;
}

/// E_{x~d} KL(a(x) || b(x)); +inf propagates.
inline double expected_conditional_kl(const Categorical& d, const ConditionalTable& a,
                                      const ConditionalTable& b) {
  detail::require_compatible(d, a, b, "expected_conditional_kl");
  double s = 0.0;
  for (std::size_t x = 0; x < d.size(); ++x) {
    if (d[x] > 0.0) s += d[x] * kl_divergence(a.row(x), b.row(x));
  }
  return s;
}

/// E_{x~d, y~mu(x)}[-ln mu(y|x)], the minimum attainable expected NLL.
inline double conditional_entropy_loss(const Categorical& d, const ConditionalTable& mu) {
  detail::require_compatible(d, mu, "conditional_entropy_loss");
  double s = 0.0;
  for (std::size_t x = 0; x < d.size(); ++x) {
    if (d[x] <= 0.0) continue;
    double h = 0.0;
    for (double p : mu.row(x))
      if (p > 0.0) h -= p * std::log(p);
    s += d[x] * h;
  }
  return s;
}

/// E_{x~d, y~mu(x)}[-ln table(y|x)] for an arbitrary conditional table.
inline double expected_cross_entropy(const Categorical& d, const ConditionalTable& mu,
                                     const ConditionalTable& table) {
  detail::require_compatible(d, mu, table, "expected_cross_entropy");
  double s = 0.0;
  for (std::size_t x = 0; x < d.size(); ++x) {
    if (d[x] <= 0.0) continue;
    double h = 0.0;
    for (std::size_t y = 0; y < mu.outputs(); ++y) {
      const double p = mu(x, y);
      if (p <= 0.0) continue;
      if (table(x, y) <= 0.0) return std::numeric_limits<double>::infinity();
      h -= p * std::log(table(x, y));
    }
    s += d[x] * h;
  }
  return s;
}

}  // namespace safetune
