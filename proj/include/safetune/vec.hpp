#pragma once

// Small dense-vector helpers over flat parameter arrays.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "safetune/errors.hpp"

namespace safetune {

using Params = std::vector<double>;

namespace vec {

inline void require_same(std::size_t a, std::size_t b) {
  if (a != b) throw InvalidInput("parameter arrays differ in length");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  require_same(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  require_same(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// a + t * b
inline Params axpy(std::span<const double> a, double t, std::span<const double> b) {
  require_same(a.size(), b.size());
  Params out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + t * b[i];
  return out;
}

inline Params sub(std::span<const double> a, std::span<const double> b) { return axpy(a, -1.0, b); }

inline Params scaled(std::span<const double> a, double t) {
  Params out(a.begin(), a.end());
  for (double& v : out) v *= t;
  return out;
}

}  // namespace vec
}  // namespace safetune
