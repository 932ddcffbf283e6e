#pragma once

// Parameterized conditional model P_theta(y|x) = softmax(logits(x))_y.
//
// Two parameterizations share one flat parameter array:
//   tabular   logits[x, y] stored row-major, shape contexts x outputs.
//   low-rank  logits = U V^T with U (contexts x rank) followed by V (outputs x rank),
//             both row-major.
//
// The tabular box [-B, B]^{contexts x outputs} is the constraint set Theta. Inside it
// every probability is at least e^{-2B} / outputs, which gives |ln P| <= 2B + ln(outputs).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safetune/errors.hpp"
#include "safetune/prob.hpp"
#include "safetune/vec.hpp"

namespace safetune {

enum class Variant { tabular, low_rank };

/// Uniform bound on |ln P_theta(y|x)| over the box.
struct PenaltyConstant {
  double value = 0.0;
};

class LogitModel {
 public:
  LogitModel() = default;

  static LogitModel tabular(Alphabet alphabet, double box, Params logits) {
    alphabet.validate();
    check_box(box);
    if (logits.size() != alphabet.contexts * alphabet.outputs) {
      throw InvalidInput("tabular model: expected " + std::to_string(alphabet.contexts * alphabet.outputs) +
                         " logits, got " + std::to_string(logits.size()));
    }
    return LogitModel(Variant::tabular, alphabet, box, 0, std::move(logits));
  }

  static LogitModel zeros(Alphabet alphabet, double box) {
    return tabular(alphabet, box, Params(alphabet.contexts * alphabet.outputs, 0.0));
  }

  /// `factors` holds U (contexts x rank) then V (outputs x rank).
  static LogitModel low_rank(Alphabet alphabet, std::size_t rank, Params factors, double box = 1.0) {
    alphabet.validate();
    check_box(box);
    if (rank < 1) throw InvalidInput("low-rank model: rank must be >= 1");
    const std::size_t expected = (alphabet.contexts + alphabet.outputs) * rank;
    if (factors.size() != expected) {
      throw InvalidInput("low-rank model: expected " + std::to_string(expected) + " parameters, got " +
                         std::to_string(factors.size()));
    }
    return LogitModel(Variant::low_rank, alphabet, box, rank, std::move(factors));
  }

  Variant variant() const { return variant_; }
  bool is_tabular() const { return variant_ == Variant::tabular; }
  const Alphabet& alphabet() const { return alphabet_; }
  double box() const { return box_; }
  std::size_t rank() const { return rank_; }
  std::span<const double> params() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Same variant and shape, new parameter values.
  LogitModel with_params(Params params) const {
    if (params.size() != params_.size()) throw InvalidInput("with_params: parameter count mismatch");
    LogitModel m = *this;
    m.params_ = std::move(params);
    return m;
  }

  std::vector<double> row_logits(std::size_t x) const {
    check_context(x);
    const std::size_t m = alphabet_.outputs;
    std::vector<double> out(m);
    if (variant_ == Variant::tabular) {
      std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(x * m), m, out.begin());
    } else {
      const double* u = params_.data() + x * rank_;
      const double* v = params_.data() + alphabet_.contexts * rank_;
      for (std::size_t y = 0; y < m; ++y) {
        double s = 0.0;
        for (std::size_t k = 0; k < rank_; ++k) s += u[k] * v[y * rank_ + k];
        out[y] = s;
      }
    }
    return out;
  }

  bool in_box() const {
    return std::all_of(params_.begin(), params_.end(), [&](double v) { return std::abs(v) <= box_; });
  }

  void check_context(std::size_t x) const {
    if (x >= alphabet_.contexts) {
      throw InvalidInput("context index " + std::to_string(x) + " out of range (" +
                         std::to_string(alphabet_.contexts) + " contexts)");
    }
  }

  friend bool operator==(const LogitModel&, const LogitModel&) = default;

 private:
  LogitModel(Variant v, Alphabet a, double box, std::size_t rank, Params p)
      : variant_(v), alphabet_(a), box_(box), rank_(rank), params_(std::move(p)) {}

  static void check_box(double box) {
    if (!(box >= 0.0) || !std::isfinite(box)) throw InvalidInput("box bound must be finite and >= 0");
  }

  Variant variant_ = Variant::tabular;
  Alphabet alphabet_{};
  double box_ = 0.0;
  std::size_t rank_ = 0;
  Params params_;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double z : v) s += std::exp(z - m);
  return m + std::log(s);
}

inline void softmax_in_place(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& z : v) {
    z = std::exp(z - m);
    s += z;
  }
  for (double& z : v) z /= s;
}

inline void require_model_fits(const LogitModel& model, const Categorical& d, const ConditionalTable& mu,
                               const char* op) {
  detail::require_same_size(model.alphabet().contexts, d.size(), op);
  detail::require_same_size(model.alphabet().contexts, mu.contexts(), op);
  detail::require_same_size(model.alphabet().outputs, mu.outputs(), op);
}

}  // namespace detail

/// P_theta(. | x).
inline std::vector<double> forward(const LogitModel& model, std::size_t x) {
  auto row = model.row_logits(x);
  detail::softmax_in_place(row);
  return row;
}

/// All rows of the model as a conditional table.
inline ConditionalTable to_table(const LogitModel& model) {
  const auto& a = model.alphabet();
  std::vector<double> flat;
  flat.reserve(a.contexts * a.outputs);
  for (std::size_t x = 0; x < a.contexts; ++x) {
    const auto row = forward(model, x);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return ConditionalTable(a.contexts, a.outputs, std::move(flat), "model");
}

/// E_{x~d, y~mu(x)}[-ln P_theta(y|x)], computed as an exact double sum.
inline double expected_nll(const LogitModel& model, const Categorical& d, const ConditionalTable& mu) {
  detail::require_model_fits(model, d, mu, "expected_nll");
  double total = 0.0;
  for (std::size_t x = 0; x < d.size(); ++x) {
    if (d[x] <= 0.0) continue;
    const auto z = model.row_logits(x);
    const double lse = detail::log_sum_exp(z);
    double row = 0.0;
    for (std::size_t y = 0; y < z.size(); ++y) {
      const double p = mu(x, y);
      if (p > 0.0) row += p * (lse - z[y]);
    }
    total += d[x] * row;
  }
  return total;
}

/// Gradient of expected_nll with respect to the flat parameter array.
/// Tabular entry (x, y) is d(x) (P_theta(y|x) - mu(y|x)); the low-rank variant
/// pulls that logit gradient G back through the factors: dU = G V, dV = G^T U.
inline Params nll_gradient(const LogitModel& model, const Categorical& d, const ConditionalTable& mu) {
  detail::require_model_fits(model, d, mu, "nll_gradient");
  const std::size_t c = model.alphabet().contexts;
  const std::size_t m = model.alphabet().outputs;

  std::vector<double> logit_grad(c * m, 0.0);
  for (std::size_t x = 0; x < c; ++x) {
    if (d[x] <= 0.0) continue;
    const auto p = forward(model, x);
    for (std::size_t y = 0; y < m; ++y) logit_grad[x * m + y] = d[x] * (p[y] - mu(x, y));
  }
  if (model.is_tabular()) return logit_grad;

  const std::size_t r = model.rank();
  const auto theta = model.params();
  const double* u = theta.data();
  const double* v = theta.data() + c * r;
  Params grad(theta.size(), 0.0);
  double* gu = grad.data();
  double* gv = grad.data() + c * r;
  for (std::size_t x = 0; x < c; ++x) {
    for (std::size_t y = 0; y < m; ++y) {
      const double g = logit_grad[x * m + y];
      if (g == 0.0) continue;
      for (std::size_t k = 0; k < r; ++k) {
        gu[x * r + k] += g * v[y * r + k];
        gv[y * r + k] += g * u[x * r + k];
      }
    }
  }
  return grad;
}

/// Entrywise clamp onto [-B, B]. Idempotent.
inline LogitModel project_box(const LogitModel& model) {
  if (!model.is_tabular()) throw Unsupported("project_box: only defined for the tabular variant");
  Params p(model.params().begin(), model.params().end());
  const double b = model.box();
  for (double& v : p) v = std::clamp(v, -b, b);
  return model.with_params(std::move(p));
}

/// C_p = 2B + ln(outputs), a two-sided bound on ln P_theta over the box.
inline PenaltyConstant penalty_constant(const LogitModel& model) {
  if (!model.is_tabular()) throw Unsupported("penalty_constant: no uniform bound for the low-rank variant");
  return {2.0 * model.box() + std::log(static_cast<double>(model.alphabet().outputs))};
}

/// Smallest box half-width B for which every row of `table` is realizable:
/// max over rows of (1/2) ln(max / min). Infinite if any entry is zero.
inline double required_box_bound(const ConditionalTable& table) {
  double b = 0.0;
  for (std::size_t x = 0; x < table.contexts(); ++x) {
    const auto row = table.row(x);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    if (*lo <= 0.0) return std::numeric_limits<double>::infinity();
    b = std::max(b, 0.5 * std::log(*hi / *lo));
  }
  return b;
}

/// Tabular model reproducing `table` exactly: each logit row is ln(table(x, .))
/// shifted so its extremes are symmetric about zero.
inline LogitModel realizing_model(const ConditionalTable& table, double box) {
  const double need = required_box_bound(table);
  if (!(need <= box)) {
    throw InvalidConfig("realizing_model: table needs box bound " + std::to_string(need) + " > " +
                        std::to_string(box));
  }
  const std::size_t m = table.outputs();
  Params logits(table.contexts() * m);
  for (std::size_t x = 0; x < table.contexts(); ++x) {
    const auto row = table.row(x);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double mid = 0.5 * (std::log(*lo) + std::log(*hi));
    for (std::size_t y = 0; y < m; ++y) logits[x * m + y] = std::clamp(std::log(row[y]) - mid, -box, box);
  }
  return LogitModel::tabular({table.contexts(), m}, box, std::move(logits));
}

inline nlohmann::json model_to_json(const LogitModel& model) {
  nlohmann::json j;
  j["variant"] = model.is_tabular() ? "tabular" : "low_rank";
  j["B"] = model.box();
  j["shape"] = {model.alphabet().contexts, model.alphabet().outputs};
  j["params"] = std::vector<double>(model.params().begin(), model.params().end());
  if (!model.is_tabular()) j["rank"] = model.rank();
  return j;
}

inline LogitModel model_from_json(const nlohmann::json& j) {
  try {
    const auto variant = j.at("variant").get<std::string>();
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ParseError("model.shape: expected [contexts, outputs]");
    const Alphabet a{shape[0], shape[1]};
    auto params = j.at("params").get<Params>();
    const double box = j.at("B").get<double>();
    if (variant == "tabular") return LogitModel::tabular(a, box, std::move(params));
    if (variant == "low_rank") return LogitModel::low_rank(a, j.at("rank").get<std::size_t>(), std::move(params), box);
    throw ParseError("model.variant: unknown variant '" + variant + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
}

}  // namespace safetune
