#pragma once

// Explicit upper bounds on the safety gap G_s and capability gap G_f for both
// fine-tuning strategies, with the constants spelled out term by term, plus
// sampled estimates of the local Lipschitz and smoothness constants they need.
//
// Case I, safety (C_p = uniform bound on |ln P_theta|, L1 sums written as 2 TV):
//   G_s <= 2 C_p / lambda                          (penalty)
//        + 2 C_p sum_x |D_hat(x) - D_s(x)|         (input_mismatch)
//        + 2 C_p E_{D_s} sum_y |mu_hat - mu_s|     (output_mismatch)
//        + E_{D_s} KL(mu_s(x) || mu_hat(x))        (output_kl)
// Case I, capability:
//   G_f <= lambda sum_{x in supp D_hat ∩ supp D_f} D_hat(x) KL(mu_hat(x) || mu_f(x))
// Case II, safety:
//   G_s(theta) <= L_s eps_2 + G_s(theta_s)
// Case II, capability (g = grad of E_f[-ln P] at theta_s):
//   G_f(theta) <= G_f(theta_s) - ||g||^2 / (2 L'_f)          if eps_2 >= ||g|| / L'_f
//   G_f(theta) <= G_f(theta_s) - eps_2 ||g|| + L'_f eps_2^2/2 otherwise

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "safetune/errors.hpp"
#include "safetune/model.hpp"
#include "safetune/prob.hpp"
#include "safetune/scenario.hpp"
#include "safetune/trainer.hpp"
#include "safetune/vec.hpp"

namespace safetune {

enum class EstimateMethod { gradient_sup, curvature_fd };

struct LipschitzEstimate {
  double value = 0.0;
  double epsilon = 0.0;
  std::size_t samples = 0;
  EstimateMethod method = EstimateMethod::gradient_sup;
  double safety_factor = 1.5;
};

/// Measured-vs-bound record. `terms` are additive: they sum to bound_value.
struct BoundReport {
  int theorem = 0;
  double bound_value = 0.0;
  double measured_gap = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> terms;
  std::map<std::string, double> diagnostics;
  double slack = std::numeric_limits<double>::quiet_NaN();

  BoundReport& with_measured(double gap) {
    measured_gap = gap;
    slack = bound_value - gap;
    return *this;
  }

  double term(const std::string& name) const {
    for (const auto& [k, v] : terms)
      if (k == name) return v;
    throw InvalidInput("bound report has no term '" + name + "'");
  }

  double terms_sum() const {
    double s = 0.0;
    for (const auto& t : terms) s += t.second;
    return s;
  }
};

namespace detail {

inline void finish(BoundReport& r) { r.bound_value = r.terms_sum(); }

inline Params unit_or_zero(Params v) {
  const double n = vec::norm(v);
  if (n > 0.0)
    for (double& x : v) x /= n;
  return v;
}

// Sample k depends only on (seed, k): direction is a normalized Gaussian vector;
// even k sit on the sphere, odd k at radius U^{1/d} inside the unit ball.
class BallSampler {
 public:
  BallSampler(std::uint64_t seed, std::size_t dim) : rng_(seed), dim_(dim) {}

  Params next_offset() {
    Params u(dim_);
    double n = 0.0;
    while (n == 0.0) {
      for (double& v : u) v = normal_(rng_);
      n = vec::norm(u);
    }
    double radius = 1.0;
    const double uni = uniform_(rng_);
    if (count_++ % 2 == 1) radius = std::pow(uni, 1.0 / static_cast<double>(dim_));
    for (double& v : u) v *= radius / n;
    return u;
  }

  Params next_direction() {
    Params u(dim_);
    double n = 0.0;
    while (n == 0.0) {
      for (double& v : u) v = normal_(rng_);
      n = vec::norm(u);
    }
    for (double& v : u) v /= n;
    return u;
  }

 private:
  std::mt19937_64 rng_;
  std::size_t dim_;
  std::size_t count_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Deterministic probe points: the center, the first-order task descent path,
// and both directions of the safety gradient, all at the ball scale.
inline std::vector<Params> anchor_points(const LogitModel& theta_s, const Scenario& s, double eps) {
  const Params center(theta_s.params().begin(), theta_s.params().end());
  std::vector<Params> pts{center};
  if (eps == 0.0) return pts;
  const Params gf = unit_or_zero(nll_gradient(theta_s, s.task.d, s.task.mu));
  const Params gs = unit_or_zero(nll_gradient(theta_s, s.safety.d, s.safety.mu));
  for (double t : {0.25, 0.5, 0.75, 1.0}) pts.push_back(vec::axpy(center, -t * eps, gf));
  pts.push_back(vec::axpy(center, eps, gs));
  pts.push_back(vec::axpy(center, -eps, gs));
  return pts;
}

inline void check_estimator_args(double eps, std::size_t samples, double safety_factor) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw InvalidInput("estimator: epsilon_2 must be finite and >= 0");
  if (samples < 1) throw InvalidInput("estimator: samples must be >= 1");
  if (!(safety_factor >= 1.0)) throw InvalidInput("estimator: safety_factor must be >= 1");
}

}  // namespace detail

/// safety_factor * max ||grad E_{D_s,mu_s}[-ln P_theta]|| over the anchors and
/// `samples` seeded points of the eps_2-ball. On a convex ball the gradient-norm
/// supremum bounds the Lipschitz constant of the safety loss.
inline LipschitzEstimate estimate_lipschitz_s(const LogitModel& theta_s, const Scenario& s, double epsilon_2,
                                              std::uint64_t seed, std::size_t samples,
                                              double safety_factor = 1.5) {
  detail::check_estimator_args(epsilon_2, samples, safety_factor);
  auto grad_norm = [&](const Params& p) {
    return vec::norm(nll_gradient(theta_s.with_params(p), s.safety.d, s.safety.mu));
  };
  double best = 0.0;
  for (const auto& p : detail::anchor_points(theta_s, s, epsilon_2)) best = std::max(best, grad_norm(p));
  const Params center(theta_s.params().begin(), theta_s.params().end());
  detail::BallSampler sampler(seed, center.size());
  for (std::size_t k = 0; k < samples && epsilon_2 > 0.0; ++k) {
    best = std::max(best, grad_norm(vec::axpy(center, epsilon_2, sampler.next_offset())));
  }
  return {safety_factor * best, epsilon_2, samples, EstimateMethod::gradient_sup, safety_factor};
}

namespace detail {

inline constexpr double kCurvatureStep = 1e-4;

// Second difference of the loss along unit direction u.
inline double directional_curvature(const std::function<double(const Params&)>& loss, const Params& p,
                                    const Params& u) {
  const double h = kCurvatureStep;
  return (loss(vec::axpy(p, h, u)) - 2.0 * loss(p) + loss(vec::axpy(p, -h, u))) / (h * h);
}

// A few rounds of power iteration with finite-difference Hessian-vector products
// steer a random direction toward the dominant curvature direction at p.
inline Params dominant_direction(const std::function<Params(const Params&)>& grad, const Params& p, Params u,
                                 int rounds = 8) {
  const double h = 1e-5;
  for (int r = 0; r < rounds; ++r) {
    const Params gp = grad(vec::axpy(p, h, u));
    const Params gm = grad(vec::axpy(p, -h, u));
    Params hu(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) hu[i] = (gp[i] - gm[i]) / (2.0 * h);
    const double n = vec::norm(hu);
    if (!(n > 0.0)) break;
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = hu[i] / n;
  }
  return u;
}

}  // namespace detail

/// safety_factor * max directional curvature (l(p + h u) - 2 l(p) + l(p - h u)) / h^2
/// of the task loss, h = 1e-4, over the anchors and `samples` seeded ball points.
/// Each direction starts random and is refined by power iteration.
inline LipschitzEstimate estimate_smoothness_f(const LogitModel& theta_s, const Scenario& s, double epsilon_2,
                                               std::uint64_t seed, std::size_t samples,
                                               double safety_factor = 1.5) {
  detail::check_estimator_args(epsilon_2, samples, safety_factor);
  const std::function<double(const Params&)> loss = [&](const Params& p) {
    return expected_nll(theta_s.with_params(p), s.task.d, s.task.mu);
  };
  const std::function<Params(const Params&)> grad = [&](const Params& p) {
    return nll_gradient(theta_s.with_params(p), s.task.d, s.task.mu);
  };
  const Params center(theta_s.params().begin(), theta_s.params().end());
  detail::BallSampler sampler(seed, center.size());

  double best = -std::numeric_limits<double>::infinity();
  auto probe = [&](const Params& p, Params u) {
    u = detail::dominant_direction(grad, p, std::move(u));
    best = std::max(best, detail::directional_curvature(loss, p, u));
  };
  for (const auto& p : detail::anchor_points(theta_s, s, epsilon_2)) probe(p, sampler.next_direction());
  for (std::size_t k = 0; k < samples; ++k) {
    const Params offset = sampler.next_offset();
    const Params p = epsilon_2 > 0.0 ? vec::axpy(center, epsilon_2, offset) : center;
    probe(p, sampler.next_direction());
  }
  return {safety_factor * std::max(best, 0.0), epsilon_2, samples, EstimateMethod::curvature_fd, safety_factor};
}

/// Case I safety bound. lambda = 0 gives +inf (flagged in diagnostics).
inline BoundReport bound_t1(const Scenario& s, double lambda, PenaltyConstant c_p) {
  if (!(lambda >= 0.0)) throw InvalidInput("bound_t1: lambda must be >= 0");
  const double cp = c_p.value;
  BoundReport r;
  r.theorem = 1;
  const double penalty = lambda > 0.0 ? 2.0 * cp / lambda : std::numeric_limits<double>::infinity();
  if (lambda == 0.0) r.diagnostics["lambda_zero"] = 1.0;
  r.terms = {{"penalty", penalty},
             {"input_mismatch", 4.0 * cp * tv_distance(s.proxy.d, s.safety.d)},
             {"output_mismatch", 4.0 * cp * expected_conditional_tv(s.safety.d, s.safety.mu, s.proxy.mu)},
             {"output_kl", expected_conditional_kl(s.safety.d, s.safety.mu, s.proxy.mu)}};
  detail::finish(r);
  return r;
}

/// Case I capability bound; one term per shared context, named "context[x]".
inline BoundReport bound_t2(const Scenario& s, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidInput("bound_t2: lambda must be >= 0");
  BoundReport r;
  r.theorem = 2;
  for (std::size_t x = 0; x < s.alphabet.contexts; ++x) {
    if (!s.proxy.d.in_support(x) || !s.task.d.in_support(x)) continue;
    const double kl = kl_divergence(s.proxy.mu.row(x), s.task.mu.row(x));
    r.terms.emplace_back("context[" + std::to_string(x) + "]", lambda * s.proxy.d[x] * kl);
  }
  detail::finish(r);
  return r;
}

/// Case II safety bound.
inline BoundReport bound_t3(const LogitModel& theta_s, const Scenario& s, double epsilon_2,
                            const LipschitzEstimate& l_s) {
  if (!(epsilon_2 >= 0.0)) throw InvalidInput("bound_t3: epsilon_2 must be >= 0");
  if (l_s.epsilon < epsilon_2) throw InvalidInput("bound_t3: Lipschitz constant estimated on a smaller ball");
  BoundReport r;
  r.theorem = 3;
  r.terms = {{"lipschitz_term", l_s.value * epsilon_2}, {"baseline_gap", gap_safety(theta_s, s)}};
  detail::finish(r);
  return r;
}

/// Case II capability bound. diagnostics["radius_valid"] is 1 when
/// eps_2 >= ||g|| / L'_f, i.e. the 1/L'_f step stays inside the ball.
inline BoundReport bound_t4(const LogitModel& theta_s, const Scenario& s, double epsilon_2,
                            const LipschitzEstimate& l_f) {
  if (!(epsilon_2 >= 0.0)) throw InvalidInput("bound_t4: epsilon_2 must be >= 0");
  if (!(l_f.value > 0.0)) throw InvalidInput("bound_t4: invalid smoothness estimate (must be > 0)");
  if (l_f.epsilon < epsilon_2) throw InvalidInput("bound_t4: smoothness constant estimated on a smaller ball");
  const double lf = l_f.value;
  const double gn = vec::norm(nll_gradient(theta_s, s.task.d, s.task.mu));
  const bool radius_valid = gn == 0.0 || epsilon_2 >= gn / lf;
  const double descent =
      radius_valid ? -gn * gn / (2.0 * lf) : -epsilon_2 * gn + 0.5 * lf * epsilon_2 * epsilon_2;

  BoundReport r;
  r.theorem = 4;
  r.terms = {{"baseline_gap", gap_capability(theta_s, s)}, {"descent_term", descent}};
  detail::finish(r);
  r.diagnostics["radius_valid"] = radius_valid ? 1.0 : 0.0;
  r.diagnostics["gradient_norm"] = gn;
  // A negative right-hand side contradicts G_f >= 0: the smoothness estimate was too small.
  if (r.bound_value < 0.0) r.diagnostics["negative_bound"] = 1.0;
  return r;
}

/// Finite numbers as-is; infinities as the strings "inf" / "-inf"; NaN as null.
inline nlohmann::json number_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline nlohmann::json report_to_json(const BoundReport& r) {
  nlohmann::json terms = nlohmann::json::object();
  for (const auto& [k, v] : r.terms) terms[k] = number_json(v);
  nlohmann::json diag = nlohmann::json::object();
  for (const auto& [k, v] : r.diagnostics) diag[k] = number_json(v);
  return {{"theorem", r.theorem},
          {"bound", number_json(r.bound_value)},
          {"measured_gap", number_json(r.measured_gap)},
          {"slack", number_json(r.slack)},
          {"terms", terms},
          {"diagnostics", diag}};
}

inline nlohmann::json estimate_to_json(const LipschitzEstimate& e) {
  return {{"value", number_json(e.value)},
          {"epsilon", e.epsilon},
          {"samples", e.samples},
          {"method", e.method == EstimateMethod::gradient_sup ? "gradient-sup" : "curvature-fd"},
          {"safety_factor", e.safety_factor}};
}

}  // namespace safetune
