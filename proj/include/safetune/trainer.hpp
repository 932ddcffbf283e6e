#pragma once

// Full-batch projected gradient descent for both fine-tuning strategies.
//
//   Case I   min_theta  E_f[-ln P_theta] + lambda * E_proxy[-ln P_theta]      theta in box
//   Case II  min_theta  E_f[-ln P_theta]    s.t. ||theta - theta_s|| <= eps_2  (constrained)
//            min_theta  E_f[-ln P_theta] + lambda * ||theta - theta_s||^2     (penalized)
//
// Each iteration takes a Barzilai-Borwein trial step and halves it until the
// Armijo condition (constant 1e-4) holds for the projected point.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "safetune/errors.hpp"
#include "safetune/model.hpp"
#include "safetune/prob.hpp"
#include "safetune/scenario.hpp"
#include "safetune/vec.hpp"

namespace safetune {

struct CaseIConfig {
  double lambda = 1.0;
  std::optional<double> epsilon_1;
  double step_size = 1.0;
  std::size_t max_iters = 50000;
  double grad_tol = 1e-8;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidConfig("case I: lambda must be finite and >= 0");
    if (!(grad_tol > 0.0)) throw InvalidConfig("case I: grad_tol must be > 0");
    if (!(step_size > 0.0)) throw InvalidConfig("case I: step_size must be > 0");
    if (max_iters < 1) throw InvalidConfig("case I: max_iters must be >= 1");
    if (epsilon_1 && !(*epsilon_1 >= 0.0)) throw InvalidConfig("case I: epsilon_1 must be >= 0");
  }
};

enum class CaseIIMode { constrained, penalized };

struct CaseIIConfig {
  double epsilon_2 = 1.0;
  CaseIIMode mode = CaseIIMode::constrained;
  double lambda = 1.0;
  double step_size = 1.0;
  std::size_t max_iters = 50000;
  double grad_tol = 1e-8;

  void validate() const {
    if (mode == CaseIIMode::constrained && (!(epsilon_2 >= 0.0) || !std::isfinite(epsilon_2))) {
      throw InvalidConfig("case II: epsilon_2 must be finite and >= 0");
    }
    if (mode == CaseIIMode::penalized && (!(lambda >= 0.0) || !std::isfinite(lambda))) {
      throw InvalidConfig("case II: lambda must be finite and >= 0");
    }
    if (!(grad_tol > 0.0)) throw InvalidConfig("case II: grad_tol must be > 0");
    if (!(step_size > 0.0)) throw InvalidConfig("case II: step_size must be > 0");
    if (max_iters < 1) throw InvalidConfig("case II: max_iters must be >= 1");
  }
};

struct TrainResult {
  LogitModel model;
  std::size_t iterations = 0;
  double final_grad_norm = 0.0;
  std::vector<double> objective_trace;
  bool converged = false;
  std::optional<bool> constraint_satisfied;
};

namespace detail {

struct Problem {
  std::function<double(const Params&)> value;
  std::function<Params(const Params&)> gradient;
  std::function<Params(Params)> project;
};

inline constexpr double kArmijo = 1e-4;

inline TrainResult descend(const LogitModel& init, const Problem& problem, double step_size,
                           std::size_t max_iters, double grad_tol) {
  Params x = problem.project(Params(init.params().begin(), init.params().end()));
  double f = problem.value(x);
  if (!std::isfinite(f)) throw NumericFailure("objective is not finite at the initial point");
  Params g = problem.gradient(x);

  TrainResult result;
  result.objective_trace.push_back(f);

  Params x_prev;
  Params g_prev;
  double t_prev = step_size;
  double pg = vec::distance(x, problem.project(vec::axpy(x, -1.0, g)));

  while (result.iterations < max_iters) {
    if (pg <= grad_tol) {
      result.converged = true;
      break;
    }
    double t = step_size;
    if (!x_prev.empty()) {
      const Params s = vec::sub(x, x_prev);
      const Params y = vec::sub(g, g_prev);
      const double sy = vec::dot(s, y);
      t = sy > 0.0 ? vec::dot(s, s) / sy : 2.0 * t_prev;
      t = std::clamp(t, 1e-12, 1e12);
    }

    Params x_new;
    double f_new = 0.0;
    bool accepted = false;
    for (; t >= 1e-20; t *= 0.5) {
      x_new = problem.project(vec::axpy(x, -t, g));
      f_new = problem.value(x_new);
      const double decrease = kArmijo * vec::dot(g, vec::sub(x_new, x));
      const double rounding = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(f);
      if (std::isfinite(f_new) && f_new <= f + decrease + rounding) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;  // stalled at the rounding floor

    x_prev = std::move(x);
    g_prev = std::move(g);
    t_prev = t;
    x = std::move(x_new);
    f = f_new;
    g = problem.gradient(x);
    pg = vec::distance(x, problem.project(vec::axpy(x, -1.0, g)));
    result.objective_trace.push_back(f);
    ++result.iterations;
  }
  if (!result.converged && pg <= grad_tol) result.converged = true;
  result.final_grad_norm = pg;
  result.model = init.with_params(std::move(x));
  return result;
}

inline Params clamp_box(Params p, double box) {
  for (double& v : p) v = std::clamp(v, -box, box);
  return p;
}

/// Radial projection onto {p : ||p - center|| <= radius}.
inline Params project_ball(Params p, const Params& center, double radius) {
  const double dist = vec::distance(p, center);
  if (dist <= radius) return p;
  const double scale = radius / dist;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = center[i] + (p[i] - center[i]) * scale;
  return p;
}

/// Ball then box, alternated to a joint fixed point (at most 100 rounds). The
/// final radial step toward an in-box center keeps the point inside the box.
inline Params project_ball_box(Params p, const Params& center, double radius, double box) {
  for (int round = 0; round < 100; ++round) {
    p = project_ball(std::move(p), center, radius);
    Params q = clamp_box(p, box);
    if (q == p) return p;
    p = std::move(q);
  }
  return project_ball(std::move(p), center, radius);
}

inline void require_fits(const LogitModel& model, const Scenario& s, const char* op) {
  if (!(model.alphabet() == s.alphabet)) throw InvalidInput(std::string(op) + ": model alphabet differs from scenario");
}

}  // namespace detail

/// Case I objective: E_{D_f, mu_f}[-ln P] + lambda E_{D_hat, mu_hat}[-ln P].
inline double case1_objective(const LogitModel& model, const Scenario& s, double lambda) {
  double v = expected_nll(model, s.task.d, s.task.mu);
  if (lambda != 0.0) v += lambda * expected_nll(model, s.proxy.d, s.proxy.mu);
  return v;
}

inline TrainResult solve_case1(const Scenario& s, const LogitModel& init, const CaseIConfig& cfg) {
  cfg.validate();
  detail::require_fits(init, s, "solve_case1");
  const double lambda = cfg.lambda;
  detail::Problem problem;
  problem.value = [&](const Params& p) { return case1_objective(init.with_params(p), s, lambda); };
  problem.gradient = [&](const Params& p) {
    const auto m = init.with_params(p);
    Params g = nll_gradient(m, s.task.d, s.task.mu);
    if (lambda != 0.0) {
      const Params gp = nll_gradient(m, s.proxy.d, s.proxy.mu);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda * gp[i];
    }
    return g;
  };
  if (init.is_tabular()) {
    problem.project = [box = init.box()](Params p) { return detail::clamp_box(std::move(p), box); };
  } else {
    problem.project = [](Params p) { return p; };
  }

  auto result = detail::descend(init, problem, cfg.step_size, cfg.max_iters, cfg.grad_tol);
  if (cfg.epsilon_1) {
    result.constraint_satisfied = expected_nll(result.model, s.proxy.d, s.proxy.mu) <= *cfg.epsilon_1;
  }
  return result;
}

inline TrainResult solve_case2(const Scenario& s, const LogitModel& theta_s, const CaseIIConfig& cfg) {
  cfg.validate();
  detail::require_fits(theta_s, s, "solve_case2");
  const Params center(theta_s.params().begin(), theta_s.params().end());
  const bool penalized = cfg.mode == CaseIIMode::penalized;
  const double lambda = cfg.lambda;

  detail::Problem problem;
  problem.value = [&](const Params& p) {
    double v = expected_nll(theta_s.with_params(p), s.task.d, s.task.mu);
    if (penalized) {
      const double dist = vec::distance(p, center);
      v += lambda * dist * dist;
    }
    return v;
  };
  problem.gradient = [&](const Params& p) {
    Params g = nll_gradient(theta_s.with_params(p), s.task.d, s.task.mu);
    if (penalized) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * lambda * (p[i] - center[i]);
    }
    return g;
  };

  const bool tabular = theta_s.is_tabular();
  const double box = theta_s.box();
  const double radius = cfg.epsilon_2;
  if (penalized) {
    problem.project = [tabular, box](Params p) { return tabular ? detail::clamp_box(std::move(p), box) : p; };
  } else if (tabular) {
    problem.project = [&center, radius, box](Params p) {
      return detail::project_ball_box(std::move(p), center, radius, box);
    };
  } else {
    problem.project = [&center, radius](Params p) { return detail::project_ball(std::move(p), center, radius); };
  }

  auto result = detail::descend(theta_s, problem, cfg.step_size, cfg.max_iters, cfg.grad_tol);
  if (!penalized) {
    result.constraint_satisfied = vec::distance(result.model.params(), center) <= radius + 1e-12;
  }
  return result;
}

/// G_s = E_{D_s, mu_s}[-ln P_theta] - E_{D_s, mu_s}[-ln mu_s].
inline double gap_safety(const LogitModel& model, const Scenario& s) {
  return expected_nll(model, s.safety.d, s.safety.mu) - conditional_entropy_loss(s.safety.d, s.safety.mu);
}

/// G_f, same construction on the task pair.
inline double gap_capability(const LogitModel& model, const Scenario& s) {
  return expected_nll(model, s.task.d, s.task.mu) - conditional_entropy_loss(s.task.d, s.task.mu);
}

/// Gaps of an arbitrary conditional table (used with closed-form solutions).
inline double gap_safety(const ConditionalTable& table, const Scenario& s) {
  return expected_cross_entropy(s.safety.d, s.safety.mu, table) - conditional_entropy_loss(s.safety.d, s.safety.mu);
}

inline double gap_capability(const ConditionalTable& table, const Scenario& s) {
  return expected_cross_entropy(s.task.d, s.task.mu, table) - conditional_entropy_loss(s.task.d, s.task.mu);
}

}  // namespace safetune
