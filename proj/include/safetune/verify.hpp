#pragma once

// Seeded batches of oracle-equivalence and bound-slack checks. Each check
// reduces its batch to one worst-case metric compared against a tolerance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "safetune/bounds.hpp"
#include "safetune/experiments.hpp"
#include "safetune/oracle.hpp"
#include "safetune/trainer.hpp"

namespace safetune {

struct CheckResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest observed metric; passes when <= tolerance
  double tolerance = 0.0;

  bool passed() const { return failures == 0; }
};

struct VerifyConfig {
  std::uint64_t seed = 0;
  std::size_t batch = 20;
};

namespace detail {

class CheckRecorder {
 public:
  CheckRecorder(std::string name, double tol) : r_{std::move(name), 0, 0, -std::numeric_limits<double>::infinity(), tol} {}

  void add(double metric) {
    ++r_.trials;
    if (!(metric <= r_.tolerance)) ++r_.failures;
    if (std::isnan(metric) || metric > r_.worst) r_.worst = metric;
  }

  CheckResult done() const { return r_; }

 private:
  CheckResult r_;
};

inline double lambda_for(std::uint64_t k) {
  static const double grid[] = {0.1, 0.3, 0.5, 0.7, 0.9, 2.0, 5.0, 10.0};
  return grid[k % std::size(grid)];
}

// Random single-context instance with `outputs` outputs: 2 or 3 parameters.
inline Scenario tiny_scenario(std::uint64_t seed, std::size_t outputs) {
  return generate(seed, {{1, outputs}, 1.0, 0.5, 1e-2});
}

}  // namespace detail

inline CheckResult check_case1_equivalence(const VerifyConfig& cfg) {
  detail::CheckRecorder rec("case1_trainer_vs_closed_form", 1e-7);
  for (std::uint64_t k = 0; k < cfg.batch; ++k) {
    const auto s = generate(cfg.seed + k, {{8, 4}, 0.5, 0.5, 1e-3});
    const double lambda = detail::lambda_for(k);
    CaseIConfig c1;
    c1.lambda = lambda;
    const auto res = solve_case1(s, aligned_model(s, default_box(s)), c1);
    const double want = oracle::case1_objective(oracle::case1_closed_form(s, lambda).table, s, lambda);
    rec.add(std::abs(case1_objective(res.model, s, lambda) - want));
  }
  return rec.done();
}

inline CheckResult check_case1_slack(const VerifyConfig& cfg) {
  detail::CheckRecorder rec("t1_t2_slack", 1e-9);
  for (std::uint64_t k = 0; k < cfg.batch; ++k) {
    const auto s = generate(cfg.seed + k, {{16, 8}, 0.25 * static_cast<double>(k % 5), 0.25 * (k % 5), 1e-3});
    const double lambda = detail::lambda_for(k);
    const auto sol = oracle::case1_closed_form(s, lambda);
    const auto cp = penalty_constant(LogitModel::zeros(s.alphabet, default_box(s)));
    rec.add(-bound_t1(s, lambda, cp).with_measured(gap_safety(sol.table, s)).slack);
    rec.add(-bound_t2(s, lambda).with_measured(gap_capability(sol.table, s)).slack);
  }
  return rec.done();
}

inline CheckResult check_proof_replay(const VerifyConfig& cfg) {
  detail::CheckRecorder rec("t2_proof_replay", 1e-10);
  for (std::uint64_t k = 0; k < cfg.batch; ++k) {
    const auto s = generate(cfg.seed + k, {{12, 6}, 0.5, 0.5, 1e-3});
    const double lambda = detail::lambda_for(k);
    const auto hybrid = oracle::mu_hat_f(s);
    const double replay =
        lambda * (expected_cross_entropy(s.proxy.d, s.proxy.mu, hybrid) - conditional_entropy_loss(s.proxy.d, s.proxy.mu));
    rec.add(std::abs(replay - bound_t2(s, lambda).bound_value));
  }
  return rec.done();
}

inline CheckResult check_gradients(const VerifyConfig& cfg) {
  detail::CheckRecorder rec("gradient_vs_central_differences", 1e-5);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (std::uint64_t k = 0; k < cfg.batch; ++k) {
    const auto s = generate(cfg.seed + k, {{5, 4}, 0.5, 0.5, 1e-3});
    const bool tabular = k % 2 == 0;
    Params p(tabular ? 20 : 18);
    for (double& v : p) v = u(rng);
    const auto m = tabular ? LogitModel::tabular({5, 4}, 2.0, p) : LogitModel::low_rank({5, 4}, 2, p);
    const auto g = nll_gradient(m, s.task.d, s.task.mu);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = 1e-5;
      Params q = p;
      q[i] += h;
      const double fp = expected_nll(m.with_params(q), s.task.d, s.task.mu);
      q[i] -= 2 * h;
      const double fm = expected_nll(m.with_params(q), s.task.d, s.task.mu);
      const double fd = (fp - fm) / (2 * h);
      num += (g[i] - fd) * (g[i] - fd);
      den += fd * fd;
    }
    rec.add(std::sqrt(num) / std::max(std::sqrt(den), 1e-12));
  }
  return rec.done();
}

inline CheckResult check_case2_equivalence(const VerifyConfig& cfg) {
  detail::CheckRecorder rec("case2_trainer_vs_grid", 1e-4);
  for (std::uint64_t k = 0; k < cfg.batch; ++k) {
    const auto s = detail::tiny_scenario(cfg.seed + k, 2);
    const auto theta_s = aligned_model(s, 10.0);
    const double eps = 0.25 + 0.25 * static_cast<double>(k % 8);
    CaseIIConfig c2;
    c2.epsilon_2 = eps;
    const double trained = expected_nll(solve_case2(s, theta_s, c2).model, s.task.d, s.task.mu);
    rec.add(std::abs(trained - oracle::case2_grid(s, theta_s, eps, 400).objective));
  }
  return rec.done();
}

inline CheckResult check_case2_slack(const VerifyConfig& cfg) {
  detail::CheckRecorder rec("t3_t4_grid_constant_slack", 1e-9);
  for (std::uint64_t k = 0; k < cfg.batch; ++k) {
    const auto s = detail::tiny_scenario(cfg.seed + k, 2 + k % 2);
    const auto theta_s = aligned_model(s, 10.0);
    const double eps = 0.25 + 0.25 * static_cast<double>(k % 8);
    CaseIIConfig c2;
    c2.epsilon_2 = eps;
    const auto res = solve_case2(s, theta_s, c2);
    const std::size_t grid_res = k % 2 ? 24 : 64;
    const double l_s = oracle::grid_sup_gradient_norm(theta_s, s.safety.d, s.safety.mu, eps, grid_res);
    rec.add(-bound_t3(theta_s, s, eps, {l_s, eps, 0, EstimateMethod::gradient_sup, 1.0})
                 .with_measured(gap_safety(res.model, s))
                 .slack);
    const double l_f = oracle::grid_max_curvature(theta_s, s.task.d, s.task.mu, eps, grid_res / 2);
    if (l_f > 0.0) {
      rec.add(-bound_t4(theta_s, s, eps, {l_f, eps, 0, EstimateMethod::curvature_fd, 1.0})
                   .with_measured(gap_capability(res.model, s))
                   .slack);
    }
  }
  return rec.done();
}

inline std::vector<CheckResult> run_verification(const VerifyConfig& cfg) {
  return {check_case1_equivalence(cfg), check_case1_slack(cfg),       check_proof_replay(cfg),
          check_gradients(cfg),         check_case2_equivalence(cfg), check_case2_slack(cfg)};
}

inline nlohmann::json verification_to_json(const std::vector<CheckResult>& checks) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : checks) {
    out.push_back({{"check", c.name},
                   {"trials", c.trials},
                   {"failures", c.failures},
                   {"worst", number_json(c.worst)},
                   {"tolerance", c.tolerance},
                   {"passed", c.passed()}});
  }
  return out;
}

}  // namespace safetune
