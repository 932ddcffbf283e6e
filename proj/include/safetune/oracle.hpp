#pragma once

// Independent reference solvers: the closed-form Case I optimum over all
// conditional tables, brute-force grids over small parameter balls, and the
// hybrid output table used to replay the capability-bound argument.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "safetune/errors.hpp"
#include "safetune/model.hpp"
#include "safetune/prob.hpp"
#include "safetune/scenario.hpp"
#include "safetune/vec.hpp"

namespace safetune::oracle {

struct MixtureWeights {
  double task = 0.0;   // D_f(x)
  double proxy = 0.0;  // lambda * D_hat(x)
};

struct MixtureSolution {
  ConditionalTable table;
  std::vector<MixtureWeights> weights;
  /// Box half-width needed to realize `table` with a tabular model.
  double required_box = 0.0;

  bool fits_box(double box) const { return required_box <= box; }
};

/// Case I objective evaluated on an arbitrary conditional table.
inline double case1_objective(const ConditionalTable& table, const Scenario& s, double lambda) {
  double v = expected_cross_entropy(s.task.d, s.task.mu, table);
  if (lambda != 0.0) v += lambda * expected_cross_entropy(s.proxy.d, s.proxy.mu, table);
  return v;
}

/// Per-context minimizer of w_f CE(mu_f, p) + w_p CE(mu_hat, p): the weighted
/// mixture of the two targets. Rows outside both supports are set to uniform.
inline MixtureSolution case1_closed_form(const Scenario& s, double lambda) {
  if (!(lambda >= 0.0)) throw InvalidInput("case1_closed_form: lambda must be >= 0");
  const std::size_t c = s.alphabet.contexts;
  const std::size_t m = s.alphabet.outputs;
  std::vector<double> flat(c * m);
  std::vector<MixtureWeights> weights(c);
  for (std::size_t x = 0; x < c; ++x) {
    const double wf = s.task.d[x];
    const double wp = lambda * s.proxy.d[x];
    weights[x] = {wf, wp};
    for (std::size_t y = 0; y < m; ++y) {
      double v;
      if (wf > 0.0 && wp > 0.0) {
        v = (wf * s.task.mu(x, y) + wp * s.proxy.mu(x, y)) / (wf + wp);
      } else if (wf > 0.0) {
        v = s.task.mu(x, y);
      } else if (wp > 0.0) {
        v = s.proxy.mu(x, y);
      } else {
        v = 1.0 / static_cast<double>(m);
      }
      flat[x * m + y] = v;
    }
  }
  MixtureSolution sol{ConditionalTable(c, m, std::move(flat), "mixture"), std::move(weights), 0.0};
  sol.required_box = required_box_bound(sol.table);
  return sol;
}

/// mu_hat_f: mu_f on supp(D_f), mu_hat elsewhere.
inline ConditionalTable mu_hat_f(const Scenario& s) {
  const std::size_t c = s.alphabet.contexts;
  const std::size_t m = s.alphabet.outputs;
  std::vector<double> flat;
  flat.reserve(c * m);
  for (std::size_t x = 0; x < c; ++x) {
    const auto row = s.task.d.in_support(x) ? s.task.mu.row(x) : s.proxy.mu.row(x);
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return ConditionalTable(c, m, std::move(flat), "mu_hat_f");
}

inline constexpr std::size_t kMaxGridDimension = 6;

/// Visits every point of a regular grid over the cube [-r, r]^d around `center`
/// with `resolution` intervals per axis. Points inside the ball are visited as-is;
/// points outside are radially projected onto the sphere. Doubling the resolution
/// visits a superset of points.
inline void for_each_ball_point(const Params& center, double radius, std::size_t resolution,
                                const std::function<void(const Params&)>& visit) {
  const std::size_t d = center.size();
  if (d > kMaxGridDimension) {
    throw Unsupported("grid oracle: " + std::to_string(d) + " parameters exceeds the limit of " +
                      std::to_string(kMaxGridDimension));
  }
  if (resolution < 1) throw InvalidInput("grid oracle: resolution must be >= 1");
  if (radius == 0.0) {
    visit(center);
    return;
  }
  std::vector<std::size_t> idx(d, 0);
  Params offset(d);
  Params point(d);
  const double step = 2.0 * radius / static_cast<double>(resolution);
  while (true) {
    for (std::size_t k = 0; k < d; ++k) offset[k] = -radius + step * static_cast<double>(idx[k]);
    const double r = vec::norm(offset);
    const double scale = r > radius ? radius / r : 1.0;
    for (std::size_t k = 0; k < d; ++k) point[k] = center[k] + offset[k] * scale;
    visit(point);

    std::size_t k = 0;
    while (k < d && ++idx[k] > resolution) idx[k++] = 0;
    if (k == d) break;
  }
}

struct GridSolution {
  LogitModel model;
  double objective = 0.0;
};

/// Brute-force minimum of E_f[-ln P_theta] over the ball of radius epsilon_2
/// around theta_s. Tabular points outside the box are skipped.
inline GridSolution case2_grid(const Scenario& s, const LogitModel& theta_s, double epsilon_2,
                               std::size_t resolution) {
  if (!(epsilon_2 >= 0.0)) throw InvalidInput("case2_grid: epsilon_2 must be >= 0");
  const Params center(theta_s.params().begin(), theta_s.params().end());
  GridSolution best{theta_s, expected_nll(theta_s, s.task.d, s.task.mu)};
  const double box = theta_s.box();
  const bool tabular = theta_s.is_tabular();
  for_each_ball_point(center, epsilon_2, resolution, [&](const Params& p) {
    if (tabular && std::any_of(p.begin(), p.end(), [box](double v) { return std::abs(v) > box; })) return;
    auto m = theta_s.with_params(p);
    const double v = expected_nll(m, s.task.d, s.task.mu);
    if (v < best.objective) best = {std::move(m), v};
  });
  return best;
}

/// Maximum of ||grad E_{d,mu}[-ln P_theta]|| over the ball grid.
inline double grid_sup_gradient_norm(const LogitModel& theta_s, const Categorical& d, const ConditionalTable& mu,
                                     double radius, std::size_t resolution) {
  const Params center(theta_s.params().begin(), theta_s.params().end());
  double best = 0.0;
  for_each_ball_point(center, radius, resolution, [&](const Params& p) {
    best = std::max(best, vec::norm(nll_gradient(theta_s.with_params(p), d, mu)));
  });
  return best;
}

/// Hessian of E_{d,mu}[-ln P_theta] by second differences of the loss alone.
inline Eigen::MatrixXd finite_difference_hessian(const LogitModel& model, const Categorical& d,
                                                 const ConditionalTable& mu, double h = 1e-4) {
  const std::size_t n = model.parameter_count();
  const Params base(model.params().begin(), model.params().end());
  auto loss = [&](const Params& p) { return expected_nll(model.with_params(p), d, mu); };
  Eigen::MatrixXd hess(n, n);
  const double f0 = loss(base);
  for (std::size_t i = 0; i < n; ++i) {
    Params p = base;
    p[i] = base[i] + h;
    const double fp = loss(p);
    p[i] = base[i] - h;
    const double fm = loss(p);
    hess(i, i) = (fp - 2.0 * f0 + fm) / (h * h);
    for (std::size_t j = 0; j < i; ++j) {
      auto at = [&](double si, double sj) {
        Params q = base;
        q[i] += si * h;
        q[j] += sj * h;
        return loss(q);
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return hess;
}

/// Maximum Hessian eigenvalue over the ball grid.
inline double grid_max_curvature(const LogitModel& theta_s, const Categorical& d, const ConditionalTable& mu,
                                 double radius, std::size_t resolution) {
  const Params center(theta_s.params().begin(), theta_s.params().end());
  double best = -std::numeric_limits<double>::infinity();
  for_each_ball_point(center, radius, resolution, [&](const Params& p) {
    const Eigen::MatrixXd hess = finite_difference_hessian(theta_s.with_params(p), d, mu);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess, Eigen::EigenvaluesOnly);
    best = std::max(best, eig.eigenvalues().maxCoeff());
  });
  return best;
}

}  // namespace safetune::oracle
