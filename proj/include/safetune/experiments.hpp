#pragma once

// Seeded sweeps over the penalty strength (Case I) or ball radius (Case II),
// CSV/SVG emission, and Pareto extraction on the (g_s, g_f) plane.
//
// CSV columns, in order:
//   Case I:  seed,lambda,g_s,g_f,bound_t1,bound_t2,slack_t1,slack_t2,iterations,converged
//   Case II: seed,epsilon_2,g_s,g_f,bound_t3,bound_t4,slack_t3,slack_t4,iterations,converged
// Reals are written with 17 significant digits; infinite bounds as "inf".

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "safetune/bounds.hpp"
#include "safetune/errors.hpp"
#include "safetune/model.hpp"
#include "safetune/scenario.hpp"
#include "safetune/trainer.hpp"

namespace safetune {

enum class CaseKind { one, two };

/// Penalty strengths used by the default trade-off sweep.
inline const std::vector<double> kDefaultLambdaGrid{0.1, 0.3, 0.5, 0.7, 0.9};

struct SweepConfig {
  CaseKind kind = CaseKind::one;
  /// Fixed scenario; when absent each seed generates its own from `generator`.
  std::optional<Scenario> scenario;
  GeneratorConfig generator;
  std::vector<double> grid = kDefaultLambdaGrid;
  std::vector<std::uint64_t> seeds{0};
  /// Logit box half-width; defaults to default_box(scenario).
  std::optional<double> box;
  std::size_t lipschitz_samples = 256;
  double safety_factor = 1.5;
  std::size_t max_iters = 50000;
  double grad_tol = 1e-8;
  unsigned threads = 1;

  void validate() const {
    if (grid.empty()) throw InvalidConfig("sweep: grid is empty");
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1])) throw InvalidConfig("sweep: grid must be strictly increasing");
    for (double v : grid)
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidConfig("sweep: grid values must be finite and >= 0");
    if (seeds.empty()) throw InvalidConfig("sweep: no seeds");
    if (box && !(*box > 0.0)) throw InvalidConfig("sweep: box must be > 0");
  }
};

struct SweepRow {
  std::uint64_t seed = 0;
  double knob = 0.0;
  double g_s = 0.0;
  double g_f = 0.0;
  double bound_a = 0.0;  // t1 (Case I) or t3 (Case II)
  double bound_b = 0.0;  // t2 (Case I) or t4 (Case II)
  double slack_a = 0.0;
  double slack_b = 0.0;
  std::size_t iterations = 0;
  bool converged = false;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

/// Box half-width that realizes every table of the scenario and every mixture
/// of floored rows: max((1/2) ln(1/floor), required bounds of the three tables).
inline double default_box(const Scenario& s) {
  return std::max({0.5 * std::log(1.0 / s.floor), required_box_bound(s.safety.mu),
                   required_box_bound(s.proxy.mu), required_box_bound(s.task.mu)});
}

/// The aligned starting point: a tabular model reproducing mu_s exactly.
inline LogitModel aligned_model(const Scenario& s, double box) { return realizing_model(s.safety.mu, box); }

namespace detail {

inline SweepRow sweep_point(const Scenario& s, const SweepConfig& cfg, std::uint64_t seed, double knob) {
  const double box = cfg.box.value_or(default_box(s));
  const LogitModel theta_s = aligned_model(s, box);
  SweepRow row;
  row.seed = seed;
  row.knob = knob;
  if (cfg.kind == CaseKind::one) {
    CaseIConfig c1;
    c1.lambda = knob;
    c1.max_iters = cfg.max_iters;
    c1.grad_tol = cfg.grad_tol;
    const auto res = solve_case1(s, theta_s, c1);
    row.g_s = gap_safety(res.model, s);
    row.g_f = gap_capability(res.model, s);
    row.bound_a = bound_t1(s, knob, penalty_constant(theta_s)).bound_value;
    row.bound_b = bound_t2(s, knob).bound_value;
    row.iterations = res.iterations;
    row.converged = res.converged;
  } else {
    CaseIIConfig c2;
    c2.epsilon_2 = knob;
    c2.max_iters = cfg.max_iters;
    c2.grad_tol = cfg.grad_tol;
    const auto res = solve_case2(s, theta_s, c2);
    row.g_s = gap_safety(res.model, s);
    row.g_f = gap_capability(res.model, s);
    const auto l_s = estimate_lipschitz_s(theta_s, s, knob, seed, cfg.lipschitz_samples, cfg.safety_factor);
    const auto l_f = estimate_smoothness_f(theta_s, s, knob, seed, cfg.lipschitz_samples, cfg.safety_factor);
    row.bound_a = bound_t3(theta_s, s, knob, l_s).bound_value;
    row.bound_b = l_f.value > 0.0 ? bound_t4(theta_s, s, knob, l_f).bound_value
                                  : std::numeric_limits<double>::infinity();
    row.iterations = res.iterations;
    row.converged = res.converged;
  }
  row.slack_a = row.bound_a - row.g_s;
  row.slack_b = row.bound_b - row.g_f;
  return row;
}

}  // namespace detail

/// One row per (seed, knob), sorted by (seed, knob). Points are independent and
/// may run on `cfg.threads` workers; the output order does not depend on it.
inline std::vector<SweepRow> run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  std::vector<Scenario> scenarios;
  scenarios.reserve(seeds.size());
  for (auto seed : seeds) scenarios.push_back(cfg.scenario ? *cfg.scenario : generate(seed, cfg.generator));

  const std::size_t n = seeds.size() * cfg.grid.size();
  std::vector<SweepRow> rows(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const std::size_t si = i / cfg.grid.size();
      rows[i] = detail::sweep_point(scenarios[si], cfg, seeds[si], cfg.grid[i % cfg.grid.size()]);
    }
  };
  const unsigned threads = std::max(1u, cfg.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  return rows;
}

namespace detail {

inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_real(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ParseError(where + ": not a number: '" + s + "'");
  return v;
}

}  // namespace detail

inline std::string csv_header(CaseKind kind) {
  return kind == CaseKind::one
             ? "seed,lambda,g_s,g_f,bound_t1,bound_t2,slack_t1,slack_t2,iterations,converged"
             : "seed,epsilon_2,g_s,g_f,bound_t3,bound_t4,slack_t3,slack_t4,iterations,converged";
}

inline std::string to_csv(const std::vector<SweepRow>& rows, CaseKind kind) {
  std::ostringstream out;
  out << csv_header(kind) << '\n';
  for (const auto& r : rows) {
    out << r.seed << ',' << detail::format_real(r.knob) << ',' << detail::format_real(r.g_s) << ','
        << detail::format_real(r.g_f) << ',' << detail::format_real(r.bound_a) << ','
        << detail::format_real(r.bound_b) << ',' << detail::format_real(r.slack_a) << ','
        << detail::format_real(r.slack_b) << ',' << r.iterations << ',' << (r.converged ? "true" : "false")
        << '\n';
  }
  return out.str();
}

struct CsvTable {
  CaseKind kind = CaseKind::one;
  std::vector<SweepRow> rows;
};

inline CsvTable from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("csv: empty input");
  CsvTable table;
  if (line == csv_header(CaseKind::one)) {
    table.kind = CaseKind::one;
  } else if (line == csv_header(CaseKind::two)) {
    table.kind = CaseKind::two;
  } else {
    throw ParseError("csv: unrecognized header '" + line + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    const std::string where = "csv line " + std::to_string(lineno);
    if (cells.size() != 10) throw ParseError(where + ": expected 10 columns");
    SweepRow r;
    try {
      r.seed = std::stoull(cells[0]);
      r.iterations = std::stoull(cells[8]);
    } catch (const std::exception&) {
      throw ParseError(where + ": bad integer field");
    }
    r.knob = detail::parse_real(cells[1], where);
    r.g_s = detail::parse_real(cells[2], where);
    r.g_f = detail::parse_real(cells[3], where);
    r.bound_a = detail::parse_real(cells[4], where);
    r.bound_b = detail::parse_real(cells[5], where);
    r.slack_a = detail::parse_real(cells[6], where);
    r.slack_b = detail::parse_real(cells[7], where);
    if (cells[9] != "true" && cells[9] != "false") throw ParseError(where + ": converged must be true|false");
    r.converged = cells[9] == "true";
    table.rows.push_back(r);
  }
  return table;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw InvalidInput("write failed: " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Non-dominated rows under componentwise <= on (g_s, g_f), sorted by g_s, then
/// g_f, then knob. Identical points do not dominate each other.
inline std::vector<SweepRow> frontier(const std::vector<SweepRow>& rows) {
  auto dominates = [](const SweepRow& a, const SweepRow& b) {
    return a.g_s <= b.g_s && a.g_f <= b.g_f && (a.g_s < b.g_s || a.g_f < b.g_f);
  };
  std::vector<SweepRow> out;
  for (const auto& r : rows) {
    if (std::none_of(rows.begin(), rows.end(), [&](const SweepRow& o) { return dominates(o, r); })) {
      out.push_back(r);
    }
  }
  std::sort(out.begin(), out.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.g_s != b.g_s) return a.g_s < b.g_s;
    if (a.g_f != b.g_f) return a.g_f < b.g_f;
    return a.knob < b.knob;
  });
  return out;
}

struct DominanceSummary {
  std::size_t matched = 0;
  std::size_t case1_no_worse = 0;

  double fraction() const { return matched == 0 ? 0.0 : static_cast<double>(case1_no_worse) / matched; }
};

/// Matches every Case II point to the Case I point nearest in g_s; pairs within
/// `tolerance` nats count as matched, and a match favors Case I when its g_f is
/// no larger.
inline DominanceSummary compare_cases(const std::vector<SweepRow>& case1, const std::vector<SweepRow>& case2,
                                      double tolerance = 0.05) {
  DominanceSummary s;
  for (const auto& b : case2) {
    const SweepRow* best = nullptr;
    for (const auto& a : case1) {
      if (!best || std::abs(a.g_s - b.g_s) < std::abs(best->g_s - b.g_s)) best = &a;
    }
    if (!best || std::abs(best->g_s - b.g_s) > tolerance) continue;
    ++s.matched;
    if (best->g_f <= b.g_f) ++s.case1_no_worse;
  }
  return s;
}

enum class PlotAxes { tradeoff, knob };

/// Self-contained SVG line chart: g_f against g_s (tradeoff) or g_s against the
/// knob, one polyline per seed in knob order.
inline std::string render_svg(const std::vector<SweepRow>& rows, PlotAxes axes, CaseKind kind) {
  if (rows.empty()) throw InvalidInput("emit_plot: no rows to plot");
  const std::string knob_name = kind == CaseKind::one ? "lambda" : "epsilon_2";
  const std::string x_label = axes == PlotAxes::tradeoff ? "g_s (nats)" : knob_name;
  const std::string y_label = axes == PlotAxes::tradeoff ? "g_f (nats)" : "g_s (nats)";
  auto xv = [&](const SweepRow& r) { return axes == PlotAxes::tradeoff ? r.g_s : r.knob; };
  auto yv = [&](const SweepRow& r) { return axes == PlotAxes::tradeoff ? r.g_f : r.g_s; };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& r : rows) {
    if (!std::isfinite(xv(r)) || !std::isfinite(yv(r))) continue;
    x0 = std::min(x0, xv(r));
    x1 = std::max(x1, xv(r));
    y0 = std::min(y0, yv(r));
    y1 = std::max(y1, yv(r));
  }
  if (!(x1 >= x0)) x0 = 0, x1 = 1;
  if (!(y1 >= y0)) y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1.0;
  if (y1 - y0 < 1e-12) y1 = y0 + 1.0;

  constexpr double W = 640, H = 480, L = 70, R = 20, T = 20, B = 60;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  auto tick = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return std::string(buf);
  };

  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::map<std::uint64_t, std::vector<SweepRow>> by_seed;
  for (const auto& r : rows) by_seed[r.seed].push_back(r);

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
      << W << ' ' << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << x_label
      << "</text>\n"
      << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0;
    const double fy = y0 + (y1 - y0) * i / 4.0;
    svg << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << H - B + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
        << tick(fx) << "</text>\n"
        << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(fy) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
        << tick(fy) << "</text>\n";
  }
  std::size_t color = 0;
  for (auto& [seed, pts] : by_seed) {
    std::sort(pts.begin(), pts.end(), [](const SweepRow& a, const SweepRow& b) { return a.knob < b.knob; });
    const char* c = palette[color++ % std::size(palette)];
    svg << "<g stroke=\"" << c << "\" fill=\"" << c << "\" data-seed=\"" << seed << "\">\n<polyline fill=\"none\" points=\"";
    bool first = true;
    for (const auto& r : pts) {
      if (!std::isfinite(xv(r)) || !std::isfinite(yv(r))) continue;
      svg << (first ? "" : " ") << fmt(px(xv(r))) << ',' << fmt(py(yv(r)));
      first = false;
    }
    svg << "\"/>\n";
    for (const auto& r : pts) {
      if (!std::isfinite(xv(r)) || !std::isfinite(yv(r))) continue;
      svg << "<circle cx=\"" << fmt(px(xv(r))) << "\" cy=\"" << fmt(py(yv(r))) << "\" r=\"3\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

/// Writes the SVG; nothing is written when `rows` is empty.
inline void emit_plot(const std::vector<SweepRow>& rows, const std::filesystem::path& path,
                      PlotAxes axes = PlotAxes::tradeoff, CaseKind kind = CaseKind::one) {
  write_text(path, render_svg(rows, axes, kind));
}

}  // namespace safetune
