// safetune: generate scenarios, run single solves and sweeps, verify, report.
//
// Exit codes: 0 success, 1 invariant violation, 2 invalid input.

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "safetune/bounds.hpp"
#include "safetune/experiments.hpp"
#include "safetune/scenario.hpp"
#include "safetune/trainer.hpp"
#include "safetune/verify.hpp"

namespace {

using namespace safetune;
using nlohmann::json;

constexpr int kOk = 0;
constexpr int kViolation = 1;
constexpr int kInvalid = 2;

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string format;
};

struct ScenarioSource {
  std::string path;
  GeneratorConfig gen;

  Scenario resolve(std::uint64_t seed) const { return path.empty() ? generate(seed, gen) : load(path); }
};

void add_generator_options(CLI::App* cmd, ScenarioSource& src, bool allow_file) {
  cmd->add_option("--contexts", src.gen.alphabet.contexts, "Number of contexts |X|")->capture_default_str();
  cmd->add_option("--outputs", src.gen.alphabet.outputs, "Number of outputs |Y|")->capture_default_str();
  cmd->add_option("--overlap", src.gen.overlap_frac, "Fraction of task contexts shared with the proxy")
      ->capture_default_str();
  cmd->add_option("--similarity", src.gen.similarity, "Proxy similarity to the safety pair in [0, 1]")
      ->capture_default_str();
  cmd->add_option("--floor", src.gen.floor, "Probability floor on every output row")->capture_default_str();
  if (allow_file) cmd->add_option("--scenario", src.path, "Scenario JSON file (overrides generator options)");
}

void emit(const Globals& g, const std::string& text) {
  if (g.out.empty()) {
    std::cout << text;
  } else {
    write_text(g.out, text);
  }
}

CaseKind parse_case(int c) { return c == 1 ? CaseKind::one : CaseKind::two; }

json row_to_json(const SweepRow& r, CaseKind kind) {
  const bool one = kind == CaseKind::one;
  return {{"seed", r.seed},
          {one ? "lambda" : "epsilon_2", r.knob},
          {"g_s", r.g_s},
          {"g_f", r.g_f},
          {one ? "bound_t1" : "bound_t3", number_json(r.bound_a)},
          {one ? "bound_t2" : "bound_t4", number_json(r.bound_b)},
          {one ? "slack_t1" : "slack_t3", number_json(r.slack_a)},
          {one ? "slack_t2" : "slack_t4", number_json(r.slack_b)},
          {"iterations", r.iterations},
          {"converged", r.converged}};
}

json rows_to_json(const std::vector<SweepRow>& rows, CaseKind kind) {
  json out = json::array();
  for (const auto& r : rows) out.push_back(row_to_json(r, kind));
  return out;
}

// gen -----------------------------------------------------------------------

int run_gen(const Globals& g, const ScenarioSource& src) {
  if (g.format == "csv") throw InvalidInput("gen: only --format json is supported");
  emit(g, scenario_to_json(generate(g.seed, src.gen)).dump(2) + "\n");
  return kOk;
}

// solve ---------------------------------------------------------------------

struct SolveArgs {
  int case_id = 1;
  double lambda = 1.0;
  double epsilon = 1.0;
  std::string mode = "constrained";
  std::optional<double> epsilon_1;
  std::optional<double> box;
  std::size_t samples = 256;
  double safety_factor = 1.5;
  std::size_t max_iters = 50000;
  std::string model_out;
};

int run_solve(const Globals& g, const ScenarioSource& src, const SolveArgs& a) {
  const Scenario s = src.resolve(g.seed);
  const LogitModel theta_s = aligned_model(s, a.box.value_or(default_box(s)));
  const CaseKind kind = parse_case(a.case_id);

  TrainResult res;
  std::vector<BoundReport> reports;
  json estimates = json::object();
  double knob = 0.0;
  if (kind == CaseKind::one) {
    CaseIConfig cfg;
    cfg.lambda = knob = a.lambda;
    cfg.epsilon_1 = a.epsilon_1;
    cfg.max_iters = a.max_iters;
    res = solve_case1(s, theta_s, cfg);
    reports.push_back(bound_t1(s, a.lambda, penalty_constant(theta_s)).with_measured(gap_safety(res.model, s)));
    reports.push_back(bound_t2(s, a.lambda).with_measured(gap_capability(res.model, s)));
  } else {
    CaseIIConfig cfg;
    cfg.mode = a.mode == "penalized" ? CaseIIMode::penalized : CaseIIMode::constrained;
    cfg.epsilon_2 = a.epsilon;
    cfg.lambda = a.lambda;
    cfg.max_iters = a.max_iters;
    res = solve_case2(s, theta_s, cfg);
    // Penalized runs are bounded at the radius they actually reached.
    const double eps = cfg.mode == CaseIIMode::constrained ? a.epsilon
                                                           : vec::distance(res.model.params(), theta_s.params());
    knob = cfg.mode == CaseIIMode::constrained ? a.epsilon : a.lambda;
    const auto l_s = estimate_lipschitz_s(theta_s, s, eps, g.seed, a.samples, a.safety_factor);
    const auto l_f = estimate_smoothness_f(theta_s, s, eps, g.seed, a.samples, a.safety_factor);
    estimates = {{"l_s", estimate_to_json(l_s)}, {"l_f", estimate_to_json(l_f)}};
    reports.push_back(bound_t3(theta_s, s, eps, l_s).with_measured(gap_safety(res.model, s)));
    if (l_f.value > 0.0) reports.push_back(bound_t4(theta_s, s, eps, l_f).with_measured(gap_capability(res.model, s)));
  }
  if (!a.model_out.empty()) write_text(a.model_out, model_to_json(res.model).dump(2) + "\n");

  SweepRow row;
  row.seed = g.seed;
  row.knob = knob;
  row.g_s = gap_safety(res.model, s);
  row.g_f = gap_capability(res.model, s);
  row.bound_a = reports[0].bound_value;
  row.bound_b = reports.size() > 1 ? reports[1].bound_value : std::numeric_limits<double>::infinity();
  row.slack_a = row.bound_a - row.g_s;
  row.slack_b = row.bound_b - row.g_f;
  row.iterations = res.iterations;
  row.converged = res.converged;

  if (g.format == "csv") {
    emit(g, to_csv({row}, kind));
  } else {
    json bounds = json::array();
    for (const auto& r : reports) bounds.push_back(report_to_json(r));
    json out = row_to_json(row, kind);
    out["case"] = a.case_id;
    if (kind == CaseKind::two) out["mode"] = a.mode;
    out["final_grad_norm"] = res.final_grad_norm;
    out["constraint_satisfied"] = res.constraint_satisfied ? json(*res.constraint_satisfied) : json(nullptr);
    out["bounds"] = bounds;
    out["estimates"] = estimates;
    emit(g, out.dump(2) + "\n");
  }
  // Case I bounds are exact; a negative slack there is a real violation.
  if (kind == CaseKind::one && (row.slack_a < -1e-9 || row.slack_b < -1e-9)) return kViolation;
  return kOk;
}

// sweep ---------------------------------------------------------------------

struct SweepArgs {
  int case_id = 1;
  std::vector<double> grid;
  std::vector<std::uint64_t> seeds;
  std::size_t count = 1;
  unsigned threads = 1;
  std::string plot;
  std::string axes = "tradeoff";
  std::size_t samples = 256;
  double safety_factor = 1.5;
  std::optional<double> box;
  std::size_t max_iters = 50000;
};

int run_sweep_cmd(const Globals& g, const ScenarioSource& src, const SweepArgs& a) {
  SweepConfig cfg;
  cfg.kind = parse_case(a.case_id);
  if (!src.path.empty()) cfg.scenario = load(src.path);
  cfg.generator = src.gen;
  if (!a.grid.empty()) {
    cfg.grid = a.grid;
  } else if (cfg.kind == CaseKind::two) {
    cfg.grid = {0.0, 0.25, 0.5, 1.0, 2.0};
  }
  if (!a.seeds.empty()) {
    cfg.seeds = a.seeds;
  } else {
    cfg.seeds.clear();
    for (std::size_t k = 0; k < a.count; ++k) cfg.seeds.push_back(g.seed + k);
  }
  cfg.threads = a.threads;
  cfg.lipschitz_samples = a.samples;
  cfg.safety_factor = a.safety_factor;
  cfg.box = a.box;
  cfg.max_iters = a.max_iters;

  const auto rows = run_sweep(cfg);
  if (g.format == "json") {
    emit(g, rows_to_json(rows, cfg.kind).dump(2) + "\n");
  } else {
    emit(g, to_csv(rows, cfg.kind));
  }
  if (!a.plot.empty()) emit_plot(rows, a.plot, a.axes == "knob" ? PlotAxes::knob : PlotAxes::tradeoff, cfg.kind);
  return kOk;
}

// verify --------------------------------------------------------------------

int run_verify(const Globals& g, std::size_t batch) {
  const auto checks = run_verification({g.seed, batch});
  bool ok = true;
  for (const auto& c : checks) ok = ok && c.passed();
  if (g.format == "json") {
    emit(g, verification_to_json(checks).dump(2) + "\n");
  } else {
    std::ostringstream out;
    out << "check,trials,failures,worst,tolerance,passed\n";
    for (const auto& c : checks) {
      out << c.name << ',' << c.trials << ',' << c.failures << ',' << detail::format_real(c.worst) << ','
          << detail::format_real(c.tolerance) << ',' << (c.passed() ? "true" : "false") << '\n';
    }
    emit(g, out.str());
  }
  return ok ? kOk : kViolation;
}

// report --------------------------------------------------------------------

int run_report(const Globals& g, const std::string& in, const std::string& compare, double tolerance) {
  const auto table = from_csv(read_text(in));
  const auto front = frontier(table.rows);
  std::optional<DominanceSummary> summary;
  if (!compare.empty()) {
    const auto other = from_csv(read_text(compare));
    if (table.kind != CaseKind::one || other.kind != CaseKind::two) {
      throw InvalidInput("report: --in must be a Case I sweep and --compare a Case II sweep");
    }
    summary = compare_cases(table.rows, other.rows, tolerance);
  }
  if (g.format == "json") {
    json out = {{"frontier", rows_to_json(front, table.kind)}};
    if (summary) {
      out["comparison"] = {{"matched", summary->matched},
                           {"case1_no_worse", summary->case1_no_worse},
                           {"fraction", summary->fraction()},
                           {"tolerance", tolerance}};
    }
    emit(g, out.dump(2) + "\n");
  } else {
    emit(g, to_csv(front, table.kind));
    if (summary) {
      std::cerr << "matched " << summary->matched << ", case I no worse in " << summary->case1_no_worse << " ("
                << summary->fraction() << ")\n";
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety-aware fine-tuning lab on finite alphabets"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Base random seed")->capture_default_str();
  app.add_option("--out", g.out, "Output file (default: stdout)");
  app.add_option("--format", g.format, "Output format")->check(CLI::IsMember({"csv", "json"}));

  ScenarioSource gen_src, solve_src, sweep_src;

  auto* gen = app.add_subcommand("gen", "Generate a scenario and write it as JSON");
  add_generator_options(gen, gen_src, false);

  SolveArgs solve_args;
  auto* solve = app.add_subcommand("solve", "Run one Case I or Case II fine-tuning and report gaps and bounds");
  add_generator_options(solve, solve_src, true);
  solve->add_option("--case", solve_args.case_id, "1 (proxy penalty) or 2 (parameter ball)")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  solve->add_option("--lambda", solve_args.lambda, "Penalty strength")->capture_default_str();
  solve->add_option("--epsilon", solve_args.epsilon, "Ball radius epsilon_2 (Case II)")->capture_default_str();
  solve->add_option("--mode", solve_args.mode, "Case II mode")
      ->check(CLI::IsMember({"constrained", "penalized"}))
      ->capture_default_str();
  solve->add_option("--epsilon1", solve_args.epsilon_1, "Proxy-loss threshold to report against (Case I)");
  solve->add_option("--box", solve_args.box, "Logit box half-width B");
  solve->add_option("--samples", solve_args.samples, "Samples for the Lipschitz estimates")->capture_default_str();
  solve->add_option("--safety-factor", solve_args.safety_factor, "Multiplier on sampled suprema")
      ->capture_default_str();
  solve->add_option("--max-iters", solve_args.max_iters, "Iteration cap")->capture_default_str();
  solve->add_option("--model-out", solve_args.model_out, "Write the fine-tuned model as JSON");

  SweepArgs sweep_args;
  auto* sweep = app.add_subcommand("sweep", "Sweep lambda (Case I) or epsilon_2 (Case II) over seeds");
  add_generator_options(sweep, sweep_src, true);
  sweep->add_option("--case", sweep_args.case_id, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  sweep->add_option("--grid", sweep_args.grid, "Knob values, comma separated")->delimiter(',');
  sweep->add_option("--seeds", sweep_args.seeds, "Explicit seeds, comma separated")->delimiter(',');
  sweep->add_option("--count", sweep_args.count, "Seeds --seed .. --seed+count-1 when --seeds is absent")
      ->capture_default_str();
  sweep->add_option("--threads", sweep_args.threads, "Worker threads")->capture_default_str();
  sweep->add_option("--plot", sweep_args.plot, "Also write an SVG chart here");
  sweep->add_option("--axes", sweep_args.axes, "Chart axes")
      ->check(CLI::IsMember({"tradeoff", "knob"}))
      ->capture_default_str();
  sweep->add_option("--samples", sweep_args.samples, "Samples for the Lipschitz estimates")->capture_default_str();
  sweep->add_option("--safety-factor", sweep_args.safety_factor, "Multiplier on sampled suprema")
      ->capture_default_str();
  sweep->add_option("--box", sweep_args.box, "Logit box half-width B");
  sweep->add_option("--max-iters", sweep_args.max_iters, "Iteration cap")->capture_default_str();

  std::size_t batch = 20;
  auto* verify = app.add_subcommand("verify", "Run seeded oracle-equivalence and bound-slack checks");
  verify->add_option("--batch", batch, "Instances per check")->capture_default_str();

  std::string report_in, report_compare;
  double tolerance = 0.05;
  auto* report = app.add_subcommand("report", "Extract the Pareto frontier from a sweep CSV");
  report->add_option("--in", report_in, "Sweep CSV")->required();
  report->add_option("--compare", report_compare, "Case II sweep CSV to compare against (--in must be Case I)");
  report->add_option("--tolerance", tolerance, "Matching tolerance in nats")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*gen) return run_gen(g, gen_src);
    if (*solve) return run_solve(g, solve_src, solve_args);
    if (*sweep) return run_sweep_cmd(g, sweep_src, sweep_args);
    if (*verify) return run_verify(g, batch);
    if (*report) return run_report(g, report_in, report_compare, tolerance);
  } catch (const NumericFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kViolation;
  } catch (const safetune::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kOk;
}
