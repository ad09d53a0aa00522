// qdet: solve, simulate and run quickest-detection rules for a Poisson
// process whose rate changes at a phase-type time.

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "qdet/bellman.hpp"
#include "qdet/error.hpp"
#include "qdet/io.hpp"
#include "qdet/policy.hpp"
#include "qdet/risk.hpp"
#include "qdet/scenario.hpp"
#include "qdet/validate.hpp"

namespace {

using nlohmann::json;
using namespace qdet;

enum Exit { kOk = 0, kChecksFailed = 1, kInputError = 2, kNumericFailure = 3, kCensored = 4 };

struct Flags {
  std::string config, out, table, events, rule;
  double epsilon = 0.0, horizon = 0.0, step = 0.01;
  int resolution = 0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  CLI::App* cmd = nullptr;
  bool given(const std::string& name) const { return cmd->count(name) > 0; }
};

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

RunConfig config_with_overrides(const Flags& f) {
  RunConfig cfg = load_config(f.config);
  if (f.given("--epsilon")) {
    if (!(f.epsilon > 0.0)) throw ConfigError("--epsilon: must be positive");
    cfg.epsilon = f.epsilon;
  }
  if (f.given("--resolution")) {
    if (f.resolution < 1) throw ConfigError("--resolution: must be positive");
    cfg.resolution = f.resolution;
  }
  if (f.given("--samples")) {
    if (f.samples < 2) throw ConfigError("--samples: must be at least 2");
    cfg.samples = f.samples;
  }
  if (f.given("--seed")) cfg.seed = f.seed;
  if (f.given("--horizon")) {
    if (!(f.horizon > 0.0)) throw ConfigError("--horizon: must be positive");
    cfg.horizon = f.horizon;
  }
  if (f.given("--rule")) cfg.rule = rule_from_string(f.rule);
  return cfg;
}

// Calls on_time for each timestamp line and on_header for "# key=value"
// tokens; stops early when on_time returns false.
void read_events(std::istream& in,
                 const std::function<void(const std::string&, const std::string&)>& on_header,
                 const std::function<bool(double)>& on_time) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      std::istringstream tokens(line.substr(first + 1));
      std::string tok;
      while (tokens >> tok) {
        const auto eq = tok.find('=');
        if (eq != std::string::npos) on_header(tok.substr(0, eq), tok.substr(eq + 1));
      }
      continue;
    }
    const auto last = line.find_last_not_of(" \t\r");
    double t = 0.0;
    const char* begin = line.data() + first;
    const char* end = line.data() + last + 1;
    const auto [ptr, ec] = std::from_chars(begin, end, t);
    if (ec != std::errc() || ptr != end || !std::isfinite(t)) {
      throw ConfigError("events line " + std::to_string(lineno) + ": not a timestamp");
    }
    if (!on_time(t)) return;
  }
}

std::istream& open_events(const std::string& path, std::ifstream& file) {
  if (path.empty() || path == "-") return std::cin;
  file.open(path);
  if (!file) throw ConfigError(path + ": cannot open");
  return file;
}

std::vector<double> read_arrivals(const std::string& path) {
  std::ifstream file;
  std::vector<double> out;
  read_events(open_events(path, file), [](const std::string&, const std::string&) {},
              [&](double t) {
                if (!out.empty() && t <= out.back()) throw DomainError("events out of order");
                out.push_back(t);
                return true;
              });
  return out;
}

std::shared_ptr<const ValueTable> solve_table(const RunConfig& cfg, int resolution,
                                              const IterationPlan& plan, bool keep) {
  IterateOptions opt;
  opt.empirical_stop = cfg.empirical_stop;
  opt.keep_iterates = keep;
  opt.settings = cfg.settings;
  opt.threads = cfg.threads;
  auto grid = std::make_shared<const SimplexGrid>(cfg.model.n(), resolution);
  return std::make_shared<const ValueTable>(value_iterate(cfg.model, grid, plan, opt));
}

int cmd_solve(const Flags& f) {
  const RunConfig cfg = config_with_overrides(f);
  if (f.out.empty()) throw ConfigError("--out: required");
  const auto start = std::chrono::steady_clock::now();
  IterationPlan plan = iteration_plan(cfg.model, cfg.pi0, cfg.epsilon);
  const std::size_t planned = plan.iterations;
  if (cfg.max_iterations) plan.iterations = std::min(plan.iterations, *cfg.max_iterations);

  const auto table = solve_table(cfg, cfg.resolution, plan, cfg.rule == RuleKind::sequential);

  json refinement = {{"resolution", cfg.resolution}, {"other_resolution", nullptr},
                     {"sup_delta", nullptr}};
  int other = 0;
  if (cfg.refinement == Refinement::coarse && cfg.resolution >= 2) other = cfg.resolution / 2;
  if (cfg.refinement == Refinement::fine) other = 2 * cfg.resolution;
  if (other > 0) {
    const auto second = solve_table(cfg, other, plan, false);
    const ValueTable& fine = other > cfg.resolution ? *second : *table;
    const ValueTable& coarse = other > cfg.resolution ? *table : *second;
    double delta = 0.0;
    for (std::size_t k = 0; k < fine.grid->size(); ++k) {
      delta = std::max(delta, std::abs(fine.values[k] - coarse(fine.grid->node(k))));
    }
    refinement["other_resolution"] = other;
    refinement["sup_delta"] = delta;
  }
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  namespace fs = std::filesystem;
  fs::create_directories(f.out);
  const fs::path dir(f.out);
  TableMeta meta;
  meta.pi0 = std::vector<double>(cfg.pi0.coords().begin(), cfg.pi0.coords().end());
  meta.epsilon = cfg.epsilon;
  meta.horizon = cfg.horizon;
  save_table((dir / "value_table.json").string(), *table, meta);
  {
    std::ofstream os(dir / "surface.csv");
    write_surface_csv(os, *table, cfg.epsilon);
  }
  const StoppingRegion region = stopping_region(*table, cfg.epsilon);
  if (cfg.model.n() == 2) {
    std::ofstream os(dir / "boundary.csv");
    write_boundary_csv(os, region);
  }
  const auto tstar = horizon_tstar(cfg.model);
  json report = {
      {"mode", to_string(table->mode)},
      {"m", table->m},
      {"iterations_planned", planned},
      {"t_limit", table->t_limit},
      {"tstar", tstar ? json(*tstar) : json(nullptr)},
      {"delta", table->delta},
      {"time_step", table->time_step},
      {"certified_bound", nullable(table->certified_bound)},
      {"error_bound_at_pi0", table->m >= 2 ? json(error_bound(cfg.model, cfg.pi0, table->m))
                                           : json(nullptr)},
      {"empirical_residual", nullable(table->empirical_delta)},
      {"grid_refinement", refinement},
      {"value_at_pi0", (*table)(cfg.pi0.coords())},
      {"h_at_pi0", 1.0 - cfg.pi0.absorbed()},
      {"guaranteed_stop_level", guaranteed_stop_level(cfg.model)},
      {"region",
       {{"epsilon", cfg.epsilon}, {"members", region.count()}, {"convex", region.convex}}},
      {"nodes", table->grid->size()},
      {"model_hash", model_hash(cfg.model)},
      {"wall_time_seconds", wall},
      {"history", table->history}};
  write_json_file((dir / "report.json").string(), report);
  std::cout << report.dump(2) << '\n';
  return kOk;
}

struct DetectInputs {
  std::shared_ptr<const ValueTable> table;
  BeliefPoint pi0 = BeliefPoint::vertex(1, 0);
  double epsilon = 0.05;
  double horizon = 50.0;
  RuleKind rule = RuleKind::hitting;
  std::uint64_t seed = 1;
  std::size_t samples = 20000;
};

DetectInputs detect_inputs(const Flags& f) {
  if (f.table.empty()) throw ConfigError("--table: required");
  TableMeta meta;
  DetectInputs in;
  in.table = std::make_shared<const ValueTable>(load_table(f.table, &meta));
  const std::size_t n = in.table->model.n();
  in.pi0 = BeliefPoint::vertex(n, 0);
  if (meta.pi0) in.pi0 = BeliefPoint::make(*meta.pi0);
  if (meta.epsilon) in.epsilon = *meta.epsilon;
  if (meta.horizon) in.horizon = *meta.horizon;
  if (!f.config.empty()) {
    const RunConfig cfg = config_with_overrides(f);
    if (model_hash(cfg.model) != model_hash(in.table->model)) {
      throw ConfigError("--config: model does not match the table");
    }
    in.pi0 = cfg.pi0;
    in.epsilon = cfg.epsilon;
    in.horizon = cfg.horizon;
    in.rule = cfg.rule;
    in.seed = cfg.seed;
    in.samples = cfg.samples;
  } else {
    if (f.given("--epsilon")) in.epsilon = f.epsilon;
    if (f.given("--horizon")) in.horizon = f.horizon;
    if (f.given("--rule")) in.rule = rule_from_string(f.rule);
    if (f.given("--seed")) in.seed = f.seed;
    if (f.given("--samples")) in.samples = f.samples;
  }
  if (!(in.epsilon > 0.0)) throw ConfigError("--epsilon: must be positive");
  if (!(in.horizon > 0.0)) throw ConfigError("--horizon: must be positive");
  return in;
}

Policy make_policy(const DetectInputs& in) {
  switch (in.rule) {
    case RuleKind::hitting: return Policy::hitting(in.table, in.epsilon, in.pi0);
    case RuleKind::sequential:
      if (in.table->iterates.empty()) {
        throw ConfigError("--rule sequential: table has no iterate stack (solve with rule \"sequential\")");
      }
      return Policy::sequential(in.table, in.epsilon, in.pi0);
    case RuleKind::immediate: return Policy::immediate(in.table->model, in.pi0);
    case RuleKind::fixed_time: break;
  }
  throw ConfigError("--rule: unsupported rule '" + to_string(in.rule) + "'");
}

int cmd_detect(const Flags& f) {
  DetectInputs in = detect_inputs(f);
  const Policy policy = make_policy(in);
  const std::string hash = model_hash(in.table->model);
  Detector d(policy);
  std::ifstream file;
  bool horizon_fixed = f.given("--horizon");
  read_events(
      open_events(f.events, file),
      [&](const std::string& key, const std::string& value) {
        if (key == "model_hash" && value != hash) {
          throw ConfigError("events: model_hash " + value + " does not match table " + hash);
        }
        if (key == "horizon" && !horizon_fixed) {
          double h = 0.0;
          const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), h);
          if (ec != std::errc() || p != value.data() + value.size() || !(h > 0.0)) {
            throw ConfigError("events: bad horizon header");
          }
          in.horizon = h;
        }
      },
      [&](double t) {
        if (t > in.horizon) return false;
        d.arrival(t);
        return !d.alarmed();
      });
  if (!d.alarmed()) d.quiescent_until(in.horizon);
  const auto& st = d.state();
  json record = {{"alarm_time", d.alarmed() ? json(d.alarm_time()) : json(nullptr)},
                 {"belief", std::vector<double>(st.belief.coords().begin(), st.belief.coords().end())},
                 {"rule", to_string(in.rule)},
                 {"censored", !d.alarmed()}};
  if (!d.alarmed()) record["horizon"] = in.horizon;
  std::cout << record.dump() << '\n';
  return d.alarmed() ? kOk : kCensored;
}

int cmd_evaluate(const Flags& f) {
  const DetectInputs in = detect_inputs(f);
  const Policy policy = make_policy(in);
  const Evaluation ev = evaluate_policy(policy, in.samples, in.horizon, in.seed);
  json out = to_json(ev.estimate);
  out["rule"] = to_string(in.rule);
  out["epsilon"] = in.epsilon;
  const double v = (*in.table)(in.pi0.coords());
  out["value_at_pi0"] = v;
  if (in.table->m >= 2 && in.rule != RuleKind::immediate) {
    const double bound = error_bound(in.table->model, in.pi0, in.table->m);
    const double se3 = 3.0 * ev.estimate.standard_error;
    const double slack = in.rule == RuleKind::sequential ? 0.5 * in.epsilon : in.epsilon;
    const double lower = v - bound - se3, upper = v + slack + se3;
    out["error_bound"] = bound;
    out["band"] = {{"lower", lower}, {"upper", upper},
                   {"inside", ev.estimate.risk >= lower && ev.estimate.risk <= upper}};
  }
  if (!f.out.empty()) {
    std::ofstream os(f.out);
    if (!os) throw ConfigError(f.out + ": cannot write");
    write_outcomes_csv(os, ev.outcomes);
  }
  std::cout << out.dump(2) << '\n';
  return kOk;
}

int cmd_validate(const Flags& f) {
  const RunConfig cfg = config_with_overrides(f);
  std::optional<ValueTable> table;
  if (!f.table.empty()) table = load_table(f.table);
  const ValidationSuite suite =
      run_validation(cfg, table ? &*table : nullptr, f.given("--resolution") ? f.resolution : 16);
  std::cout << suite.to_json().dump(2) << '\n';
  if (!suite.pass()) {
    for (const auto& c : suite.checks) {
      if (!c.pass) std::cerr << "FAILED " << c.name << ": " << c.detail << '\n';
    }
  }
  return suite.pass() ? kOk : kChecksFailed;
}

int cmd_simulate(const Flags& f) {
  const RunConfig cfg = config_with_overrides(f);
  const auto batch = sample_batch(cfg.model, cfg.pi0, cfg.horizon, cfg.samples, cfg.seed);
  if (f.out.empty() || f.out == "-") {
    write_scenarios(std::cout, batch);
  } else {
    std::ofstream os(f.out);
    if (!os) throw ConfigError(f.out + ": cannot write");
    write_scenarios(os, batch);
  }
  if (!f.events.empty()) {
    std::ofstream os(f.events);
    if (!os) throw ConfigError(f.events + ": cannot write");
    os.precision(17);
    os << "# model_hash=" << model_hash(cfg.model) << " horizon=" << cfg.horizon << '\n';
    for (double t : batch.front().arrivals) os << t << '\n';
  }
  return kOk;
}

int cmd_trajectory(const Flags& f) {
  const RunConfig cfg = config_with_overrides(f);
  if (!(f.step > 0.0)) throw ConfigError("--step: must be positive");
  const std::vector<double> arrivals = read_arrivals(f.events);
  std::vector<double> queries;
  const auto count = static_cast<std::size_t>(std::floor(cfg.horizon / f.step + 1e-9));
  for (std::size_t k = 0; k <= count; ++k) queries.push_back(static_cast<double>(k) * f.step);
  const Trajectory traj(cfg.model, cfg.pi0, arrivals);
  if (f.out.empty() || f.out == "-") {
    traj.write_csv(std::cout, queries);
  } else {
    std::ofstream os(f.out);
    if (!os) throw ConfigError(f.out + ": cannot write");
    traj.write_csv(os, queries);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian quickest detection of a phase-type rate change in a Poisson process"};
  app.require_subcommand(1);
  Flags f;
  std::function<int(const Flags&)> action;

  auto add = [&](const std::string& name, const std::string& help, auto fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->callback([&f, &action, sub, fn] {
      f.cmd = sub;
      action = fn;
    });
    return sub;
  };
  auto config = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--config", f.config, "Run configuration (JSON)");
    if (required) o->required();
  };
  auto common = [&](CLI::App* s) {
    s->add_option("--epsilon", f.epsilon, "Optimality slack");
    s->add_option("--resolution", f.resolution, "Grid subdivisions per simplex edge");
    s->add_option("--samples", f.samples, "Monte Carlo sample count");
    s->add_option("--seed", f.seed, "Random seed");
    s->add_option("--horizon", f.horizon, "Scenario / detection horizon");
    s->add_option("--rule", f.rule, "Detection rule")
        ->check(CLI::IsMember({"hitting", "sequential", "immediate"}));
  };

  auto* solve = add("solve", "Run value iteration and write the table and exports", cmd_solve);
  config(solve, true);
  common(solve);
  solve->add_option("--out", f.out, "Output directory")->required();

  auto* detect = add("detect", "Stream arrival times through a detector", cmd_detect);
  config(detect, false);
  common(detect);
  detect->add_option("--table", f.table, "Value table from solve")->required();
  detect->add_option("--events", f.events, "Arrival timestamps, one per line (path or -)");

  auto* evaluate = add("evaluate", "Monte Carlo Bayes risk of a rule", cmd_evaluate);
  config(evaluate, false);
  common(evaluate);
  evaluate->add_option("--table", f.table, "Value table from solve")->required();
  evaluate->add_option("--out", f.out, "Per-scenario CSV");

  auto* validate = add("validate", "Run the property suite", cmd_validate);
  config(validate, true);
  common(validate);
  validate->add_option("--table", f.table, "Also check this table");

  auto* simulate = add("simulate", "Sample scenarios as JSON lines", cmd_simulate);
  config(simulate, true);
  common(simulate);
  simulate->add_option("--out", f.out, "Output file (default stdout)");
  simulate->add_option("--events", f.events, "Also write scenario 0 as an event stream");

  auto* traj = add("trajectory", "Posterior path for an arrival sequence (CSV)", cmd_trajectory);
  config(traj, true);
  common(traj);
  traj->add_option("--events", f.events, "Arrival timestamps (path or -)");
  traj->add_option("--step", f.step, "Sampling step");
  traj->add_option("--out", f.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }
  try {
    return action(f);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const ContractError& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
}
