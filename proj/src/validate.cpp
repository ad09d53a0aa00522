#include "qdet/validate.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qdet/error.hpp"
#include "qdet/risk.hpp"
#include "qdet/rng.hpp"
#include "qdet/scenario.hpp"

namespace qdet {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

BeliefPoint random_belief(std::size_t n, Rng& rng) {
  std::vector<double> y(n + 1);
  double s = 0.0;
  for (auto& v : y) s += (v = rng.exponential(1.0));
  for (auto& v : y) v /= s;
  return BeliefPoint::make(y);
}

double sup_diff(const BeliefPoint& a, const BeliefPoint& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

template <class Fn>
CheckResult guarded(const std::string& name, Fn fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {name, false, std::string("exception: ") + e.what()};
  }
}

void check_table(const ValueTable& t, const std::string& label, std::vector<CheckResult>& out) {
  const auto& grid = *t.grid;
  const std::size_t n = grid.transient_states();
  double worst_range = 0.0, worst_stop = 0.0;
  const double level = guaranteed_stop_level(t.model);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double h = 1.0 - grid.node(k)[n];
    worst_range = std::max({worst_range, -t.values[k], t.values[k] - h});
    if (grid.node(k)[n] >= level) worst_stop = std::max(worst_stop, std::abs(t.values[k] - h));
  }
  out.push_back({label + " values in [0, h]", worst_range <= 0.0, "worst excess " + fmt(worst_range)});
  out.push_back({label + " guaranteed stopping set", worst_stop == 0.0,
                 "worst |v - h| " + fmt(worst_stop)});
  const double defect = midpoint_concavity_defect(grid, t.values);
  out.push_back({label + " midpoint concavity", defect <= 1e-4, "worst defect " + fmt(defect)});
}

}  // namespace

bool ValidationSuite::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
}

nlohmann::json ValidationSuite::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& c : checks) list.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  return {{"pass", pass()}, {"checks", list}};
}

ValidationSuite run_validation(const RunConfig& cfg, const ValueTable* table, int resolution) {
  ValidationSuite suite;
  auto& out = suite.checks;
  const ModelSpec& model = cfg.model;
  const std::size_t n = model.n();
  Rng rng(cfg.seed, 0x76616c6964ull);

  out.push_back(guarded("generator", [&] {
    const auto report = validate_generator(model.gen);
    return CheckResult{"generator", report.ok(), report.ok() ? "ok" : report.describe()};
  }));

  out.push_back(guarded("flow stays in the simplex", [&] {
    double worst = 0.0;
    const Propagator prop(model);
    for (int i = 0; i < 20; ++i) {
      const BeliefPoint pi = random_belief(n, rng);
      for (double t : {0.01, 0.1, 1.0, 10.0}) {
        Eigen::RowVectorXd u = pi.row() * prop.transition(t);
        u /= u.sum();
        worst = std::max({worst, -u.minCoeff(), std::abs(u.sum() - 1.0)});
      }
    }
    return CheckResult{"flow stays in the simplex", worst <= kSimplexTol, "worst " + fmt(worst)};
  }));

  out.push_back(guarded("semigroup", [&] {
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const BeliefPoint pi = random_belief(n, rng);
      const double t = 2.0 * rng.uniform(), s = 2.0 * rng.uniform();
      worst = std::max(worst, sup_diff(flow(model, pi, t + s), flow(model, flow(model, pi, s), t)));
    }
    return CheckResult{"semigroup", worst <= 1e-9, "worst " + fmt(worst)};
  }));

  out.push_back(guarded("first-arrival law", [&] {
    // density = -d/dt survival, by central differences
    double worst = 0.0;
    const double h = 1e-5;
    for (double t : {0.1, 0.5, 2.0}) {
      const double d = (sigma1_law(model, cfg.pi0, t - h).survival -
                        sigma1_law(model, cfg.pi0, t + h).survival) / (2.0 * h);
      worst = std::max(worst, std::abs(d - sigma1_law(model, cfg.pi0, t).density));
    }
    return CheckResult{"first-arrival law", worst <= 1e-6, "worst " + fmt(worst)};
  }));

  out.push_back(guarded("filter oracle agreement", [&] {
    const double until = std::min(cfg.horizon, 5.0);
    double worst = 0.0;
    for (std::uint64_t i = 0; i < 3; ++i) {
      const Scenario s = sample_indexed(model, cfg.pi0, until, cfg.seed, i);
      const FilterPath path = filter_oracle(model, cfg.pi0, s.arrivals, 1e-4, until);
      const Trajectory traj(model, cfg.pi0, s.arrivals);
      for (std::size_t k = 0; k < path.times.size(); k += 10) {
        worst = std::max(worst, sup_diff(path.beliefs[k], traj.at(path.times[k])));
      }
    }
    return CheckResult{"filter oracle agreement", worst <= 1e-3, "sup gap " + fmt(worst)};
  }));

  out.push_back(guarded("iterate structure", [&] {
    auto grid = std::make_shared<const SimplexGrid>(n, resolution);
    IterateOptions opt;
    opt.keep_iterates = true;
    opt.settings = cfg.settings;
    opt.threads = cfg.threads;
    const auto tstar = horizon_tstar(model);
    const IterationPlan plan = tstar ? bounded_plan(model, 16) : truncated_plan(model, 1e-9, 16);
    const ValueTable t = value_iterate(model, grid, plan, opt);
    std::size_t bad_mono = 0, bad_sandwich = 0;
    const std::size_t m = std::min<std::size_t>(8, t.m / 2);
    double bound = kInfinity;
    if (m >= 2) bound = uniform_error_bound(model, m);
    for (std::size_t k = 0; k < grid->size(); ++k) {
      for (std::size_t i = 1; i < t.iterates.size(); ++i) {
        if (t.iterates[i][k] > t.iterates[i - 1][k]) ++bad_mono;
      }
      if (m >= 2 && t.iterates[2 * m][k] < t.iterates[m][k] - bound) ++bad_sandwich;
    }
    std::vector<CheckResult> sub;
    check_table(t, "solved", sub);
    bool ok = bad_mono == 0 && bad_sandwich == 0;
    std::string detail = "monotonicity violations " + std::to_string(bad_mono) +
                         ", sandwich violations " + std::to_string(bad_sandwich);
    for (const auto& c : sub) {
      ok = ok && c.pass;
      detail += "; " + c.name + ": " + c.detail;
    }
    return CheckResult{"iterate structure", ok, detail};
  }));

  if (table) {
    if (table->model.n() != n || model_hash(table->model) != model_hash(model)) {
      out.push_back({"table model", false, "table was solved for a different model"});
    } else {
      out.push_back({"table model", true, "hash " + model_hash(model)});
    }
    check_table(*table, "table", out);
  }
  return suite;
}

}  // namespace qdet
