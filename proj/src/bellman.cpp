#include "qdet/bellman.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "parallel.hpp"
#include "qdet/error.hpp"

namespace qdet {

namespace {

constexpr int kRefineFactor = 16;

std::span<const double> as_span(const Eigen::RowVectorXd& u) {
  return {u.data(), static_cast<std::size_t>(u.size())};
}

// ceil that ignores representation noise: 1001.0000000001 -> 1001.
std::size_t ceil_count(double x) {
  const double guard = 1e-9 * std::max(1.0, std::abs(x));
  return static_cast<std::size_t>(std::max(1.0, std::ceil(x - guard)));
}

}  // namespace

Costs costs(const ModelSpec& model, const BeliefPoint& pi) {
  return {model.c * pi.absorbed(), 1.0 - pi.absorbed()};
}

double truncation_time(const ModelSpec& model, double delta) {
  if (!(delta > 0.0)) throw DomainError("truncation level must be positive");
  const double l0 = model.lambda0;
  return std::max(0.0, -std::log(delta / (4.0 + 2.0 * model.c / l0)) / l0);
}

double max_time(const ModelSpec& model) { return truncation_time(model, kDeltaFloor); }

double guaranteed_stop_level(const ModelSpec& model) {
  const double b = model.gen.r.maxCoeff();
  const double top = model.max_lambda() + b;
  return top / (model.c + top);
}

std::optional<double> horizon_tstar(const ModelSpec& model) {
  const double b_low = model.gen.r.minCoeff();
  if (!(b_low > 0.0)) return std::nullopt;
  const double rho = model.rho();
  const double x = guaranteed_stop_level(model);
  const double gap = b_low - rho;
  if (std::abs(gap) <= 1e-12 * std::max(b_low, std::abs(rho))) {
    return x / ((1.0 - x) * b_low);
  }
  if (gap < 0.0) return std::nullopt;
  return std::log((b_low - rho * x) / (b_low * (1.0 - x))) / gap;
}

// ---------------------------------------------------------------------------

struct BellmanOperator::Scan {
  std::size_t steps = 0;
  double h = 1.0;
  Eigen::RowVectorXd u0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> u;
  std::vector<double> integral;
  std::vector<double> value;

  Eigen::RowVectorXd state(std::size_t k) const { return u.row(static_cast<Eigen::Index>(k)); }
};

BellmanOperator::BellmanOperator(const ModelSpec& model, SolverSettings settings)
    : prop_(model), settings_(settings) {
  validate_model(model);
  dt_ = settings_.time_step > 0.0 ? settings_.time_step : 1.0 / (64.0 * model.rate_scale());
  stop_level_ = guaranteed_stop_level(model);
  const auto& H = prop_.generator();
  step_ = expm(dt_ * H);
  half_step_ = expm(0.5 * dt_ * H);
  double sub = dt_;
  for (int level = 0; level < settings_.refine_levels; ++level) {
    sub /= kRefineFactor;
    sub_step_.push_back(expm(sub * H));
    sub_half_step_.push_back(expm(0.5 * sub * H));
  }
}

std::size_t BellmanOperator::steps_for(double horizon) const {
  if (!(horizon >= 0.0)) throw DomainError("horizon must be non-negative");
  if (std::isinf(horizon)) horizon = max_time(model());
  const double k = horizon / dt_;
  return static_cast<std::size_t>(std::max(0.0, std::ceil(k - 1e-9 * std::max(1.0, k))));
}

double BellmanOperator::integrand(const ValueFunction& w, const Eigen::RowVectorXd& u,
                                  Eigen::RowVectorXd& scratch) const {
  const double dens = prop_.first_arrival_density(u);
  if (!(dens > 0.0)) return 0.0;
  prop_.jump_into(u, scratch);
  return dens * w(as_span(scratch));
}

double BellmanOperator::closed_terms(const Eigen::RowVectorXd& u,
                                     const Eigen::RowVectorXd& u0) const {
  const auto n = u.size() - 1;
  return model().c * (u - u0).dot(prop_.cost_vector().transpose()) + u.head(n).sum();
}

BellmanOperator::Scan BellmanOperator::scan(const ValueFunction& w,
                                            std::span<const double> pi,
                                            std::size_t steps) const {
  const auto dim = static_cast<Eigen::Index>(pi.size());
  if (dim != static_cast<Eigen::Index>(model().n() + 1)) {
    throw StructuralError("belief dimension does not match the model");
  }
  Scan s;
  s.steps = steps;
  s.u0 = Eigen::Map<const Eigen::RowVectorXd>(pi.data(), dim);
  s.h = 1.0 - pi.back();
  s.u.resize(static_cast<Eigen::Index>(steps + 1), dim);
  s.integral.assign(steps + 1, 0.0);
  s.value.assign(steps + 1, s.h);
  s.u.row(0) = s.u0;

  Eigen::RowVectorXd u = s.u0, mid(dim), next(dim), scratch(dim);
  double g0 = integrand(w, u, scratch);
  double acc = 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    mid.noalias() = u * half_step_;
    next.noalias() = u * step_;
    const double gm = integrand(w, mid, scratch);
    const double g1 = integrand(w, next, scratch);
    acc += dt_ / 6.0 * (g0 + 4.0 * gm + g1);
    s.integral[k] = acc;
    s.value[k] = closed_terms(next, s.u0) + acc;
    s.u.row(static_cast<Eigen::Index>(k)) = next;
    u.swap(next);
    g0 = g1;
  }
  return s;
}

Minimum BellmanOperator::refine(const ValueFunction& w, const Scan& s,
                                std::size_t k) const {
  Minimum best{s.value[k], static_cast<double>(k) * dt_};
  if (settings_.refine_levels <= 0) return best;

  const auto dim = s.u0.size();
  Eigen::RowVectorXd start = s.state(k - 1);
  double start_t = static_cast<double>(k - 1) * dt_;
  double start_int = s.integral[k - 1];
  double end_t = static_cast<double>(std::min(k + 1, s.steps)) * dt_;
  double sub = dt_;

  Eigen::RowVectorXd u(dim), mid(dim), next(dim), scratch(dim);
  for (int level = 0; level < settings_.refine_levels; ++level) {
    sub /= kRefineFactor;
    const auto count = static_cast<std::size_t>(std::llround((end_t - start_t) / sub));
    const auto& E = sub_step_[static_cast<std::size_t>(level)];
    const auto& Eh = sub_half_step_[static_cast<std::size_t>(level)];

    u = start;
    double acc = start_int;
    double g0 = integrand(w, u, scratch);
    Eigen::RowVectorXd best_prev = start;
    double best_prev_int = start_int;
    double best_prev_t = start_t;
    double best_val = kInfinity, best_t = start_t;
    std::size_t best_j = 0;
    for (std::size_t j = 1; j <= count; ++j) {
      mid.noalias() = u * Eh;
      next.noalias() = u * E;
      const double gm = integrand(w, mid, scratch);
      const double g1 = integrand(w, next, scratch);
      const double prev_acc = acc;
      acc += sub / 6.0 * (g0 + 4.0 * gm + g1);
      const double val = closed_terms(next, s.u0) + acc;
      if (val < best_val - settings_.tie_tolerance) {
        best_val = val;
        best_t = start_t + static_cast<double>(j) * sub;
        best_j = j;
        best_prev = u;
        best_prev_int = prev_acc;
        best_prev_t = start_t + static_cast<double>(j - 1) * sub;
      }
      u.swap(next);
      g0 = g1;
    }
    if (best_j == 0) break;
    best = {best_val, best_t};
    const double level_end = end_t;
    start = best_prev;
    start_int = best_prev_int;
    start_t = best_prev_t;
    end_t = std::min(best_t + sub, level_end);
  }
  return best;
}

double BellmanOperator::value_between(const ValueFunction& w, const Scan& s,
                                      double t) const {
  const auto j = std::min(s.steps, static_cast<std::size_t>(std::floor(t / dt_)));
  const double rest = t - static_cast<double>(j) * dt_;
  if (rest <= 0.0) return s.value[j];
  constexpr int kParts = 4;
  const double sub = rest / kParts;
  const auto& H = prop_.generator();
  const Eigen::MatrixXd E = expm(sub * H), Eh = expm(0.5 * sub * H);
  const auto dim = s.u0.size();
  Eigen::RowVectorXd u = s.state(j), mid(dim), next(dim), scratch(dim);
  double acc = s.integral[j];
  double g0 = integrand(w, u, scratch);
  for (int p = 0; p < kParts; ++p) {
    mid.noalias() = u * Eh;
    next.noalias() = u * E;
    const double gm = integrand(w, mid, scratch);
    const double g1 = integrand(w, next, scratch);
    acc += sub / 6.0 * (g0 + 4.0 * gm + g1);
    u.swap(next);
    g0 = g1;
  }
  return closed_terms(u, s.u0) + acc;
}

double BellmanOperator::evaluate(const ValueFunction& w, std::span<const double> pi,
                                 double t) const {
  if (!(t >= 0.0)) throw DomainError("time must be non-negative");
  if (std::isinf(t)) t = max_time(model());
  const auto steps = static_cast<std::size_t>(std::floor(t / dt_));
  const Scan s = scan(w, pi, steps);
  return value_between(w, s, t);
}

std::vector<double> BellmanOperator::curve(const ValueFunction& w,
                                           std::span<const double> pi,
                                           double horizon) const {
  return scan(w, pi, steps_for(horizon)).value;
}


Minimum BellmanOperator::minimize(const ValueFunction& w, std::span<const double> pi,
                                  double horizon) const {
  const std::size_t steps = steps_for(horizon);
  const double h = 1.0 - pi.back();
  if (steps == 0) return {h, 0.0};
  const Scan s = scan(w, pi, steps);
  std::size_t best = 1;
  for (std::size_t k = 2; k <= steps; ++k) {
    if (s.value[k] < s.value[best] - settings_.tie_tolerance) best = k;
  }
  if (s.value[best] >= h - settings_.tie_tolerance) return {h, 0.0};
  const Minimum m = refine(w, s, best);
  if (m.value >= h - settings_.tie_tolerance) return {h, 0.0};
  return m;
}

double BellmanOperator::threshold_time(const ValueFunction& w, std::span<const double> pi,
                                       double horizon, double slack) const {
  const std::size_t steps = steps_for(horizon);
  const double h = 1.0 - pi.back();
  if (steps == 0) return 0.0;
  const Scan s = scan(w, pi, steps);
  std::size_t best = 1;
  for (std::size_t k = 2; k <= steps; ++k) {
    if (s.value[k] < s.value[best] - settings_.tie_tolerance) best = k;
  }
  Minimum m{h, 0.0};
  if (s.value[best] < h - settings_.tie_tolerance) {
    m = refine(w, s, best);
    if (m.value >= h - settings_.tie_tolerance) m = {h, 0.0};
  }
  const double level = m.value + slack;
  if (h <= level) return 0.0;
  std::size_t first = 0;
  for (std::size_t k = 1; k <= steps; ++k) {
    if (s.value[k] <= level) {
      first = k;
      break;
    }
  }
  if (first == 0 || static_cast<double>(first) * dt_ >= m.argmin) return m.argmin;
  double lo = static_cast<double>(first - 1) * dt_;
  double hi = static_cast<double>(first) * dt_;
  const double tol = 1e-9 * std::max(dt_, hi);
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (value_between(w, s, mid) <= level) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

double BellmanOperator::guaranteed_hit(std::span<const double> pi, double horizon) const {
  const std::size_t steps = steps_for(horizon);
  const auto dim = static_cast<Eigen::Index>(pi.size());
  Eigen::RowVectorXd u = Eigen::Map<const Eigen::RowVectorXd>(pi.data(), dim);
  Eigen::RowVectorXd next(dim);
  for (std::size_t k = 0; k <= steps; ++k) {
    if (u(dim - 1) >= stop_level_ * u.sum()) return static_cast<double>(k) * dt_;
    next.noalias() = u * step_;
    u.swap(next);
  }
  return kInfinity;
}

// ---------------------------------------------------------------------------

std::string to_string(HorizonMode mode) {
  return mode == HorizonMode::bounded ? "bounded" : "truncated";
}

HorizonMode horizon_mode_from_string(const std::string& s) {
  if (s == "bounded") return HorizonMode::bounded;
  if (s == "truncated") return HorizonMode::truncated;
  throw ConfigError("unknown horizon mode '" + s + "'");
}

IterationPlan iteration_plan(const ModelSpec& model, const BeliefPoint& pi,
                             double epsilon) {
  if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
  validate_model(model);
  const double theta = mean_absorption(model.gen, pi);
  const double spread = (1.0 / model.c + theta) * model.max_lambda();
  IterationPlan plan;
  if (const auto tstar = horizon_tstar(model)) {
    plan.mode = HorizonMode::bounded;
    plan.iterations = ceil_count(1.0 + spread / (epsilon * epsilon));
    plan.t_limit = *tstar;
    plan.delta = 0.0;
    return plan;
  }
  const double mt = 1.0 + (1.0 + std::sqrt(spread)) / (epsilon * epsilon);
  plan.mode = HorizonMode::truncated;
  plan.iterations = ceil_count(mt);
  plan.delta = 1.0 / (mt * std::sqrt(mt - 1.0));
  plan.t_limit = truncation_time(model, plan.delta);
  return plan;
}

IterationPlan truncated_plan(const ModelSpec& model, double delta, std::size_t iterations) {
  IterationPlan plan;
  plan.mode = HorizonMode::truncated;
  plan.iterations = iterations;
  plan.delta = delta;
  plan.t_limit = truncation_time(model, delta);
  return plan;
}

IterationPlan bounded_plan(const ModelSpec& model, std::size_t iterations) {
  const auto tstar = horizon_tstar(model);
  if (!tstar) throw DomainError("model has no finite uniform horizon bound");
  IterationPlan plan;
  plan.mode = HorizonMode::bounded;
  plan.iterations = iterations;
  plan.t_limit = *tstar;
  return plan;
}

double error_bound(const ModelSpec& model, const BeliefPoint& pi, std::size_t m) {
  if (m < 2) throw DomainError("error bound needs at least two iterations");
  const double theta = mean_absorption(model.gen, pi);
  return std::sqrt((1.0 / model.c + theta) * model.max_lambda() /
                   static_cast<double>(m - 1));
}

double uniform_error_bound(const ModelSpec& model, std::size_t m) {
  if (m < 2) return kInfinity;
  const double theta = mean_absorption_by_state(model.gen).maxCoeff();
  return std::sqrt((1.0 / model.c + theta) * model.max_lambda() /
                   static_cast<double>(m - 1));
}

double ValueTable::horizon_at(const BellmanOperator& op, std::span<const double> pi) const {
  return std::min(t_limit, op.guaranteed_hit(pi, t_limit));
}

ValueTable value_iterate(const ModelSpec& model, std::shared_ptr<const SimplexGrid> grid,
                         const IterationPlan& plan, const IterateOptions& options) {
  validate_model(model);
  if (!grid) throw ContractError("value_iterate needs a grid");
  if (grid->transient_states() != model.n()) {
    throw StructuralError("grid dimension does not match the model");
  }
  if (plan.iterations == 0) throw DomainError("iteration count must be positive");
  if (!(plan.t_limit >= 0.0) || std::isinf(plan.t_limit)) {
    throw DomainError("iteration horizon must be finite");
  }

  const BellmanOperator op(model, options.settings);
  ValueTable table;
  table.model = model;
  table.grid = grid;
  table.mode = plan.mode;
  table.t_limit = plan.t_limit;
  table.delta = plan.delta;
  table.time_step = op.time_step();

  const std::size_t nodes = grid->size();
  const std::size_t n = model.n();
  std::vector<double> horizon(nodes);
  std::vector<double> v(nodes);
  detail::parallel_for(nodes, options.threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      horizon[k] = table.horizon_at(op, grid->node(k));
      v[k] = 1.0 - grid->node(k)[n];
    }
  });
  if (options.keep_iterates) table.iterates.push_back(v);

  std::vector<double> next(nodes);
  for (std::size_t m = 0; m < plan.iterations; ++m) {
    const GridFunction w(*grid, v);
    detail::parallel_for(nodes, options.threads, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k) {
        const double j0 = op.minimize(w, grid->node(k), horizon[k]).value;
        next[k] = std::isfinite(j0) ? std::clamp(j0, 0.0, v[k]) : j0;
      }
    });
    double delta = 0.0;
    for (std::size_t k = 0; k < nodes; ++k) {
      if (!std::isfinite(next[k])) {
        std::ostringstream msg;
        msg << "non-finite value at iteration " << m + 1 << ", node " << k << " (";
        const auto y = grid->node(k);
        for (std::size_t i = 0; i < y.size(); ++i) msg << (i ? ", " : "") << y[i];
        msg << ")";
        throw NumericalError(msg.str());
      }
      delta = std::max(delta, std::abs(next[k] - v[k]));
    }
    v.swap(next);
    table.history.push_back(delta);
    table.m = m + 1;
    if (options.keep_iterates) table.iterates.push_back(v);
    if (options.empirical_stop && delta <= *options.empirical_stop) break;
  }

  table.values = v;
  table.empirical_delta = table.history.empty() ? kInfinity : table.history.back();
  table.certified_bound = uniform_error_bound(model, table.m);
  if (plan.mode == HorizonMode::truncated) {
    table.certified_bound += static_cast<double>(table.m) * plan.delta;
  }
  return table;
}

// ---------------------------------------------------------------------------

std::size_t StoppingRegion::count() const {
  return static_cast<std::size_t>(std::count(member.begin(), member.end(), true));
}

namespace {

// Visits each node pair (a, b) whose midpoint is also a node.
template <class Fn>
void for_each_midpoint(const SimplexGrid& grid, Fn fn) {
  const std::size_t dim = grid.dim();
  std::vector<int> mid(dim);
  for (std::size_t a = 0; a < grid.size(); ++a) {
    const auto la = grid.lattice(a);
    for (std::size_t b = a + 1; b < grid.size(); ++b) {
      const auto lb = grid.lattice(b);
      bool even = true;
      for (std::size_t i = 0; i < dim && even; ++i) {
        const int s = la[i] + lb[i];
        even = (s % 2 == 0);
        mid[i] = s / 2;
      }
      if (!even) continue;
      const std::size_t c = grid.find(mid);
      if (c < grid.size()) fn(a, b, c);
    }
  }
}

}  // namespace

double midpoint_concavity_defect(const SimplexGrid& grid, std::span<const double> values) {
  double worst = 0.0;
  for_each_midpoint(grid, [&](std::size_t a, std::size_t b, std::size_t c) {
    worst = std::max(worst, 0.5 * (values[a] + values[b]) - values[c]);
  });
  return worst;
}

StoppingRegion stopping_region(const ValueTable& table, double epsilon) {
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be non-negative");
  const auto& grid = *table.grid;
  const std::size_t n = grid.transient_states();
  StoppingRegion region;
  region.member.resize(grid.size());
  std::vector<double> g(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double h = 1.0 - grid.node(k)[n];
    g[k] = h - table.values[k] - 0.5 * epsilon;
    region.member[k] = g[k] <= 0.0;
  }
  for_each_midpoint(grid, [&](std::size_t a, std::size_t b, std::size_t c) {
    if (region.member[a] && region.member[b] && !region.member[c]) region.convex = false;
  });
  if (n == 2) {
    for (const auto& cell : grid.cells()) {
      std::vector<std::array<double, 3>> pts;
      for (std::size_t i = 0; i < cell.size(); ++i) {
        for (std::size_t j = i + 1; j < cell.size(); ++j) {
          const double ga = g[cell[i]], gb = g[cell[j]];
          if ((ga <= 0.0) == (gb <= 0.0)) continue;
          const double s = ga / (ga - gb);
          const auto pa = grid.node(cell[i]), pb = grid.node(cell[j]);
          std::array<double, 3> p{};
          for (std::size_t d = 0; d < 3; ++d) p[d] = pa[d] + s * (pb[d] - pa[d]);
          pts.push_back(p);
        }
      }
      if (pts.size() == 2) region.boundary.push_back({pts[0], pts[1]});
    }
  }
  return region;
}

double r_epsilon(const ValueTable& table, const BellmanOperator& op, std::size_t m,
                 double epsilon, std::span<const double> pi) {
  if (!(epsilon >= 0.0)) throw DomainError("epsilon must be non-negative");
  if (m != table.m && m >= table.iterates.size()) {
    throw ContractError("iterate " + std::to_string(m) + " was not kept");
  }
  const GridFunction w = m == table.m ? table.function() : table.iterate(m);
  const double r = op.threshold_time(w, pi, table.horizon_at(op, pi), epsilon);
  // The infimum runs over (0, ∞]; an immediate qualifier reports the first probe.
  return r > 0.0 ? r : op.time_step();
}

}  // namespace qdet
