#include "qdet/policy.hpp"

#include <algorithm>
#include <cmath>

#include "qdet/error.hpp"

namespace qdet {

namespace {

// Scan halves its step when the gap is this close to zero.
constexpr double kGuardBand = 1e-3;

std::span<const double> as_span(const Eigen::RowVectorXd& u) {
  return {u.data(), static_cast<std::size_t>(u.size())};
}

Eigen::RowVectorXd row_of(const BeliefPoint& b) { return b.row(); }

}  // namespace

std::string to_string(RuleKind kind) {
  switch (kind) {
    case RuleKind::hitting: return "hitting";
    case RuleKind::sequential: return "sequential";
    case RuleKind::immediate: return "immediate";
    case RuleKind::fixed_time: return "fixed_time";
  }
  return "unknown";
}

RuleKind rule_from_string(const std::string& s) {
  if (s == "hitting") return RuleKind::hitting;
  if (s == "sequential") return RuleKind::sequential;
  if (s == "immediate") return RuleKind::immediate;
  if (s == "fixed_time") return RuleKind::fixed_time;
  throw ConfigError("unknown rule '" + s + "'");
}

Policy::Policy(RuleKind kind, const ModelSpec& model, const BeliefPoint& pi0)
    : kind_(kind), model_(model), pi0_(pi0) {
  validate_model(model_);
  if (pi0_.transient_count() != model_.n()) {
    throw StructuralError("initial belief dimension does not match the model");
  }
  prop_ = std::make_shared<const Propagator>(model_);
}

Policy Policy::hitting(std::shared_ptr<const ValueTable> table, double epsilon,
                       const BeliefPoint& pi0, SolverSettings settings) {
  if (!table) throw ContractError("hitting rule needs a value table");
  if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
  Policy p(RuleKind::hitting, table->model, pi0);
  p.epsilon_ = epsilon;
  p.table_ = std::move(table);
  p.op_ = std::make_shared<const BellmanOperator>(p.model_, settings);
  const double limit = p.table_->t_limit > 0.0 ? p.table_->t_limit : max_time(p.model_);
  p.scan_step_ = std::min(0.01 / p.model_.max_lambda(), limit / 1000.0);
  p.scan_E_ = p.prop_->transition(p.scan_step_);
  p.half_scan_E_ = p.prop_->transition(0.5 * p.scan_step_);
  return p;
}

Policy Policy::sequential(std::shared_ptr<const ValueTable> table, double epsilon,
                          const BeliefPoint& pi0, SolverSettings settings) {
  if (!table) throw ContractError("sequential rule needs a value table");
  if (table->iterates.size() != table->m + 1) {
    throw ContractError("sequential rule needs the iterate stack v_0..v_M");
  }
  if (table->m == 0) throw ContractError("sequential rule needs M >= 1");
  Policy p = hitting(std::move(table), epsilon, pi0, settings);
  p.kind_ = RuleKind::sequential;
  return p;
}

Policy Policy::immediate(const ModelSpec& model, const BeliefPoint& pi0) {
  return Policy(RuleKind::immediate, model, pi0);
}

Policy Policy::fixed_time(const ModelSpec& model, const BeliefPoint& pi0, double at) {
  if (!(at >= 0.0) || std::isinf(at)) throw DomainError("alarm time must be finite and >= 0");
  Policy p(RuleKind::fixed_time, model, pi0);
  p.fixed_alarm_ = at;
  return p;
}

double Policy::gap(std::span<const double> y) const {
  return (1.0 - y.back()) - (*table_)(y) - 0.5 * epsilon_;
}

// ---------------------------------------------------------------------------

Detector::Detector(const Policy& policy) : policy_(&policy), state_(policy.initial()) {
  switch (policy.kind()) {
    case RuleKind::immediate:
      raise(0.0, state_.belief);
      break;
    case RuleKind::fixed_time:
      state_.pending = policy.fixed_alarm();
      if (policy.fixed_alarm() == 0.0) raise(0.0, state_.belief);
      break;
    case RuleKind::hitting:
      if (policy.gap(state_.belief.coords()) <= 0.0) raise(0.0, state_.belief);
      break;
    case RuleKind::sequential:
      state_.depth = policy.table()->m;
      state_.level = 0.5 * policy.epsilon();
      start_segment();
      break;
  }
}

void Detector::check_order(double s, bool strict) const {
  if (!std::isfinite(s)) throw DomainError("event time must be finite");
  const bool bad = strict ? !(s > state_.segment_start) || s < state_.now : s < state_.now;
  if (bad || (state_.segment_start == 0.0 && s < 0.0)) {
    throw DomainError("events out of order");
  }
}

void Detector::raise(double t, const BeliefPoint& at) {
  state_.alarmed = true;
  state_.alarm_time = t;
  state_.now = t;
  state_.belief = at;
  state_.pending.reset();
}

void Detector::quiescent_until(double s) {
  if (state_.alarmed) return;
  check_order(s, false);
  advance(s);
}

void Detector::arrival(double s) {
  if (state_.alarmed) return;
  check_order(s, true);
  advance(s);
  if (state_.alarmed) return;
  state_.belief = jump(policy_->model(), state_.belief);
  state_.segment_start = s;
  switch (policy_->kind()) {
    case RuleKind::hitting:
      if (policy_->gap(state_.belief.coords()) <= 0.0) raise(s, state_.belief);
      break;
    case RuleKind::sequential:
      if (state_.depth == 0) throw ContractError("sequential depth exhausted");
      --state_.depth;
      state_.level *= 0.5;
      start_segment();
      break;
    default:
      break;
  }
}

void Detector::advance(double s) {
  switch (policy_->kind()) {
    case RuleKind::hitting:
      advance_hitting(s);
      return;
    case RuleKind::sequential:
    case RuleKind::fixed_time:
      advance_sequential(s);
      return;
    case RuleKind::immediate:
      return;
  }
}

void Detector::start_segment() {
  if (state_.depth == 0) {
    raise(state_.segment_start, state_.belief);
    return;
  }
  const double r = r_epsilon(*policy_->table(), *policy_->bellman(), state_.depth - 1,
                             0.5 * state_.level, state_.belief.coords());
  if (std::isinf(r)) {
    state_.pending.reset();
  } else {
    state_.pending = state_.segment_start + r;
  }
}

void Detector::advance_sequential(double s) {
  const auto& model = policy_->model();
  if (state_.pending && *state_.pending <= s) {
    const double t = *state_.pending;
    raise(t, flow(model, state_.belief, t - state_.now));
    return;
  }
  if (s > state_.now) state_.belief = flow(model, state_.belief, s - state_.now);
  state_.now = s;
}

void Detector::advance_hitting(double s) {
  const Policy& p = *policy_;
  const auto& H = p.propagator().generator();
  const double full = p.scan_step();
  Eigen::RowVectorXd x = row_of(state_.belief);
  Eigen::RowVectorXd next(x.size());
  double now = state_.now;
  double g = p.gap(as_span(x));
  while (now < s) {
    const bool close = g <= kGuardBand;
    const double nominal = close ? 0.5 * full : full;
    double step = nominal;
    if (s - now <= nominal * (1.0 + 1e-9)) step = s - now;
    if (step == full) {
      next.noalias() = x * p.scan_transition();
    } else if (step == 0.5 * full) {
      next.noalias() = x * p.half_scan_transition();
    } else {
      next.noalias() = x * expm(step * H);
    }
    next /= next.sum();
    const double g_next = p.gap(as_span(next));
    if (g_next <= 0.0) {
      // First sign change lies in (now, now + step]; bisect on the flow.
      double lo = 0.0, hi = step;
      Eigen::RowVectorXd at = next, probe(x.size());
      const double tol = 1e-12 * std::max(1.0, now + step);
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        probe.noalias() = x * expm(mid * H);
        probe /= probe.sum();
        if (p.gap(as_span(probe)) <= 0.0) {
          hi = mid;
          at = probe;
        } else {
          lo = mid;
        }
      }
      raise(now + hi, BeliefPoint::make(as_span(at)));
      return;
    }
    now = (step == s - now) ? s : now + step;
    x.swap(next);
    g = g_next;
  }
  state_.belief = BeliefPoint::make(as_span(x));
  state_.now = s;
}

// ---------------------------------------------------------------------------

DetectionOutcome run_policy(const Policy& policy, const Scenario& scenario) {
  Detector d(policy);
  for (double a : scenario.arrivals) {
    if (d.alarmed() || a > scenario.horizon) break;
    d.arrival(a);
  }
  if (!d.alarmed()) d.quiescent_until(scenario.horizon);
  DetectionOutcome out;
  out.theta = scenario.theta;
  out.censored = !d.alarmed();
  out.tau = out.censored ? scenario.horizon : d.alarm_time();
  out.false_alarm = out.tau < scenario.theta;
  out.delay = std::max(0.0, out.tau - scenario.theta);
  return out;
}

std::vector<double> observed_arrivals(const DetectionOutcome& outcome,
                                      const Scenario& scenario) {
  std::vector<double> seen;
  for (double a : scenario.arrivals) {
    if (a > outcome.tau) break;
    seen.push_back(a);
  }
  return seen;
}

}  // namespace qdet
