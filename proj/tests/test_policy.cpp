#include <cmath>
#include <memory>
#include <vector>

#include "doctest.h"
#include "qdet/error.hpp"
#include "qdet/policy.hpp"

using namespace qdet;

namespace {

BeliefPoint bp(std::vector<double> v) { return BeliefPoint::make(std::move(v)); }

ModelSpec figure1() { return {build_erlang(2, 3.0), 6.0, 5.0, 1.0}; }

std::shared_ptr<const ValueTable> solved(std::size_t iterations, bool converge) {
  const auto m = figure1();
  IterateOptions opt;
  opt.keep_iterates = true;
  opt.threads = 1;
  if (converge) opt.empirical_stop = 1e-8;
  return std::make_shared<const ValueTable>(
      value_iterate(m, std::make_shared<SimplexGrid>(2, 20), truncated_plan(m, 1e-9, iterations), opt));
}

const std::shared_ptr<const ValueTable>& table() {
  static const auto t = solved(200, true);
  return t;
}

Scenario quiet(double horizon, double theta = 10.0) {
  Scenario s;
  s.theta = theta;
  s.horizon = horizon;
  return s;
}

// First time the posterior satisfies gap ≤ 0, by brute force on a fine grid
// plus the post-jump points.
double offline_entry(const Policy& p, const Scenario& s, double step) {
  const Trajectory path(p.model(), p.initial(), s.arrivals);
  std::size_t next = 0;
  for (double t = 0.0; t <= s.horizon; t += step) {
    while (next < s.arrivals.size() && s.arrivals[next] <= t) {
      if (p.gap(path.at(s.arrivals[next]).coords()) <= 0.0) return s.arrivals[next];
      ++next;
    }
    if (p.gap(path.at(t).coords()) <= 0.0) return t;
  }
  return kInfinity;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("rule names") {
  for (auto k : {RuleKind::hitting, RuleKind::sequential, RuleKind::immediate, RuleKind::fixed_time})
    CHECK(rule_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(rule_from_string("cusum"), ConfigError);
}

TEST_CASE("alarm at zero inside the region") {
  const auto& t = table();
  for (auto pi : {bp({0, 0.05, 0.95}), BeliefPoint::absorbed_vertex(2)}) {
    const auto p = Policy::hitting(t, 0.05, pi);
    CHECK(p.gap(pi.coords()) <= 0.0);
    const Detector d(p);
    CHECK(d.alarmed());
    CHECK(d.alarm_time() == 0.0);
  }
  CHECK_THROWS_AS(Policy::hitting(t, 0.0, bp({1, 0, 0})), DomainError);
  CHECK_THROWS_AS(Policy::hitting(t, 0.05, bp({0.5, 0.5})), StructuralError);
}

TEST_CASE("absorbed start: alarm at zero with no false alarm") {
  const auto p = Policy::hitting(table(), 0.05, BeliefPoint::absorbed_vertex(2));
  Scenario s = quiet(5.0, 0.0);
  s.arrivals = {0.1, 0.4};
  const auto out = run_policy(p, s);
  CHECK(out.tau == 0.0);
  CHECK_FALSE(out.false_alarm);
  CHECK(out.delay == 0.0);
  CHECK_FALSE(out.censored);
}

TEST_CASE("the no-arrival flow reaches the region in finite time") {
  const auto& t = table();
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> v(3);
    double sum = 0;
    for (auto& x : v) sum += (x = rng.exponential(1.0));
    for (auto& x : v) x /= sum;
    const auto p = Policy::hitting(t, 0.05, bp(v));
    const auto out = run_policy(p, quiet(50.0));
    CHECK_FALSE(out.censored);
    CHECK(out.tau < 50.0);
  }
}

TEST_CASE("censoring at the horizon") {
  const auto p = Policy::hitting(table(), 0.05, bp({1, 0, 0}));
  const auto out = run_policy(p, quiet(0.01, 5.0));
  CHECK(out.censored);
  CHECK(out.tau == 0.01);
  CHECK(out.false_alarm);
}

TEST_CASE("hitting alarm matches an offline dense scan") {
  const auto m = figure1();
  const auto p = Policy::hitting(table(), 0.05, bp({1, 0, 0}));
  const auto batch = sample_batch(m, p.initial(), 8.0, 60, 42);
  int alarms = 0;
  for (const auto& s : batch) {
    const auto out = run_policy(p, s);
    const double ref = offline_entry(p, s, 1e-4);
    if (out.censored) {
      CHECK(std::isinf(ref));
      continue;
    }
    ++alarms;
    CHECK_MESSAGE(std::abs(out.tau - ref) <= p.scan_step() + 1e-4, "tau=" << out.tau << " ref=" << ref);
    // The alarm point is on the boundary or just past a jump into the region.
    CHECK(p.gap(Trajectory(m, p.initial(), s.arrivals).at(out.tau).coords()) <= 1e-9);
  }
  CHECK(alarms > 50);
}

TEST_CASE("determinism and monotonicity in epsilon") {
  const auto m = figure1();
  const auto pi = bp({1, 0, 0});
  const auto batch = sample_batch(m, pi, 10.0, 150, 9);
  const auto a = Policy::hitting(table(), 0.02, pi);
  const auto b = Policy::hitting(table(), 0.1, pi);
  for (const auto& s : batch) {
    const auto x1 = run_policy(a, s), x2 = run_policy(a, s), y = run_policy(b, s);
    CHECK(x1.tau == x2.tau);
    CHECK(x1.censored == x2.censored);
    CHECK(y.tau <= x1.tau + 1e-9);
  }
}

TEST_CASE("sequential rule with one stage") {
  const auto t = solved(1, false);
  REQUIRE(t->m == 1);
  const double eps = 0.2;
  const auto pi = bp({1, 0, 0});
  const auto p = Policy::sequential(t, eps, pi);
  // S_1 at slack ε/2 thresholds at r_0^{ε/4}.
  const double r0 = r_epsilon(*t, *p.bellman(), 0, eps / 4, pi.coords());
  REQUIRE(std::isfinite(r0));
  REQUIRE(r0 > 0.01);

  Scenario early = quiet(10.0);
  early.arrivals = {0.5 * r0, r0 + 1.0};
  CHECK(run_policy(p, early).tau == 0.5 * r0);

  Scenario late = quiet(10.0);
  late.arrivals = {r0 + 0.5};
  CHECK(run_policy(p, late).tau == doctest::Approx(r0).epsilon(1e-12));

  CHECK(run_policy(p, quiet(10.0)).tau == doctest::Approx(r0).epsilon(1e-12));
}

TEST_CASE("sequential rule stops by the M-th arrival") {
  const auto t = solved(3, false);
  const auto pi = bp({1, 0, 0});
  const auto p = Policy::sequential(t, 1e-9, pi);
  Scenario s = quiet(10.0);
  s.arrivals = {1e-4, 2e-4, 3e-4, 4e-4};
  const auto out = run_policy(p, s);
  CHECK(out.tau <= 3e-4);

  IterateOptions opt;
  opt.threads = 1;
  const auto m = figure1();
  auto bare = std::make_shared<const ValueTable>(
      value_iterate(m, std::make_shared<SimplexGrid>(2, 6), truncated_plan(m, 1e-3, 2), opt));
  CHECK_THROWS_AS(Policy::sequential(bare, 0.1, pi), ContractError);
}

TEST_CASE("event ordering") {
  const auto p = Policy::hitting(table(), 0.01, bp({1, 0, 0}));
  Detector d(p);
  d.arrival(0.01);
  CHECK_THROWS_AS(d.arrival(0.005), DomainError);
  CHECK_THROWS_AS(d.arrival(0.01), DomainError);
  Detector e(p);
  e.quiescent_until(0.02);
  CHECK_THROWS_AS(e.arrival(0.015), DomainError);
  CHECK_THROWS_AS(e.quiescent_until(0.01), DomainError);
  CHECK_NOTHROW(e.quiescent_until(0.02));
}

TEST_CASE("immediate and fixed-time rules") {
  const auto m = figure1();
  const auto pi = bp({0.5, 0.2, 0.3});
  Scenario s = quiet(5.0, 1.0);
  s.arrivals = {0.2, 0.7, 1.5};
  auto out = run_policy(Policy::immediate(m, pi), s);
  CHECK(out.tau == 0.0);
  CHECK(out.false_alarm);
  out = run_policy(Policy::fixed_time(m, pi, 2.0), s);
  CHECK(out.tau == 2.0);
  CHECK(out.delay == doctest::Approx(1.0));
  CHECK(observed_arrivals(out, s).size() == 3);
  out = run_policy(Policy::fixed_time(m, pi, 9.0), s);
  CHECK(out.censored);
  CHECK_THROWS_AS(Policy::fixed_time(m, pi, -1.0), DomainError);
}

}
