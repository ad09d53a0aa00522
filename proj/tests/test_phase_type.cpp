#include <cmath>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "qdet/error.hpp"
#include "qdet/phase_type.hpp"
#include "qdet/rng.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

using namespace qdet;

namespace {

PhaseTypeGenerator make_gen(Eigen::MatrixXd R, Eigen::VectorXd r) { return {std::move(R), std::move(r)}; }

BeliefPoint bp(std::vector<double> v) { return BeliefPoint::make(std::move(v)); }

}  // namespace

TEST_SUITE("phase_type") {

TEST_CASE("erlang chain validates") {
  const auto g = build_erlang(2, 3.0);
  CHECK(g.R(0, 0) == -3.0);
  CHECK(g.R(0, 1) == 3.0);
  CHECK(g.R(1, 0) == 0.0);
  CHECK(g.R(1, 1) == -3.0);
  CHECK(g.r(0) == 0.0);
  CHECK(g.r(1) == 3.0);
  CHECK(validate_generator(g).ok());
}

TEST_CASE("row-sum violation names the row and residual") {
  Eigen::MatrixXd R(2, 2);
  R << -3, 3, 0, -3;
  Eigen::VectorXd r(2);
  r << 0, 2;
  const auto rep = validate_generator(make_gen(R, r));
  REQUIRE(rep.has("R·1 + r ≠ 0"));
  bool found = false;
  for (const auto& v : rep.violations) {
    if (v.invariant == "R·1 + r ≠ 0") {
      CHECK(v.row == 1);
      CHECK(v.residual == doctest::Approx(-1.0));
      found = true;
    }
  }
  CHECK(found);
  CHECK(rep.describe().find("row 2") != std::string::npos);
}

TEST_CASE("singular R is reported") {
  Eigen::MatrixXd R(2, 2);
  R << -3, 3, 3, -3;
  Eigen::VectorXd r = Eigen::VectorXd::Zero(2);
  CHECK(validate_generator(make_gen(R, r)).has("R singular"));
}

TEST_CASE("sign violations and shape mismatch") {
  Eigen::MatrixXd R(2, 2);
  R << 1, -1, 0, -3;
  Eigen::VectorXd r(2);
  r << 0, -1;
  const auto rep = validate_generator(make_gen(R, r));
  CHECK(rep.has("R diagonal not negative"));
  CHECK(rep.has("R off-diagonal negative"));
  CHECK(rep.has("r negative"));
  CHECK_THROWS_AS(validate_generator(make_gen(R, Eigen::VectorXd::Zero(3))), StructuralError);
  CHECK_THROWS_AS(require_valid(make_gen(R, r)), DomainError);
}

TEST_CASE("hyperexponential builder") {
  const std::vector<double> mu{3, 2};
  const auto g = build_hyperexponential(mu);
  CHECK(g.R(0, 0) == -3.0);
  CHECK(g.R(1, 1) == -2.0);
  CHECK(g.R(0, 1) == 0.0);
  CHECK(g.r(0) == 3.0);
  CHECK(g.r(1) == 2.0);
  CHECK(validate_generator(g).ok());
  const std::vector<double> bad{3, 0};
  CHECK_THROWS_AS(build_hyperexponential(bad), DomainError);
  CHECK_THROWS_AS(build_erlang(0, 1.0), DomainError);
  CHECK_THROWS_AS(build_erlang(2, -1.0), DomainError);
}

TEST_CASE("belief construction clamps and rejects") {
  const auto b = bp({0.5, 0.5 + 1e-12, -1e-12});
  CHECK(b.absorbed() == 0.0);
  CHECK(b[0] + b[1] + b[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(bp({0.5, 0.6, -1e-3}), DomainError);
  CHECK_THROWS_AS(bp({0.5, 0.6, 0.0}), DomainError);
  CHECK_THROWS_AS(bp({0.5, NAN, 0.5}), DomainError);
  CHECK(BeliefPoint::absorbed_vertex(2).absorbed() == 1.0);
}

TEST_CASE("distribution at t = 0 and absorbed start") {
  const auto g = build_erlang(1, 3.0);
  const auto d = distribution(g, bp({1, 0}), 0.0);
  CHECK(d.cdf == 0.0);
  CHECK(d.density == doctest::Approx(3.0));
  REQUIRE(d.hazard);
  CHECK(*d.hazard == doctest::Approx(3.0));
  const auto a = distribution(build_erlang(2, 3.0), BeliefPoint::absorbed_vertex(2), 1.7);
  CHECK(a.cdf == 1.0);
  CHECK(a.absorbed());
  CHECK_THROWS_AS(distribution(g, bp({1, 0}), -1.0), DomainError);
}

TEST_CASE("erlang and hyperexponential CDFs match closed forms") {
  const auto e2 = build_erlang(2, 3.0);
  CHECK(distribution(e2, bp({1, 0, 0}), 1.0).cdf == doctest::Approx(1 - std::exp(-3.0) * 4).epsilon(1e-12));
  CHECK(distribution(e2, bp({1, 0, 0}), 1.0).cdf == doctest::Approx(0.80085).epsilon(1e-5));
  const auto e3 = build_erlang(3, 1.7);
  for (double t : {0.0, 0.1, 0.7, 2.0, 6.0}) {
    CHECK(distribution(e3, bp({1, 0, 0, 0}), t).cdf ==
          doctest::Approx(oracle::erlang_cdf(3, 1.7, t)).epsilon(1e-12));
    CHECK(distribution(build_erlang(1, 2.5), bp({1, 0}), t).cdf ==
          doctest::Approx(1 - std::exp(-2.5 * t)).epsilon(1e-12));
  }
  const std::vector<double> mu{3, 2}, p{0.3, 0.7};
  const auto h = build_hyperexponential(mu);
  for (double t : {0.05, 0.5, 1.5}) {
    CHECK(distribution(h, bp({0.3, 0.7, 0}), t).cdf ==
          doctest::Approx(oracle::hyperexp_cdf(p, mu, t)).epsilon(1e-12));
  }
}

TEST_CASE("distribution is monotone and its derivative is the density") {
  const auto g = build_erlang(3, 2.0);
  const auto pi = bp({0.2, 0.5, 0.2, 0.1});
  double prev = -1.0;
  for (int k = 0; k <= 100; ++k) {
    const double t = 0.05 * k;
    const auto d = distribution(g, pi, t);
    CHECK(d.cdf >= prev);
    CHECK(d.cdf >= 0.0);
    CHECK(d.cdf <= 1.0);
    CHECK(d.density >= 0.0);
    prev = d.cdf;
    if (t > 0.01) {
      const double h = 1e-5;
      const double num = (distribution(g, pi, t + h).cdf - distribution(g, pi, t - h).cdf) / (2 * h);
      CHECK(num == doctest::Approx(d.density).epsilon(1e-6));
    }
  }
}

TEST_CASE("mean absorption") {
  CHECK(mean_absorption(build_erlang(2, 3.0), bp({1, 0, 0})) == doctest::Approx(2.0 / 3.0));
  const std::vector<double> mu{3, 2};
  CHECK(mean_absorption(build_hyperexponential(mu), bp({0.5, 0.5, 0})) == doctest::Approx(5.0 / 12.0));
  CHECK(mean_absorption(build_erlang(2, 3.0), BeliefPoint::absorbed_vertex(2)) == 0.0);
}

TEST_CASE("mean absorption equals the integral of the survival function") {
  using boost::math::quadrature::gauss_kronrod;
  const auto g = build_erlang(3, 2.0);
  const auto pi = bp({0.3, 0.3, 0.3, 0.1});
  // from phase j the remaining time is Erlang with 3 - j stages
  auto survival = [](double t) {
    return 0.3 * (1 - oracle::erlang_cdf(3, 2.0, t)) + 0.3 * (1 - oracle::erlang_cdf(2, 2.0, t)) +
           0.3 * (1 - oracle::erlang_cdf(1, 2.0, t));
  };
  const double integral = gauss_kronrod<double, 61>::integrate(
      survival, 0.0, std::numeric_limits<double>::infinity(), 15, 1e-14);
  CHECK(mean_absorption(g, pi) == doctest::Approx(integral).epsilon(1e-6));
}

TEST_CASE("discounted survival") {
  const auto g = build_erlang(2, 3.0);
  const auto pi = bp({0.3, 0.3, 0.4});
  for (double t : {0.0, 0.5, 3.0}) CHECK(discounted_survival(g, pi, 0.0, t) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(discounted_survival(g, BeliefPoint::absorbed_vertex(2), 1.0, 2.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(discounted_survival(g, pi, 1.0, -0.1), DomainError);
}

TEST_CASE("discounted survival agrees with Monte Carlo") {
  const auto g = build_erlang(2, 3.0);
  const auto pi = bp({1, 0, 0});
  Rng rng(12345);
  std::vector<double> xs;
  xs.reserve(1000000);
  for (int i = 0; i < 1000000; ++i) {
    const double th = sample_absorption(g, pi, rng).theta;
    xs.push_back(std::exp(-std::max(0.0, 1.0 - th)));
  }
  const auto ms = oracle::mean_se(xs);
  CHECK(std::abs(discounted_survival(g, pi, 1.0, 1.0) - ms.mean) <= 3 * ms.se);
}

TEST_CASE("sampling matches the distribution") {
  const auto g = build_erlang(2, 3.0);
  Rng rng(7);
  std::vector<double> th;
  for (int i = 0; i < 100000; ++i) th.push_back(sample_absorption(g, bp({1, 0, 0}), rng).theta);
  const auto ms = oracle::mean_se(th);
  CHECK(std::abs(ms.mean - 2.0 / 3.0) <= 3 * ms.se);

  for (int i = 0; i < 100; ++i) {
    const auto s = sample_absorption(g, BeliefPoint::absorbed_vertex(2), rng);
    CHECK(s.theta == 0.0);
    CHECK(s.initial_state == 2u);
  }

  // hyperexponential: empirical CDF at 0.5 and KS over 10⁴ draws
  const std::vector<double> mu{3, 2}, p{0.4, 0.6};
  const auto h = build_hyperexponential(mu);
  std::vector<double> draws;
  for (int i = 0; i < 10000; ++i) draws.push_back(sample_absorption(h, bp({0.4, 0.6, 0}), rng).theta);
  const double F = oracle::hyperexp_cdf(p, mu, 0.5);
  double below = 0;
  for (double x : draws) below += x <= 0.5;
  const double phat = below / draws.size();
  CHECK(std::abs(phat - F) <= 3 * std::sqrt(F * (1 - F) / draws.size()));
  std::sort(draws.begin(), draws.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    const double f = oracle::hyperexp_cdf(p, mu, draws[i]);
    ks = std::max({ks, std::abs(f - double(i) / draws.size()), std::abs(f - double(i + 1) / draws.size())});
  }
  CHECK(ks <= oracle::ks_critical_99(draws.size()));
}

TEST_CASE("expm matches a series on a small matrix") {
  Eigen::MatrixXd a(2, 2);
  a << -1.0, 0.5, 0.2, -0.7;
  Eigen::MatrixXd series = Eigen::MatrixXd::Identity(2, 2), term = series;
  for (int k = 1; k < 40; ++k) {
    term = term * a / k;
    series += term;
  }
  CHECK((expm(a) - series).cwiseAbs().maxCoeff() < 1e-14);
}

}  // TEST_SUITE
