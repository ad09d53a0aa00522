#include "qdet/risk.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "parallel.hpp"
#include "qdet/error.hpp"
#include "qdet/scenario.hpp"

namespace qdet {

namespace {

struct Moments {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double se() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) /
                                         static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};

void require_samples(std::size_t count) {
  if (count < 2) throw DomainError("at least two samples are needed for a standard error");
}

}  // namespace

RiskEstimate summarize(std::span<const DetectionOutcome> outcomes, double c,
                       std::uint64_t seed, double horizon) {
  Moments loss, fa, delay, cens, tau;
  for (const auto& o : outcomes) {
    const double f = o.false_alarm ? 1.0 : 0.0;
    loss.add(f + c * o.delay);
    fa.add(f);
    delay.add(o.delay);
    cens.add(o.censored ? 1.0 : 0.0);
    tau.add(o.tau);
  }
  RiskEstimate r;
  r.samples = outcomes.size();
  r.seed = seed;
  r.horizon = horizon;
  r.false_alarm_rate = fa.mean();
  r.mean_delay = delay.mean();
  r.risk = r.false_alarm_rate + c * r.mean_delay;
  r.standard_error = loss.se();
  r.censored_fraction = cens.mean();
  r.censored_bound = (1.0 + c * horizon) * r.censored_fraction;
  r.mean_alarm_time = tau.mean();
  r.alarm_time_se = tau.se();
  return r;
}

nlohmann::json to_json(const RiskEstimate& r) {
  return {{"risk", r.risk},
          {"standard_error", r.standard_error},
          {"false_alarm_rate", r.false_alarm_rate},
          {"mean_delay", r.mean_delay},
          {"censored_fraction", r.censored_fraction},
          {"censored_risk_bound", r.censored_bound},
          {"mean_alarm_time", r.mean_alarm_time},
          {"alarm_time_se", r.alarm_time_se},
          {"samples", r.samples},
          {"seed", r.seed},
          {"horizon", r.horizon}};
}

Evaluation evaluate_policy(const Policy& policy, std::size_t count, double horizon,
                           std::uint64_t seed, unsigned threads) {
  require_samples(count);
  if (!(horizon > 0.0) || std::isinf(horizon)) throw DomainError("horizon must be finite and positive");
  Evaluation ev;
  ev.outcomes.resize(count);
  detail::parallel_for(count, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Scenario s = sample_indexed(policy.model(), policy.initial(), horizon, seed, i);
      ev.outcomes[i] = run_policy(policy, s);
    }
  });
  ev.estimate = summarize(ev.outcomes, policy.model().c, seed, horizon);
  return ev;
}

void write_outcomes_csv(std::ostream& os, std::span<const DetectionOutcome> outcomes) {
  os << "tau,theta,fa,delay,censored\n";
  os.precision(17);
  for (const auto& o : outcomes) {
    os << o.tau << ',' << o.theta << ',' << (o.false_alarm ? 1 : 0) << ',' << o.delay
       << ',' << (o.censored ? 1 : 0) << '\n';
  }
}

double absorbed_integral(const ModelSpec& model, const BeliefPoint& pi,
                         std::span<const double> arrivals, double until) {
  const Propagator prop(model);
  const auto& H = prop.generator();
  const double h0 = 1.0 / (32.0 * model.rate_scale());
  const auto dim = static_cast<Eigen::Index>(pi.dim());
  Eigen::RowVectorXd x = pi.row(), mid(dim), next(dim), jumped(dim);
  double start = 0.0, total = 0.0;
  auto integrate = [&](double end) {
    const double len = end - start;
    if (len <= 0.0) return;
    const auto parts = static_cast<int>(std::max(1.0, std::ceil(len / h0)));
    const double sub = len / parts;
    const Eigen::MatrixXd E = expm(sub * H), Eh = expm(0.5 * sub * H);
    for (int k = 0; k < parts; ++k) {
      mid.noalias() = x * Eh;
      next.noalias() = x * E;
      const double a = x(dim - 1) / x.sum();
      const double m = mid(dim - 1) / mid.sum();
      const double b = next(dim - 1) / next.sum();
      total += sub / 6.0 * (a + 4.0 * m + b);
      x = next / next.sum();
    }
  };
  for (double a : arrivals) {
    if (a >= until) break;
    integrate(a);
    prop.jump_into(x, jumped);
    x = jumped;
    start = a;
  }
  integrate(until);
  return total;
}

DelayIdentity delay_identity_check(const Policy& policy, std::size_t count,
                                   double horizon, std::uint64_t seed, unsigned threads) {
  require_samples(count);
  std::vector<double> direct(count), integrated(count);
  detail::parallel_for(count, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Scenario s = sample_indexed(policy.model(), policy.initial(), horizon, seed, i);
      const DetectionOutcome o = run_policy(policy, s);
      direct[i] = o.delay;
      integrated[i] = absorbed_integral(policy.model(), policy.initial(),
                                        observed_arrivals(o, s), o.tau);
    }
  });
  Moments a, b, d;
  for (std::size_t i = 0; i < count; ++i) {
    a.add(direct[i]);
    b.add(integrated[i]);
    d.add(direct[i] - integrated[i]);
  }
  DelayIdentity r;
  r.samples = count;
  r.direct = a.mean();
  r.direct_se = a.se();
  r.integrated = b.mean();
  r.integrated_se = b.se();
  r.difference = r.direct - r.integrated;
  r.paired_se = d.se();
  r.combined_se = std::hypot(r.direct_se, r.integrated_se);
  r.pass = std::abs(r.difference) <= 3.0 * r.combined_se;
  return r;
}

nlohmann::json to_json(const DelayIdentity& d) {
  return {{"direct", d.direct},
          {"direct_se", d.direct_se},
          {"integrated", d.integrated},
          {"integrated_se", d.integrated_se},
          {"difference", d.difference},
          {"paired_se", d.paired_se},
          {"combined_se", d.combined_se},
          {"samples", d.samples},
          {"pass", d.pass}};
}

FilterPath filter_oracle(const ModelSpec& model, const BeliefPoint& pi,
                         std::span<const double> arrivals, double step, double until) {
  if (!(step > 0.0)) throw DomainError("filter step must be positive");
  validate_model(model);
  const std::size_t n = model.n();
  const auto dim = static_cast<Eigen::Index>(n + 1);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(dim, dim);
  A.topLeftCorner(dim - 1, dim - 1) = model.gen.R;
  A.topRightCorner(dim - 1, 1) = model.gen.r;
  Eigen::ArrayXd rate = Eigen::ArrayXd::Constant(dim, model.lambda0);
  rate(dim - 1) = model.lambda1;

  auto kernel = [&](double tau) {
    const Eigen::VectorXd d = (-0.5 * tau * rate).exp().matrix();
    return Eigen::MatrixXd(d.asDiagonal() * expm(tau * A) * d.asDiagonal());
  };
  const Eigen::MatrixXd full = kernel(step);

  FilterPath path;
  Eigen::RowVectorXd p = pi.row();
  auto record = [&](double t) {
    path.times.push_back(t);
    path.beliefs.push_back(BeliefPoint::make(std::span<const double>(p.data(), p.size())));
  };
  auto normalize = [&] {
    const double s = p.sum();
    if (!(s > 0.0)) throw NumericalError("filter oracle underflow");
    p /= s;
  };

  record(0.0);
  std::size_t next_arrival = 0;
  while (next_arrival < arrivals.size() && arrivals[next_arrival] <= 0.0) ++next_arrival;
  const auto steps = static_cast<std::size_t>(std::floor(until / step + 1e-9));
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t0 = static_cast<double>(k - 1) * step;
    const double t1 = static_cast<double>(k) * step;
    double at = t0;
    bool split = false;
    while (next_arrival < arrivals.size() && arrivals[next_arrival] <= t1) {
      const double a = arrivals[next_arrival++];
      if (a > at) p = p * kernel(a - at);
      p.array() *= rate.transpose();
      normalize();
      at = a;
      split = true;
    }
    if (!split) {
      p = p * full;
    } else if (t1 > at) {
      p = p * kernel(t1 - at);
    }
    normalize();
    record(t1);
  }
  return path;
}

}  // namespace qdet
