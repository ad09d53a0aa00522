#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "json.hpp"
#include "qdet/policy.hpp"

namespace qdet {

struct RiskEstimate {
  double risk = 0.0;  // false_alarm_rate + c·mean_delay
  double standard_error = 0.0;
  double false_alarm_rate = 0.0;
  double mean_delay = 0.0;
  double censored_fraction = 0.0;
  /// Largest risk the censored runs could hide: (1 + c·horizon)·fraction.
  double censored_bound = 0.0;
  double mean_alarm_time = 0.0;
  double alarm_time_se = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  double horizon = 0.0;
};

nlohmann::json to_json(const RiskEstimate& r);

/// Aggregates outcomes with delay cost c.
RiskEstimate summarize(std::span<const DetectionOutcome> outcomes, double c,
                       std::uint64_t seed, double horizon);

struct Evaluation {
  RiskEstimate estimate;
  std::vector<DetectionOutcome> outcomes;
};

/// Samples `count` scenarios from (policy.model, policy.initial) and runs the
/// policy on each. Scenario i uses substream (seed, i), so results do not
/// depend on the thread count.
Evaluation evaluate_policy(const Policy& policy, std::size_t count, double horizon,
                           std::uint64_t seed, unsigned threads = 0);

/// Per-scenario CSV: tau, theta, fa, delay, censored.
void write_outcomes_csv(std::ostream& os, std::span<const DetectionOutcome> outcomes);

/// ∫₀^until Π_t dt along the posterior path driven by `arrivals`.
double absorbed_integral(const ModelSpec& model, const BeliefPoint& pi,
                         std::span<const double> arrivals, double until);

struct DelayIdentity {
  double direct = 0.0;  // mean (τ - Θ)⁺
  double direct_se = 0.0;
  double integrated = 0.0;  // mean ∫₀^τ Π_t dt
  double integrated_se = 0.0;
  double difference = 0.0;
  /// SE of the per-scenario difference (both estimators share scenarios);
  /// tighter than the combined SE because the two are positively correlated.
  double paired_se = 0.0;
  /// sqrt(direct_se² + integrated_se²).
  double combined_se = 0.0;
  std::size_t samples = 0;
  bool pass = false;  // |difference| ≤ 3·combined_se
};

DelayIdentity delay_identity_check(const Policy& policy, std::size_t count,
                                   double horizon, std::uint64_t seed,
                                   unsigned threads = 0);

nlohmann::json to_json(const DelayIdentity& d);

struct FilterPath {
  std::vector<double> times;
  std::vector<BeliefPoint> beliefs;
};

/// Discrete-time Bayes filter on the (n+1)-state chain, sampled at multiples
/// of `step` up to `until`. Each step applies the no-arrival likelihood in two
/// halves around the exact transition exp(step·𝒜); arrivals inside a step
/// split it and multiply by the state's rate.
FilterPath filter_oracle(const ModelSpec& model, const BeliefPoint& pi,
                         std::span<const double> arrivals, double step, double until);

}  // namespace qdet
