#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "qdet/bellman.hpp"
#include "qdet/flow.hpp"
#include "qdet/scenario.hpp"

namespace qdet {

enum class RuleKind { hitting, sequential, immediate, fixed_time };

std::string to_string(RuleKind kind);
RuleKind rule_from_string(const std::string& s);

/// Immutable description of a detection rule, shared by every detector
/// instance that runs it.
class Policy {
 public:
  /// Alarm on first entry into {h ≤ V_M + ε/2}.
  static Policy hitting(std::shared_ptr<const ValueTable> table, double epsilon,
                        const BeliefPoint& pi0, SolverSettings settings = {});
  /// Threshold rule S_M^{ε/2}; the table must carry its iterate stack.
  static Policy sequential(std::shared_ptr<const ValueTable> table, double epsilon,
                           const BeliefPoint& pi0, SolverSettings settings = {});
  static Policy immediate(const ModelSpec& model, const BeliefPoint& pi0);
  static Policy fixed_time(const ModelSpec& model, const BeliefPoint& pi0, double at);

  RuleKind kind() const { return kind_; }
  const ModelSpec& model() const { return model_; }
  const BeliefPoint& initial() const { return pi0_; }
  double epsilon() const { return epsilon_; }
  double fixed_alarm() const { return fixed_alarm_; }
  const ValueTable* table() const { return table_.get(); }
  const BellmanOperator* bellman() const { return op_.get(); }
  const Propagator& propagator() const { return *prop_; }

  /// Crossing scan step min(0.01/max(λ₀,λ₁), t_limit/1000).
  double scan_step() const { return scan_step_; }
  const Eigen::MatrixXd& scan_transition() const { return scan_E_; }
  const Eigen::MatrixXd& half_scan_transition() const { return half_scan_E_; }

  /// h(y) - V_M(y) - ε/2; the rule alarms where this is ≤ 0.
  double gap(std::span<const double> y) const;

 private:
  Policy(RuleKind kind, const ModelSpec& model, const BeliefPoint& pi0);

  RuleKind kind_;
  ModelSpec model_;
  BeliefPoint pi0_;
  double epsilon_ = 0.0;
  double fixed_alarm_ = 0.0;
  std::shared_ptr<const ValueTable> table_;
  std::shared_ptr<const Propagator> prop_;
  std::shared_ptr<const BellmanOperator> op_;
  double scan_step_ = 0.0;
  Eigen::MatrixXd scan_E_, half_scan_E_;
};

struct DetectorState {
  explicit DetectorState(BeliefPoint b) : belief(std::move(b)) {}

  BeliefPoint belief;         // posterior at `now`
  double now = 0.0;
  double segment_start = 0.0; // last arrival (or 0)
  std::optional<double> pending;  // sequential: absolute threshold time
  double level = 0.0;         // sequential: slack level of the current segment
  std::size_t depth = 0;      // sequential: remaining depth
  bool alarmed = false;
  double alarm_time = 0.0;
};

/// Online detector. Feed events in time order; once alarmed the state is
/// frozen.
class Detector {
 public:
  explicit Detector(const Policy& policy);

  /// Advance with no arrival through time s (inclusive).
  void quiescent_until(double s);
  /// An arrival at time s. Ignored once alarmed.
  void arrival(double s);

  bool alarmed() const { return state_.alarmed; }
  double alarm_time() const { return state_.alarm_time; }
  const DetectorState& state() const { return state_; }

 private:
  void check_order(double s, bool strict) const;
  void advance(double s);
  void advance_hitting(double s);
  void advance_sequential(double s);
  void start_segment();
  void raise(double t, const BeliefPoint& at);

  const Policy* policy_;
  DetectorState state_;
};

struct DetectionOutcome {
  double tau = 0.0;
  double theta = 0.0;
  bool false_alarm = false;
  double delay = 0.0;
  bool censored = false;
};

/// Runs a fresh detector on the scenario; no alarm by the horizon gives
/// τ = horizon with the censored flag set.
DetectionOutcome run_policy(const Policy& policy, const Scenario& scenario);

/// Arrivals the detector saw before its alarm (all of them if censored).
std::vector<double> observed_arrivals(const DetectionOutcome& outcome,
                                      const Scenario& scenario);

}  // namespace qdet
