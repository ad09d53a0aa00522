#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qdet/flow.hpp"
#include "qdet/simplex_grid.hpp"

namespace qdet {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Truncation level that defines the quadrature/probe ceiling T_max.
inline constexpr double kDeltaFloor = 1e-9;

struct Costs {
  double running;   // k = c·π
  double terminal;  // h = 1 - π
};

Costs costs(const ModelSpec& model, const BeliefPoint& pi);

/// t(δ) = -(1/λ₀)·log(δ / (4 + 2c/λ₀)): beyond it J w(·, π) moves by at most δ
/// for every w ≤ 1.
double truncation_time(const ModelSpec& model, double delta);

/// Ceiling for "t = ∞" in J evaluations, t(kDeltaFloor).
double max_time(const ModelSpec& model);

/// (max(λ₀,λ₁) + B)/(c + max(λ₀,λ₁) + B) with B = max_i q_iΔ. Beliefs whose
/// absorbed mass reaches this level are in every stopping region.
double guaranteed_stop_level(const ModelSpec& model);

/// Uniform bound on the time the no-arrival flow needs to reach the
/// guaranteed stopping level, from the comparison equation
/// x' = (B̃ - (λ₁-λ₀)x)(1 - x), x(0) = 0, B̃ = min_i q_iΔ.
/// Empty when no finite bound follows (B̃ = 0 or B̃ - λ₁ + λ₀ < 0).
std::optional<double> horizon_tstar(const ModelSpec& model);

struct SolverSettings {
  /// Quadrature / probe step; 0 selects 1/(64·rate_scale).
  double time_step = 0.0;
  /// J values within this of h(π) count as ties with stopping at once.
  double tie_tolerance = 1e-12;
  /// Sub-grid levels (each 16x finer) used to refine a minimizer.
  int refine_levels = 3;
};

struct Minimum {
  double value = 0.0;
  double argmin = 0.0;
};

/// The one-arrival operator t ↦ J w(t, π) and its minimized forms.
///
/// J is tabulated on the uniform grid t_k = kΔ. The running-cost and
/// survival terms are closed forms in the unnormalized filter state; the
/// jump term ∫ P{σ₁ ∈ ds}·w(jump(x(s, π))) uses Simpson's rule on each
/// step. Horizons are rounded up to a whole number of steps, which is
/// harmless: every horizon used here is already an upper bound on where the
/// minimum can sit.
class BellmanOperator {
 public:
  explicit BellmanOperator(const ModelSpec& model, SolverSettings settings = {});

  const ModelSpec& model() const { return prop_.model(); }
  const Propagator& propagator() const { return prop_; }
  double time_step() const { return dt_; }

  /// Number of grid steps covering [0, horizon].
  std::size_t steps_for(double horizon) const;

  /// J w(t, π); t = kInfinity means max_time(model).
  double evaluate(const ValueFunction& w, std::span<const double> pi, double t) const;

  /// min over [0, horizon] of J w(·, π), smallest minimizer.
  Minimum minimize(const ValueFunction& w, std::span<const double> pi,
                   double horizon) const;

  /// Smallest s ∈ [0, horizon] with J w(s, π) ≤ min_J + slack (refined by
  /// bisection); kInfinity if no grid time qualifies.
  double threshold_time(const ValueFunction& w, std::span<const double> pi,
                        double horizon, double slack) const;

  /// First grid time at which the no-arrival flow from π reaches the
  /// guaranteed stopping level, searched up to `horizon`; kInfinity if not
  /// reached.
  double guaranteed_hit(std::span<const double> pi, double horizon) const;

  /// Values of J on the grid t_k = kΔ, k = 0..steps_for(horizon).
  std::vector<double> curve(const ValueFunction& w, std::span<const double> pi,
                            double horizon) const;

 private:
  struct Scan;
  Scan scan(const ValueFunction& w, std::span<const double> pi, std::size_t steps) const;
  double integrand(const ValueFunction& w, const Eigen::RowVectorXd& u,
                   Eigen::RowVectorXd& scratch) const;
  double closed_terms(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& u0) const;
  Minimum refine(const ValueFunction& w, const Scan& s, std::size_t k) const;
  double value_between(const ValueFunction& w, const Scan& s, double t) const;

  Propagator prop_;
  SolverSettings settings_;
  double dt_;
  double stop_level_;
  Eigen::MatrixXd step_, half_step_;
  std::vector<Eigen::MatrixXd> sub_step_, sub_half_step_;
};

enum class HorizonMode { bounded, truncated };

std::string to_string(HorizonMode mode);
HorizonMode horizon_mode_from_string(const std::string& s);

struct IterationPlan {
  HorizonMode mode = HorizonMode::truncated;
  std::size_t iterations = 1;
  double delta = 0.0;  // 0 in bounded mode
  double t_limit = 0.0;
};

/// Iteration count and horizon that make the final iterate ε-accurate at π.
IterationPlan iteration_plan(const ModelSpec& model, const BeliefPoint& pi,
                             double epsilon);

/// Plan that truncates the horizon at t(δ) and runs `iterations` steps.
IterationPlan truncated_plan(const ModelSpec& model, double delta,
                             std::size_t iterations);

/// Plan on the uniform bound t*; throws DomainError if t* is not finite.
IterationPlan bounded_plan(const ModelSpec& model, std::size_t iterations);

/// sqrt((1/c + E^π[Θ])·max(λ₀,λ₁)/(m-1)); V_m - bound ≤ V ≤ V_m.
double error_bound(const ModelSpec& model, const BeliefPoint& pi, std::size_t m);

/// Same bound, uniform over D (worst starting state).
double uniform_error_bound(const ModelSpec& model, std::size_t m);

struct ValueTable {
  ModelSpec model;
  std::shared_ptr<const SimplexGrid> grid;
  std::vector<double> values;
  std::size_t m = 0;
  HorizonMode mode = HorizonMode::truncated;
  double t_limit = 0.0;
  double delta = 0.0;
  double time_step = 0.0;
  /// Uniform ‖V_table - V‖ bound from the iteration count reached (ignores
  /// grid and quadrature error); +inf when m < 2.
  double certified_bound = kInfinity;
  /// sup-node |v_m - v_{m-1}| at the last iteration.
  double empirical_delta = kInfinity;
  std::vector<double> history;
  /// v_0..v_m, present only when requested.
  std::vector<std::vector<double>> iterates;

  GridFunction function() const { return GridFunction(*grid, values); }
  GridFunction iterate(std::size_t k) const { return GridFunction(*grid, iterates.at(k)); }
  double operator()(std::span<const double> y) const {
    return grid->interpolate(values, y);
  }
  /// Per-belief search horizon used by the iteration.
  double horizon_at(const BellmanOperator& op, std::span<const double> pi) const;
};

struct IterateOptions {
  /// Stop once sup-node |v_{m+1} - v_m| falls to this level.
  std::optional<double> empirical_stop;
  bool keep_iterates = false;
  SolverSettings settings;
  /// Worker threads; 0 uses the hardware concurrency.
  unsigned threads = 0;
};

/// v_0 = h, v_{m+1} = min over [0, t_limit(node)] of J v_m, clipped to
/// [0, v_m], until plan.iterations or the empirical stop.
ValueTable value_iterate(const ModelSpec& model,
                         std::shared_ptr<const SimplexGrid> grid,
                         const IterationPlan& plan, const IterateOptions& options = {});

struct StoppingRegion {
  std::vector<bool> member;  // per node
  /// n = 2 only: segments of the level set h - V = ε/2, each as two points
  /// in coordinates (π_1, π_2, π).
  std::vector<std::array<std::array<double, 3>, 2>> boundary;
  /// Midpoint-closure of the member set over node pairs with a node midpoint.
  bool convex = true;
  std::size_t count() const;
};

StoppingRegion stopping_region(const ValueTable& table, double epsilon);

/// Scalar check of midpoint concavity: the worst violation
/// (v(a)+v(b))/2 - v(mid) over node pairs whose midpoint is a node.
double midpoint_concavity_defect(const SimplexGrid& grid, std::span<const double> values);

/// r_m^ε(π) = inf{s: J v_m(s, π) ≤ J₀ v_m(π) + ε} using the stored iterate
/// v_m. When s = 0⁺ already qualifies the first probe time is returned.
double r_epsilon(const ValueTable& table, const BellmanOperator& op, std::size_t m,
                 double epsilon, std::span<const double> pi);

}  // namespace qdet
