#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qdet/rng.hpp"

namespace qdet {

/// Tolerance on generator row sums R·1 + r.
inline constexpr double kGeneratorTol = 1e-10;
/// Tolerance on simplex membership of beliefs.
inline constexpr double kSimplexTol = 1e-9;
/// Rates closer than this are treated as equal.
inline constexpr double kRateTol = 1e-12;
/// Largest pre-clamp simplex violation a belief constructor will repair.
inline constexpr double kBeliefRepairLimit = 1e-6;

/// Sub-generator of a finite absorbing chain: R holds the transient-to-transient
/// rates and r the absorption rates into the single absorbing state.
struct PhaseTypeGenerator {
  Eigen::MatrixXd R;
  Eigen::VectorXd r;

  std::size_t size() const { return static_cast<std::size_t>(r.size()); }
};

struct GeneratorViolation {
  std::string invariant;
  int row = -1;  // 0-based; -1 when the violation is not tied to an entry
  int col = -1;
  double residual = 0.0;
};

struct ValidationReport {
  std::vector<GeneratorViolation> violations;

  bool ok() const { return violations.empty(); }
  bool has(const std::string& invariant) const;
  std::string describe() const;
};

/// Checks every generator invariant. Throws StructuralError when the shapes of
/// R and r are inconsistent; returns a report otherwise.
ValidationReport validate_generator(const PhaseTypeGenerator& gen);

/// Throws DomainError carrying the report text unless the generator is valid.
void require_valid(const PhaseTypeGenerator& gen);

/// A point of the probability simplex over {1..n, Δ}. The last coordinate is
/// the absorbed (post-disorder) mass.
class BeliefPoint {
 public:
  /// Clamps round-off negatives and renormalizes. Throws DomainError when an
  /// entry is below -kBeliefRepairLimit, the sum is off by more than
  /// kBeliefRepairLimit, or an entry is not finite.
  static BeliefPoint make(std::vector<double> coords);
  static BeliefPoint make(std::span<const double> coords);
  static BeliefPoint absorbed_vertex(std::size_t n);
  static BeliefPoint vertex(std::size_t n, std::size_t state);

  std::size_t transient_count() const { return coords_.size() - 1; }
  std::size_t dim() const { return coords_.size(); }
  double transient(std::size_t i) const { return coords_[i]; }
  double absorbed() const { return coords_.back(); }
  double operator[](std::size_t i) const { return coords_[i]; }
  std::span<const double> coords() const { return coords_; }
  Eigen::Map<const Eigen::RowVectorXd> transient_row() const {
    return {coords_.data(), static_cast<Eigen::Index>(coords_.size() - 1)};
  }
  Eigen::Map<const Eigen::RowVectorXd> row() const {
    return {coords_.data(), static_cast<Eigen::Index>(coords_.size())};
  }

  friend bool operator==(const BeliefPoint&, const BeliefPoint&) = default;

 private:
  explicit BeliefPoint(std::vector<double> c) : coords_(std::move(c)) {}
  std::vector<double> coords_;
};

/// Matrix exponential (scaling and squaring with a degree-13 Padé approximant).
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

struct Distribution {
  double cdf = 0.0;
  double density = 0.0;
  /// Empty once the remaining transient mass is at most kSimplexTol.
  std::optional<double> hazard;

  bool absorbed() const { return !hazard.has_value(); }
};

/// CDF, density and hazard of Θ under the initial law π at time t ≥ 0.
Distribution distribution(const PhaseTypeGenerator& gen, const BeliefPoint& pi,
                          double t);

/// E^π[Θ] = -π_T R⁻¹ 1.
double mean_absorption(const PhaseTypeGenerator& gen, const BeliefPoint& pi);

/// Vector of E_i[Θ] for each transient starting state.
Eigen::VectorXd mean_absorption_by_state(const PhaseTypeGenerator& gen);

/// E^π[exp(-rho (t-Θ)⁺)], through one exponential of the block matrix
/// [[R, r], [0, -rho]].
double discounted_survival(const PhaseTypeGenerator& gen, const BeliefPoint& pi,
                           double rho, double t);

struct AbsorptionSample {
  std::size_t initial_state = 0;  // == gen.size() for Δ
  double theta = 0.0;
};

/// Draws the initial state from π and runs the jump chain until absorption.
AbsorptionSample sample_absorption(const PhaseTypeGenerator& gen,
                                   const BeliefPoint& pi, Rng& rng);

/// Chain 1 → 2 → … → n → Δ, every holding rate lambda.
PhaseTypeGenerator build_erlang(int n, double lambda);

/// Parallel exponential phases: R = diag(-mu), r = mu.
PhaseTypeGenerator build_hyperexponential(std::span<const double> mu);

}  // namespace qdet
