#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <span>
#include <vector>

#include "qdet/phase_type.hpp"

namespace qdet {

/// Problem data: disorder prior, pre/post-disorder arrival rates and the
/// per-unit-time delay cost.
struct ModelSpec {
  PhaseTypeGenerator gen;
  double lambda0 = 1.0;
  double lambda1 = 1.0;
  double c = 1.0;

  std::size_t n() const { return gen.size(); }
  double rho() const { return lambda1 - lambda0; }
  double max_lambda() const { return std::max(lambda0, lambda1); }
  /// Largest rate in the problem; sets the natural time scale.
  double rate_scale() const;
};

/// Throws DomainError unless rates and cost are positive and the generator
/// is valid.
void validate_model(const ModelSpec& model);

/// Unnormalized filter for the stretch between arrivals.
///
/// With H = [[R - λ₀I, r], [0, -λ₁]] and u(0) = π, the row vector
/// u(t) = π·exp(tH) has entries P{M_t = i, σ₁ > t}; hence
///   x(t, π) = u(t) / Σu(t),  P{σ₁ > t} = Σu(t),
///   P{σ₁ ∈ dt}/dt = λ₀·Σu_T(t) + λ₁·u_Δ(t),
///   c∫₀ᵗ u_Δ(s) ds = c·(u(t) - u(0))·H⁻¹e_Δ.
class Propagator {
 public:
  explicit Propagator(const ModelSpec& model);

  const ModelSpec& model() const { return model_; }
  const Eigen::MatrixXd& generator() const { return H_; }
  Eigen::MatrixXd transition(double t) const { return expm(t * H_); }

  /// H⁻¹e_Δ, the vector that turns u(t) - u(0) into ∫₀ᵗ u_Δ.
  const Eigen::VectorXd& cost_vector() const { return cost_vec_; }

  double first_arrival_density(const Eigen::RowVectorXd& u) const;

  /// Post-arrival belief of the unnormalized state u, written into `out`.
  void jump_into(const Eigen::RowVectorXd& u, Eigen::RowVectorXd& out) const;

 private:
  ModelSpec model_;
  Eigen::MatrixXd H_;
  Eigen::VectorXd cost_vec_;
};

/// Deterministic path x(t, π) between arrivals.
BeliefPoint flow(const ModelSpec& model, const BeliefPoint& pi, double t);

/// Bayes update at an arrival.
BeliefPoint jump(const ModelSpec& model, const BeliefPoint& pi);

struct FirstArrivalLaw {
  double survival = 1.0;  // P{σ₁ > t}
  double density = 0.0;   // P{σ₁ ∈ dt}/dt
};

FirstArrivalLaw sigma1_law(const ModelSpec& model, const BeliefPoint& pi,
                           double t);

/// Posterior path driven by an arrival sequence. Right-continuous: the value
/// at an arrival instant is the post-jump belief.
class Trajectory {
 public:
  struct Segment {
    double start;
    BeliefPoint belief;
  };

  Trajectory(const ModelSpec& model, const BeliefPoint& pi,
             std::vector<double> arrivals);

  BeliefPoint at(double t, bool left_limit = false) const;
  const std::vector<Segment>& segments() const { return segments_; }
  const std::vector<double>& arrivals() const { return arrivals_; }

  /// CSV with columns t, pi_1..pi_n, pi, is_arrival. Each arrival in the
  /// query range adds a row holding the post-jump value.
  void write_csv(std::ostream& os, std::span<const double> queries) const;

 private:
  std::size_t segment_index(double t, bool left_limit) const;

  ModelSpec model_;
  std::vector<double> arrivals_;
  std::vector<Segment> segments_;
};

/// Evaluates the posterior at each (sorted) query time.
std::vector<BeliefPoint> trajectory(const ModelSpec& model, const BeliefPoint& pi,
                                    std::span<const double> arrivals,
                                    std::span<const double> queries,
                                    bool left_limit = false);

}  // namespace qdet
