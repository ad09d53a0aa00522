#include "qdet/flow.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "qdet/error.hpp"

namespace qdet {

double ModelSpec::rate_scale() const {
  double s = std::max(lambda0, lambda1);
  for (Eigen::Index i = 0; i < gen.R.rows(); ++i) s = std::max(s, -gen.R(i, i));
  return s;
}

void validate_model(const ModelSpec& model) {
  if (!(model.lambda0 > 0.0)) throw DomainError("lambda0 must be positive");
  if (!(model.lambda1 > 0.0)) throw DomainError("lambda1 must be positive");
  if (!(model.c > 0.0)) throw DomainError("delay cost c must be positive");
  require_valid(model.gen);
}

Propagator::Propagator(const ModelSpec& model) : model_(model) {
  const auto n = static_cast<Eigen::Index>(model.n());
  H_ = Eigen::MatrixXd::Zero(n + 1, n + 1);
  H_.topLeftCorner(n, n) =
      model.gen.R - model.lambda0 * Eigen::MatrixXd::Identity(n, n);
  H_.topRightCorner(n, 1) = model.gen.r;
  H_(n, n) = -model.lambda1;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n + 1);
  e(n) = 1.0;
  cost_vec_ = H_.partialPivLu().solve(e);
}

double Propagator::first_arrival_density(const Eigen::RowVectorXd& u) const {
  const auto n = u.size() - 1;
  return model_.lambda0 * u.head(n).sum() + model_.lambda1 * u(n);
}

void Propagator::jump_into(const Eigen::RowVectorXd& u,
                           Eigen::RowVectorXd& out) const {
  const auto n = u.size() - 1;
  out.resize(u.size());
  const double dens = first_arrival_density(u);
  out.head(n) = (model_.lambda0 / dens) * u.head(n);
  out(n) = model_.lambda1 * u(n) / dens;
}

namespace {

// Longest stretch propagated in one matrix exponential before renormalizing;
// keeps exp(tH) far from underflow.
double chunk_length(const ModelSpec& model) { return 20.0 / model.rate_scale(); }

BeliefPoint normalized(const Eigen::RowVectorXd& u) {
  const double total = u.sum();
  if (!(total > 1e-300) || !std::isfinite(total))
    throw NumericalError("belief degenerate: flow denominator vanished");
  std::vector<double> c(static_cast<std::size_t>(u.size()));
  for (Eigen::Index i = 0; i < u.size(); ++i) c[i] = std::max(0.0, u(i) / total);
  return BeliefPoint::make(std::move(c));
}

}  // namespace

BeliefPoint flow(const ModelSpec& model, const BeliefPoint& pi, double t) {
  if (!(t >= 0.0)) throw DomainError("flow: t must be >= 0");
  if (pi.transient_count() != model.n())
    throw StructuralError("flow: belief dimension does not match the model");
  if (t == 0.0) return pi;
  const Propagator prop(model);
  const double chunk = chunk_length(model);
  Eigen::RowVectorXd u = pi.row();
  double remaining = t;
  while (remaining > 0.0) {
    const double dt = std::min(remaining, chunk);
    u = u * prop.transition(dt);
    u /= u.sum();
    if (!u.allFinite()) throw NumericalError("belief degenerate: non-finite flow");
    remaining -= dt;
  }
  return normalized(u);
}

BeliefPoint jump(const ModelSpec& model, const BeliefPoint& pi) {
  if (pi.transient_count() != model.n())
    throw StructuralError("jump: belief dimension does not match the model");
  const double a = pi.absorbed();
  const double denom = model.lambda0 * (1.0 - a) + model.lambda1 * a;
  std::vector<double> c(pi.dim());
  for (std::size_t i = 0; i < model.n(); ++i) c[i] = model.lambda0 * pi[i] / denom;
  c.back() = model.lambda1 * a / denom;
  return BeliefPoint::make(std::move(c));
}

FirstArrivalLaw sigma1_law(const ModelSpec& model, const BeliefPoint& pi,
                           double t) {
  if (!(t >= 0.0)) throw DomainError("sigma1_law: t must be >= 0");
  if (pi.transient_count() != model.n())
    throw StructuralError("sigma1_law: belief dimension does not match the model");
  const Propagator prop(model);
  const Eigen::RowVectorXd u = pi.row() * prop.transition(t);
  return {std::max(0.0, u.sum()), std::max(0.0, prop.first_arrival_density(u))};
}

Trajectory::Trajectory(const ModelSpec& model, const BeliefPoint& pi,
                       std::vector<double> arrivals)
    : model_(model), arrivals_(std::move(arrivals)) {
  for (std::size_t k = 0; k < arrivals_.size(); ++k) {
    if (!(arrivals_[k] >= 0.0) || (k > 0 && !(arrivals_[k] > arrivals_[k - 1])))
      throw DomainError("trajectory: arrivals must be non-negative and strictly increasing");
  }
  segments_.push_back({0.0, pi});
  for (double s : arrivals_) {
    const auto& last = segments_.back();
    segments_.push_back({s, jump(model_, flow(model_, last.belief, s - last.start))});
  }
}

std::size_t Trajectory::segment_index(double t, bool left_limit) const {
  // Segment k covers [σ_k, σ_{k+1}); a left limit at σ_k belongs to k-1.
  const auto it = left_limit
                      ? std::lower_bound(arrivals_.begin(), arrivals_.end(), t)
                      : std::upper_bound(arrivals_.begin(), arrivals_.end(), t);
  return static_cast<std::size_t>(it - arrivals_.begin());
}

BeliefPoint Trajectory::at(double t, bool left_limit) const {
  if (!(t >= 0.0)) throw DomainError("trajectory: query time must be >= 0");
  const auto& seg = segments_[segment_index(t, left_limit)];
  return flow(model_, seg.belief, t - seg.start);
}

void Trajectory::write_csv(std::ostream& os, std::span<const double> queries) const {
  os << "t";
  for (std::size_t i = 1; i <= model_.n(); ++i) os << ",pi_" << i;
  os << ",pi,is_arrival\n";
  auto row = [&](double t, const BeliefPoint& b, bool arrival) {
    os << t;
    for (double x : b.coords()) os << ',' << x;
    os << ',' << (arrival ? 1 : 0) << '\n';
  };
  os.precision(17);
  std::size_t next_arrival = 0;
  for (double q : queries) {
    while (next_arrival < arrivals_.size() && arrivals_[next_arrival] <= q) {
      row(arrivals_[next_arrival], segments_[next_arrival + 1].belief, true);
      ++next_arrival;
    }
    row(q, at(q), false);
  }
}

std::vector<BeliefPoint> trajectory(const ModelSpec& model, const BeliefPoint& pi,
                                    std::span<const double> arrivals,
                                    std::span<const double> queries,
                                    bool left_limit) {
  for (std::size_t k = 1; k < queries.size(); ++k)
    if (queries[k] < queries[k - 1])
      throw DomainError("trajectory: queries must be sorted");
  const Trajectory path(model, pi, {arrivals.begin(), arrivals.end()});
  std::vector<BeliefPoint> out;
  out.reserve(queries.size());
  for (double q : queries) out.push_back(path.at(q, left_limit));
  return out;
}

}  // namespace qdet
