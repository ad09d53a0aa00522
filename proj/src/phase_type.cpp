#include "qdet/phase_type.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qdet/error.hpp"

namespace qdet {

bool ValidationReport::has(const std::string& invariant) const {
  for (const auto& v : violations)
    if (v.invariant == invariant) return true;
  return false;
}

std::string ValidationReport::describe() const {
  if (ok()) return "ok";
  std::ostringstream os;
  for (std::size_t k = 0; k < violations.size(); ++k) {
    const auto& v = violations[k];
    if (k) os << "; ";
    os << v.invariant;
    if (v.row >= 0) {
      os << " at row " << v.row + 1;
      if (v.col >= 0) os << ", col " << v.col + 1;
    }
    if (v.residual != 0.0) os << " (residual " << v.residual << ")";
  }
  return os.str();
}

ValidationReport validate_generator(const PhaseTypeGenerator& gen) {
  const auto n = gen.r.size();
  if (n == 0) throw StructuralError("generator has no transient states");
  if (gen.R.rows() != n || gen.R.cols() != n) {
    std::ostringstream os;
    os << "R is " << gen.R.rows() << "x" << gen.R.cols() << " but r has length "
       << n;
    throw StructuralError(os.str());
  }

  ValidationReport report;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double q = gen.R(i, j);
      if (!std::isfinite(q)) {
        report.violations.push_back({"R entry not finite", int(i), int(j), q});
      } else if (i == j && !(q < 0.0)) {
        report.violations.push_back({"R diagonal not negative", int(i), int(j), q});
      } else if (i != j && q < 0.0) {
        report.violations.push_back({"R off-diagonal negative", int(i), int(j), q});
      }
    }
    if (!std::isfinite(gen.r(i)) || gen.r(i) < 0.0)
      report.violations.push_back({"r negative", int(i), -1, gen.r(i)});
    const double residual = gen.R.row(i).sum() + gen.r(i);
    if (std::abs(residual) > kGeneratorTol)
      report.violations.push_back({"R·1 + r ≠ 0", int(i), -1, residual});
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(gen.R);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) report.violations.push_back({"R singular", -1, -1, 0.0});
  return report;
}

void require_valid(const PhaseTypeGenerator& gen) {
  const auto report = validate_generator(gen);
  if (!report.ok()) throw DomainError("invalid generator: " + report.describe());
}

BeliefPoint BeliefPoint::make(std::span<const double> coords) {
  return make(std::vector<double>(coords.begin(), coords.end()));
}

BeliefPoint BeliefPoint::make(std::vector<double> coords) {
  if (coords.size() < 2)
    throw DomainError("belief needs at least one transient and the absorbed coordinate");
  double sum = 0.0;
  for (double x : coords) {
    if (!std::isfinite(x)) throw DomainError("belief coordinate is not finite");
    if (x < -kBeliefRepairLimit)
      throw DomainError("belief coordinate " + std::to_string(x) + " is negative");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kBeliefRepairLimit)
    throw DomainError("belief coordinates sum to " + std::to_string(sum));
  double clamped = 0.0;
  for (double& x : coords) {
    if (x < 0.0) x = 0.0;
    clamped += x;
  }
  for (double& x : coords) x /= clamped;
  return BeliefPoint(std::move(coords));
}

BeliefPoint BeliefPoint::absorbed_vertex(std::size_t n) { return vertex(n, n); }

BeliefPoint BeliefPoint::vertex(std::size_t n, std::size_t state) {
  if (state > n) throw DomainError("vertex index out of range");
  std::vector<double> c(n + 1, 0.0);
  c[state] = 1.0;
  return BeliefPoint(std::move(c));
}

Eigen::MatrixXd expm(const Eigen::MatrixXd& a) { return a.exp(); }

namespace {

void check_dims(const PhaseTypeGenerator& gen, const BeliefPoint& pi) {
  if (pi.transient_count() != gen.size())
    throw StructuralError("belief dimension does not match the generator");
}

}  // namespace

Distribution distribution(const PhaseTypeGenerator& gen, const BeliefPoint& pi,
                          double t) {
  if (!(t >= 0.0)) throw DomainError("distribution: t must be >= 0");
  check_dims(gen, pi);
  const Eigen::RowVectorXd q = pi.transient_row() * expm(t * gen.R);
  Distribution d;
  const double survival = std::max(0.0, q.sum());
  d.cdf = std::clamp(1.0 - survival, 0.0, 1.0);
  d.density = std::max(0.0, q.dot(gen.r));
  if (survival > kSimplexTol) d.hazard = d.density / survival;
  return d;
}

Eigen::VectorXd mean_absorption_by_state(const PhaseTypeGenerator& gen) {
  Eigen::FullPivLU<Eigen::MatrixXd> lu(gen.R);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw DomainError("mean_absorption: R is singular");
  return -lu.solve(Eigen::VectorXd::Ones(gen.R.rows()));
}

double mean_absorption(const PhaseTypeGenerator& gen, const BeliefPoint& pi) {
  check_dims(gen, pi);
  return pi.transient_row().dot(mean_absorption_by_state(gen));
}

double discounted_survival(const PhaseTypeGenerator& gen, const BeliefPoint& pi,
                           double rho, double t) {
  if (!(t >= 0.0)) throw DomainError("discounted_survival: t must be >= 0");
  check_dims(gen, pi);
  const auto n = static_cast<Eigen::Index>(gen.size());
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(n + 1, n + 1);
  block.topLeftCorner(n, n) = gen.R;
  block.topRightCorner(n, 1) = gen.r;
  block(n, n) = -rho;
  return (pi.row() * expm(t * block)).sum();
}

AbsorptionSample sample_absorption(const PhaseTypeGenerator& gen,
                                   const BeliefPoint& pi, Rng& rng) {
  check_dims(gen, pi);
  const std::size_t n = gen.size();
  AbsorptionSample out;

  double u = rng.uniform();
  std::size_t state = n;
  for (std::size_t i = 0; i <= n; ++i) {
    if (pi[i] <= 0.0) continue;
    state = i;
    if (u < pi[i]) break;
    u -= pi[i];
  }
  out.initial_state = state;

  double t = 0.0;
  while (state < n) {
    const double out_rate = -gen.R(Eigen::Index(state), Eigen::Index(state));
    t += rng.exponential(out_rate);
    double v = rng.uniform() * out_rate;
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == state) continue;
      const double q = gen.R(Eigen::Index(state), Eigen::Index(j));
      if (q <= 0.0) continue;
      if (v < q) {
        next = j;
        break;
      }
      v -= q;
    }
    state = next;
  }
  out.theta = t;
  return out;
}

PhaseTypeGenerator build_erlang(int n, double lambda) {
  if (n < 1) throw DomainError("build_erlang: n must be >= 1");
  if (!(lambda > 0.0)) throw DomainError("build_erlang: rate must be positive");
  PhaseTypeGenerator gen;
  gen.R = Eigen::MatrixXd::Zero(n, n);
  gen.r = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    gen.R(i, i) = -lambda;
    if (i + 1 < n) gen.R(i, i + 1) = lambda;
  }
  gen.r(n - 1) = lambda;
  return gen;
}

PhaseTypeGenerator build_hyperexponential(std::span<const double> mu) {
  if (mu.empty()) throw DomainError("build_hyperexponential: no rates");
  const auto n = static_cast<Eigen::Index>(mu.size());
  PhaseTypeGenerator gen;
  gen.R = Eigen::MatrixXd::Zero(n, n);
  gen.r = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(mu[i] > 0.0))
      throw DomainError("build_hyperexponential: rates must be positive");
    gen.R(i, i) = -mu[i];
    gen.r(i) = mu[i];
  }
  return gen;
}

}  // namespace qdet
