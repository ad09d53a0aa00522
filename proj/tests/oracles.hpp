#pragma once

// Independent reference computations for the test suite. None of these use
// the library's matrix-exponential closed forms: distributions come from
// textbook formulas and paths from direct ODE integration.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "qdet/flow.hpp"

namespace oracle {

using State = std::vector<double>;

inline double erlang_cdf(int k, double rate, double t) {
  double term = 1.0, sum = 1.0;
  for (int j = 1; j < k; ++j) {
    term *= rate * t / j;
    sum += term;
  }
  return 1.0 - std::exp(-rate * t) * sum;
}

inline double hyperexp_cdf(std::span<const double> p, std::span<const double> mu, double t) {
  double surv = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) surv += p[i] * std::exp(-mu[i] * t);
  return 1.0 - surv;
}

// Full generator of the (n+1)-state chain, row-major.
inline std::vector<double> full_generator(const qdet::ModelSpec& m) {
  const std::size_t n = m.n(), d = n + 1;
  std::vector<double> a(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) a[i * d + k] = m.gen.R(i, k);
    a[i * d + n] = m.gen.r(i);
  }
  return a;
}

inline std::vector<double> rates(const qdet::ModelSpec& m) {
  std::vector<double> l(m.n() + 1, m.lambda0);
  l.back() = m.lambda1;
  return l;
}

// Posterior between arrivals as the nonlinear filter ODE
//   x' = x𝒜 - x∘λ + x·(x·λ),
// integrated with a tight adaptive Runge-Kutta scheme.
inline State posterior_ode(const qdet::ModelSpec& m, std::span<const double> pi, double t) {
  namespace ode = boost::numeric::odeint;
  const auto a = full_generator(m);
  const auto lam = rates(m);
  const std::size_t d = lam.size();
  State x(pi.begin(), pi.end());
  // λ̄ is taken relative to the running sum, which makes Σx a conserved
  // quantity instead of an unstable one.
  auto rhs = [&](const State& y, State& dy, double) {
    double mean = 0.0, total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      mean += y[i] * lam[i];
      total += y[i];
    }
    mean /= total;
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += y[i] * a[i * d + k];
      dy[k] = s - y[k] * (lam[k] - mean);
    }
  };
  if (t > 0.0) {
    ode::integrate_adaptive(ode::make_controlled<ode::runge_kutta_dopri5<State>>(1e-13, 1e-13),
                            rhs, x, 0.0, t, 1e-4);
  }
  return x;
}

// Erlang-2 (rate λ) flow by hand integration of the unnormalized filter:
// with a = λ + λ₀, b = λ₁, g = b - a ≠ 0,
//   u₁ = π₁e^{-at},  u₂ = (π₂ + λπ₁t)e^{-at},
//   u_Δ = e^{-bt}[π_Δ + λπ₂(e^{gt}-1)/g + λ²π₁(t e^{gt}/g - (e^{gt}-1)/g²)].
// Scaled by e^{at} to stay finite at large t.
inline State erlang2_flow(double lam, double l0, double l1, std::span<const double> pi, double t) {
  const double a = lam + l0, g = l1 - a;
  const double egt = std::exp(g * t), emg = std::exp(-g * t);
  const double u1 = pi[0], u2 = pi[1] + lam * pi[0] * t;
  const double ud = emg * pi[2] + lam * pi[1] * (1.0 - emg) / g +
                    lam * lam * pi[0] * (t / g - (1.0 - emg) / (g * g));
  (void)egt;
  const double s = u1 + u2 + ud;
  return {u1 / s, u2 / s, ud / s};
}

inline State jump(const qdet::ModelSpec& m, const State& x) {
  const auto lam = rates(m);
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x[i] * lam[i];
  State y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * lam[i] / mean;
  return y;
}

// J w(t, π) from its probabilistic definition, with the filter, the
// survival S = P{σ₁ > s} and the running integral carried as one ODE:
//   S' = -λ̄(x) S,  I' = S·(c x_Δ + λ̄(x)·w(jump(x))),  J = I + h(x(t))·S(t).
inline double j_value(const qdet::ModelSpec& m,
                      const std::function<double(std::span<const double>)>& w,
                      std::span<const double> pi, double t, double tol = 1e-11) {
  namespace ode = boost::numeric::odeint;
  const auto a = full_generator(m);
  const auto lam = rates(m);
  const std::size_t d = lam.size();
  State z(pi.begin(), pi.end());
  z.push_back(1.0);  // S
  z.push_back(0.0);  // I
  auto rhs = [&](const State& y, State& dy, double) {
    double mean = 0.0, total = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      mean += y[i] * lam[i];
      total += y[i];
    }
    mean /= total;
    State j(d);
    for (std::size_t k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += y[i] * a[i * d + k];
      dy[k] = s - y[k] * (lam[k] - mean);
      j[k] = y[k] * lam[k] / (mean * total);
    }
    const double S = y[d];
    dy[d] = -mean * S;
    dy[d + 1] = S * (m.c * y[d - 1] / total + mean * w(j));
  };
  if (t > 0.0) {
    ode::integrate_adaptive(ode::make_controlled<ode::runge_kutta_dopri5<State>>(tol, tol),
                            rhs, z, 0.0, t, 1e-4);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) total += z[i];
  return z[d + 1] + (1.0 - z[d - 1] / total) * z[d];
}

// Hitting time of `level` by x' = (b - ρx)(1 - x), x(0) = 0, by classical
// RK4 with a fixed small step and linear interpolation at the crossing.
inline double comparison_hit(double b, double rho, double level, double dt = 1e-5) {
  auto f = [&](double x) { return (b - rho * x) * (1.0 - x); };
  double x = 0.0, t = 0.0;
  while (t < 1e4) {
    const double k1 = f(x), k2 = f(x + 0.5 * dt * k1), k3 = f(x + 0.5 * dt * k2),
                 k4 = f(x + dt * k3);
    const double nx = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    if (nx >= level) return t + dt * (level - x) / (nx - x);
    x = nx;
    t += dt;
  }
  return INFINITY;
}

// Kolmogorov 99% critical value for the one-sample KS statistic.
inline double ks_critical_99(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

struct MeanSe {
  double mean = 0.0, se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& xs) {
  double s = 0.0, ss = 0.0;
  for (double x : xs) s += x;
  const double n = static_cast<double>(xs.size());
  const double m = s / n;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

}  // namespace oracle
