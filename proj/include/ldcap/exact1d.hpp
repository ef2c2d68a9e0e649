#pragma once

// Exact temperature decay rate for one line fed by one OU node.
//
// With f = tau theta' + theta = g^2 (g the normalized current) the cost of a
// temperature path is
//
//   I(theta) = 1/2 int_0^T ((f'/(2 sqrt f) + gamma sqrt f - gamma m) / l)^2 ds,
//
// m = |mu|, minimized subject to theta(0) = f(0) = mu^2 and theta(T) = 1.
// Its Euler-Lagrange equation is third order in f:
//
//   2 tau f^2 f''' - 4 tau f f' f'' + 2 tau f'^3 - 2 f^2 f'' + f f'^2 + 4 gamma^2 f^3
//     - 2 tau gamma^2 m f' f^{3/2} - 4 gamma^2 m f^{5/2} = 0.
//
// The two m-terms come from the drift mean; with m = 0 this is the familiar
// printed form. The unknown initial data f'(0), f''(0) are found by shooting.
//
// Forward shooting amplifies the fast mode like e^{T/tau}. For small tau the
// same minimizer is computed from the linear multiplier form in g,
//
//   g'' = gamma^2 (g - m) - kappa w(s) g,   w(s) = e^{-(T-s)/tau} / tau,
//
// integrated backward from the natural boundary condition g'(T) = -gamma (g(T) - m).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <boost/numeric/odeint.hpp>

#include "ldcap/error.hpp"
#include "ldcap/thermal.hpp"

namespace ldcap {

struct Exact1dProblem {
  double mu = 0.5;
  double gamma = 0.5;
  double vol = 1.0;
  double tau = 0.6;
  double horizon = 1.0;

  void validate() const {
    require(std::abs(mu) < 1.0, ErrorCode::InfeasibleStart, "|mu| must be below 1");
    require(mu != 0.0, ErrorCode::DegenerateF, "mu = 0 puts f(0) = 0 on the singular set");
    require(gamma > 0.0, ErrorCode::InvalidInput, "gamma must be positive");
    require(vol > 0.0, ErrorCode::NonPositiveVolatility, "volatility must be positive");
    require(tau > 0.0, ErrorCode::NonPositiveTau, "thermal constant must be positive");
    require(horizon > 0.0, ErrorCode::InvalidInput, "horizon must be positive");
  }

  double drift_mean() const { return std::abs(mu); }
};

enum class Exact1dMethod { Auto, Shooting, Multiplier };

struct Exact1dOptions {
  double box = 50.0;           // search box [-box, box] for f'(0), f''(0)
  double blowup = 1e6;         // |y| guard
  double rtol = 1e-9;
  double atol = 1e-12;
  double root_tol = 1e-8;      // on theta(T) - 1
  int x1_bits = 20;            // Brent precision for f'(0), ~1e-6 relative
  std::size_t scan_points = 201;
  double stiff_ratio = 15.0;   // T/tau above which Auto uses the multiplier form
  std::size_t path_points = 2001;
  Exact1dMethod method = Exact1dMethod::Auto;
};

/// Shooting state [theta, f, f', f''].
using ShootingState = std::array<double, 4>;

/// Residual of the implicit first-order system. drift_mean = 0 evaluates
/// the printed (mean-free) form.
inline std::array<double, 4> euler_residual(const ShootingState& y, const ShootingState& yp, double gamma,
                                            double tau, double drift_mean, double tol = 1e-12) {
  const double f = y[1], f1 = y[2], f2 = y[3];
  require(std::abs(f) >= tol, ErrorCode::DegenerateF, "f vanishes");
  require(drift_mean == 0.0 || f > 0.0, ErrorCode::DegenerateF, "f must be positive when the drift mean is nonzero");
  const double g2 = gamma * gamma;
  const double sf = drift_mean == 0.0 ? 0.0 : std::sqrt(f);
  return {
      y[1] - tau * yp[0] - y[0],
      yp[1] - y[2],
      yp[2] - y[3],
      2.0 * tau * f * f * yp[3] - 4.0 * tau * f * f1 * f2 + 2.0 * tau * f1 * f1 * f1 - 2.0 * f * f * f2 +
          f * f1 * f1 + 4.0 * g2 * f * f * f - 2.0 * tau * g2 * drift_mean * f1 * f * sf -
          4.0 * g2 * drift_mean * f * f * sf,
  };
}

struct ShootResult {
  double theta_t = 0.0;
  double value = 0.0;  // accumulated functional
  std::vector<double> times;
  std::vector<ShootingState> states;
};

namespace detail {

// [theta, f, f', f'', cost]
using ShootVector = std::array<double, 5>;

struct ShootRhs {
  double gamma, tau, m, vol, degenerate_tol;

  void operator()(const ShootVector& y, ShootVector& dy, double /*t*/) const {
    const double f = y[1], f1 = y[2], f2 = y[3];
    if (!(f > degenerate_tol)) fail(ErrorCode::DegenerateF, "f reached zero during integration");
    const double g2 = gamma * gamma;
    const double sf = std::sqrt(f);
    const double rest = -4.0 * tau * f * f1 * f2 + 2.0 * tau * f1 * f1 * f1 - 2.0 * f * f * f2 + f * f1 * f1 +
                        4.0 * g2 * f * f * f - 2.0 * tau * g2 * m * f1 * f * sf - 4.0 * g2 * m * f * f * sf;
    const double r = (f1 / (2.0 * sf) + gamma * sf - gamma * m) / vol;
    dy[0] = (f - y[0]) / tau;
    dy[1] = f1;
    dy[2] = f2;
    dy[3] = -rest / (2.0 * tau * f * f);
    dy[4] = 0.5 * r * r;
  }
};

}  // namespace detail

/// Integrates from y(0) = [mu^2, mu^2, x1, x2] over [0, T] with adaptive
/// Dormand-Prince 5(4). The kept path holds the accepted steps, or a uniform
/// grid of grid_points samples when that is at least 3.
inline ShootResult shoot(const Exact1dProblem& p, double x1, double x2, const Exact1dOptions& opt = {},
                         bool keep_path = false, std::size_t grid_points = 0) {
  p.validate();
  namespace odeint = boost::numeric::odeint;
  const double mu2 = p.mu * p.mu;
  detail::ShootVector y{mu2, mu2, x1, x2, 0.0};
  detail::ShootRhs rhs{p.gamma, p.tau, p.drift_mean(), p.vol, 1e-10};
  ShootResult out;
  auto observe = [&](const detail::ShootVector& s, double t) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (!(std::abs(s[i]) <= opt.blowup)) {
        fail(ErrorCode::BlowUp, "trajectory left the bounding box at t=" + std::to_string(t));
      }
    }
    if (keep_path) {
      out.times.push_back(t);
      out.states.push_back({s[0], s[1], s[2], s[3]});
    }
  };
  auto stepper = odeint::make_controlled(opt.atol, opt.rtol, odeint::runge_kutta_dopri5<detail::ShootVector>());
  if (keep_path && grid_points >= 3) {
    std::vector<double> grid(grid_points);
    for (std::size_t i = 0; i < grid_points; ++i) {
      grid[i] = p.horizon * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    }
    odeint::integrate_times(stepper, rhs, y, grid.begin(), grid.end(), p.horizon / 200.0, observe);
  } else {
    odeint::integrate_adaptive(stepper, rhs, y, 0.0, p.horizon, p.horizon / 200.0, observe);
  }
  out.theta_t = y[0];
  out.value = y[4];
  return out;
}

struct Exact1dResult {
  double rate = 0.0;
  double x1 = 0.0;  // f'(0)
  double x2 = 0.0;  // f''(0)
  double theta_t = 0.0;
  Exact1dMethod method = Exact1dMethod::Shooting;
  std::vector<double> times;
  std::vector<double> theta;
  std::vector<double> f;
};

namespace detail {

// theta(T) - 1 for one (x1, x2), with failures mapped to a side:
// blow-up overshoots (+), f -> 0 undershoots (-).
struct Miss {
  double value;
  bool exact;
};

inline Miss shoot_miss(const Exact1dProblem& p, double x1, double x2, const Exact1dOptions& opt) {
  try {
    return {shoot(p, x1, x2, opt).theta_t - 1.0, true};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BlowUp) return {1.0, false};
    if (e.code() == ErrorCode::DegenerateF) return {-1.0, false};
    throw;
  }
}

// Root of theta(T) = 1 in x2 for fixed x1; hint seeds a local search.
inline std::optional<double> solve_x2(const Exact1dProblem& p, double x1, std::optional<double> hint,
                                      const Exact1dOptions& opt) {
  double lo = 0.0, hi = 0.0;
  bool found = false;
  if (hint) {
    const Miss m0 = shoot_miss(p, x1, *hint, opt);
    if (m0.exact && std::abs(m0.value) < opt.root_tol) return *hint;
    const double dir = m0.value < 0.0 ? 1.0 : -1.0;
    double step = 0.25;
    double prev = *hint;
    for (int k = 0; k < 12 && !found; ++k) {
      const double next = std::clamp(prev + dir * step, -opt.box, opt.box);
      const Miss m = shoot_miss(p, x1, next, opt);
      if ((m.value < 0.0) != (m0.value < 0.0)) {
        lo = std::min(prev, next);
        hi = std::max(prev, next);
        found = true;
      }
      if (next == prev) break;
      prev = next;
      step *= 2.0;
    }
  }
  if (!found) {
    const std::size_t n = std::max<std::size_t>(opt.scan_points, 3);
    double prev_x = -opt.box;
    Miss prev = shoot_miss(p, x1, prev_x, opt);
    for (std::size_t i = 1; i < n && !found; ++i) {
      const double x = -opt.box + 2.0 * opt.box * static_cast<double>(i) / static_cast<double>(n - 1);
      const Miss m = shoot_miss(p, x1, x, opt);
      if ((m.value < 0.0) != (prev.value < 0.0)) {
        lo = prev_x;
        hi = x;
        found = true;
      }
      prev_x = x;
      prev = m;
    }
  }
  if (!found) return std::nullopt;
  // bisection, robust to failed shots inside the bracket
  bool lo_negative = shoot_miss(p, x1, lo, opt).value < 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const Miss m = shoot_miss(p, x1, mid, opt);
    if (m.exact && std::abs(m.value) < opt.root_tol) return mid;
    if ((m.value < 0.0) == lo_negative) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-15 * std::max(1.0, std::abs(mid))) break;
  }
  const double mid = 0.5 * (lo + hi);
  const Miss m = shoot_miss(p, x1, mid, opt);
  if (m.exact && std::abs(m.value) < 1e3 * opt.root_tol) return mid;
  return std::nullopt;
}

// Optimal current (tau = 0) slope at 0, used to seed f'(0) = 2 |mu| g'(0).
inline double current_path_slope(const Exact1dProblem& p) {
  const double m = p.drift_mean();
  const double g = p.gamma, t = p.horizon;
  return (1.0 - m) * 2.0 * g * std::exp(-g * t) / (-std::expm1(-2.0 * g * t));
}

inline Exact1dResult exact_by_shooting(const Exact1dProblem& p, const Exact1dOptions& opt) {
  std::optional<double> hint;
  const double inf = std::numeric_limits<double>::infinity();
  auto cost = [&](double x1) {
    const auto x2 = solve_x2(p, x1, hint, opt);
    if (!x2) return inf;
    hint = x2;
    try {
      return shoot(p, x1, *x2, opt).value;
    } catch (const Error&) {
      return inf;
    }
  };

  // downhill bracket expansion from the current-path seed
  double a = 2.0 * p.drift_mean() * current_path_slope(p);
  double fa = cost(a);
  double h = std::max(0.1 * std::abs(a), 0.05);
  double b = a + h;
  double fb = cost(b);
  if (!(fb <= fa)) {
    std::swap(a, b);
    std::swap(fa, fb);
    h = -h;
  }
  require(std::isfinite(fa) || std::isfinite(fb), ErrorCode::NoBoundaryHit,
          "no f''(0) reaches theta(T) = 1 near the seed f'(0)");
  double c = b + 1.6 * h;
  double fc = cost(c);
  for (int k = 0; k < 60 && fc < fb; ++k) {
    a = b;
    fa = fb;
    b = c;
    fb = fc;
    h *= 1.6;
    c = std::clamp(b + h, -opt.box, opt.box);
    if (c == b) break;
    fc = cost(c);
  }
  const double lo = std::min(a, c), hi = std::max(a, c);
  hint.reset();
  std::uintmax_t iters = 200;
  const auto best = boost::math::tools::brent_find_minima(cost, lo, hi, opt.x1_bits, iters);
  require(std::isfinite(best.second), ErrorCode::NoBoundaryHit, "no boundary hit at the optimum");

  Exact1dResult r;
  r.method = Exact1dMethod::Shooting;
  r.x1 = best.first;
  const auto x2 = solve_x2(p, r.x1, std::nullopt, opt);
  require(x2.has_value(), ErrorCode::NoBoundaryHit, "lost the boundary hit at the optimum");
  r.x2 = *x2;
  const auto path = shoot(p, r.x1, r.x2, opt, true, std::max<std::size_t>(opt.path_points, 3));
  r.rate = path.value;
  r.theta_t = path.theta_t;
  for (std::size_t k = 0; k < path.times.size(); ++k) {
    r.times.push_back(path.times[k]);
    r.theta.push_back(path.states[k][0]);
    r.f.push_back(path.states[k][1]);
  }
  return r;
}

// Backward solution of g'' = gamma^2 (g - m) - kappa w g in reversed time
// u = T - s. g = z h1 + h2 with h1(T) = 1, h1'(T) = -gamma, h2(T) = 0,
// h2'(T) = gamma m. Quadratures (in z) of the temperature and cost integrals
// ride along:
//   [h1, h1', h2, h2', W11, W12, W22, Q11, Q12, Q22]
using MultVector = std::array<double, 10>;

struct MultiplierSweep {
  double h1_0, h2_0;
  std::array<double, 3> w;  // int w h1^2, int w h1 h2, int w h2^2
  std::array<double, 3> q;  // int a^2, int a b, int b^2 (cost residual pieces)
};

inline MultiplierSweep multiplier_sweep(const Exact1dProblem& p, double kappa, const Exact1dOptions& opt) {
  namespace odeint = boost::numeric::odeint;
  const double g2 = p.gamma * p.gamma, m = p.drift_mean(), tau = p.tau, gm = p.gamma;
  auto rhs = [&](const MultVector& y, MultVector& dy, double u) {
    const double w = std::exp(-u / tau) / tau;
    const double h1 = y[0], d1 = y[1], h2 = y[2], d2 = y[3];
    const double a = d1 + gm * h1;
    const double b = d2 + gm * h2 - gm * m;
    dy[0] = -d1;
    dy[1] = -((g2 - kappa * w) * h1);
    dy[2] = -d2;
    dy[3] = -((g2 - kappa * w) * h2 - g2 * m);
    dy[4] = w * h1 * h1;
    dy[5] = w * h1 * h2;
    dy[6] = w * h2 * h2;
    dy[7] = a * a;
    dy[8] = a * b;
    dy[9] = b * b;
  };
  MultVector y{1.0, -gm, 0.0, gm * m, 0, 0, 0, 0, 0, 0};
  auto stepper = odeint::make_controlled(opt.atol, opt.rtol, odeint::runge_kutta_dopri5<MultVector>());
  odeint::integrate_adaptive(stepper, rhs, y, 0.0, p.horizon, std::min(p.horizon, tau) / 50.0);
  return {y[0], y[2], {y[4], y[5], y[6]}, {y[7], y[8], y[9]}};
}

struct MultiplierEval {
  double z;
  double theta_t;
  double cost;
};

inline std::optional<MultiplierEval> multiplier_eval(const Exact1dProblem& p, double kappa,
                                                     const Exact1dOptions& opt) {
  const auto s = multiplier_sweep(p, kappa, opt);
  const double m = p.drift_mean();
  if (!(std::abs(s.h1_0) > 1e-300)) return std::nullopt;
  const double z = (m - s.h2_0) / s.h1_0;
  if (!(z > 0.0) || !std::isfinite(z)) return std::nullopt;
  const double theta = m * m * std::exp(-p.horizon / p.tau) + z * z * s.w[0] + 2.0 * z * s.w[1] + s.w[2];
  const double cost = 0.5 * (z * z * s.q[0] + 2.0 * z * s.q[1] + s.q[2]) / (p.vol * p.vol);
  return MultiplierEval{z, theta, cost};
}

inline Exact1dResult exact_by_multiplier(const Exact1dProblem& p, const Exact1dOptions& opt) {
  // theta(T) rises from m^2 at kappa = 0; take the first crossing of 1.
  auto miss = [&](double kappa) {
    const auto e = multiplier_eval(p, kappa, opt);
    return e ? e->theta_t - 1.0 : std::numeric_limits<double>::infinity();
  };
  double lo = 0.0;
  double hi = 1e-3;
  bool found = false;
  for (int k = 0; k < 200; ++k) {
    if (miss(hi) >= 0.0) {
      found = true;
      break;
    }
    lo = hi;
    hi *= 1.5;
  }
  require(found, ErrorCode::NoBoundaryHit, "no multiplier reaches theta(T) = 1");
  // a pole (h1(0) = 0) can sit inside [lo, hi]; shrink onto the finite branch
  for (int k = 0; k < 200 && !std::isfinite(miss(hi)); ++k) {
    const double mid = 0.5 * (lo + hi);
    if (miss(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  double kappa = hi;
  if (std::isfinite(miss(hi)) && miss(hi) > 0.0) {
    std::uintmax_t iters = 200;
    auto tol = [](double a, double b) { return std::abs(b - a) <= 1e-14 * std::max(1.0, std::abs(a)); };
    const auto root = boost::math::tools::toms748_solve(miss, lo, hi, miss(lo), miss(hi), tol, iters);
    kappa = 0.5 * (root.first + root.second);
  }
  const auto e = multiplier_eval(p, kappa, opt);
  require(e.has_value(), ErrorCode::NoBoundaryHit, "multiplier solution lost");

  Exact1dResult r;
  r.method = Exact1dMethod::Multiplier;
  r.rate = e->cost;
  r.theta_t = e->theta_t;

  // resample g on a uniform grid for the reported path
  namespace odeint = boost::numeric::odeint;
  const double g2 = p.gamma * p.gamma, m = p.drift_mean(), tau = p.tau;
  using G = std::array<double, 2>;
  auto rhs = [&](const G& y, G& dy, double u) {
    const double w = std::exp(-u / tau) / tau;
    dy[0] = -y[1];
    dy[1] = -((g2 - kappa * w) * y[0] - g2 * m);
  };
  const std::size_t n = std::max<std::size_t>(opt.path_points, 3);
  std::vector<double> g(n), dg(n);
  G y{e->z, -p.gamma * (e->z - m)};
  std::size_t k = n;
  auto record = [&](const G& s, double) {
    --k;
    g[k] = s[0];
    dg[k] = s[1];
  };
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = p.horizon * static_cast<double>(i) / static_cast<double>(n - 1);
  auto stepper = odeint::make_dense_output(opt.atol, opt.rtol, odeint::runge_kutta_dopri5<G>());
  odeint::integrate_times(stepper, rhs, y, grid.begin(), grid.end(), std::min(p.horizon, tau) / 50.0, record);
  const double ddg0 = g2 * (g[0] - m) - kappa * std::exp(-p.horizon / tau) / tau * g[0];
  r.x1 = 2.0 * g[0] * dg[0];
  r.x2 = 2.0 * dg[0] * dg[0] + 2.0 * g[0] * ddg0;
  r.times.resize(n);
  r.f.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.times[i] = grid[i];
    r.f[i] = g[i] * g[i];
  }
  std::vector<double> current(g.begin(), g.end());
  r.theta = xi_map_line(current, p.horizon / static_cast<double>(n - 1), tau, m * m);
  return r;
}

}  // namespace detail

/// Minimum of the functional over paths with theta(T) = 1.
inline Exact1dResult exact_decay_rate(const Exact1dProblem& p, const Exact1dOptions& opt = {}) {
  p.validate();
  Exact1dMethod method = opt.method;
  if (method == Exact1dMethod::Auto) {
    method = p.horizon / p.tau > opt.stiff_ratio ? Exact1dMethod::Multiplier : Exact1dMethod::Shooting;
  }
  return method == Exact1dMethod::Shooting ? detail::exact_by_shooting(p, opt) : detail::exact_by_multiplier(p, opt);
}

/// Functional on a sampled temperature path (uniform grid on [0, T]);
/// derivatives by second-order finite differences, trapezoid quadrature.
inline double functional_value(std::span<const double> theta, const Exact1dProblem& p) {
  require(theta.size() >= 3, ErrorCode::InvalidInput, "need at least three samples");
  const std::size_t n = theta.size();
  const double h = p.horizon / static_cast<double>(n - 1);
  auto derivative = [&](const std::vector<double>& v) {
    std::vector<double> d(n);
    d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    d[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    for (std::size_t k = 1; k + 1 < n; ++k) d[k] = (v[k + 1] - v[k - 1]) / (2.0 * h);
    return d;
  };
  const std::vector<double> th(theta.begin(), theta.end());
  const auto dth = derivative(th);
  std::vector<double> f(n);
  for (std::size_t k = 0; k < n; ++k) {
    f[k] = p.tau * dth[k] + th[k];
    require(f[k] > 0.0, ErrorCode::NegativeRadicand,
            "tau theta' + theta is not positive at sample " + std::to_string(k));
  }
  const auto df = derivative(f);
  const double m = p.drift_mean();
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double sf = std::sqrt(f[k]);
    const double r = (df[k] / (2.0 * sf) + p.gamma * sf - p.gamma * m) / p.vol;
    const double weight = (k == 0 || k == n - 1) ? 0.5 : 1.0;
    total += weight * 0.5 * r * r * h;
  }
  return total;
}

}  // namespace ldcap
