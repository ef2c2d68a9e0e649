#pragma once

// Current -> normalized temperature map
//
//   tau Theta' + Theta = Y^2,
//   Theta(t) = Theta(0) e^{-t/tau} + (1/tau) int_0^t e^{-(t-s)/tau} Y(s)^2 ds.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ldcap/error.hpp"

namespace ldcap {

struct TemperaturePath {
  double horizon = 1.0;
  Eigen::MatrixXd values;  // row k = time t_k, column = line
};

namespace detail {

// Weights of one exponential-integrator step with Y^2 linear on the step:
// Theta_{k+1} = decay Theta_k + w_left Y_k^2 + w_right Y_{k+1}^2.
struct ThermalStep {
  double decay;
  double w_left;
  double w_right;
};

inline ThermalStep thermal_step(double dt, double tau) {
  const double h = dt / tau;
  const double one_minus_decay = -std::expm1(-h);
  // (1/h) int_0^h e^{-(h-s)} s ds = 1 - (1 - e^{-h})/h, series for small h
  const double ramp = h < 1e-3 ? h / 2.0 - h * h / 6.0 + h * h * h / 24.0 : 1.0 - one_minus_decay / h;
  return {1.0 - one_minus_decay, one_minus_decay - ramp, ramp};
}

}  // namespace detail

/// Single-line exponential integrator, exact when Y^2 is piecewise linear
/// on the grid.
inline std::vector<double> xi_map_line(std::span<const double> current, double dt, double tau, double theta0) {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::NonPositiveTau, "thermal constant must be positive");
  require(!current.empty(), ErrorCode::InvalidInput, "empty current path");
  const auto step = detail::thermal_step(dt, tau);
  std::vector<double> theta(current.size());
  theta[0] = theta0;
  for (std::size_t k = 0; k + 1 < current.size(); ++k) {
    const double a = current[k] * current[k];
    const double b = current[k + 1] * current[k + 1];
    theta[k + 1] = step.decay * theta[k] + step.w_left * a + step.w_right * b;
  }
  return theta;
}

/// Applies the map to every line of a current path (row k = time t_k).
/// Default initial temperature is the steady state nu^2 = Y(0)^2.
inline TemperaturePath xi_map(const Eigen::MatrixXd& current, double horizon, const Eigen::VectorXd& tau,
                              const std::optional<Eigen::VectorXd>& theta0 = std::nullopt) {
  require(current.rows() >= 2, ErrorCode::InvalidInput, "current path needs at least two grid points");
  require(tau.size() == current.cols(), ErrorCode::InvalidInput, "one thermal constant per line required");
  if (theta0) require(theta0->size() == current.cols(), ErrorCode::InvalidInput, "theta0 has wrong length");
  const double dt = horizon / static_cast<double>(current.rows() - 1);
  TemperaturePath out{horizon, Eigen::MatrixXd(current.rows(), current.cols())};
  std::vector<double> column(static_cast<std::size_t>(current.rows()));
  for (Eigen::Index l = 0; l < current.cols(); ++l) {
    for (Eigen::Index k = 0; k < current.rows(); ++k) column[static_cast<std::size_t>(k)] = current(k, l);
    const double start = theta0 ? (*theta0)(l) : current(0, l) * current(0, l);
    const auto theta = xi_map_line(column, dt, tau(l), start);
    for (Eigen::Index k = 0; k < current.rows(); ++k) out.values(k, l) = theta[static_cast<std::size_t>(k)];
  }
  return out;
}

/// Current level alpha such that holding |Y| = alpha from Theta(0) = nu^2
/// brings the temperature exactly to 1 at time T:
///   alpha^2 = (1 - nu^2 e^{-T/tau}) / (1 - e^{-T/tau}).
/// Staying strictly below alpha on [0, T] keeps Theta below 1.
inline double overload_threshold_equivalence(double nu, double tau, double horizon) {
  require(tau > 0.0, ErrorCode::NonPositiveTau, "thermal constant must be positive");
  require(std::abs(nu) < 1.0, ErrorCode::InfeasibleStart, "|nu| must be below 1");
  const double decay = std::exp(-horizon / tau);
  const double denom = -std::expm1(-horizon / tau);
  return std::sqrt((1.0 - nu * nu * decay) / denom);
}

/// Steady-current bound: true when sup|Y| on the path stays below alpha,
/// which guarantees no temperature overload on [0, T].
inline bool below_thermal_threshold(std::span<const double> current, double nu, double tau, double horizon) {
  const double alpha = overload_threshold_equivalence(nu, tau, horizon);
  for (double y : current) {
    if (std::abs(y) >= alpha) return false;
  }
  return true;
}

}  // namespace ldcap
