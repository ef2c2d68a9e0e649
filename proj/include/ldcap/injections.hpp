#pragma once

// Stochastic injection models, path simulation and the discretized
// sample-path rate functional
//
//   I_p(g) = 1/2 sum_i int_0^T ((g_i' - b_i(g_i)) / l_i(g_i))^2 dt.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ldcap/error.hpp"
#include "ldcap/random.hpp"

namespace ldcap {

/// Diagonal Ornstein-Uhlenbeck injections dX = D(mu - X)dt + sqrt(eps) L dW,
/// started at X(0) = mu.
struct OuModel {
  Eigen::VectorXd gamma;
  Eigen::VectorXd vol;
  Eigen::VectorXd mean;
  double noise_scale = 1.0;
  double horizon = 1.0;

  std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }

  void validate() const {
    require(gamma.size() == mean.size() && vol.size() == mean.size() && mean.size() > 0,
            ErrorCode::InvalidInput, "OU parameter vectors must have equal, nonzero length");
    require((gamma.array() > 0.0).all() && gamma.allFinite(), ErrorCode::InvalidInput,
            "mean-reversion rates must be positive");
    require((vol.array() > 0.0).all() && vol.allFinite(), ErrorCode::NonPositiveVolatility,
            "volatilities must be positive");
    require(mean.allFinite(), ErrorCode::InvalidInput, "mean must be finite");
    require(noise_scale >= 0.0 && std::isfinite(noise_scale), ErrorCode::InvalidInput,
            "noise scale must be non-negative");
    require(horizon > 0.0 && std::isfinite(horizon), ErrorCode::InvalidInput, "horizon must be positive");
  }

  bool uniform_gamma(double rel_tol = 1e-12) const {
    return (gamma.array() - gamma(0)).abs().maxCoeff() <= rel_tol * std::abs(gamma(0));
  }
};

using ScalarFunction = std::function<double(double)>;

/// General diagonal diffusion dX_i = b_i(X_i)dt + sqrt(eps) l_i(X_i) dW_i.
struct DiffusionModel {
  std::vector<ScalarFunction> drift;
  std::vector<ScalarFunction> vol;
  Eigen::VectorXd mean;
  double noise_scale = 1.0;
  double horizon = 1.0;

  std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }

  void validate() const {
    require(drift.size() == dimension() && vol.size() == dimension() && dimension() > 0,
            ErrorCode::InvalidInput, "drift/volatility count must match the dimension");
    require(horizon > 0.0, ErrorCode::InvalidInput, "horizon must be positive");
    require(noise_scale >= 0.0, ErrorCode::InvalidInput, "noise scale must be non-negative");
    for (std::size_t i = 0; i < dimension(); ++i) {
      const double b0 = drift[i](mean(static_cast<Eigen::Index>(i)));
      require(std::abs(b0) <= 1e-12, ErrorCode::InvalidInput,
              "drift must vanish at the mean (coordinate " + std::to_string(i) + ")");
    }
  }
};

inline DiffusionModel as_diffusion(const OuModel& ou) {
  DiffusionModel d;
  d.mean = ou.mean;
  d.noise_scale = ou.noise_scale;
  d.horizon = ou.horizon;
  for (Eigen::Index i = 0; i < ou.mean.size(); ++i) {
    const double g = ou.gamma(i), mu = ou.mean(i), l = ou.vol(i);
    d.drift.emplace_back([g, mu](double x) { return g * (mu - x); });
    d.vol.emplace_back([l](double) { return l; });
  }
  return d;
}

/// Values on the uniform grid t_k = k T / n; row k is the state at t_k.
struct SamplePath {
  double horizon = 1.0;
  Eigen::MatrixXd values;

  std::size_t steps() const { return static_cast<std::size_t>(values.rows()) - 1; }
  double dt() const { return horizon / static_cast<double>(steps()); }
  double time(std::size_t k) const { return horizon * static_cast<double>(k) / static_cast<double>(steps()); }
};

/// Exact OU transition on each step; draws come from the counter-based
/// stream (seed, replicate, coordinate, step).
inline SamplePath simulate_ou(const OuModel& model, std::size_t steps, std::uint64_t seed,
                              std::uint64_t replicate = 0) {
  model.validate();
  require(steps >= 1, ErrorCode::InvalidInput, "need at least one step");
  const auto m = model.mean.size();
  SamplePath path{model.horizon, Eigen::MatrixXd(static_cast<Eigen::Index>(steps) + 1, m)};
  const double dt = path.dt();
  Eigen::VectorXd decay(m), sd(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double g = model.gamma(i);
    decay(i) = std::exp(-g * dt);
    // variance eps l^2 (1 - e^{-2 g dt}) / (2 g), written with expm1 for small g dt
    sd(i) = std::sqrt(model.noise_scale * model.vol(i) * model.vol(i) * (-std::expm1(-2.0 * g * dt)) / (2.0 * g));
  }
  path.values.row(0) = model.mean.transpose();
  for (std::size_t k = 0; k < steps; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double z = sd(i) > 0.0 ? counter_normal(seed, replicate, static_cast<std::uint64_t>(i), k) : 0.0;
      path.values(r + 1, i) = model.mean(i) + (path.values(r, i) - model.mean(i)) * decay(i) + sd(i) * z;
    }
  }
  return path;
}

/// Euler-Maruyama for the general diffusion model.
inline SamplePath simulate_diffusion(const DiffusionModel& model, std::size_t steps, std::uint64_t seed,
                                     std::uint64_t replicate = 0) {
  model.validate();
  require(steps >= 1, ErrorCode::InvalidInput, "need at least one step");
  const auto m = model.mean.size();
  SamplePath path{model.horizon, Eigen::MatrixXd(static_cast<Eigen::Index>(steps) + 1, m)};
  const double dt = path.dt();
  const double noise = std::sqrt(model.noise_scale * dt);
  path.values.row(0) = model.mean.transpose();
  for (std::size_t k = 0; k < steps; ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const double x = path.values(r, i);
      const double l = model.vol[ui](x);
      require(l > 0.0, ErrorCode::NonPositiveVolatility,
              "volatility not positive at x=" + std::to_string(x) + " (coordinate " + std::to_string(i) + ")");
      const double z = noise > 0.0 ? counter_normal(seed, replicate, static_cast<std::uint64_t>(i), k) : 0.0;
      path.values(r + 1, i) = x + model.drift[ui](x) * dt + noise * l * z;
    }
  }
  return path;
}

// Discretization shared with the brute-force oracles: on each interval the
// derivative is the forward difference d_k = (g_{k+1} - g_k)/dt and the
// squared residual is averaged over both endpoints (trapezoid rule):
//
//   I ~ sum_k dt/2 * [ r(d_k, g_k)^2 + r(d_k, g_{k+1})^2 ] / 2,
//   r(d, g) = (d - b(g)) / l(g).
inline double rate_functional(const SamplePath& path, const DiffusionModel& model) {
  require(static_cast<std::size_t>(path.values.cols()) == model.dimension(), ErrorCode::InvalidInput,
          "path dimension does not match the model");
  require(path.values.rows() >= 2, ErrorCode::InvalidInput, "path needs at least two grid points");
  const double dt = path.dt();
  double total = 0.0;
  for (Eigen::Index i = 0; i < path.values.cols(); ++i) {
    const auto& b = model.drift[static_cast<std::size_t>(i)];
    const auto& l = model.vol[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k + 1 < path.values.rows(); ++k) {
      const double g0 = path.values(k, i);
      const double g1 = path.values(k + 1, i);
      const double d = (g1 - g0) / dt;
      const double r0 = (d - b(g0)) / l(g0);
      const double r1 = (d - b(g1)) / l(g1);
      total += 0.25 * dt * (r0 * r0 + r1 * r1);
    }
  }
  return total;
}

inline double rate_functional(const SamplePath& path, const OuModel& model) {
  return rate_functional(path, as_diffusion(model));
}

}  // namespace ldcap
