#pragma once

// Plain Monte Carlo estimates of current and temperature overload
// probabilities under eps-scaled OU noise, and the decay-rate fit
//   log p_hat(eps) ~ c - I / eps.
//
// Overloads are detected on the time grid only.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "ldcap/error.hpp"
#include "ldcap/ld_rates.hpp"
#include "ldcap/random.hpp"
#include "ldcap/thermal.hpp"

namespace ldcap {

enum class OverloadKind { Current, Temperature };

struct McConfig {
  OverloadKind kind = OverloadKind::Current;
  std::size_t replicates = 10000;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  double level = 1.0;  // overload threshold on |Y| or Theta
  unsigned threads = 1;
  std::vector<double> epsilons;  // for decay_slope

  void validate() const {
    require(replicates >= 1, ErrorCode::InvalidInput, "need at least one replicate");
    require(steps >= 1, ErrorCode::InvalidInput, "need at least one time step");
    require(level > 0.0, ErrorCode::InvalidInput, "overload level must be positive");
  }
};

struct McEstimate {
  std::size_t hits = 0;
  std::size_t replicates = 0;
  double p_hat = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// 95% Wilson score interval.
inline McEstimate wilson(std::size_t hits, std::size_t n) {
  constexpr double z = 1.959963984540054;
  McEstimate e;
  e.hits = hits;
  e.replicates = n;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(hits) / nn;
  e.p_hat = p;
  const double denom = 1.0 + z * z / nn;
  const double centre = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  e.ci_low = hits == 0 ? 0.0 : std::max(0.0, centre - half);
  e.ci_high = hits == n ? 1.0 : std::min(1.0, centre + half);
  return e;
}

/// Both overload events from the same simulated paths.
struct McPair {
  McEstimate current;
  McEstimate temperature;
};

namespace detail {

struct HitCount {
  std::size_t current = 0;
  std::size_t temperature = 0;
};

inline HitCount simulate_block(const PsiContext& ctx, double epsilon, const McConfig& cfg, std::size_t first,
                               std::size_t last) {
  const auto& ou = ctx.ou();
  const auto& flow = ctx.flow();
  const auto m = static_cast<Eigen::Index>(ou.dimension());
  const double horizon = ou.horizon;
  const double dt = horizon / static_cast<double>(cfg.steps);

  Eigen::VectorXd decay(m), sd(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double g = ou.gamma(i);
    decay(i) = std::exp(-g * dt);
    sd(i) = std::sqrt(epsilon * ou.vol(i) * ou.vol(i) * (-std::expm1(-2.0 * g * dt)) / (2.0 * g));
  }
  // every line, so a line outside L' still counts if its constant flow is
  // above a lowered threshold
  const auto nl = static_cast<Eigen::Index>(flow.line_count());
  const Eigen::MatrixXd& c = flow.stochastic;
  const Eigen::VectorXd& y0 = ctx.op().y;
  std::vector<detail::ThermalStep> thermal;
  for (Eigen::Index l = 0; l < nl; ++l) thermal.push_back(detail::thermal_step(dt, flow.tau(l)));

  HitCount hits;
  Eigen::VectorXd x(m), y(nl), y_prev(nl), theta(nl);
  for (std::size_t rep = first; rep < last; ++rep) {
    x = ou.mean;
    y_prev = c * x + y0;
    theta = y_prev.cwiseProduct(y_prev);
    bool hit_current = y_prev.cwiseAbs().maxCoeff() >= cfg.level;
    bool hit_temperature = theta.maxCoeff() >= cfg.level;
    for (std::size_t k = 0; k < cfg.steps && !(hit_current && hit_temperature); ++k) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double z = sd(i) > 0.0 ? counter_normal(cfg.seed, rep, static_cast<std::uint64_t>(i), k) : 0.0;
        x(i) = ou.mean(i) + (x(i) - ou.mean(i)) * decay(i) + sd(i) * z;
      }
      y.noalias() = c * x;
      y += y0;
      for (Eigen::Index l = 0; l < nl; ++l) {
        const auto& s = thermal[static_cast<std::size_t>(l)];
        theta(l) = s.decay * theta(l) + s.w_left * y_prev(l) * y_prev(l) + s.w_right * y(l) * y(l);
        if (std::abs(y(l)) >= cfg.level) hit_current = true;
        if (theta(l) >= cfg.level) hit_temperature = true;
      }
      y_prev = y;
    }
    hits.current += hit_current ? 1 : 0;
    hits.temperature += hit_temperature ? 1 : 0;
  }
  return hits;
}

}  // namespace detail

/// Replicates are split into contiguous blocks across threads; each draw is
/// a function of (seed, replicate, coordinate, step), so counts do not
/// depend on the thread count.
inline McPair simulate_overloads(const PsiContext& ctx, double epsilon, const McConfig& cfg) {
  cfg.validate();
  require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorCode::InvalidInput, "epsilon must be non-negative");
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.replicates)));
  std::vector<detail::HitCount> partial(threads);
  if (threads == 1) {
    partial[0] = detail::simulate_block(ctx, epsilon, cfg, 0, cfg.replicates);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t first = cfg.replicates * t / threads;
      const std::size_t last = cfg.replicates * (t + 1) / threads;
      pool.emplace_back([&, t, first, last] { partial[t] = detail::simulate_block(ctx, epsilon, cfg, first, last); });
    }
    for (auto& th : pool) th.join();
  }
  std::size_t hc = 0, ht = 0;
  for (const auto& p : partial) {
    hc += p.current;
    ht += p.temperature;
  }
  return {wilson(hc, cfg.replicates), wilson(ht, cfg.replicates)};
}

inline McEstimate overload_probability(const PsiContext& ctx, double epsilon, const McConfig& cfg) {
  const auto both = simulate_overloads(ctx, epsilon, cfg);
  return cfg.kind == OverloadKind::Current ? both.current : both.temperature;
}

struct DecayFit {
  double rate = 0.0;       // minus the slope of log p_hat against 1/eps
  double intercept = 0.0;
  double residual = 0.0;   // RMS of the fit in log p
  std::vector<double> epsilons;
  std::vector<McEstimate> estimates;
};

/// Least-squares line through (1/eps, log p_hat).
inline DecayFit decay_slope(const PsiContext& ctx, const McConfig& cfg) {
  require(cfg.epsilons.size() >= 2, ErrorCode::InvalidInput, "need at least two noise levels");
  DecayFit fit;
  fit.epsilons = cfg.epsilons;
  std::vector<double> xs, ys;
  for (double eps : cfg.epsilons) {
    require(eps > 0.0, ErrorCode::InvalidInput, "noise levels must be positive");
    const auto e = overload_probability(ctx, eps, cfg);
    require(e.hits > 0, ErrorCode::InsufficientHits,
            "no overload observed at eps=" + std::to_string(eps) + "; use larger eps or more replicates");
    fit.estimates.push_back(e);
    xs.push_back(1.0 / eps);
    ys.push_back(std::log(e.p_hat));
  }
  const auto n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  require(denom > 0.0, ErrorCode::InvalidInput, "noise levels must be distinct");
  const double slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - slope * sx) / n;
  fit.rate = -slope;
  double ss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (fit.intercept + slope * xs[i]);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / n);
  return fit;
}

}  // namespace ldcap
