#pragma once

// Closed-form large-deviations decay rates for OU injections.
//
// For a line l with C_l != 0 the cheapest way to push its current to level
// a at the horizon costs
//
//   psi_l(a) = (a - nu_l)^2 / (C_l M_T C_l^T),
//   M_t = L^2 D^{-1} (I - e^{-2Dt}) e^{D(t-T)},
//
// and the network rates are minima over lines:
//   current overload     I_c  = min_l (1 - |nu_l|)^2 / s_l
//   thermal lower bound  I_LB = min_l (alpha_l - |nu_l|)^2 / s_l
//   Taylor (D = gamma I) I_TL = (1 + 2 tau0 gamma) I_c
// with s_l = C_l M_T C_l^T.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ldcap/error.hpp"
#include "ldcap/grid_model.hpp"
#include "ldcap/injections.hpp"
#include "ldcap/thermal.hpp"

namespace ldcap {

/// A decay rate that may be +infinity (line or network that cannot
/// overload). Unbounded is a state, not a float sentinel.
class Rate {
 public:
  static Rate finite(double v) { return Rate(v); }
  static Rate unbounded() { return Rate(); }

  bool bounded() const noexcept { return value_.has_value(); }
  double value() const {
    require(bounded(), ErrorCode::InvalidInput, "rate is unbounded");
    return *value_;
  }
  double value_or(double fallback) const noexcept { return value_.value_or(fallback); }

  friend bool operator<(const Rate& a, const Rate& b) {
    if (!a.bounded()) return false;
    if (!b.bounded()) return true;
    return *a.value_ < *b.value_;
  }
  friend bool operator==(const Rate&, const Rate&) = default;

 private:
  Rate() = default;
  explicit Rate(double v) : value_(v) {}
  std::optional<double> value_;
};

/// Flow map + operating point + OU model; everything a closed-form rate needs.
class PsiContext {
 public:
  PsiContext(DcFlowMatrices flow, OuModel ou, Eigen::VectorXd mu_d)
      : flow_(std::move(flow)), ou_(std::move(ou)) {
    ou_.validate();
    require(ou_.dimension() == flow_.stochastic_count, ErrorCode::InvalidInput,
            "OU dimension must equal the number of stochastic nodes");
    op_ = operating_point(flow_, ou_.mean, mu_d);
    lines_ = stochastic_lines(flow_);
  }

  const DcFlowMatrices& flow() const noexcept { return flow_; }
  const OperatingPoint& op() const noexcept { return op_; }
  const OuModel& ou() const noexcept { return ou_; }
  const std::vector<std::size_t>& active_lines() const noexcept { return lines_; }

  bool is_active(std::size_t l) const { return std::binary_search(lines_.begin(), lines_.end(), l); }
  double nu(std::size_t l) const { return op_.nu(static_cast<Eigen::Index>(l)); }
  Eigen::RowVectorXd row(std::size_t l) const { return flow_.stochastic.row(static_cast<Eigen::Index>(l)); }

 private:
  DcFlowMatrices flow_;
  OuModel ou_;
  OperatingPoint op_;
  std::vector<std::size_t> lines_;
};

/// Diagonal of M_t: l_i^2 (1 - e^{-2 g_i t}) e^{g_i (t - T)} / g_i.
inline Eigen::VectorXd m_matrix(const OuModel& ou, double t, double horizon) {
  require(t >= 0.0 && t <= horizon, ErrorCode::InvalidInput, "t must lie in [0, T]");
  Eigen::VectorXd d(ou.gamma.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double g = ou.gamma(i);
    d(i) = ou.vol(i) * ou.vol(i) * (-std::expm1(-2.0 * g * t)) * std::exp(g * (t - horizon)) / g;
  }
  return d;
}

/// Time derivative of the diagonal of M_t: l_i^2 e^{g_i (t - T)} (1 + e^{-2 g_i t}).
inline Eigen::VectorXd m_matrix_derivative(const OuModel& ou, double t, double horizon) {
  Eigen::VectorXd d(ou.gamma.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double g = ou.gamma(i);
    d(i) = ou.vol(i) * ou.vol(i) * std::exp(g * (t - horizon)) * (1.0 + std::exp(-2.0 * g * t));
  }
  return d;
}

/// C_l M_T C_l^T
inline double line_variance(const PsiContext& ctx, std::size_t l) {
  const Eigen::VectorXd mt = m_matrix(ctx.ou(), ctx.ou().horizon, ctx.ou().horizon);
  const Eigen::RowVectorXd c = ctx.row(l);
  return (c.array().square() * mt.transpose().array()).sum();
}

/// sigma_l^2 = C_l L^2 C_l^T
inline double sigma2(const PsiContext& ctx, std::size_t l) {
  const Eigen::RowVectorXd c = ctx.row(l);
  return (c.array().square() * ctx.ou().vol.transpose().array().square()).sum();
}

inline double psi(const PsiContext& ctx, std::size_t l, double level) {
  require(l < ctx.flow().line_count(), ErrorCode::InvalidInput, "line index out of range");
  const double s = line_variance(ctx, l);
  require(ctx.is_active(l) && s > 0.0, ErrorCode::ZeroVarianceLine,
          "line " + std::to_string(l) + " does not respond to the stochastic injections");
  const double gap = level - ctx.nu(l);
  return gap * gap / s;
}

struct RateWithArgmin {
  Rate rate = Rate::unbounded();
  std::vector<std::size_t> argmin;
};

namespace detail {

// Minimum over active lines of cost(l); ties within 1e-9 relative form the
// argmin set.
template <class Cost>
RateWithArgmin min_over_lines(const PsiContext& ctx, Cost&& cost) {
  RateWithArgmin out;
  if (ctx.active_lines().empty()) return out;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> values;
  for (std::size_t l : ctx.active_lines()) {
    values.push_back(cost(l));
    best = std::min(best, values.back());
  }
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k] - best <= 1e-9 * std::max(std::abs(best), 1e-300)) out.argmin.push_back(ctx.active_lines()[k]);
  }
  out.rate = Rate::finite(best);
  return out;
}

}  // namespace detail

/// I_c = min over active lines of psi(1) ^ psi(-1).
inline RateWithArgmin current_decay_rate(const PsiContext& ctx) {
  require(!ctx.active_lines().empty(), ErrorCode::NoStochasticLines,
          "no line responds to the stochastic injections; the decay rate is unbounded");
  return detail::min_over_lines(ctx, [&](std::size_t l) { return std::min(psi(ctx, l, 1.0), psi(ctx, l, -1.0)); });
}

struct OptimalPaths {
  SamplePath injections;     // X^(l)
  Eigen::MatrixXd currents;  // Y^(l) = C X + y, row k = t_k
};

/// X^(l)(t) = (a - nu_l) M_t C_l^T / (C_l M_T C_l^T) + mu on a uniform grid.
inline OptimalPaths optimal_paths(const PsiContext& ctx, std::size_t l, double level, std::size_t steps) {
  require(steps >= 1, ErrorCode::InvalidInput, "need at least one step");
  const double s = line_variance(ctx, l);
  require(ctx.is_active(l) && s > 0.0, ErrorCode::ZeroVarianceLine,
          "line " + std::to_string(l) + " does not respond to the stochastic injections");
  const double horizon = ctx.ou().horizon;
  const double scale = (level - ctx.nu(l)) / s;
  const Eigen::VectorXd c = ctx.row(l).transpose();
  const auto m = static_cast<Eigen::Index>(ctx.ou().dimension());
  OptimalPaths out;
  out.injections.horizon = horizon;
  out.injections.values.resize(static_cast<Eigen::Index>(steps) + 1, m);
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = k == steps ? horizon : horizon * static_cast<double>(k) / static_cast<double>(steps);
    const Eigen::VectorXd x = ctx.ou().mean + scale * m_matrix(ctx.ou(), t, horizon).cwiseProduct(c);
    out.injections.values.row(static_cast<Eigen::Index>(k)) = x.transpose();
  }
  out.currents = (out.injections.values * ctx.flow().stochastic.transpose()).rowwise() + ctx.op().y.transpose();
  return out;
}

inline double alpha(const PsiContext& ctx, std::size_t l) {
  return overload_threshold_equivalence(ctx.nu(l), ctx.flow().tau(static_cast<Eigen::Index>(l)), ctx.ou().horizon);
}

/// psi at +-alpha_l; the smaller side is the one sharing the sign of nu_l.
inline double psi_alpha(const PsiContext& ctx, std::size_t l) {
  const double a = alpha(ctx, l);
  return std::min(psi(ctx, l, a), psi(ctx, l, -a));
}

inline RateWithArgmin lb_decay_rate(const PsiContext& ctx) {
  require(!ctx.active_lines().empty(), ErrorCode::NoStochasticLines,
          "no line responds to the stochastic injections; the decay rate is unbounded");
  return detail::min_over_lines(ctx, [&](std::size_t l) { return psi_alpha(ctx, l); });
}

/// (1 + 2 tau0 gamma) I_c, valid for D = gamma I and tau = tau0 (1, ..., 1).
inline Rate taylor_decay_rate(const PsiContext& ctx, double tau0) {
  require(tau0 >= 0.0, ErrorCode::InvalidInput, "tau0 must be non-negative");
  require(ctx.ou().uniform_gamma(), ErrorCode::NonUniformGamma,
          "the Taylor closed form needs identical mean-reversion rates");
  const auto ic = current_decay_rate(ctx);
  return Rate::finite((1.0 + 2.0 * tau0 * ctx.ou().gamma(0)) * ic.rate.value());
}

/// f*(0), f*(T) and their time derivatives for the optimal current path.
struct PathEndpoints {
  Eigen::VectorXd f0, ft, df0, dft;
};

inline PathEndpoints path_endpoints(const PsiContext& ctx, std::size_t l, double level) {
  const double s = line_variance(ctx, l);
  require(ctx.is_active(l) && s > 0.0, ErrorCode::ZeroVarianceLine, "inactive line");
  const double horizon = ctx.ou().horizon;
  const double scale = (level - ctx.nu(l)) / s;
  const Eigen::VectorXd c = ctx.row(l).transpose();
  const Eigen::MatrixXd& cm = ctx.flow().stochastic;
  auto x_at = [&](double t) { Eigen::VectorXd x = ctx.ou().mean + scale * m_matrix(ctx.ou(), t, horizon).cwiseProduct(c); return x; };
  auto dx_at = [&](double t) { Eigen::VectorXd d = scale * m_matrix_derivative(ctx.ou(), t, horizon).cwiseProduct(c); return d; };
  PathEndpoints e;
  e.f0 = cm * x_at(0.0) + ctx.op().y;
  e.ft = cm * x_at(horizon) + ctx.op().y;
  e.df0 = cm * dx_at(0.0);
  e.dft = cm * dx_at(horizon);
  return e;
}

/// Phi = sum_i [K_i(f(T), f'(T)) - K_i(f(0), f'(0))],
/// K_i(f, f') = 1/2 ((C+_i f' - b_i(C+_i (f - y))) / l_i)^2, C+ = (C^T C)^{-1} C^T.
inline double taylor_phi(const PsiContext& ctx, const PathEndpoints& e) {
  const Eigen::MatrixXd& cm = ctx.flow().stochastic;
  require(numerical_rank(cm) == static_cast<std::size_t>(cm.cols()), ErrorCode::RankDeficiency,
          "C has no left inverse");
  const Eigen::MatrixXd pinv = (cm.transpose() * cm).ldlt().solve(cm.transpose());
  const auto& ou = ctx.ou();
  auto k_sum = [&](const Eigen::VectorXd& f, const Eigen::VectorXd& df) {
    const Eigen::VectorXd x = pinv * (f - ctx.op().y);
    const Eigen::VectorXd dx = pinv * df;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double r = (dx(i) - ou.gamma(i) * (ou.mean(i) - x(i))) / ou.vol(i);
      sum += 0.5 * r * r;
    }
    return sum;
  };
  return k_sum(e.ft, e.dft) - k_sum(e.f0, e.df0);
}

/// I_c + tau0 Phi evaluated on the most-at-risk line (the general route to
/// the Taylor rate; equals taylor_decay_rate when D = gamma I).
inline double taylor_rate_from_phi(const PsiContext& ctx, double tau0) {
  const auto ic = current_decay_rate(ctx);
  const std::size_t l = ic.argmin.front();
  const double level = ctx.nu(l) >= 0.0 ? 1.0 : -1.0;
  return ic.rate.value() + tau0 * taylor_phi(ctx, path_endpoints(ctx, l, level));
}

struct LineRates {
  std::size_t line = 0;
  std::pair<std::size_t, std::size_t> endpoints;
  bool active = false;
  double nu = 0.0;
  Rate psi_plus = Rate::unbounded();
  Rate psi_minus = Rate::unbounded();
  std::optional<double> alpha;
  Rate psi_alpha = Rate::unbounded();
  double sigma2 = 0.0;
};

struct DecayRateReport {
  std::vector<LineRates> lines;
  RateWithArgmin current;
  RateWithArgmin lower_bound;
  std::optional<Rate> taylor;  // present only for uniform gamma
  std::optional<double> tau0;
  std::vector<std::size_t> excluded;
};

inline DecayRateReport decay_rate_report(const PsiContext& ctx, std::optional<double> tau0) {
  DecayRateReport r;
  r.tau0 = tau0;
  for (std::size_t l = 0; l < ctx.flow().line_count(); ++l) {
    LineRates lr;
    lr.line = l;
    lr.endpoints = ctx.flow().endpoints[l];
    lr.nu = ctx.nu(l);
    lr.active = ctx.is_active(l);
    if (lr.active) {
      lr.psi_plus = Rate::finite(psi(ctx, l, 1.0));
      lr.psi_minus = Rate::finite(psi(ctx, l, -1.0));
      lr.alpha = alpha(ctx, l);
      lr.psi_alpha = Rate::finite(psi_alpha(ctx, l));
      lr.sigma2 = sigma2(ctx, l);
    } else {
      r.excluded.push_back(l);
    }
    r.lines.push_back(lr);
  }
  if (!ctx.active_lines().empty()) {
    r.current = current_decay_rate(ctx);
    r.lower_bound = lb_decay_rate(ctx);
    if (tau0 && ctx.ou().uniform_gamma()) r.taylor = taylor_decay_rate(ctx, *tau0);
  } else if (tau0 && ctx.ou().uniform_gamma()) {
    r.taylor = Rate::unbounded();
  }
  return r;
}

}  // namespace ldcap
