#pragma once

// Shared fixtures for the test suites: random connected networks with
// feasible operating points, and small numerical oracles that do not go
// through the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ldcap/ldcap.hpp"

#ifndef LDCAP_DATA_DIR
#define LDCAP_DATA_DIR "data"
#endif

namespace ldcap_test {

using ldcap::GridNetwork;
using ldcap::Line;

inline std::string read_data(const std::string& name) {
  std::ifstream in(std::string(LDCAP_DATA_DIR) + "/" + name);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Random spanning tree plus extra edges; endpoints sorted, lines sorted.
inline std::vector<std::pair<std::size_t, std::size_t>> random_edges(std::mt19937_64& rng, std::size_t nodes,
                                                                     std::size_t lines) {
  std::set<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::size_t> order(nodes);
  for (std::size_t i = 0; i < nodes; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 1; k < nodes; ++k) {
    const std::size_t a = order[k], b = order[pick(rng, 0, k - 1)];
    edges.insert({std::min(a, b), std::max(a, b)});
  }
  const std::size_t max_edges = nodes * (nodes - 1) / 2;
  lines = std::min(lines, max_edges);
  while (edges.size() < lines) {
    const std::size_t a = pick(rng, 0, nodes - 1), b = pick(rng, 0, nodes - 1);
    if (a != b) edges.insert({std::min(a, b), std::max(a, b)});
  }
  return {edges.begin(), edges.end()};
}

struct Instance {
  GridNetwork net;
  ldcap::DcFlowMatrices flow;
  ldcap::OuModel ou;
  Eigen::VectorXd mu_d;

  ldcap::PsiContext context() const { return ldcap::PsiContext(flow, ou, mu_d); }
};

struct InstanceShape {
  std::size_t min_nodes = 3, max_nodes = 6;  // including the slack
  std::size_t max_extra_lines = 3;
  std::size_t max_lines = 100;
  std::size_t max_m = 3;
  bool uniform_gamma = false;
  double horizon_lo = 0.3, horizon_hi = 2.0;
};

/// Ratings are chosen after the base flows so that every |nu_l| lies in
/// [0.05, 0.85].
inline Instance random_instance(std::mt19937_64& rng, const InstanceShape& shape = {}) {
  const std::size_t nodes = pick(rng, shape.min_nodes, shape.max_nodes);
  const std::size_t n = nodes - 1;
  const std::size_t lines = std::min(shape.max_lines, n + pick(rng, 0, shape.max_extra_lines));
  const auto edges = random_edges(rng, nodes, std::max(lines, n));
  const std::size_t m = pick(rng, 1, std::min(shape.max_m, n));

  std::vector<Line> raw;
  for (auto [a, b] : edges) raw.push_back({a, b, uniform(rng, 0.5, 3.0), 1.0, uniform(rng, 0.1, 2.0)});
  const GridNetwork unit(nodes, raw);
  const auto f1 = ldcap::build_flow_matrices(unit, m);

  Eigen::VectorXd mean(static_cast<Eigen::Index>(m)), mu_d(static_cast<Eigen::Index>(n - m));
  for (Eigen::Index i = 0; i < mean.size(); ++i) mean(i) = uniform(rng, -1.0, 1.0);
  for (Eigen::Index i = 0; i < mu_d.size(); ++i) mu_d(i) = uniform(rng, -1.0, 1.0);
  const Eigen::VectorXd base = f1.stochastic * mean + f1.deterministic * mu_d;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const double b = std::abs(base(static_cast<Eigen::Index>(l)));
    raw[l].rating = b > 1e-6 ? b / uniform(rng, 0.05, 0.85) : uniform(rng, 0.5, 2.0);
  }
  GridNetwork net(nodes, raw);
  auto flow = ldcap::build_flow_matrices(net, m);

  ldcap::OuModel ou;
  ou.gamma.resize(mean.size());
  ou.vol.resize(mean.size());
  const double g0 = uniform(rng, 0.2, 2.0);
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    ou.gamma(i) = shape.uniform_gamma ? g0 : uniform(rng, 0.2, 2.0);
    ou.vol(i) = uniform(rng, 0.2, 2.0);
  }
  ou.mean = mean;
  ou.horizon = uniform(rng, shape.horizon_lo, shape.horizon_hi);
  return {std::move(net), std::move(flow), std::move(ou), std::move(mu_d)};
}

/// Single line between slack 0 and one OU node, rating 1.
inline ldcap::PsiContext single_line(double mu, double gamma, double vol, double tau, double horizon) {
  GridNetwork net(2, {Line{0, 1, 1.0, 1.0, tau}});
  ldcap::OuModel ou;
  ou.gamma = Eigen::VectorXd::Constant(1, gamma);
  ou.vol = Eigen::VectorXd::Constant(1, vol);
  ou.mean = Eigen::VectorXd::Constant(1, mu);
  ou.horizon = horizon;
  return ldcap::PsiContext(ldcap::build_flow_matrices(net, 1), ou, Eigen::VectorXd(0));
}

/// Solves a symmetric tridiagonal system by LDL^T; returns false if a pivot
/// is not positive (matrix not positive definite).
inline bool tridiagonal_spd_solve(const std::vector<double>& diag, const std::vector<double>& off,
                                  const std::vector<double>& rhs, std::vector<double>& x) {
  const std::size_t n = diag.size();
  std::vector<double> d(n), l(n, 0.0), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = diag[i] - (i > 0 ? l[i] * l[i] * d[i - 1] : 0.0);
    if (!(d[i] > 0.0)) return false;
    if (i + 1 < n) l[i + 1] = off[i] / d[i];
  }
  for (std::size_t i = 0; i < n; ++i) z[i] = rhs[i] - (i > 0 ? l[i] * z[i - 1] : 0.0);
  x.assign(n, 0.0);
  for (std::size_t i = n; i-- > 0;) x[i] = z[i] / d[i] - (i + 1 < n ? l[i + 1] * x[i + 1] : 0.0);
  return true;
}

/// Direct discretization of the single-line temperature problem:
///   min 1/2 int ((g' + gamma (g - m)) / l)^2  s.t.  theta(T) = 1,
/// with g(0) = m and theta(T) = e^{-T/tau} m^2 + int e^{-(T-s)/tau}/tau g^2 ds
/// by the trapezoid rule. Writing h = g - m the objective is h^T Q h with Q
/// tridiagonal, the constraint is quadratic with diagonal weight, and the
/// minimizer solves (Q - lam W) h = lam W m for the multiplier lam, found by
/// bisection inside the positive-definite range.
inline double temperature_rate_oracle(double mu, double gamma, double vol, double tau, double horizon,
                                      std::size_t n) {
  const double m = std::abs(mu);
  const double dt = horizon / static_cast<double>(n);
  // unknowns h_1..h_n
  std::vector<double> qd(n, 0.0), qo(n > 0 ? n - 1 : 0, 0.0), w(n);
  // each step contributes 0.25 dt / l^2 [r0^2 + r1^2], r0 = (h1 - h0)/dt + g h0, r1 = (h1 - h0)/dt + g h1
  const double c = 0.25 * dt / (vol * vol);
  const double a0 = -1.0 / dt + gamma, a1 = 1.0 / dt;  // r0 = a0 h0 + a1 h1
  const double b0 = -1.0 / dt, b1 = 1.0 / dt + gamma;  // r1 = b0 h0 + b1 h1
  for (std::size_t k = 0; k < n; ++k) {
    // variables h_k (index k-1, absent for k = 0) and h_{k+1} (index k)
    qd[k] += c * (a1 * a1 + b1 * b1);
    if (k > 0) {
      qd[k - 1] += c * (a0 * a0 + b0 * b0);
      qo[k - 1] += c * (a0 * a1 + b0 * b1);
    }
  }
  for (std::size_t k = 1; k <= n; ++k) {
    const double weight = (k == n ? 0.5 : 1.0) * dt;
    w[k - 1] = weight * std::exp(-(horizon - static_cast<double>(k) * dt) / tau) / tau;
  }
  const double w0 = 0.5 * dt * std::exp(-horizon / tau) / tau;
  const double target = 1.0 - std::exp(-horizon / tau) * m * m - w0 * m * m;

  auto constraint = [&](double lam, std::vector<double>& h) {
    std::vector<double> dd(n), rhs(n);
    for (std::size_t i = 0; i < n; ++i) {
      dd[i] = qd[i] - lam * w[i];
      rhs[i] = lam * w[i] * m;
    }
    if (!tridiagonal_spd_solve(dd, qo, rhs, h)) return std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * (h[i] + m) * (h[i] + m);
    return s;
  };
  std::vector<double> h;
  double lo = 0.0, hi = 1.0;
  while (constraint(hi, h) < target) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (constraint(mid, h) < target ? lo : hi) = mid;
  }
  constraint(lo, h);
  double cost = 0.0;
  double prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double cur = h[k];
    const double r0 = a0 * prev + a1 * cur, r1 = b0 * prev + b1 * cur;
    cost += c * (r0 * r0 + r1 * r1);
    prev = cur;
  }
  return cost;
}

// Cheapest discrete path x_0 = mu, x_1..x_n with C_l x_n + y_l = level, under
// the exact Gaussian transition energy of each OU coordinate,
//   sum_k (h_{k+1} - e^{-g dt} h_k)^2 / (2 q),  q = l^2 (1 - e^{-2 g dt}) / (2 g),
// h = x - mu. Solved as one dense KKT system.
inline double brute_force_psi(const ldcap::PsiContext& ctx, std::size_t line, double level, std::size_t n) {
  const auto& ou = ctx.ou();
  const auto m = static_cast<Eigen::Index>(ou.dimension());
  const auto steps = static_cast<Eigen::Index>(n);
  const double dt = ou.horizon / static_cast<double>(n);
  const Eigen::Index vars = m * steps;
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(vars + 1, vars + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(vars + 1);
  auto idx = [&](Eigen::Index i, Eigen::Index k) { return i * steps + (k - 1); };  // k = 1..n
  for (Eigen::Index i = 0; i < m; ++i) {
    const double g = ou.gamma(i);
    const double a = std::exp(-g * dt);
    const double q = ou.vol(i) * ou.vol(i) * (1.0 - std::exp(-2.0 * g * dt)) / (2.0 * g);
    // gradient of (h_{k+1} - a h_k)^2 / (2 q) is linear; assemble the Hessian
    for (Eigen::Index k = 0; k < steps; ++k) {
      const Eigen::Index hi = idx(i, k + 1);
      kkt(hi, hi) += 1.0 / q;
      if (k > 0) {
        const Eigen::Index lo = idx(i, k);
        kkt(lo, lo) += a * a / q;
        kkt(lo, hi) -= a / q;
        kkt(hi, lo) -= a / q;
      }
    }
  }
  const Eigen::RowVectorXd c = ctx.row(line);
  for (Eigen::Index i = 0; i < m; ++i) {
    kkt(idx(i, steps), vars) = c(i);
    kkt(vars, idx(i, steps)) = c(i);
  }
  rhs(vars) = level - ctx.nu(line);
  const Eigen::VectorXd sol = kkt.partialPivLu().solve(rhs);
  const Eigen::VectorXd h = sol.head(vars);
  return 0.5 * h.dot(kkt.topLeftCorner(vars, vars) * h);
}


}  // namespace ldcap_test
