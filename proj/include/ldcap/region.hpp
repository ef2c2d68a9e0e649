#pragma once

// Capacity regions as per-line slabs |nu_l| < r_l, 2-D slices of them and
// the most-at-risk-line partition of a slice.
//
//   eta_l     = sqrt(eps log(1/p) C_l M_T C_l^T)
//   current     r_l = 1 - eta_l
//   thermal LB  r_l = sqrt(1 - eta_l^2 e (1 - e)) - eta_l (1 - e),  e = e^{-T/tau_l}
//   Taylor      r_l = 1 - eta_l / sqrt(1 + 2 tau0 gamma)
//   deterministic r_l = 1

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ldcap/error.hpp"
#include "ldcap/grid_model.hpp"
#include "ldcap/ld_rates.hpp"
#include "ldcap/polygon.hpp"

namespace ldcap {

enum class RegionKind { Deterministic, Current, TemperatureLb, TemperatureTaylor };

inline const char* to_string(RegionKind k) {
  switch (k) {
    case RegionKind::Deterministic: return "deterministic";
    case RegionKind::Current: return "current";
    case RegionKind::TemperatureLb: return "temperature_lb";
    case RegionKind::TemperatureTaylor: return "temperature_taylor";
  }
  return "?";
}

inline RegionKind region_kind_from_string(const std::string& s) {
  if (s == "deterministic") return RegionKind::Deterministic;
  if (s == "current") return RegionKind::Current;
  if (s == "temperature_lb" || s == "lb") return RegionKind::TemperatureLb;
  if (s == "temperature_taylor" || s == "taylor") return RegionKind::TemperatureTaylor;
  fail(ErrorCode::InvalidInput, "unknown region kind '" + s + "'");
}

struct CapacityRegion {
  RegionKind kind = RegionKind::Deterministic;
  Eigen::VectorXd bounds;  // r_l for every line; 1 outside L'
  Eigen::VectorXd eta;     // 0 outside L'
  std::vector<std::size_t> active;
  double epsilon = 0.0;
  double p = 1.0;
  double horizon = 1.0;
  std::optional<double> tau0;
};

inline double eta_bound(double epsilon, double p, double line_variance) {
  return std::sqrt(epsilon * std::log(1.0 / p) * line_variance);
}

inline double lb_bound(double eta, double tau, double horizon) {
  const double e = std::exp(-horizon / tau);
  return std::sqrt(1.0 - eta * eta * e * (1.0 - e)) - eta * (1.0 - e);
}

inline CapacityRegion build_region(const PsiContext& ctx, RegionKind kind, double epsilon, double p,
                                   std::optional<double> tau0 = std::nullopt) {
  require(epsilon > 0.0 && std::isfinite(epsilon), ErrorCode::InvalidInput, "epsilon must be positive");
  require(p > 0.0 && p < 1.0, ErrorCode::InvalidInput, "p must lie in (0, 1)");
  const auto L = static_cast<Eigen::Index>(ctx.flow().line_count());
  CapacityRegion r;
  r.kind = kind;
  r.epsilon = epsilon;
  r.p = p;
  r.horizon = ctx.ou().horizon;
  r.active = ctx.active_lines();
  r.bounds = Eigen::VectorXd::Ones(L);
  r.eta = Eigen::VectorXd::Zero(L);
  if (kind == RegionKind::TemperatureTaylor) {
    require(tau0.has_value() && *tau0 >= 0.0, ErrorCode::InvalidInput, "Taylor region needs tau0 >= 0");
    require(ctx.ou().uniform_gamma(), ErrorCode::NonUniformGamma,
            "the Taylor region needs identical mean-reversion rates");
    r.tau0 = tau0;
  }
  if (kind == RegionKind::Deterministic) return r;
  for (std::size_t l : r.active) {
    const auto li = static_cast<Eigen::Index>(l);
    const double eta = eta_bound(epsilon, p, line_variance(ctx, l));
    r.eta(li) = eta;
    double bound = 1.0;
    switch (kind) {
      case RegionKind::Current: bound = 1.0 - eta; break;
      case RegionKind::TemperatureLb: bound = lb_bound(eta, ctx.flow().tau(li), r.horizon); break;
      case RegionKind::TemperatureTaylor: bound = 1.0 - eta / std::sqrt(1.0 + 2.0 * *tau0 * ctx.ou().gamma(0)); break;
      case RegionKind::Deterministic: break;
    }
    const auto [i, j] = ctx.flow().endpoints[l];
    if (!(bound > 0.0)) {
      throw Error(ErrorCode::BoundCollapse, l,
                  std::string(to_string(kind)) + " bound for line " + std::to_string(l) + " (" + std::to_string(i) + "," +
                      std::to_string(j) + ") is " + std::to_string(bound) + "; no admissible operating point");
    }
    r.bounds(li) = bound;
  }
  return r;
}

inline bool contains(const CapacityRegion& region, const DcFlowMatrices& flow, const Eigen::VectorXd& mu,
                     const Eigen::VectorXd& mu_d) {
  require(region.bounds.size() == static_cast<Eigen::Index>(flow.line_count()), ErrorCode::InvalidInput,
          "region and network disagree on the line count");
  const Eigen::VectorXd nu = flow.stochastic * mu + flow.deterministic * mu_d;
  for (Eigen::Index l = 0; l < nu.size(); ++l) {
    if (!(std::abs(nu(l)) < region.bounds(l)) || !(std::abs(nu(l)) < 1.0)) return false;
  }
  return true;
}

/// Two free injections, as indices into the bus vector [mu; mu_D]
/// (0..N-1); all other injections fixed.
struct SliceSpec {
  std::size_t u_index = 0;
  std::size_t v_index = 1;
  Eigen::VectorXd mu;    // stochastic initial values
  Eigen::VectorXd mu_d;  // deterministic values
  BoundingBox bbox{-10.0, 10.0, -10.0, 10.0};
};

struct Slice2D {
  SliceSpec spec;
  Polygon polygon;
};

namespace detail {

// nu = base + du * u + dv * v over the slice
struct AffineCurrents {
  Eigen::VectorXd base, du, dv;
};

inline AffineCurrents slice_currents(const DcFlowMatrices& flow, const SliceSpec& s) {
  const auto n = static_cast<Eigen::Index>(flow.bus_count());
  const auto m = static_cast<Eigen::Index>(flow.stochastic_count);
  require(s.u_index != s.v_index, ErrorCode::InvalidInput, "free indices must differ");
  require(static_cast<Eigen::Index>(s.u_index) < n && static_cast<Eigen::Index>(s.v_index) < n,
          ErrorCode::InvalidInput, "free index out of range");
  require(s.mu.size() == m && s.mu_d.size() == n - m, ErrorCode::InvalidInput,
          "fixed injection vectors have wrong length");
  require(s.bbox.u0 < s.bbox.u1 && s.bbox.v0 < s.bbox.v1, ErrorCode::InvalidInput, "empty bounding box");
  Eigen::VectorXd z(n);
  z << s.mu, s.mu_d;
  z(static_cast<Eigen::Index>(s.u_index)) = 0.0;
  z(static_cast<Eigen::Index>(s.v_index)) = 0.0;
  const auto buses = flow.normalized.rightCols(n);
  return {buses * z, buses.col(static_cast<Eigen::Index>(s.u_index)), buses.col(static_cast<Eigen::Index>(s.v_index))};
}

inline Polygon clip_slabs(const AffineCurrents& nu, const Eigen::VectorXd& bounds, const BoundingBox& box) {
  Polygon poly = box_polygon(box.u0, box.u1, box.v0, box.v1);
  for (Eigen::Index l = 0; l < bounds.size() && !poly.empty(); ++l) {
    const double r = std::min(bounds(l), 1.0);
    if (nu.du(l) == 0.0 && nu.dv(l) == 0.0) {
      if (!(std::abs(nu.base(l)) < r)) return {};
      continue;
    }
    poly = clip(poly, {nu.du(l), nu.dv(l), r - nu.base(l)});
    poly = clip(poly, {-nu.du(l), -nu.dv(l), r + nu.base(l)});
  }
  if (poly.size() < 3 || area(poly) <= 0.0) return {};
  return poly;
}

}  // namespace detail

inline Slice2D slice2d(const CapacityRegion& region, const DcFlowMatrices& flow, const SliceSpec& spec) {
  const auto nu = detail::slice_currents(flow, spec);
  Slice2D s{spec, detail::clip_slabs(nu, region.bounds, spec.bbox)};
  require(!s.polygon.empty(), ErrorCode::EmptySlice,
          std::string(to_string(region.kind)) + " region does not meet the slice inside the bounding box");
  if (signed_area(s.polygon) < 0.0) std::reverse(s.polygon.begin(), s.polygon.end());
  return s;
}

struct RiskRegion {
  std::vector<std::size_t> lines;  // argmin set (several on ties)
  std::size_t cells = 0;
  double area = 0.0;
  Point2 centroid;
  std::vector<Polygon> outline;  // rectilinear boundary loops, outer ones counterclockwise
};

struct RiskPartition {
  BoundingBox grid;
  std::size_t resolution = 0;
  Polygon deterministic;
  std::vector<int> cell_region;  // row-major (v index major), -1 outside the slice
  std::vector<RiskRegion> regions;
  std::size_t central = 0;  // largest region

  double du() const { return (grid.u1 - grid.u0) / static_cast<double>(resolution); }
  double dv() const { return (grid.v1 - grid.v0) / static_cast<double>(resolution); }
  Point2 cell_center(std::size_t i, std::size_t j) const {
    return {grid.u0 + (static_cast<double>(i) + 0.5) * du(), grid.v0 + (static_cast<double>(j) + 0.5) * dv()};
  }

  /// Distinct argmin sets present, in first-seen order.
  std::vector<std::vector<std::size_t>> label_sets() const {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& r : regions) {
      if (std::find(out.begin(), out.end(), r.lines) == out.end()) out.push_back(r.lines);
    }
    return out;
  }
};

namespace detail {

// Boundary loops of a set of grid cells, as lattice-vertex chains with
// collinear points removed.
inline std::vector<std::vector<std::pair<std::size_t, std::size_t>>> trace_outline(
    const std::vector<int>& cell_region, std::size_t n, int id) {
  using V = std::pair<std::size_t, std::size_t>;
  auto inside = [&](long i, long j) {
    if (i < 0 || j < 0 || i >= static_cast<long>(n) || j >= static_cast<long>(n)) return false;
    return cell_region[static_cast<std::size_t>(j) * n + static_cast<std::size_t>(i)] == id;
  };
  std::multimap<V, V> edges;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!inside(static_cast<long>(i), static_cast<long>(j))) continue;
      const long li = static_cast<long>(i), lj = static_cast<long>(j);
      if (!inside(li, lj - 1)) edges.emplace(V{i, j}, V{i + 1, j});
      if (!inside(li + 1, lj)) edges.emplace(V{i + 1, j}, V{i + 1, j + 1});
      if (!inside(li, lj + 1)) edges.emplace(V{i + 1, j + 1}, V{i, j + 1});
      if (!inside(li - 1, lj)) edges.emplace(V{i, j + 1}, V{i, j});
    }
  }
  std::vector<std::vector<V>> loops;
  while (!edges.empty()) {
    auto it = edges.begin();
    const V start = it->first;
    std::vector<V> loop{start};
    V cur = it->second;
    edges.erase(it);
    while (cur != start) {
      loop.push_back(cur);
      auto next = edges.find(cur);
      if (next == edges.end()) break;
      cur = next->second;
      edges.erase(next);
    }
    std::vector<V> simple;
    const std::size_t k = loop.size();
    for (std::size_t a = 0; a < k; ++a) {
      const V& p = loop[(a + k - 1) % k];
      const V& q = loop[a];
      const V& r = loop[(a + 1) % k];
      const bool collinear = (p.first == q.first && q.first == r.first) || (p.second == q.second && q.second == r.second);
      if (!collinear) simple.push_back(q);
    }
    loops.push_back(std::move(simple));
  }
  return loops;
}

}  // namespace detail

/// Labels each grid cell inside the deterministic slice by the argmin of
/// psi_l(1) ^ psi_l(-1) and merges 8-connected cells with equal labels.
inline RiskPartition risk_partition(const PsiContext& ctx, const SliceSpec& spec, std::size_t resolution = 400) {
  require(resolution >= 2, ErrorCode::InvalidInput, "resolution must be at least 2");
  const auto& flow = ctx.flow();
  const auto nu = detail::slice_currents(flow, spec);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(flow.line_count()));
  RiskPartition part;
  part.deterministic = detail::clip_slabs(nu, ones, spec.bbox);
  require(!part.deterministic.empty(), ErrorCode::EmptySlice, "deterministic region does not meet the slice");
  if (signed_area(part.deterministic) < 0.0) std::reverse(part.deterministic.begin(), part.deterministic.end());
  part.grid = bounds(part.deterministic);
  part.resolution = resolution;
  const std::size_t n = resolution;

  std::vector<double> inv_var;
  for (std::size_t l : ctx.active_lines()) inv_var.push_back(1.0 / line_variance(ctx, l));

  std::vector<std::vector<std::size_t>> label_table;
  std::vector<int> label(n * n, -1);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const Point2 c = part.cell_center(i, j);
      const Eigen::VectorXd y = nu.base + nu.du * c.u + nu.dv * c.v;
      if (!(y.cwiseAbs().maxCoeff() < 1.0)) continue;
      double best = std::numeric_limits<double>::infinity();
      std::vector<double> psi_values;
      for (std::size_t k = 0; k < ctx.active_lines().size(); ++k) {
        const double gap = 1.0 - std::abs(y(static_cast<Eigen::Index>(ctx.active_lines()[k])));
        psi_values.push_back(gap * gap * inv_var[k]);
        best = std::min(best, psi_values.back());
      }
      std::vector<std::size_t> argmin;
      for (std::size_t k = 0; k < psi_values.size(); ++k) {
        if (psi_values[k] - best <= 1e-9 * std::max(best, 1e-300)) argmin.push_back(ctx.active_lines()[k]);
      }
      auto found = std::find(label_table.begin(), label_table.end(), argmin);
      if (found == label_table.end()) {
        label_table.push_back(argmin);
        found = label_table.end() - 1;
      }
      label[j * n + i] = static_cast<int>(found - label_table.begin());
    }
  }

  // 8-connected flood fill: thin diagonal strips stay in one piece
  part.cell_region.assign(n * n, -1);
  const double cell_area = part.du() * part.dv();
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n * n; ++start) {
    if (label[start] < 0 || part.cell_region[start] >= 0) continue;
    const int id = static_cast<int>(part.regions.size());
    RiskRegion reg;
    reg.lines = label_table[static_cast<std::size_t>(label[start])];
    double su = 0.0, sv = 0.0;
    stack.assign(1, start);
    part.cell_region[start] = id;
    while (!stack.empty()) {
      const std::size_t c = stack.back();
      stack.pop_back();
      const std::size_t i = c % n, j = c / n;
      ++reg.cells;
      const Point2 p = part.cell_center(i, j);
      su += p.u;
      sv += p.v;
      for (int dj = -1; dj <= 1; ++dj) {
        for (int di = -1; di <= 1; ++di) {
          const long ni = static_cast<long>(i) + di, nj = static_cast<long>(j) + dj;
          if ((di == 0 && dj == 0) || ni < 0 || nj < 0 || ni >= static_cast<long>(n) || nj >= static_cast<long>(n)) continue;
          const std::size_t d = static_cast<std::size_t>(nj) * n + static_cast<std::size_t>(ni);
          if (part.cell_region[d] < 0 && label[d] == label[start]) {
            part.cell_region[d] = id;
            stack.push_back(d);
          }
        }
      }
    }
    reg.area = static_cast<double>(reg.cells) * cell_area;
    reg.centroid = {su / static_cast<double>(reg.cells), sv / static_cast<double>(reg.cells)};
    part.regions.push_back(std::move(reg));
  }
  require(!part.regions.empty(), ErrorCode::EmptySlice, "no grid cell falls inside the deterministic slice");

  for (std::size_t r = 0; r < part.regions.size(); ++r) {
    for (const auto& loop : detail::trace_outline(part.cell_region, n, static_cast<int>(r))) {
      Polygon poly;
      for (const auto& [i, j] : loop) {
        poly.push_back({part.grid.u0 + static_cast<double>(i) * part.du(), part.grid.v0 + static_cast<double>(j) * part.dv()});
      }
      part.regions[r].outline.push_back(std::move(poly));
    }
    if (part.regions[r].area > part.regions[part.central].area) part.central = r;
  }
  return part;
}

}  // namespace ldcap
