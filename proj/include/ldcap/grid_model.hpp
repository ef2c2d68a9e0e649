#pragma once

// DC power-flow map from nodal injections to normalized line currents.
//
// Node 0 is the slack bus. Nodes 1..m carry stochastic injections and
// nodes m+1..N deterministic ones; callers that start from arbitrary bus
// ids permute first (see io_formats.hpp). Lines are oriented i -> j with
// i < j and listed in lexicographic order, so
//
//   B   = Laplacian,  A = oriented incidence,  D_beta = diag(susceptance)
//   B~  = blockdiag(0, B^-1 restricted to nodes 1..N)
//   C~  = D_beta * A * B~          (currents per unit injection)
//   C-  = rows of C~ divided by the line ratings = [0 | C | C_D]
//
// and the normalized current is Y = C X + C_D mu_D.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ldcap/error.hpp"

namespace ldcap {

struct Line {
  std::size_t from = 0;
  std::size_t to = 0;
  double susceptance = 1.0;
  // +inf marks an unrated line: its normalized current is identically zero.
  double rating = 1.0;
  double tau = 1.0;
};

class GridNetwork {
 public:
  GridNetwork(std::size_t node_count, std::vector<Line> lines)
      : node_count_(node_count), lines_(std::move(lines)) {
    validate();
  }

  std::size_t node_count() const noexcept { return node_count_; }
  std::size_t bus_count() const noexcept { return node_count_ - 1; }
  std::size_t line_count() const noexcept { return lines_.size(); }
  std::span<const Line> lines() const noexcept { return lines_; }
  const Line& line(std::size_t l) const { return lines_.at(l); }

  bool all_rated() const {
    return std::all_of(lines_.begin(), lines_.end(),
                       [](const Line& ln) { return std::isfinite(ln.rating); });
  }

  GridNetwork with_uniform_tau(double tau) const {
    std::vector<Line> copy = lines_;
    for (auto& ln : copy) ln.tau = tau;
    return GridNetwork(node_count_, std::move(copy));
  }

 private:
  void validate() const {
    require(node_count_ >= 2, ErrorCode::InvalidInput, "network needs a slack node and at least one bus");
    require(!lines_.empty(), ErrorCode::GraphError, "network has no lines");
    for (std::size_t l = 0; l < lines_.size(); ++l) {
      const Line& ln = lines_[l];
      const std::string where = "line " + std::to_string(l) + " (" + std::to_string(ln.from) + "," +
                                std::to_string(ln.to) + ")";
      require(ln.from < ln.to, ErrorCode::InvalidInput, where + ": endpoints must satisfy i < j");
      require(ln.to < node_count_, ErrorCode::InvalidInput, where + ": endpoint out of range");
      require(std::isfinite(ln.susceptance) && ln.susceptance > 0.0, ErrorCode::InvalidInput,
              where + ": susceptance must be positive");
      require(ln.rating > 0.0, ErrorCode::InvalidInput, where + ": rating must be positive");
      require(std::isfinite(ln.tau) && ln.tau > 0.0, ErrorCode::NonPositiveTau,
              where + ": thermal constant must be positive");
      if (l > 0) {
        const Line& prev = lines_[l - 1];
        require(std::pair(prev.from, prev.to) < std::pair(ln.from, ln.to), ErrorCode::InvalidInput,
                where + ": lines must be strictly lexicographically sorted");
      }
    }
    // union-find connectivity
    std::vector<std::size_t> parent(node_count_);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    std::size_t components = node_count_;
    for (const Line& ln : lines_) {
      const auto a = find(ln.from);
      const auto b = find(ln.to);
      if (a != b) {
        parent[a] = b;
        --components;
      }
    }
    require(components == 1, ErrorCode::GraphError, "network graph is not connected");
  }

  std::size_t node_count_;
  std::vector<Line> lines_;
};

struct DcFlowMatrices {
  std::size_t stochastic_count = 0;  // m
  Eigen::MatrixXd laplacian;         // B, (N+1) x (N+1)
  Eigen::MatrixXd incidence;         // A, L x (N+1)
  Eigen::VectorXd susceptance;       // diagonal of D_beta
  Eigen::MatrixXd grounded_inverse;  // B~, first row/column zero
  Eigen::MatrixXd transfer;          // C~ = D_beta A B~
  Eigen::MatrixXd normalized;        // C-
  Eigen::MatrixXd stochastic;        // C,   L x m
  Eigen::MatrixXd deterministic;     // C_D, L x (N-m)
  Eigen::VectorXd ratings;
  Eigen::VectorXd tau;
  std::vector<std::pair<std::size_t, std::size_t>> endpoints;

  std::size_t line_count() const { return static_cast<std::size_t>(normalized.rows()); }
  std::size_t bus_count() const { return static_cast<std::size_t>(normalized.cols()) - 1; }
  std::size_t deterministic_count() const { return bus_count() - stochastic_count; }
};

/// Number of singular values above rel_tol times the largest one.
inline std::size_t numerical_rank(const Eigen::MatrixXd& m, double rel_tol = 1e-9) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double cutoff = rel_tol * s(0);
  return static_cast<std::size_t>((s.array() > cutoff).count());
}

inline Eigen::MatrixXd build_laplacian(const GridNetwork& net) {
  const auto n = static_cast<Eigen::Index>(net.node_count());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
  for (const Line& ln : net.lines()) {
    const auto i = static_cast<Eigen::Index>(ln.from);
    const auto j = static_cast<Eigen::Index>(ln.to);
    b(i, j) -= ln.susceptance;
    b(j, i) -= ln.susceptance;
    b(i, i) += ln.susceptance;
    b(j, j) += ln.susceptance;
  }
  return b;
}

inline Eigen::MatrixXd build_incidence(const GridNetwork& net) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(net.line_count()),
                                            static_cast<Eigen::Index>(net.node_count()));
  for (std::size_t l = 0; l < net.line_count(); ++l) {
    const Line& ln = net.line(l);
    a(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(ln.from)) = 1.0;
    a(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(ln.to)) = -1.0;
  }
  return a;
}

/// Builds the full B -> B~ -> C~ -> C- chain and checks the rank structure
/// every downstream formula relies on (C must have full column rank).
inline DcFlowMatrices build_flow_matrices(const GridNetwork& net, std::size_t stochastic_count) {
  const std::size_t n_bus = net.bus_count();
  require(stochastic_count >= 1 && stochastic_count <= n_bus, ErrorCode::InvalidInput,
          "stochastic node count must lie in [1, N]");
  const auto n = static_cast<Eigen::Index>(n_bus);
  const auto m = static_cast<Eigen::Index>(stochastic_count);

  DcFlowMatrices f;
  f.stochastic_count = stochastic_count;
  f.laplacian = build_laplacian(net);
  f.incidence = build_incidence(net);
  f.susceptance.resize(static_cast<Eigen::Index>(net.line_count()));
  f.ratings.resize(f.susceptance.size());
  f.tau.resize(f.susceptance.size());
  for (std::size_t l = 0; l < net.line_count(); ++l) {
    const auto li = static_cast<Eigen::Index>(l);
    f.susceptance(li) = net.line(l).susceptance;
    f.ratings(li) = net.line(l).rating;
    f.tau(li) = net.line(l).tau;
    f.endpoints.emplace_back(net.line(l).from, net.line(l).to);
  }

  const Eigen::MatrixXd reduced = f.laplacian.bottomRightCorner(n, n);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(reduced);
  const double rcond = lu.rcond();
  require(std::isfinite(rcond) && rcond > 1e-13, ErrorCode::SingularReducedLaplacian,
          "reduced Laplacian is numerically singular (rcond=" + std::to_string(rcond) + ")");

  f.grounded_inverse = Eigen::MatrixXd::Zero(n + 1, n + 1);
  f.grounded_inverse.bottomRightCorner(n, n) = lu.inverse();
  f.transfer = f.susceptance.asDiagonal() * f.incidence * f.grounded_inverse;

  f.normalized = f.transfer;
  for (Eigen::Index l = 0; l < f.normalized.rows(); ++l) {
    if (std::isfinite(f.ratings(l))) {
      f.normalized.row(l) /= f.ratings(l);
    } else {
      f.normalized.row(l).setZero();
    }
  }
  f.stochastic = f.normalized.block(0, 1, f.normalized.rows(), m);
  f.deterministic = f.normalized.block(0, 1 + m, f.normalized.rows(), n - m);

  const auto n_rank = static_cast<std::size_t>(n);
  require(numerical_rank(f.laplacian) == n_rank, ErrorCode::RankDeficiency, "rank(B) != N");
  require(numerical_rank(f.transfer) == n_rank, ErrorCode::RankDeficiency, "rank(C~) != N");
  if (net.all_rated()) {
    require(numerical_rank(f.normalized) == n_rank, ErrorCode::RankDeficiency, "rank(C-) != N");
  }
  require(numerical_rank(f.stochastic) == stochastic_count, ErrorCode::RankDeficiency,
          "stochastic block C does not have full column rank");
  return f;
}

/// Lines whose current responds to the stochastic injections (C_l != 0).
inline std::vector<std::size_t> stochastic_lines(const DcFlowMatrices& flow) {
  const Eigen::VectorXd norms = flow.stochastic.rowwise().norm();
  const double scale = norms.size() > 0 ? norms.maxCoeff() : 0.0;
  std::vector<std::size_t> out;
  for (Eigen::Index l = 0; l < norms.size(); ++l) {
    if (scale > 0.0 && norms(l) > 1e-10 * scale) out.push_back(static_cast<std::size_t>(l));
  }
  return out;
}

struct OperatingPoint {
  Eigen::VectorXd mu;    // stochastic initial values, length m
  Eigen::VectorXd mu_d;  // deterministic injections, length N-m
  Eigen::VectorXd y;     // C_D mu_D
  Eigen::VectorXd nu;    // C mu + y
};

inline OperatingPoint operating_point(const DcFlowMatrices& flow, const Eigen::VectorXd& mu,
                                      const Eigen::VectorXd& mu_d) {
  require(static_cast<std::size_t>(mu.size()) == flow.stochastic_count, ErrorCode::InvalidInput,
          "mu has wrong length");
  require(static_cast<std::size_t>(mu_d.size()) == flow.deterministic_count(), ErrorCode::InvalidInput,
          "mu_D has wrong length");
  OperatingPoint op;
  op.mu = mu;
  op.mu_d = mu_d;
  op.y = flow.deterministic * mu_d;
  op.nu = flow.stochastic * mu + op.y;
  const double sup = op.nu.size() > 0 ? op.nu.cwiseAbs().maxCoeff() : 0.0;
  require(sup < 1.0, ErrorCode::InfeasibleStart,
          "initial normalized current exceeds the rating (|nu|_inf = " + std::to_string(sup) + ")");
  return op;
}

}  // namespace ldcap
