// Acceptance run: one PASS/FAIL line per criterion, with the measured
// numbers. Exits non-zero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <thread>

#include "support.hpp"

using namespace ldcap;
using ldcap_test::uniform;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

int failures = 0;

void run(const std::string& id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << name << " [" << fmt("%.2f", seconds_since(t0)) << " s]";
  if (!o.detail.empty()) std::cout << ": " << o.detail;
  std::cout << std::endl;
}

constexpr double kLb[] = {0.1978, 0.1998, 0.2088, 0.2247, 0.2455, 0.2696};
constexpr double kTl[] = {0.2175, 0.2373, 0.2571, 0.2768, 0.2966, 0.3164};
constexpr double kExact[] = {0.2308, 0.2763, 0.3190, 0.3731, 0.4337, 0.4669};

double table_tau(int k) { return 0.1 * (k + 1); }

Exact1dProblem table_problem(double tau) {
  Exact1dProblem p;
  p.mu = 0.5;
  p.gamma = 0.5;
  p.vol = 1.0;
  p.tau = tau;
  p.horizon = 1.0;
  return p;
}

// computed once, shared by the reference-table and ordering criteria
std::vector<double> exact_column;
std::vector<double> exact_seconds;

void compute_exact_column() {
  for (int k = 0; k < 6; ++k) {
    const auto t0 = Clock::now();
    exact_column.push_back(exact_decay_rate(table_problem(table_tau(k))).rate);
    exact_seconds.push_back(seconds_since(t0));
  }
}

struct Draw {
  ldcap_test::Instance inst;
  double epsilon, p, tau0;
};

Draw region_draw(std::mt19937_64& rng) {
  ldcap_test::InstanceShape shape;
  shape.uniform_gamma = true;
  auto inst = ldcap_test::random_instance(rng, shape);
  return {std::move(inst), uniform(rng, 0.001, 0.05), std::exp(uniform(rng, std::log(1e-6), std::log(0.2))),
          uniform(rng, 0.0, 1.5)};
}

ImaxRule ieee14_rule(std::vector<std::int64_t> stochastic) {
  ImaxRule r;
  r.K = 1.5;
  r.stochastic = std::move(stochastic);
  r.controllable = {6, 9};
  r.gamma = 1.0;
  r.vol = 10.0;
  r.tau = 0.5;
  r.epsilon = 0.25;
  r.horizon = 1.0;
  r.zero_flow = ZeroFlowPolicy::Unrated;
  return r;
}

using Label = std::pair<std::int64_t, std::int64_t>;

std::string label_text(const Label& l) {
  return "(" + std::to_string(l.first) + "," + std::to_string(l.second) + ")";
}

}  // namespace

int main() {
  std::cout << "ldcap acceptance run" << std::endl;

  run("1a", "Single-line reference table, closed forms (I_c*, LB, TL within 5e-4)", [] {
    Outcome o;
    for (int k = 0; k < 6; ++k) {
      const double tau = table_tau(k);
      const auto ctx = ldcap_test::single_line(0.5, 0.5, 1.0, tau, 1.0);
      const double ic = current_decay_rate(ctx).rate.value();
      const double lb = lb_decay_rate(ctx).rate.value();
      const double tl = taylor_decay_rate(ctx, tau).value();
      o.expect(std::abs(ic - 0.1977) <= 5e-4, "I_c* " + fmt("%.5f", ic));
      o.expect(std::abs(lb - kLb[k]) <= 5e-4, "LB tau=" + fmt("%.1f", tau) + " got " + fmt("%.5f", lb));
      o.expect(std::abs(tl - kTl[k]) <= 5e-4, "TL tau=" + fmt("%.1f", tau) + " got " + fmt("%.5f", tl));
    }
    if (o.pass) o.detail = "all 18 values within tolerance";
    return o;
  });

  run("1b", "Single-line reference table, exact solver (within 1% relative)", [] {
    Outcome o;
    compute_exact_column();
    std::string all;
    for (int k = 0; k < 6; ++k) {
      const double rel = exact_column[k] / kExact[k] - 1.0;
      all += (k ? " " : "") + fmt("%.4f", exact_column[k]) + "(" + fmt("%+.1f%%", 100.0 * rel) + ")";
      o.pass = o.pass && std::abs(rel) <= 0.01;
    }
    o.detail = "computed " + all;
    return o;
  });

  run("1c", "Single-line reference table, runtime (closed forms < 1 ms, exact < 30 s per row)", [] {
    Outcome o;
    double worst_closed = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double tau = table_tau(k);
      const auto t0 = Clock::now();
      const auto ctx = ldcap_test::single_line(0.5, 0.5, 1.0, tau, 1.0);
      const auto report = decay_rate_report(ctx, tau);
      worst_closed = std::max(worst_closed, seconds_since(t0));
      (void)report;
    }
    const double worst_exact = *std::max_element(exact_seconds.begin(), exact_seconds.end());
    o.expect(worst_closed < 1e-3, "closed forms took " + fmt("%.3g", worst_closed) + " s");
    o.expect(worst_exact < 30.0, "exact took " + fmt("%.3g", worst_exact) + " s");
    if (o.pass) o.detail = "closed " + fmt("%.2g", worst_closed) + " s, exact " + fmt("%.2g", worst_exact) + " s";
    return o;
  });

  run("2", "Ordering (I_c <= I_LB, I_c <= I_TL on 1000 draws; LB, TL <= exact on the reference table)", [] {
    Outcome o;
    std::mt19937_64 rng(2);
    ldcap_test::InstanceShape shape;
    shape.uniform_gamma = true;
    int bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const auto inst = ldcap_test::random_instance(rng, shape);
      const auto ctx = inst.context();
      const double tau0 = uniform(rng, 0.0, 2.0);
      const double ic = current_decay_rate(ctx).rate.value();
      const double lb = lb_decay_rate(ctx).rate.value();
      const double tl = taylor_decay_rate(ctx, tau0).value();
      if (!(ic <= lb * (1.0 + 1e-12) && ic <= tl * (1.0 + 1e-12))) ++bad;
    }
    o.expect(bad == 0, std::to_string(bad) + " of 1000 draws out of order");
    for (int k = 0; k < 6; ++k) {
      const auto ctx = ldcap_test::single_line(0.5, 0.5, 1.0, table_tau(k), 1.0);
      o.expect(lb_decay_rate(ctx).rate.value() <= exact_column[k], "LB above exact at row " + std::to_string(k));
      o.expect(taylor_decay_rate(ctx, table_tau(k)).value() <= exact_column[k],
               "TL above exact at row " + std::to_string(k));
    }
    return o;
  });

  run("3", "psi against brute-force discrete minimization (n=200, 1e-4 relative, 100 instances)", [] {
    Outcome o;
    std::mt19937_64 rng(3);
    ldcap_test::InstanceShape shape;
    shape.min_nodes = 2;
    shape.max_nodes = 5;
    shape.max_lines = 5;
    shape.max_m = 3;
    double worst = 0.0;
    for (int inst_no = 0; inst_no < 100; ++inst_no) {
      const auto inst = ldcap_test::random_instance(rng, shape);
      const auto ctx = inst.context();
      for (std::size_t l : ctx.active_lines()) {
        for (double level : {1.0, -1.0}) {
          const double rel = std::abs(ldcap_test::brute_force_psi(ctx, l, level, 200) / psi(ctx, l, level) - 1.0);
          worst = std::max(worst, rel);
        }
      }
    }
    o.expect(worst <= 1e-4, "worst relative gap " + fmt("%.3g", worst));
    if (o.pass) o.detail = "worst relative gap " + fmt("%.3g", worst);
    return o;
  });

  run("4", "Structural properties (ranks on 50 graphs, Ker(A)=span(1), time shift, level monotonicity)", [] {
    Outcome o;
    std::mt19937_64 rng(4);
    int bad = 0;
    for (int trial = 0; trial < 50; ++trial) {
      ldcap_test::InstanceShape shape;
      shape.min_nodes = 2;
      shape.max_nodes = 9;
      shape.max_extra_lines = 6;
      shape.max_m = 8;
      const auto inst = ldcap_test::random_instance(rng, shape);
      const auto& f = inst.flow;
      const std::size_t n = inst.net.bus_count();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(f.incidence);
      const Eigen::MatrixXd ker = lu.kernel();
      const bool ker_ok = ker.cols() == 1 && (ker.col(0) / ker(0, 0) - Eigen::VectorXd::Ones(ker.rows())).norm() < 1e-9;
      if (numerical_rank(f.laplacian) != n || numerical_rank(f.stochastic) != f.stochastic_count || !ker_ok) ++bad;
    }
    o.expect(bad == 0, std::to_string(bad) + " graphs violate the rank structure");

    // holding the mean before the optimal path costs nothing extra
    const auto ctx = ldcap_test::single_line(0.3, 0.8, 1.2, 1.0, 0.6);
    const auto paths = optimal_paths(ctx, 0, -1.0, 600);
    SamplePath shifted{1.0, Eigen::MatrixXd(1001, 1)};
    shifted.values.topRows(400).setConstant(0.3);
    shifted.values.bottomRows(601) = paths.injections.values;
    OuModel longer = ctx.ou();
    longer.horizon = 1.0;
    const double c0 = rate_functional(paths.injections, ctx.ou()), c1 = rate_functional(shifted, longer);
    o.expect(std::abs(c1 - c0) <= 1e-12 * c0, "time shift changed the cost");

    int nonmono = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto inst = ldcap_test::random_instance(rng);
      const auto c = inst.context();
      for (std::size_t l : c.active_lines()) {
        double prev = 0.0;
        for (double d : {0.1, 0.3, 0.7, 1.2, 2.0}) {
          const double v = psi(c, l, c.nu(l) + d);
          if (!(v > prev)) ++nonmono;
          prev = v;
        }
      }
    }
    o.expect(nonmono == 0, std::to_string(nonmono) + " level monotonicity violations");
    return o;
  });

  run("5", "Region geometry (inclusion on 500 draws, convex slices, LB offset, membership vs rate)", [] {
    Outcome o;
    std::mt19937_64 rng(5);
    int used = 0, chain_bad = 0, convex_bad = 0, offset_bad = 0, member_bad = 0, compared = 0;
    for (int trial = 0; trial < 500; ++trial) {
      auto d = region_draw(rng);
      const auto ctx = d.inst.context();
      try {
        const auto det = build_region(ctx, RegionKind::Deterministic, d.epsilon, d.p);
        const auto cur = build_region(ctx, RegionKind::Current, d.epsilon, d.p);
        const auto lb = build_region(ctx, RegionKind::TemperatureLb, d.epsilon, d.p);
        const auto tl = build_region(ctx, RegionKind::TemperatureTaylor, d.epsilon, d.p, d.tau0);
        for (Eigen::Index l = 0; l < det.bounds.size(); ++l) {
          if (!(cur.bounds(l) <= lb.bounds(l) + 1e-15 && cur.bounds(l) <= tl.bounds(l) + 1e-15 &&
                lb.bounds(l) <= det.bounds(l) && tl.bounds(l) <= det.bounds(l)))
            ++chain_bad;
        }
        for (std::size_t l : lb.active) {
          const auto li = static_cast<Eigen::Index>(l);
          if (!(lb.bounds(li) > 1.0 - lb.eta(li) && lb.bounds(li) < 1.0)) ++offset_bad;
        }
        SliceSpec spec;
        spec.u_index = 0;
        spec.v_index = ctx.flow().bus_count() - 1;
        spec.mu = ctx.op().mu;
        spec.mu_d = ctx.op().mu_d;
        spec.bbox = {-50, 50, -50, 50};
        if (spec.v_index != spec.u_index) {
          for (const auto* r : {&cur, &lb, &tl, &det}) {
            try {
              if (!is_convex(slice2d(*r, ctx.flow(), spec).polygon)) ++convex_bad;
            } catch (const Error& e) {
              if (e.code() != ErrorCode::EmptySlice) throw;
            }
          }
        }
        // membership against the rate threshold at nearby operating points
        const double threshold = d.epsilon * std::log(1.0 / d.p);
        const auto n = static_cast<Eigen::Index>(ctx.flow().bus_count());
        const auto m = static_cast<Eigen::Index>(ctx.flow().stochastic_count);
        for (int k = 0; k < 10; ++k) {
          Eigen::VectorXd z(n);
          z << ctx.op().mu, ctx.op().mu_d;
          z += Eigen::VectorXd::NullaryExpr(n, [&] { return uniform(rng, -0.6, 0.6); });
          const Eigen::VectorXd mu = z.head(m), mu_d = z.tail(n - m);
          const Eigen::VectorXd nu = ctx.flow().stochastic * mu + ctx.flow().deterministic * mu_d;
          if (nu.cwiseAbs().maxCoeff() >= 1.0) continue;
          for (const auto* r : {&cur, &lb, &tl}) {
            double rate = std::numeric_limits<double>::infinity();
            for (std::size_t l : ctx.active_lines()) {
              const auto li = static_cast<Eigen::Index>(l);
              const double s = line_variance(ctx, l), a = std::abs(nu(li));
              double v = (1.0 - a) * (1.0 - a) / s;
              if (r->kind == RegionKind::TemperatureLb) {
                const double e = std::exp(-ctx.ou().horizon / ctx.flow().tau(li));
                const double al = std::sqrt((1.0 - a * a * e) / (1.0 - e));
                v = (al - a) * (al - a) / s;
              } else if (r->kind == RegionKind::TemperatureTaylor) {
                v *= 1.0 + 2.0 * d.tau0 * ctx.ou().gamma(0);
              }
              rate = std::min(rate, v);
            }
            if (std::abs(rate - threshold) <= 1e-9 * threshold) continue;
            ++compared;
            if (contains(*r, ctx.flow(), mu, mu_d) != (rate > threshold)) ++member_bad;
          }
        }
        ++used;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::BoundCollapse) throw;
      }
    }
    o.expect(used > 250, "only " + std::to_string(used) + " usable draws");
    o.expect(chain_bad == 0, std::to_string(chain_bad) + " inclusion violations");
    o.expect(convex_bad == 0, std::to_string(convex_bad) + " non-convex slices");
    o.expect(offset_bad == 0, std::to_string(offset_bad) + " LB offsets outside (1-eta, 1)");
    o.expect(member_bad == 0, std::to_string(member_bad) + " membership mismatches");
    if (o.pass)
      o.detail = std::to_string(used) + " draws with non-empty regions, " + std::to_string(compared) +
                 " membership comparisons";
    return o;
  });

  run("6", "IEEE-14 risk partitions (400x400)", [] {
    Outcome o;
    const auto t0 = Clock::now();
    const auto mc = parse_matpower(ldcap_test::read_data("case14.m"));
    int found = 0, named = 0;
    std::string missing;
    auto check = [&](std::vector<std::int64_t> stochastic, std::vector<Label> expected, Label central_expected) {
      const auto model = build_model(apply_imax_rule(mc, ieee14_rule(std::move(stochastic))));
      const auto ctx = model.context();
      SliceSpec spec;
      spec.u_index = model.bus_index(6);
      spec.v_index = model.bus_index(9);
      spec.mu = ctx.op().mu;
      spec.mu_d = ctx.op().mu_d;
      spec.bbox = {-100, 100, -100, 100};
      const auto part = risk_partition(ctx, spec, 400);
      std::set<Label> seen, central;
      for (const auto& r : part.regions)
        for (std::size_t l : r.lines) seen.insert(model.line_label(l));
      for (std::size_t l : part.regions[part.central].lines) central.insert(model.line_label(l));
      named += static_cast<int>(expected.size()) + 1;
      for (const auto& l : expected) {
        if (seen.count(l)) {
          ++found;
        } else {
          missing += " " + label_text(l);
        }
      }
      if (central.count(central_expected)) {
        ++found;
      } else {
        missing += " central " + label_text(central_expected);
      }
    };
    check({2, 3}, {{9, 10}, {5, 6}, {7, 9}, {10, 11}}, {3, 4});
    check({2, 13}, {{4, 7}}, {12, 13});
    const double secs = seconds_since(t0);
    const std::string tally = "matched " + std::to_string(found) + " of " + std::to_string(named) + " named labels";
    o.expect(found == named, tally + "; missing" + missing);
    o.expect(secs < 120.0, "took " + fmt("%.1f", secs) + " s");
    if (o.pass) o.detail = tally + ", " + fmt("%.2f", secs) + " s";
    return o;
  });

  run("7", "Monte Carlo decay slope (n=1e5, eps 0.5..0.25, slope within 20% of 0.19775)", [] {
    Outcome o;
    const auto t0 = Clock::now();
    const auto ctx = ldcap_test::single_line(0.5, 0.5, 1.0, 0.6, 1.0);
    McConfig cfg;
    cfg.replicates = 100000;
    cfg.steps = 1000;
    cfg.seed = 1;
    cfg.threads = std::max(1u, std::thread::hardware_concurrency());
    const std::vector<double> eps{0.5, 0.4, 0.3, 0.25};
    std::vector<double> x, y;
    int order_bad = 0;
    std::string ps;
    for (double e : eps) {
      const auto both = simulate_overloads(ctx, e, cfg);
      if (both.temperature.hits > both.current.hits) ++order_bad;
      x.push_back(1.0 / e);
      y.push_back(std::log(both.current.p_hat));
      ps += " " + fmt("%.4f", both.current.p_hat);
    }
    // a second and third seed for the coupling check
    for (std::uint64_t seed : {2u, 3u}) {
      auto c = cfg;
      c.seed = seed;
      c.replicates = 20000;
      for (double e : eps) {
        const auto both = simulate_overloads(ctx, e, c);
        if (both.temperature.hits > both.current.hits) ++order_bad;
      }
    }
    const double xm = std::accumulate(x.begin(), x.end(), 0.0) / 4.0;
    const double ym = std::accumulate(y.begin(), y.end(), 0.0) / 4.0;
    double sxy = 0.0, sxx = 0.0;
    for (int k = 0; k < 4; ++k) {
      sxy += (x[k] - xm) * (y[k] - ym);
      sxx += (x[k] - xm) * (x[k] - xm);
    }
    const double slope = -sxy / sxx;
    const double secs = seconds_since(t0);
    o.expect(std::abs(slope / 0.19775 - 1.0) <= 0.2,
             "fitted slope " + fmt("%.4f", slope) + " (" + fmt("%+.0f%%", 100.0 * (slope / 0.19775 - 1.0)) + ")");
    o.expect(order_bad == 0, std::to_string(order_bad) + " seeds with more temperature than current hits");
    o.expect(secs < 300.0, "took " + fmt("%.0f", secs) + " s");
    o.detail += (o.detail.empty() ? "" : "; ") + std::string("p_hat") + ps + ", slope " + fmt("%.4f", slope);
    return o;
  });

  run("8", "Determinism (bit-identical across runs and thread counts)", [] {
    Outcome o;
    const auto ctx = ldcap_test::single_line(0.5, 0.5, 1.0, 0.6, 1.0);
    McConfig cfg;
    cfg.replicates = 5000;
    cfg.steps = 500;
    cfg.seed = 42;
    cfg.threads = 1;
    const auto a = simulate_overloads(ctx, 0.4, cfg);
    for (unsigned t : {1u, 2u, 4u, 7u}) {
      cfg.threads = t;
      const auto b = simulate_overloads(ctx, 0.4, cfg);
      o.expect(a.current.hits == b.current.hits && a.temperature.hits == b.temperature.hits &&
                   a.current.ci_low == b.current.ci_low,
               "Monte Carlo differs at " + std::to_string(t) + " threads");
    }
    const auto e1 = exact_decay_rate(table_problem(0.3)), e2 = exact_decay_rate(table_problem(0.3));
    o.expect(e1.rate == e2.rate && e1.theta == e2.theta, "exact1d differs between runs");
    const auto model = build_model(parse_native(ldcap_test::read_data("wheel3.json")));
    const auto c = model.context();
    SliceSpec spec;
    spec.mu = c.op().mu;
    spec.mu_d = c.op().mu_d;
    spec.bbox = {-3, 3, -3, 3};
    const auto p1 = partition_json(risk_partition(c, spec, 200), model).dump();
    const auto p2 = partition_json(risk_partition(c, spec, 200), model).dump();
    o.expect(p1 == p2, "risk partition differs between runs");
    const auto r1 = report_json(decay_rate_report(c, 0.5), model).dump();
    const auto r2 = report_json(decay_rate_report(c, 0.5), model).dump();
    o.expect(r1 == r2, "rate report differs between runs");
    return o;
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
