// ldcap: capacity regions and overload decay rates from the command line.
//
// exit codes: 0 ok, 2 bad input, 3 empty/infeasible result, 4 numerical failure

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "ldcap/ldcap.hpp"

namespace {

using namespace ldcap;

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::EmptySlice:
    case ErrorCode::BoundCollapse:
      return 3;
    case ErrorCode::BlowUp:
    case ErrorCode::NoBoundaryHit:
    case ErrorCode::DegenerateF:
    case ErrorCode::InsufficientHits:
      return 4;
    default:
      return 2;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::InvalidInput, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  require(out.good(), ErrorCode::InvalidInput, "cannot write '" + out_path + "'");
  out << text;
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

template <class T>
std::vector<T> split_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::istringstream is(item);
    T v{};
    is >> v;
    require(!is.fail() && (is >> std::ws).eof(), ErrorCode::InvalidInput,
            std::string("bad ") + what + " list '" + s + "'");
    out.push_back(v);
  }
  return out;
}

// Library errors name lines by internal index; rewrite with document node ids.
template <class F>
auto with_line_labels(const NetworkModel& model, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (!e.line() || *e.line() >= model.doc_line.size()) throw;
    const auto [i, j] = model.line_label(*e.line());
    std::string msg = e.what();
    msg.erase(0, to_string(e.code()).size() + 2);
    throw Error(e.code(), *e.line(), msg + " [line (" + std::to_string(i) + "," + std::to_string(j) + ") in the input]");
  }
}

struct Common {
  std::string input;
  std::string output;
  std::string format = "json";
};

// ---------------------------------------------------------------- rates

struct RatesArgs : Common {
  std::optional<double> tau;
};

int cmd_rates(const RatesArgs& a) {
  auto doc = parse_native(read_file(a.input));
  if (a.tau) {
    require(*a.tau >= 0.0, ErrorCode::NonPositiveTau, "--tau must be non-negative");
    doc.analysis.tau0 = *a.tau;
    if (*a.tau > 0.0) {
      doc = with_uniform_tau(std::move(doc), *a.tau);
    } else {
      std::cerr << "note: --tau 0 sets tau0 = 0; line thermal constants keep their document values\n";
    }
  }
  const auto model = build_model(doc);
  const auto ctx = model.context();
  const auto report = decay_rate_report(ctx, doc.analysis.tau0);
  if (a.format == "text") {
    std::ostringstream os;
    auto rate = [](const Rate& r) {
      char buf[32];
      if (!r.bounded()) return std::string("inf");
      std::snprintf(buf, sizeof buf, "%.6f", r.value());
      return std::string(buf);
    };
    os << "line        nu         psi(+1)    psi(-1)    alpha      psi(alpha)\n";
    for (const auto& lr : report.lines) {
      const auto [i, j] = model.line_label(lr.line);
      char buf[160];
      std::snprintf(buf, sizeof buf, "(%lld,%lld)%*s%-10.6f %-10s %-10s %-10s %-10s\n", static_cast<long long>(i),
                    static_cast<long long>(j), 2, "", model.oriented(lr.line, lr.nu),
                    rate(model.flipped[lr.line] ? lr.psi_minus : lr.psi_plus).c_str(),
                    rate(model.flipped[lr.line] ? lr.psi_plus : lr.psi_minus).c_str(),
                    lr.alpha ? std::to_string(*lr.alpha).c_str() : "-", rate(lr.psi_alpha).c_str());
      os << buf;
    }
    os << "I_c   " << rate(report.current.rate) << "\n";
    os << "I_LB  " << rate(report.lower_bound.rate) << "\n";
    if (report.taylor) os << "I_TL  " << rate(*report.taylor) << "\n";
    emit(os.str(), a.output);
  } else {
    emit(dump(report_json(report, model)), a.output);
  }
  return 0;
}

// ---------------------------------------------------------------- region

struct RegionArgs : Common {
  std::string kind = "current";
  std::optional<double> p, epsilon, tau0;
  std::string slice;
  std::string bbox = "-1000,1000,-1000,1000";
  bool partition = false;
  bool kind_given = false;
  std::size_t resolution = 400;
};

int cmd_region(const RegionArgs& a) {
  const auto doc = parse_native(read_file(a.input));
  const auto model = build_model(doc);
  const auto ctx = model.context();
  const double p = a.p.value_or(doc.analysis.p);
  const double eps = a.epsilon.value_or(doc.analysis.epsilon);
  const auto tau0 = a.tau0 ? a.tau0 : doc.analysis.tau0;

  std::vector<std::int64_t> free;
  if (!a.slice.empty()) {
    free = split_list<std::int64_t>(a.slice, "node id");
    require(free.size() == 2, ErrorCode::InvalidInput, "--slice needs exactly two node ids");
  } else {
    for (const auto& n : doc.nodes) {
      if (n.role == NodeRole::Deterministic && n.controllable) free.push_back(n.id);
    }
    if (free.size() != 2) {
      free.clear();
      for (std::size_t k = 1; k < model.node_ids.size() && free.size() < 2; ++k) free.push_back(model.node_ids[k]);
    }
    require(free.size() == 2, ErrorCode::InvalidInput, "network has fewer than two free injections");
  }
  for (auto id : free) {
    if (!model.stochastic(id) && !model.controllable(id)) {
      std::cerr << "note: node " << id << " is not marked controllable\n";
    }
  }
  const auto box = split_list<double>(a.bbox, "bbox");
  require(box.size() == 4, ErrorCode::InvalidInput, "--bbox needs u0,u1,v0,v1");

  SliceSpec spec;
  spec.u_index = model.bus_index(free[0]);
  spec.v_index = model.bus_index(free[1]);
  spec.mu = ctx.op().mu;
  spec.mu_d = ctx.op().mu_d;
  spec.bbox = {box[0], box[1], box[2], box[3]};

  std::vector<RegionKind> kinds;
  if (a.partition && !a.kind_given) {
    kinds = {RegionKind::Deterministic};
  } else if (a.kind == "all") {
    kinds = {RegionKind::Deterministic, RegionKind::Current, RegionKind::TemperatureLb};
    if (tau0 && ctx.ou().uniform_gamma()) kinds.push_back(RegionKind::TemperatureTaylor);
  } else {
    kinds = {region_kind_from_string(a.kind)};
  }

  if (a.format == "csv") {
    require(kinds.size() == 1 || a.partition, ErrorCode::InvalidInput, "CSV output takes a single --kind");
    if (a.partition) {
      emit(partition_csv(risk_partition(ctx, spec, a.resolution), model), a.output);
    } else {
      const auto region = with_line_labels(model, [&] { return build_region(ctx, kinds[0], eps, p, tau0); });
      emit(slice_csv(slice2d(region, model.flow, spec)), a.output);
    }
    return 0;
  }
  ojson out;
  ojson regions = ojson::array();
  for (auto kind : kinds) {
    const auto region = with_line_labels(model, [&] { return build_region(ctx, kind, eps, p, tau0); });
    ojson e = region_json(region, model);
    e["slice"] = slice_json(slice2d(region, model.flow, spec), model, kind);
    regions.push_back(e);
  }
  out["regions"] = regions;
  if (a.partition) out["partition"] = partition_json(risk_partition(ctx, spec, a.resolution), model);
  emit(dump(out), a.output);
  return 0;
}

// ---------------------------------------------------------------- exact1d

struct ExactArgs {
  Exact1dProblem problem;
  std::string method = "auto";
  std::string format = "text";
  std::string output;
};

int cmd_exact1d(const ExactArgs& a) {
  Exact1dOptions opt;
  if (a.method == "shooting") opt.method = Exact1dMethod::Shooting;
  else if (a.method == "multiplier") opt.method = Exact1dMethod::Multiplier;
  else require(a.method == "auto", ErrorCode::InvalidInput, "--method must be auto, shooting or multiplier");
  const auto r = exact_decay_rate(a.problem, opt);
  if (a.format == "json") {
    emit(dump(exact1d_json(r, a.problem)), a.output);
  } else {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g\n", r.rate);
    emit(buf, a.output);
  }
  return 0;
}

// ---------------------------------------------------------------- mc

struct McArgs : Common {
  std::string kind = "current";
  std::string eps;
  std::size_t n = 10000;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  double level = 1.0;
};

int cmd_mc(const McArgs& a) {
  const auto doc = parse_native(read_file(a.input));
  const auto model = build_model(doc);
  const auto ctx = model.context();
  McConfig cfg;
  cfg.replicates = a.n;
  cfg.steps = a.steps;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  cfg.level = a.level;
  require(a.kind == "current" || a.kind == "temperature" || a.kind == "both", ErrorCode::InvalidInput,
          "--kind must be current, temperature or both");
  cfg.kind = a.kind == "temperature" ? OverloadKind::Temperature : OverloadKind::Current;
  cfg.epsilons = a.eps.empty() ? std::vector<double>{doc.analysis.epsilon} : split_list<double>(a.eps, "epsilon");

  ojson out;
  out["seed"] = a.seed;
  out["steps"] = a.steps;
  out["level"] = a.level;
  ojson points = ojson::array();
  for (double eps : cfg.epsilons) {
    const auto both = simulate_overloads(ctx, eps, cfg);
    ojson e;
    e["epsilon"] = eps;
    if (a.kind != "temperature") e["current"] = estimate_json(both.current);
    if (a.kind != "current") e["temperature"] = estimate_json(both.temperature);
    points.push_back(e);
  }
  out["estimates"] = points;
  if (cfg.epsilons.size() >= 2) {
    if (a.kind != "temperature") {
      McConfig c = cfg;
      c.kind = OverloadKind::Current;
      out["current_fit"] = decay_fit_json(decay_slope(ctx, c));
    }
    if (a.kind != "current") {
      McConfig c = cfg;
      c.kind = OverloadKind::Temperature;
      out["temperature_fit"] = decay_fit_json(decay_slope(ctx, c));
    }
  }
  emit(dump(out), a.output);
  return 0;
}

// ---------------------------------------------------------------- convert

struct ConvertArgs : Common {
  ImaxRule rule;
  std::string stochastic;
  std::string controllable;
  std::string zero_flow = "error";
};

int cmd_convert(ConvertArgs a) {
  const auto mc = parse_matpower(read_file(a.input));
  for (const auto& w : mc.warnings) std::cerr << "warning: " << w << "\n";
  a.rule.stochastic = split_list<std::int64_t>(a.stochastic, "node id");
  if (!a.controllable.empty()) a.rule.controllable = split_list<std::int64_t>(a.controllable, "node id");
  require(a.zero_flow == "error" || a.zero_flow == "unrated", ErrorCode::InvalidInput,
          "--zero-flow must be error or unrated");
  a.rule.zero_flow = a.zero_flow == "error" ? ZeroFlowPolicy::Error : ZeroFlowPolicy::Unrated;
  const auto doc = apply_imax_rule(mc, a.rule);
  build_model(doc);  // graph and rank checks before anything is written
  emit(serialize_native(doc), a.output);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ldcap: large-deviations capacity regions for power grids"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ldcap 0.1.0");

  RatesArgs rates;
  auto* sub_rates = app.add_subcommand("rates", "decay rates and per-line psi table");
  sub_rates->add_option("input", rates.input, "native network document")->required();
  sub_rates->add_option("--tau", rates.tau, "uniform thermal constant (also used as tau0)");
  sub_rates->add_option("--format", rates.format, "json or text")->check(CLI::IsMember({"json", "text"}));
  sub_rates->add_option("-o,--output", rates.output, "output file (default stdout)");

  RegionArgs region;
  auto* sub_region = app.add_subcommand("region", "capacity region slice, optionally with risk partition");
  sub_region->add_option("input", region.input, "native network document")->required();
  sub_region->add_option("--kind", region.kind, "deterministic, current, temperature_lb, temperature_taylor or all");
  sub_region->add_option("--p", region.p, "target overload probability");
  sub_region->add_option("--epsilon", region.epsilon, "noise scale");
  sub_region->add_option("--tau0", region.tau0, "uniform thermal constant for the Taylor region");
  sub_region->add_option("--slice", region.slice, "two free node ids, e.g. 6,9");
  sub_region->add_option("--bbox", region.bbox, "clip box u0,u1,v0,v1");
  sub_region->add_flag("--partition", region.partition, "also emit the most-at-risk-line partition");
  sub_region->add_option("--resolution", region.resolution, "partition grid resolution")->check(CLI::Range(2, 4000));
  sub_region->add_option("--format", region.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  sub_region->add_option("-o,--output", region.output, "output file (default stdout)");

  ExactArgs exact;
  auto* sub_exact = app.add_subcommand("exact1d", "exact single-line temperature decay rate");
  sub_exact->add_option("--mu", exact.problem.mu, "initial injection (|mu| < 1)")->required();
  sub_exact->add_option("--gamma", exact.problem.gamma, "mean-reversion rate")->required();
  sub_exact->add_option("--vol", exact.problem.vol, "volatility");
  sub_exact->add_option("--tau", exact.problem.tau, "thermal constant")->required();
  sub_exact->add_option("--T", exact.problem.horizon, "horizon");
  sub_exact->add_option("--method", exact.method, "auto, shooting or multiplier");
  sub_exact->add_option("--format", exact.format, "text or json")->check(CLI::IsMember({"json", "text"}));
  sub_exact->add_option("-o,--output", exact.output, "output file (default stdout)");

  McArgs mc;
  auto* sub_mc = app.add_subcommand("mc", "Monte Carlo overload probabilities");
  sub_mc->add_option("input", mc.input, "native network document")->required();
  sub_mc->add_option("--kind", mc.kind, "current, temperature or both");
  sub_mc->add_option("--eps", mc.eps, "noise scale(s), comma separated; two or more add a decay fit");
  sub_mc->add_option("--n", mc.n, "replicates per noise scale")->check(CLI::PositiveNumber);
  sub_mc->add_option("--steps", mc.steps, "time steps per path")->check(CLI::PositiveNumber);
  sub_mc->add_option("--seed", mc.seed, "random seed");
  sub_mc->add_option("--threads", mc.threads, "worker threads (output does not depend on it)")->check(CLI::PositiveNumber);
  sub_mc->add_option("--level", mc.level, "overload threshold");
  sub_mc->add_option("-o,--output", mc.output, "output file (default stdout)");

  ConvertArgs conv;
  auto* sub_conv = app.add_subcommand("convert", "MATPOWER case to native document with K-rule ratings");
  sub_conv->add_option("input", conv.input, "MATPOWER .m case file")->required();
  sub_conv->add_option("--K", conv.rule.K, "rating factor, > 1")->required();
  sub_conv->add_option("--stochastic", conv.stochastic, "stochastic bus ids, comma separated")->required();
  sub_conv->add_option("--controllable", conv.controllable, "controllable bus ids, comma separated");
  sub_conv->add_option("--gamma", conv.rule.gamma, "OU mean-reversion rate");
  sub_conv->add_option("--vol", conv.rule.vol, "OU volatility");
  sub_conv->add_option("--tau", conv.rule.tau, "line thermal constant");
  sub_conv->add_option("--epsilon", conv.rule.epsilon, "noise scale");
  sub_conv->add_option("--p", conv.rule.p, "target overload probability");
  sub_conv->add_option("--T", conv.rule.horizon, "horizon");
  sub_conv->add_option("--tau0", conv.rule.tau0, "uniform thermal constant for Taylor rates");
  sub_conv->add_option("--zero-flow", conv.zero_flow, "lines without base flow: error or unrated");
  sub_conv->add_option("-o,--output", conv.output, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  region.kind_given = sub_region->count("--kind") > 0;

  try {
    if (*sub_rates) return cmd_rates(rates);
    if (*sub_region) return cmd_region(region);
    if (*sub_exact) return cmd_exact1d(exact);
    if (*sub_mc) return cmd_mc(mc);
    if (*sub_conv) return cmd_convert(conv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
