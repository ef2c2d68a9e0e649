#pragma once

// Network documents (native JSON), a MATPOWER case subset, the
// K * |base flow| rating rule, and JSON/CSV exports.
//
// Native format, version 1:
//
//   { "version": 1,
//     "nodes": [ {"id": 1, "role": "slack"},
//                {"id": 2, "role": "stochastic", "gamma": 1, "vol": 10, "mean": 0.18},
//                {"id": 6, "role": "deterministic", "injection": -0.11, "controllable": true} ],
//     "lines": [ {"from": 1, "to": 2, "susceptance": 16.9, "rating": 1.2 | "auto" | "unrated", "tau": 0.5} ],
//     "analysis": {"epsilon": 0.25, "p": 0.01, "horizon": 1, "tau0": 0.5, "K": 1.5, "zero_flow": "error"} }
//
// Node ids are arbitrary integers. Internally the slack becomes node 0,
// stochastic nodes 1..m and deterministic nodes m+1..N, each group in
// document order.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ldcap/error.hpp"
#include "ldcap/exact1d.hpp"
#include "ldcap/grid_model.hpp"
#include "ldcap/injections.hpp"
#include "ldcap/ld_rates.hpp"
#include "ldcap/montecarlo.hpp"
#include "ldcap/region.hpp"

namespace ldcap {

using ojson = nlohmann::ordered_json;

enum class NodeRole { Slack, Stochastic, Deterministic };

struct NodeSpec {
  std::int64_t id = 0;
  NodeRole role = NodeRole::Deterministic;
  double gamma = 0.0;      // stochastic
  double vol = 0.0;        // stochastic
  double mean = 0.0;       // stochastic
  double injection = 0.0;  // deterministic
  bool controllable = false;

  bool operator==(const NodeSpec&) const = default;
};

struct AutoRating {
  bool operator==(const AutoRating&) const = default;
};
struct Unrated {
  bool operator==(const Unrated&) const = default;
};
using RatingSpec = std::variant<double, AutoRating, Unrated>;

struct LineSpec {
  std::int64_t from = 0;
  std::int64_t to = 0;
  double susceptance = 1.0;
  RatingSpec rating = 1.0;
  double tau = 1.0;

  bool operator==(const LineSpec&) const = default;
};

enum class ZeroFlowPolicy { Error, Unrated };

struct AnalysisSpec {
  double epsilon = 0.1;
  double p = 0.01;
  double horizon = 1.0;
  std::optional<double> tau0;
  std::optional<double> K;
  ZeroFlowPolicy zero_flow = ZeroFlowPolicy::Error;

  bool operator==(const AnalysisSpec&) const = default;
};

struct NetworkDocument {
  int version = 1;
  std::vector<NodeSpec> nodes;
  std::vector<LineSpec> lines;
  AnalysisSpec analysis;

  bool operator==(const NetworkDocument&) const = default;
};

// ---------------------------------------------------------------- native JSON

namespace detail {

inline std::string pointer(const std::string& base, const std::string& key) { return base + "/" + key; }
inline std::string pointer(const std::string& base, std::size_t index) { return base + "/" + std::to_string(index); }

inline const nlohmann::json& field(const nlohmann::json& obj, const std::string& key, const std::string& path) {
  require(obj.is_object(), ErrorCode::SchemaError, path + ": expected an object");
  auto it = obj.find(key);
  require(it != obj.end(), ErrorCode::SchemaError, pointer(path, key) + ": missing");
  return *it;
}

inline double number(const nlohmann::json& j, const std::string& path) {
  require(j.is_number(), ErrorCode::SchemaError, path + ": expected a number");
  const double v = j.get<double>();
  require(std::isfinite(v), ErrorCode::SchemaError, path + ": must be finite");
  return v;
}

inline std::int64_t integer(const nlohmann::json& j, const std::string& path) {
  require(j.is_number_integer(), ErrorCode::SchemaError, path + ": expected an integer");
  return j.get<std::int64_t>();
}

inline double number_field(const nlohmann::json& obj, const std::string& key, const std::string& path) {
  return number(field(obj, key, path), pointer(path, key));
}

inline std::optional<double> optional_number(const nlohmann::json& obj, const std::string& key,
                                             const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return number(*it, pointer(path, key));
}

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; });
    require(known, ErrorCode::SchemaError, pointer(path, it.key()) + ": unknown field");
  }
}

}  // namespace detail

/// Parses and validates a native document (schema and roles; the graph is
/// checked when a model is built).
inline NetworkDocument parse_native(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::SchemaError, std::string("malformed JSON: ") + e.what());
  }
  require(root.is_object(), ErrorCode::SchemaError, ": expected a top-level object");
  detail::check_keys(root, {"version", "nodes", "lines", "analysis"}, "");
  NetworkDocument doc;
  doc.version = static_cast<int>(detail::integer(detail::field(root, "version", ""), "/version"));
  require(doc.version == 1, ErrorCode::SchemaError, "/version: unsupported version " + std::to_string(doc.version));

  const auto& nodes = detail::field(root, "nodes", "");
  require(nodes.is_array(), ErrorCode::SchemaError, "/nodes: expected an array");
  std::set<std::int64_t> ids;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const std::string path = detail::pointer("/nodes", k);
    const auto& n = nodes[k];
    NodeSpec s;
    s.id = detail::integer(detail::field(n, "id", path), path + "/id");
    require(ids.insert(s.id).second, ErrorCode::SchemaError, path + "/id: duplicate node id " + std::to_string(s.id));
    const auto& role = detail::field(n, "role", path);
    require(role.is_string(), ErrorCode::SchemaError, path + "/role: expected a string");
    const auto r = role.get<std::string>();
    if (r == "slack") {
      detail::check_keys(n, {"id", "role"}, path);
      s.role = NodeRole::Slack;
    } else if (r == "stochastic") {
      detail::check_keys(n, {"id", "role", "gamma", "vol", "mean"}, path);
      s.role = NodeRole::Stochastic;
      s.gamma = detail::number_field(n, "gamma", path);
      s.vol = detail::number_field(n, "vol", path);
      s.mean = detail::number_field(n, "mean", path);
      require(s.gamma > 0.0, ErrorCode::SchemaError, path + "/gamma: must be positive");
      require(s.vol > 0.0, ErrorCode::SchemaError, path + "/vol: must be positive");
    } else if (r == "deterministic") {
      detail::check_keys(n, {"id", "role", "injection", "controllable"}, path);
      s.role = NodeRole::Deterministic;
      s.injection = detail::number_field(n, "injection", path);
      if (auto it = n.find("controllable"); it != n.end()) {
        require(it->is_boolean(), ErrorCode::SchemaError, path + "/controllable: expected a boolean");
        s.controllable = it->get<bool>();
      }
    } else {
      fail(ErrorCode::SchemaError, path + "/role: unknown role '" + r + "'");
    }
    doc.nodes.push_back(s);
  }
  const auto slacks = std::count_if(doc.nodes.begin(), doc.nodes.end(), [](const NodeSpec& n) { return n.role == NodeRole::Slack; });
  require(slacks == 1, ErrorCode::RoleError, "exactly one slack node required, found " + std::to_string(slacks));
  require(std::any_of(doc.nodes.begin(), doc.nodes.end(), [](const NodeSpec& n) { return n.role == NodeRole::Stochastic; }),
          ErrorCode::RoleError, "at least one stochastic node required");

  const auto& lines = detail::field(root, "lines", "");
  require(lines.is_array(), ErrorCode::SchemaError, "/lines: expected an array");
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const std::string path = detail::pointer("/lines", k);
    const auto& l = lines[k];
    detail::check_keys(l, {"from", "to", "susceptance", "rating", "tau"}, path);
    LineSpec s;
    s.from = detail::integer(detail::field(l, "from", path), path + "/from");
    s.to = detail::integer(detail::field(l, "to", path), path + "/to");
    require(ids.count(s.from) && ids.count(s.to), ErrorCode::SchemaError, path + ": endpoint is not a node id");
    require(s.from != s.to, ErrorCode::SchemaError, path + ": self loop");
    s.susceptance = detail::number_field(l, "susceptance", path);
    require(s.susceptance > 0.0, ErrorCode::SchemaError, path + "/susceptance: must be positive");
    const auto& rating = detail::field(l, "rating", path);
    if (rating.is_string()) {
      const auto v = rating.get<std::string>();
      if (v == "auto") {
        s.rating = AutoRating{};
      } else if (v == "unrated") {
        s.rating = Unrated{};
      } else {
        fail(ErrorCode::SchemaError, path + "/rating: expected a number, \"auto\" or \"unrated\"");
      }
    } else {
      const double v = detail::number(rating, path + "/rating");
      require(v > 0.0, ErrorCode::SchemaError, path + "/rating: must be positive");
      s.rating = v;
    }
    s.tau = detail::number_field(l, "tau", path);
    require(s.tau > 0.0, ErrorCode::SchemaError, path + "/tau: must be positive");
    doc.lines.push_back(s);
  }

  if (auto it = root.find("analysis"); it != root.end()) {
    const std::string path = "/analysis";
    detail::check_keys(*it, {"epsilon", "p", "horizon", "tau0", "K", "zero_flow"}, path);
    auto& a = doc.analysis;
    if (auto v = detail::optional_number(*it, "epsilon", path)) a.epsilon = *v;
    if (auto v = detail::optional_number(*it, "p", path)) a.p = *v;
    if (auto v = detail::optional_number(*it, "horizon", path)) a.horizon = *v;
    a.tau0 = detail::optional_number(*it, "tau0", path);
    a.K = detail::optional_number(*it, "K", path);
    if (auto z = it->find("zero_flow"); z != it->end()) {
      require(z->is_string(), ErrorCode::SchemaError, path + "/zero_flow: expected a string");
      const auto v = z->get<std::string>();
      require(v == "error" || v == "unrated", ErrorCode::SchemaError, path + "/zero_flow: expected \"error\" or \"unrated\"");
      a.zero_flow = v == "error" ? ZeroFlowPolicy::Error : ZeroFlowPolicy::Unrated;
    }
    require(a.epsilon > 0.0, ErrorCode::SchemaError, path + "/epsilon: must be positive");
    require(a.p > 0.0 && a.p < 1.0, ErrorCode::SchemaError, path + "/p: must lie in (0, 1)");
    require(a.horizon > 0.0, ErrorCode::SchemaError, path + "/horizon: must be positive");
  }
  return doc;
}

inline ojson to_json(const NetworkDocument& doc) {
  ojson root;
  root["version"] = doc.version;
  ojson nodes = ojson::array();
  for (const auto& n : doc.nodes) {
    ojson j;
    j["id"] = n.id;
    switch (n.role) {
      case NodeRole::Slack: j["role"] = "slack"; break;
      case NodeRole::Stochastic:
        j["role"] = "stochastic";
        j["gamma"] = n.gamma;
        j["vol"] = n.vol;
        j["mean"] = n.mean;
        break;
      case NodeRole::Deterministic:
        j["role"] = "deterministic";
        j["injection"] = n.injection;
        j["controllable"] = n.controllable;
        break;
    }
    nodes.push_back(j);
  }
  root["nodes"] = nodes;
  ojson lines = ojson::array();
  for (const auto& l : doc.lines) {
    ojson j;
    j["from"] = l.from;
    j["to"] = l.to;
    j["susceptance"] = l.susceptance;
    if (const double* v = std::get_if<double>(&l.rating)) {
      j["rating"] = *v;
    } else if (std::holds_alternative<AutoRating>(l.rating)) {
      j["rating"] = "auto";
    } else {
      j["rating"] = "unrated";
    }
    j["tau"] = l.tau;
    lines.push_back(j);
  }
  root["lines"] = lines;
  ojson a;
  a["epsilon"] = doc.analysis.epsilon;
  a["p"] = doc.analysis.p;
  a["horizon"] = doc.analysis.horizon;
  if (doc.analysis.tau0) a["tau0"] = *doc.analysis.tau0;
  if (doc.analysis.K) a["K"] = *doc.analysis.K;
  a["zero_flow"] = doc.analysis.zero_flow == ZeroFlowPolicy::Error ? "error" : "unrated";
  root["analysis"] = a;
  return root;
}

inline std::string serialize_native(const NetworkDocument& doc) { return to_json(doc).dump(2) + "\n"; }

inline NetworkDocument with_uniform_tau(NetworkDocument doc, double tau) {
  require(tau > 0.0, ErrorCode::NonPositiveTau, "thermal constant must be positive");
  for (auto& l : doc.lines) l.tau = tau;
  return doc;
}

// ------------------------------------------------------------------ the model

/// A document resolved into the internal node order, ready for analysis.
struct NetworkModel {
  NetworkDocument doc;  // ratings resolved (no "auto" left)
  GridNetwork net;
  DcFlowMatrices flow;
  OuModel ou;
  Eigen::VectorXd mu_d;
  std::vector<std::int64_t> node_ids;   // internal node -> document id
  std::vector<std::size_t> doc_line;    // internal line -> document line index
  std::vector<bool> flipped;            // internal orientation opposite to the document's

  std::pair<std::int64_t, std::int64_t> line_label(std::size_t l) const {
    const auto& s = doc.lines[doc_line[l]];
    return {s.from, s.to};
  }

  /// Current on line l in the document's orientation.
  double oriented(std::size_t l, double internal_value) const { return flipped[l] ? -internal_value : internal_value; }

  std::size_t internal_node(std::int64_t id) const {
    auto it = std::find(node_ids.begin(), node_ids.end(), id);
    require(it != node_ids.end(), ErrorCode::InvalidInput, "unknown node id " + std::to_string(id));
    return static_cast<std::size_t>(it - node_ids.begin());
  }

  /// Index into the bus vector [mu; mu_D] (the slack has none).
  std::size_t bus_index(std::int64_t id) const {
    const std::size_t k = internal_node(id);
    require(k > 0, ErrorCode::InvalidInput, "the slack node has no free injection");
    return k - 1;
  }

  bool stochastic(std::int64_t id) const {
    const std::size_t k = internal_node(id);
    return k >= 1 && k <= flow.stochastic_count;
  }

  bool controllable(std::int64_t id) const {
    for (const auto& n : doc.nodes) {
      if (n.id == id) return n.role == NodeRole::Deterministic && n.controllable;
    }
    return false;
  }

  PsiContext context() const { return PsiContext(flow, ou, mu_d); }
};

namespace detail {

struct Ordering {
  std::vector<std::int64_t> node_ids;
  std::map<std::int64_t, std::size_t> internal;
  std::size_t stochastic = 0;
};

inline Ordering order_nodes(const NetworkDocument& doc) {
  Ordering o;
  for (auto role : {NodeRole::Slack, NodeRole::Stochastic, NodeRole::Deterministic}) {
    for (const auto& n : doc.nodes) {
      if (n.role != role) continue;
      o.internal[n.id] = o.node_ids.size();
      o.node_ids.push_back(n.id);
      if (role == NodeRole::Stochastic) ++o.stochastic;
    }
  }
  return o;
}

struct OrientedLines {
  std::vector<Line> lines;
  std::vector<std::size_t> doc_line;
  std::vector<bool> flipped;
};

inline OrientedLines orient_lines(const NetworkDocument& doc, const Ordering& o,
                                  const std::vector<double>& ratings) {
  std::vector<std::size_t> idx(doc.lines.size());
  std::vector<std::pair<std::size_t, std::size_t>> ends(doc.lines.size());
  for (std::size_t k = 0; k < doc.lines.size(); ++k) {
    idx[k] = k;
    const std::size_t a = o.internal.at(doc.lines[k].from), b = o.internal.at(doc.lines[k].to);
    ends[k] = {std::min(a, b), std::max(a, b)};
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return ends[x] < ends[y]; });
  OrientedLines out;
  for (std::size_t k : idx) {
    if (!out.doc_line.empty() && ends[out.doc_line.back()] == ends[k]) {
      const auto& s = doc.lines[k];
      fail(ErrorCode::SchemaError, "parallel lines between nodes " + std::to_string(s.from) + " and " +
                                       std::to_string(s.to) + " (merge them into one line)");
    }
    const auto& s = doc.lines[k];
    out.lines.push_back({ends[k].first, ends[k].second, s.susceptance, ratings[k], s.tau});
    out.doc_line.push_back(k);
    out.flipped.push_back(o.internal.at(s.from) > o.internal.at(s.to));
  }
  return out;
}

inline Eigen::VectorXd base_injections(const NetworkDocument& doc, const Ordering& o) {
  Eigen::VectorXd p = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(o.node_ids.size()));
  for (const auto& n : doc.nodes) {
    const auto k = static_cast<Eigen::Index>(o.internal.at(n.id));
    if (n.role == NodeRole::Stochastic) p(k) = n.mean;
    if (n.role == NodeRole::Deterministic) p(k) = n.injection;
  }
  return p;
}

}  // namespace detail

/// Base-point line flows C~ P (document line order) with P the stochastic
/// means and deterministic injections.
inline std::vector<double> base_flows(const NetworkDocument& doc) {
  const auto o = detail::order_nodes(doc);
  const auto lines = detail::orient_lines(doc, o, std::vector<double>(doc.lines.size(), 1.0));
  const GridNetwork net(o.node_ids.size(), lines.lines);
  const auto flow = build_flow_matrices(net, std::max<std::size_t>(o.stochastic, 1));
  const Eigen::VectorXd f = flow.transfer * detail::base_injections(doc, o);
  std::vector<double> out(doc.lines.size());
  for (std::size_t l = 0; l < lines.doc_line.size(); ++l) {
    const double v = f(static_cast<Eigen::Index>(l));
    out[lines.doc_line[l]] = lines.flipped[l] ? -v : v;
  }
  return out;
}

/// Replaces "auto" ratings by K |C~_l P| (K from the analysis block).
inline NetworkDocument resolve_ratings(NetworkDocument doc) {
  const bool any_auto = std::any_of(doc.lines.begin(), doc.lines.end(),
                                    [](const LineSpec& l) { return std::holds_alternative<AutoRating>(l.rating); });
  if (!any_auto) return doc;
  require(doc.analysis.K.has_value(), ErrorCode::SchemaError, "/analysis/K: required by \"auto\" ratings");
  const double K = *doc.analysis.K;
  require(K > 1.0, ErrorCode::InvalidInput, "K must exceed 1");
  const auto flows = base_flows(doc);
  double scale = 0.0;
  for (double f : flows) scale = std::max(scale, std::abs(f));
  for (std::size_t k = 0; k < doc.lines.size(); ++k) {
    auto& l = doc.lines[k];
    if (!std::holds_alternative<AutoRating>(l.rating)) continue;
    const double f = std::abs(flows[k]);
    if (f <= 1e-9 * scale) {
      require(doc.analysis.zero_flow == ZeroFlowPolicy::Unrated, ErrorCode::ZeroBaseFlow,
              "line (" + std::to_string(l.from) + "," + std::to_string(l.to) +
                  ") carries no base flow, so K |flow| gives no rating");
      l.rating = Unrated{};
    } else {
      l.rating = K * f;
    }
  }
  return doc;
}

inline NetworkModel build_model(const NetworkDocument& input) {
  NetworkDocument doc = resolve_ratings(input);
  const auto o = detail::order_nodes(doc);
  require(o.stochastic >= 1, ErrorCode::RoleError, "at least one stochastic node required");
  std::vector<double> ratings;
  for (const auto& l : doc.lines) {
    const double* v = std::get_if<double>(&l.rating);
    ratings.push_back(v ? *v : std::numeric_limits<double>::infinity());
  }
  auto lines = detail::orient_lines(doc, o, ratings);
  GridNetwork net(o.node_ids.size(), lines.lines);
  auto flow = build_flow_matrices(net, o.stochastic);

  OuModel ou;
  const auto m = static_cast<Eigen::Index>(o.stochastic);
  ou.gamma.resize(m);
  ou.vol.resize(m);
  ou.mean.resize(m);
  Eigen::VectorXd mu_d(static_cast<Eigen::Index>(flow.deterministic_count()));
  for (const auto& n : doc.nodes) {
    const auto k = static_cast<Eigen::Index>(o.internal.at(n.id));
    if (n.role == NodeRole::Stochastic) {
      ou.gamma(k - 1) = n.gamma;
      ou.vol(k - 1) = n.vol;
      ou.mean(k - 1) = n.mean;
    } else if (n.role == NodeRole::Deterministic) {
      mu_d(k - 1 - m) = n.injection;
    }
  }
  ou.noise_scale = doc.analysis.epsilon;
  ou.horizon = doc.analysis.horizon;
  return NetworkModel{std::move(doc), std::move(net), std::move(flow), std::move(ou), std::move(mu_d),
                      o.node_ids, std::move(lines.doc_line), std::move(lines.flipped)};
}

// ------------------------------------------------------------ MATPOWER subset

struct MatpowerBus {
  std::int64_t id = 0;
  int type = 1;
  double pd = 0.0;
};

struct MatpowerGen {
  std::int64_t bus = 0;
  double pg = 0.0;
  bool in_service = true;
};

struct MatpowerBranch {
  std::int64_t from = 0;
  std::int64_t to = 0;
  double x = 0.0;
  bool in_service = true;
};

struct MatpowerCase {
  double base_mva = 100.0;
  std::vector<MatpowerBus> buses;
  std::vector<MatpowerGen> gens;
  std::vector<MatpowerBranch> branches;
  std::vector<std::string> warnings;

  /// (Pg - Pd) / baseMVA per bus id.
  std::map<std::int64_t, double> net_injection() const {
    std::map<std::int64_t, double> p;
    for (const auto& b : buses) p[b.id] = -b.pd / base_mva;
    for (const auto& g : gens) {
      if (g.in_service) p[g.bus] += g.pg / base_mva;
    }
    return p;
  }
};

namespace detail {

class MatlabScanner {
 public:
  explicit MatlabScanner(const std::string& text) : text_(text) {}

  bool done() const { return pos_ >= text_.size(); }
  char peek() const { return done() ? '\0' : text_[pos_]; }
  std::size_t line() const { return line_; }
  std::size_t column() const { return pos_ - line_start_ + 1; }

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::ParseError, "line " + std::to_string(line_) + ", column " + std::to_string(column()) + ": " + what);
  }

  void advance() {
    if (done()) return;
    if (text_[pos_] == '\n') {
      ++line_;
      line_start_ = pos_ + 1;
    }
    ++pos_;
  }

  void skip_comment() {
    while (!done() && peek() != '\n') advance();
  }

  // spaces, tabs and comments; newlines only if asked
  void skip_blank(bool newlines) {
    while (!done()) {
      const char c = peek();
      if (c == '%') {
        skip_comment();
      } else if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n') ||
                 (newlines && c == '.' && text_.compare(pos_, 3, "...") == 0)) {
        if (c == '.') {
          skip_comment();
        } else {
          advance();
        }
      } else {
        break;
      }
    }
  }

  bool starts_with(const std::string& s) const { return text_.compare(pos_, s.size(), s) == 0; }

  std::string identifier() {
    std::string out;
    while (!done() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) {
      out.push_back(peek());
      advance();
    }
    return out;
  }

  std::string token() {
    std::string out;
    while (!done()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == ',' || c == ';' || c == ']' || c == '%') break;
      out.push_back(c);
      advance();
    }
    return out;
  }

  void skip_string() {
    advance();
    while (!done() && peek() != '\'' && peek() != '\n') advance();
    if (peek() != '\'') error("unterminated string");
    advance();
  }

  // skips a bracketed value with nesting, honouring quotes and comments
  void skip_group(char open, char close) {
    int depth = 0;
    while (!done()) {
      const char c = peek();
      if (c == '%') {
        skip_comment();
        continue;
      }
      if (c == '\'') {
        advance();
        while (!done() && peek() != '\'' && peek() != '\n') advance();
      } else if (c == open) {
        ++depth;
      } else if (c == close) {
        --depth;
        if (depth == 0) {
          advance();
          return;
        }
      }
      advance();
    }
    error(std::string("unterminated '") + open + "'");
  }

 private:
  const std::string& text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t line_start_ = 0;
};

struct Cell {
  double value;
  std::size_t line, column;
};
using Matrix = std::vector<std::vector<Cell>>;

inline double parse_number(MatlabScanner& s, std::size_t line, std::size_t col, const std::string& tok) {
  double v = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  std::string lower(tok);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "inf" || lower == "+inf") return std::numeric_limits<double>::infinity();
  if (lower == "-inf") return -std::numeric_limits<double>::infinity();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || first == last) {
    fail(ErrorCode::ParseError, "line " + std::to_string(line) + ", column " + std::to_string(col) +
                                    ": expected a number, found '" + tok + "'");
  }
  (void)s;
  return v;
}

inline Matrix parse_matrix(MatlabScanner& s) {
  // at '['
  s.advance();
  Matrix m;
  std::vector<Cell> row;
  auto end_row = [&] {
    if (!row.empty()) m.push_back(std::move(row));
    row.clear();
  };
  while (true) {
    s.skip_blank(false);
    if (s.done()) s.error("unterminated matrix");
    const char c = s.peek();
    if (c == ']') {
      s.advance();
      end_row();
      return m;
    }
    if (c == ';' || c == '\n') {
      s.advance();
      end_row();
      continue;
    }
    if (c == ',') {
      s.advance();
      continue;
    }
    if (c == '.' && s.starts_with("...")) {
      s.skip_comment();
      if (!s.done()) s.advance();
      continue;
    }
    const std::size_t line = s.line(), col = s.column();
    const std::string tok = s.token();
    if (tok.empty()) s.error(std::string("unexpected character '") + c + "'");
    row.push_back({parse_number(s, line, col, tok), line, col});
  }
}

inline const Cell& cell(const std::vector<Cell>& row, std::size_t col) { return row[col]; }

}  // namespace detail

/// Reads mpc.baseMVA, mpc.bus (BUS_I, BUS_TYPE, PD), mpc.gen (GEN_BUS, PG,
/// GEN_STATUS) and mpc.branch (F_BUS, T_BUS, BR_X, BR_STATUS); everything
/// else is skipped with a warning.
inline MatpowerCase parse_matpower(const std::string& text) {
  detail::MatlabScanner s(text);
  MatpowerCase out;
  std::optional<detail::Matrix> bus, gen, branch;
  bool have_base = false;
  while (!s.done()) {
    s.skip_blank(true);
    if (s.done()) break;
    if (!s.starts_with("mpc.")) {
      // function header, blank statements, other variables
      const char c = s.peek();
      if (c == '[') {
        s.skip_group('[', ']');
      } else if (c == '{') {
        s.skip_group('{', '}');
      } else if (c == '\'') {
        s.skip_string();
      } else {
        s.advance();
      }
      continue;
    }
    for (int k = 0; k < 4; ++k) s.advance();
    const std::size_t line = s.line();
    const std::string name = s.identifier();
    if (name.empty()) s.error("expected a field name after 'mpc.'");
    s.skip_blank(false);
    if (s.peek() != '=') s.error("expected '=' after mpc." + name);
    s.advance();
    s.skip_blank(true);
    if (name == "bus" || name == "gen" || name == "branch") {
      if (s.peek() != '[') s.error("expected '[' for mpc." + name);
      auto m = detail::parse_matrix(s);
      (name == "bus" ? bus : name == "gen" ? gen : branch) = std::move(m);
    } else if (name == "baseMVA") {
      const std::size_t l = s.line(), c = s.column();
      const std::string tok = s.token();
      out.base_mva = detail::parse_number(s, l, c, tok);
      if (!(out.base_mva > 0.0)) fail(ErrorCode::ParseError, "line " + std::to_string(l) + ": baseMVA must be positive");
      have_base = true;
    } else {
      out.warnings.push_back("line " + std::to_string(line) + ": ignoring unsupported field mpc." + name);
      const char c = s.peek();
      if (c == '[') {
        s.skip_group('[', ']');
      } else if (c == '{') {
        s.skip_group('{', '}');
      } else {
        while (!s.done() && s.peek() != ';' && s.peek() != '\n') {
          if (s.peek() == '\'') {
            s.skip_string();
          } else {
            s.advance();
          }
        }
      }
    }
  }
  if (!have_base) out.warnings.emplace_back("mpc.baseMVA missing; assuming 100");
  require(bus.has_value(), ErrorCode::ParseError, "mpc.bus not found");
  require(gen.has_value(), ErrorCode::ParseError, "mpc.gen not found");
  require(branch.has_value(), ErrorCode::ParseError, "mpc.branch not found");

  auto where = [](const detail::Cell& c) {
    return "line " + std::to_string(c.line) + ", column " + std::to_string(c.column);
  };
  auto as_id = [&](const detail::Cell& c) {
    if (c.value != std::floor(c.value) || !std::isfinite(c.value)) {
      fail(ErrorCode::ParseError, where(c) + ": expected an integer bus id");
    }
    return static_cast<std::int64_t>(c.value);
  };
  std::set<std::int64_t> ids;
  for (const auto& row : *bus) {
    if (row.size() < 3) fail(ErrorCode::ParseError, where(row.front()) + ": mpc.bus rows need at least 3 columns");
    MatpowerBus b{as_id(row[0]), static_cast<int>(row[1].value), row[2].value};
    if (!ids.insert(b.id).second) fail(ErrorCode::ParseError, where(row[0]) + ": duplicate bus id " + std::to_string(b.id));
    out.buses.push_back(b);
  }
  for (const auto& row : *gen) {
    if (row.size() < 2) fail(ErrorCode::ParseError, where(row.front()) + ": mpc.gen rows need at least 2 columns");
    MatpowerGen g{as_id(row[0]), row[1].value, row.size() < 8 || row[7].value > 0.0};
    if (!ids.count(g.bus)) fail(ErrorCode::ParseError, where(row[0]) + ": generator at unknown bus " + std::to_string(g.bus));
    if (!g.in_service) out.warnings.push_back(where(row[0]) + ": generator out of service, ignored");
    out.gens.push_back(g);
  }
  for (const auto& row : *branch) {
    if (row.size() < 4) fail(ErrorCode::ParseError, where(row.front()) + ": mpc.branch rows need at least 4 columns");
    MatpowerBranch b{as_id(row[0]), as_id(row[1]), row[3].value, row.size() < 11 || row[10].value > 0.0};
    if (!ids.count(b.from) || !ids.count(b.to)) fail(ErrorCode::ParseError, where(row[0]) + ": branch references an unknown bus");
    if (b.x == 0.0) fail(ErrorCode::ParseError, where(row[3]) + ": zero reactance");
    if (!b.in_service) out.warnings.push_back(where(row[0]) + ": branch out of service, ignored");
    out.branches.push_back(b);
  }
  return out;
}

struct ImaxRule {
  double K = 1.5;
  std::vector<std::int64_t> stochastic;
  std::vector<std::int64_t> controllable;
  double gamma = 1.0;
  double vol = 1.0;
  double tau = 1.0;
  double epsilon = 0.1;
  double p = 0.01;
  double horizon = 1.0;
  std::optional<double> tau0;
  ZeroFlowPolicy zero_flow = ZeroFlowPolicy::Error;
};

/// Native document from a MATPOWER case: beta = 1/x (parallel branches
/// merged), OU means at the base injections, ratings K |C~_l P_D|.
inline NetworkDocument apply_imax_rule(const MatpowerCase& mc, const ImaxRule& rule) {
  require(rule.K > 1.0, ErrorCode::InvalidInput, "K must exceed 1");
  require(!rule.stochastic.empty(), ErrorCode::RoleError, "at least one stochastic node required");
  const auto slacks = std::count_if(mc.buses.begin(), mc.buses.end(), [](const MatpowerBus& b) { return b.type == 3; });
  require(slacks == 1, ErrorCode::RoleError, "case must have exactly one reference bus (type 3), found " + std::to_string(slacks));
  const auto injection = mc.net_injection();
  std::set<std::int64_t> stochastic(rule.stochastic.begin(), rule.stochastic.end());
  std::set<std::int64_t> controllable(rule.controllable.begin(), rule.controllable.end());

  NetworkDocument doc;
  for (const auto& b : mc.buses) {
    NodeSpec n;
    n.id = b.id;
    if (b.type == 3) {
      require(!stochastic.count(b.id) && !controllable.count(b.id), ErrorCode::RoleError,
              "the reference bus cannot be stochastic or controllable");
      n.role = NodeRole::Slack;
    } else if (stochastic.count(b.id)) {
      require(!controllable.count(b.id), ErrorCode::RoleError, "bus " + std::to_string(b.id) + " is both stochastic and controllable");
      n.role = NodeRole::Stochastic;
      n.gamma = rule.gamma;
      n.vol = rule.vol;
      n.mean = injection.at(b.id);
    } else {
      n.role = NodeRole::Deterministic;
      n.injection = injection.at(b.id);
      n.controllable = controllable.count(b.id) > 0;
    }
    doc.nodes.push_back(n);
  }
  for (auto id : stochastic) require(injection.count(id), ErrorCode::InvalidInput, "unknown stochastic bus " + std::to_string(id));
  for (auto id : controllable) require(injection.count(id), ErrorCode::InvalidInput, "unknown controllable bus " + std::to_string(id));

  std::map<std::pair<std::int64_t, std::int64_t>, double> merged;
  std::vector<std::pair<std::int64_t, std::int64_t>> order;
  for (const auto& br : mc.branches) {
    if (!br.in_service) continue;
    const auto key = std::minmax(br.from, br.to);
    auto [it, fresh] = merged.emplace(key, 0.0);
    if (fresh) order.push_back(key);
    it->second += 1.0 / br.x;
  }
  for (const auto& key : order) {
    LineSpec l;
    l.from = key.first;
    l.to = key.second;
    l.susceptance = merged.at(key);
    require(l.susceptance > 0.0, ErrorCode::InvalidInput,
            "branch (" + std::to_string(l.from) + "," + std::to_string(l.to) + ") has non-positive susceptance");
    l.rating = AutoRating{};
    l.tau = rule.tau;
    doc.lines.push_back(l);
  }
  doc.analysis.epsilon = rule.epsilon;
  doc.analysis.p = rule.p;
  doc.analysis.horizon = rule.horizon;
  doc.analysis.tau0 = rule.tau0;
  doc.analysis.K = rule.K;
  doc.analysis.zero_flow = rule.zero_flow;
  return resolve_ratings(doc);
}

// -------------------------------------------------------------------- exports

namespace detail {

inline ojson rate_json(const Rate& r) { return r.bounded() ? ojson(r.value()) : ojson("unbounded"); }

inline ojson label_json(const NetworkModel& model, std::size_t l) {
  const auto [a, b] = model.line_label(l);
  return ojson::array({a, b});
}

inline ojson rate_with_argmin_json(const NetworkModel& model, const RateWithArgmin& r) {
  ojson j;
  j["rate"] = rate_json(r.rate);
  ojson arg = ojson::array();
  for (std::size_t l : r.argmin) arg.push_back(label_json(model, l));
  j["argmin"] = arg;
  return j;
}

inline ojson polygon_json(const Polygon& poly) {
  ojson pts = ojson::array();
  for (const auto& p : poly) pts.push_back(ojson::array({p.u, p.v}));
  return pts;
}

inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline ojson report_json(const DecayRateReport& r, const NetworkModel& model) {
  ojson j;
  ojson lines = ojson::array();
  for (const auto& lr : r.lines) {
    ojson e;
    e["line"] = detail::label_json(model, lr.line);
    e["active"] = lr.active;
    e["nu"] = model.oriented(lr.line, lr.nu);
    e["psi_plus"] = detail::rate_json(model.flipped[lr.line] ? lr.psi_minus : lr.psi_plus);
    e["psi_minus"] = detail::rate_json(model.flipped[lr.line] ? lr.psi_plus : lr.psi_minus);
    e["alpha"] = lr.alpha ? ojson(*lr.alpha) : ojson(nullptr);
    e["psi_alpha"] = detail::rate_json(lr.psi_alpha);
    e["sigma2"] = lr.sigma2;
    lines.push_back(e);
  }
  j["lines"] = lines;
  j["current"] = detail::rate_with_argmin_json(model, r.current);
  j["lower_bound"] = detail::rate_with_argmin_json(model, r.lower_bound);
  j["tau0"] = r.tau0 ? ojson(*r.tau0) : ojson(nullptr);
  j["taylor"] = r.taylor ? detail::rate_json(*r.taylor) : ojson(nullptr);
  ojson ex = ojson::array();
  for (std::size_t l : r.excluded) ex.push_back(detail::label_json(model, l));
  j["excluded"] = ex;
  return j;
}

inline ojson region_json(const CapacityRegion& r, const NetworkModel& model) {
  ojson j;
  j["kind"] = to_string(r.kind);
  j["epsilon"] = r.epsilon;
  j["p"] = r.p;
  j["horizon"] = r.horizon;
  j["tau0"] = r.tau0 ? ojson(*r.tau0) : ojson(nullptr);
  ojson lines = ojson::array();
  for (Eigen::Index l = 0; l < r.bounds.size(); ++l) {
    const auto li = static_cast<std::size_t>(l);
    ojson e;
    e["line"] = detail::label_json(model, li);
    e["active"] = std::binary_search(r.active.begin(), r.active.end(), li);
    e["bound"] = r.bounds(l);
    e["eta"] = r.eta(l);
    lines.push_back(e);
  }
  j["lines"] = lines;
  return j;
}

inline CapacityRegion region_from_json(const nlohmann::json& j) {
  CapacityRegion r;
  r.kind = region_kind_from_string(detail::field(j, "kind", "").get<std::string>());
  r.epsilon = detail::number_field(j, "epsilon", "");
  r.p = detail::number_field(j, "p", "");
  r.horizon = detail::number_field(j, "horizon", "");
  r.tau0 = detail::optional_number(j, "tau0", "");
  const auto& lines = detail::field(j, "lines", "");
  require(lines.is_array(), ErrorCode::SchemaError, "/lines: expected an array");
  r.bounds.resize(static_cast<Eigen::Index>(lines.size()));
  r.eta.resize(r.bounds.size());
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const std::string path = detail::pointer("/lines", k);
    r.bounds(static_cast<Eigen::Index>(k)) = detail::number_field(lines[k], "bound", path);
    r.eta(static_cast<Eigen::Index>(k)) = detail::number_field(lines[k], "eta", path);
    if (detail::field(lines[k], "active", path).get<bool>()) r.active.push_back(k);
  }
  return r;
}

inline std::string slice_csv(const Slice2D& s) {
  std::string out = "u,v\n";
  for (const auto& p : s.polygon) out += detail::g17(p.u) + "," + detail::g17(p.v) + "\n";
  return out;
}

inline ojson slice_json(const Slice2D& s, const NetworkModel& model, RegionKind kind) {
  const auto free_id = [&](std::size_t b) { return model.node_ids[b + 1]; };
  ojson j;
  j["kind"] = to_string(kind);
  j["u_node"] = free_id(s.spec.u_index);
  j["v_node"] = free_id(s.spec.v_index);
  j["bbox"] = ojson::array({s.spec.bbox.u0, s.spec.bbox.u1, s.spec.bbox.v0, s.spec.bbox.v1});
  j["area"] = area(s.polygon);
  j["vertices"] = detail::polygon_json(s.polygon);
  return j;
}

inline ojson partition_json(const RiskPartition& part, const NetworkModel& model) {
  ojson j;
  j["resolution"] = part.resolution;
  j["grid"] = ojson::array({part.grid.u0, part.grid.u1, part.grid.v0, part.grid.v1});
  j["deterministic"] = detail::polygon_json(part.deterministic);
  ojson central = ojson::array();
  for (std::size_t l : part.regions[part.central].lines) central.push_back(detail::label_json(model, l));
  j["central"] = central;
  ojson regions = ojson::array();
  for (const auto& r : part.regions) {
    ojson e;
    ojson labels = ojson::array();
    for (std::size_t l : r.lines) labels.push_back(detail::label_json(model, l));
    e["lines"] = labels;
    e["cells"] = r.cells;
    e["area"] = r.area;
    e["centroid"] = ojson::array({r.centroid.u, r.centroid.v});
    ojson loops = ojson::array();
    for (const auto& loop : r.outline) loops.push_back(detail::polygon_json(loop));
    e["outline"] = loops;
    regions.push_back(e);
  }
  j["regions"] = regions;
  return j;
}

/// One row per outline vertex: region index, label "i-j[+k-l]", loop, u, v.
inline std::string partition_csv(const RiskPartition& part, const NetworkModel& model) {
  std::string out = "region,lines,loop,u,v\n";
  for (std::size_t r = 0; r < part.regions.size(); ++r) {
    std::string label;
    for (std::size_t l : part.regions[r].lines) {
      const auto [a, b] = model.line_label(l);
      if (!label.empty()) label += "+";
      label += std::to_string(a) + "-" + std::to_string(b);
    }
    for (std::size_t k = 0; k < part.regions[r].outline.size(); ++k) {
      for (const auto& p : part.regions[r].outline[k]) {
        out += std::to_string(r) + "," + label + "," + std::to_string(k) + "," + detail::g17(p.u) + "," + detail::g17(p.v) + "\n";
      }
    }
  }
  return out;
}

inline ojson estimate_json(const McEstimate& e) {
  ojson j;
  j["hits"] = e.hits;
  j["replicates"] = e.replicates;
  j["p_hat"] = e.p_hat;
  j["ci95"] = ojson::array({e.ci_low, e.ci_high});
  return j;
}

inline ojson decay_fit_json(const DecayFit& f) {
  ojson j;
  j["rate"] = f.rate;
  j["intercept"] = f.intercept;
  j["residual"] = f.residual;
  ojson pts = ojson::array();
  for (std::size_t k = 0; k < f.epsilons.size(); ++k) {
    ojson e = estimate_json(f.estimates[k]);
    e["epsilon"] = f.epsilons[k];
    pts.push_back(e);
  }
  j["points"] = pts;
  return j;
}

inline ojson exact1d_json(const Exact1dResult& r, const Exact1dProblem& p) {
  ojson j;
  j["mu"] = p.mu;
  j["gamma"] = p.gamma;
  j["vol"] = p.vol;
  j["tau"] = p.tau;
  j["horizon"] = p.horizon;
  j["rate"] = r.rate;
  j["f_prime_0"] = r.x1;
  j["f_second_0"] = r.x2;
  j["theta_T"] = r.theta_t;
  j["method"] = r.method == Exact1dMethod::Multiplier ? "multiplier" : "shooting";
  return j;
}

}  // namespace ldcap
