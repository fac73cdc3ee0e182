#pragma once

// Noisy-or diagnostic networks: structure, parsing, validation and factor
// evaluation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace noisyor {

using NodeIndex = std::size_t;

/// Node states are stored one byte per node (0 = false, 1 = true).
using Assignment = std::vector<std::uint8_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class NodeKind { Model, Sensory };

enum class Profile { Strict, Permissive };

inline std::string_view to_string(NodeKind kind) {
  return kind == NodeKind::Model ? "model" : "sensory";
}

struct Node {
  std::string id;
  NodeKind kind = NodeKind::Model;
  /// Strength of the implicit always-true "other causes" parent.
  double leak = 0.0;
};

struct Edge {
  NodeIndex from = 0;
  NodeIndex to = 0;
  double p = 0.0;
};

struct ParentLink {
  NodeIndex node;
  double p;
};

struct ChildLink {
  NodeIndex node;
  double p;
};

inline bool is_probability(double x) { return x >= 0.0 && x <= 1.0; }

/// Immutable DAG of binary noisy-or units. Indices follow construction
/// order; adjacency lists are ordered by edge order.
class Network {
 public:
  Network() = default;

  Network(std::vector<Node> nodes, std::vector<Edge> edges)
      : nodes_(std::move(nodes)), edges_(std::move(edges)) {
    for (NodeIndex i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.id.empty()) throw Error("node " + std::to_string(i) + " has an empty id");
      if (!index_.emplace(n.id, i).second) throw Error("duplicate node: " + n.id);
      if (!is_probability(n.leak)) throw Error("probability out of range: leak of " + n.id);
    }
    parents_.resize(nodes_.size());
    children_.resize(nodes_.size());
    for (const Edge& e : edges_) {
      if (e.from >= nodes_.size() || e.to >= nodes_.size())
        throw Error("edge references an unknown node index");
      const std::string label = nodes_[e.from].id + "->" + nodes_[e.to].id;
      if (!is_probability(e.p)) throw Error("probability out of range: edge " + label);
      if (e.from == e.to) throw Error("cycle detected: " + nodes_[e.from].id);
      for (const ParentLink& pl : parents_[e.to])
        if (pl.node == e.from) throw Error("duplicate edge: " + label);
      parents_[e.to].push_back({e.from, e.p});
      children_[e.from].push_back({e.to, e.p});
    }
    compute_topo_order();
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(NodeIndex i) const { return nodes_[i]; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::span<const ParentLink> parents(NodeIndex i) const { return parents_[i]; }
  std::span<const ChildLink> children(NodeIndex i) const { return children_[i]; }
  const std::vector<NodeIndex>& topo_order() const { return topo_; }
  /// Position of each node within topo_order().
  std::size_t topo_rank(NodeIndex i) const { return rank_[i]; }

  std::optional<NodeIndex> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  NodeIndex index_of(std::string_view id) const {
    auto i = find(id);
    if (!i) throw Error("unknown node: " + std::string(id));
    return *i;
  }

  const std::string& id(NodeIndex i) const { return nodes_[i].id; }

  /// Probability that node j is false given the current parent values:
  /// (1 - leak) times (1 - p) over every true parent.
  double prob_false(NodeIndex j, std::span<const std::uint8_t> values) const {
    double q = 1.0 - nodes_[j].leak;
    for (const ParentLink& pl : parents_[j])
      if (values[pl.node]) q *= 1.0 - pl.p;
    return q;
  }

  double prob_true(NodeIndex j, std::span<const std::uint8_t> values) const {
    return 1.0 - prob_false(j, values);
  }

  /// P(n_j = values[j] | parents).
  double factor(NodeIndex j, std::span<const std::uint8_t> values) const {
    const double q = prob_false(j, values);
    return values[j] ? 1.0 - q : q;
  }

 private:
  void compute_topo_order() {
    const std::size_t n = nodes_.size();
    std::vector<std::size_t> indegree(n);
    for (NodeIndex i = 0; i < n; ++i) indegree[i] = parents_[i].size();
    // Smallest ready index first keeps the order stable under file order.
    std::vector<NodeIndex> heap;
    for (NodeIndex i = 0; i < n; ++i)
      if (indegree[i] == 0) heap.push_back(i);
    std::make_heap(heap.begin(), heap.end(), std::greater<>());
    topo_.clear();
    while (!heap.empty()) {
      std::pop_heap(heap.begin(), heap.end(), std::greater<>());
      NodeIndex i = heap.back();
      heap.pop_back();
      topo_.push_back(i);
      for (const ChildLink& c : children_[i]) {
        if (--indegree[c.node] == 0) {
          heap.push_back(c.node);
          std::push_heap(heap.begin(), heap.end(), std::greater<>());
        }
      }
    }
    if (topo_.size() != n) {
      for (NodeIndex i = 0; i < n; ++i)
        if (indegree[i] > 0) throw Error("cycle detected: " + nodes_[i].id);
    }
    rank_.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) rank_[topo_[r]] = r;
  }

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::vector<std::vector<ParentLink>> parents_;
  std::vector<std::vector<ChildLink>> children_;
  std::vector<NodeIndex> topo_;
  std::vector<std::size_t> rank_;
  std::unordered_map<std::string, NodeIndex> index_;
};

struct Violation {
  std::string node;
  std::string message;
};

/// Profile checks beyond the structural invariants the constructor enforces.
/// Strict requires every leak strictly inside (0, 1), which makes the joint
/// strictly positive on every state consistent with the hard links.
inline std::vector<Violation> validate(const Network& net, Profile profile) {
  std::vector<Violation> out;
  for (const Node& n : net.nodes()) {
    if (!is_probability(n.leak)) out.push_back({n.id, "leak out of range"});
    else if (profile == Profile::Strict && (n.leak <= 0.0 || n.leak >= 1.0))
      out.push_back({n.id, "positivity: leak must lie strictly inside (0,1)"});
  }
  return out;
}

inline void require_valid(const Network& net, Profile profile) {
  auto v = validate(net, profile);
  if (!v.empty()) throw Error("validation failed on " + v.front().node + ": " + v.front().message);
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw Error("unknown key '" + it.key() + "' in " + std::string(where));
  }
}

inline double read_probability(const nlohmann::json& obj, const char* key, const std::string& what) {
  if (!obj.contains(key) || !obj.at(key).is_number())
    throw Error("missing or non-numeric '" + std::string(key) + "' on " + what);
  double v = obj.at(key).get<double>();
  if (!is_probability(v)) throw Error("probability out of range: " + what);
  return v;
}

inline std::string read_string(const nlohmann::json& obj, const char* key, const std::string& what) {
  if (!obj.contains(key) || !obj.at(key).is_string())
    throw Error("missing or non-string '" + std::string(key) + "' on " + what);
  return obj.at(key).get<std::string>();
}

}  // namespace detail

inline Network network_from_json(const nlohmann::json& doc, Profile profile = Profile::Strict) {
  if (!doc.is_object()) throw Error("network document must be a JSON object");
  if (profile == Profile::Strict) detail::reject_unknown_keys(doc, {"nodes", "edges"}, "network");
  if (!doc.contains("nodes") || !doc.at("nodes").is_array()) throw Error("missing 'nodes' array");

  std::vector<Node> nodes;
  std::unordered_map<std::string, NodeIndex> index;
  for (const auto& jn : doc.at("nodes")) {
    if (!jn.is_object()) throw Error("node entries must be objects");
    if (profile == Profile::Strict) detail::reject_unknown_keys(jn, {"id", "kind", "leak"}, "node");
    Node n;
    n.id = detail::read_string(jn, "id", "node");
    std::string kind = detail::read_string(jn, "kind", "node " + n.id);
    if (kind == "model") n.kind = NodeKind::Model;
    else if (kind == "sensory") n.kind = NodeKind::Sensory;
    else throw Error("unknown kind '" + kind + "' on node " + n.id);
    n.leak = detail::read_probability(jn, "leak", "leak of " + n.id);
    if (!index.emplace(n.id, nodes.size()).second) throw Error("duplicate node: " + n.id);
    nodes.push_back(std::move(n));
  }

  std::vector<Edge> edges;
  if (doc.contains("edges")) {
    if (!doc.at("edges").is_array()) throw Error("'edges' must be an array");
    for (const auto& je : doc.at("edges")) {
      if (!je.is_object()) throw Error("edge entries must be objects");
      if (profile == Profile::Strict) detail::reject_unknown_keys(je, {"from", "to", "p"}, "edge");
      std::string from = detail::read_string(je, "from", "edge");
      std::string to = detail::read_string(je, "to", "edge");
      auto f = index.find(from);
      if (f == index.end()) throw Error("unknown node reference: " + from);
      auto t = index.find(to);
      if (t == index.end()) throw Error("unknown node reference: " + to);
      edges.push_back({f->second, t->second, detail::read_probability(je, "p", "edge " + from + "->" + to)});
    }
  }
  return Network(std::move(nodes), std::move(edges));
}

/// Parses the JSON network format. Throws Error naming the offending
/// identifier on any structural problem.
inline Network parse_network(std::string_view text, Profile profile = Profile::Strict) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("syntax error: ") + e.what());
  }
  return network_from_json(doc, profile);
}

inline nlohmann::ordered_json network_to_json(const Network& net) {
  nlohmann::ordered_json doc;
  doc["nodes"] = nlohmann::ordered_json::array();
  for (const Node& n : net.nodes())
    doc["nodes"].push_back({{"id", n.id}, {"kind", to_string(n.kind)}, {"leak", n.leak}});
  doc["edges"] = nlohmann::ordered_json::array();
  for (const Edge& e : net.edges())
    doc["edges"].push_back({{"from", net.id(e.from)}, {"to", net.id(e.to)}, {"p", e.p}});
  return doc;
}

inline std::string serialize_network(const Network& net) { return network_to_json(net).dump(2) + "\n"; }

/// Observed values for a subset of nodes, indexed densely by node.
class EvidenceSet {
 public:
  EvidenceSet() = default;
  explicit EvidenceSet(std::size_t n) : obs_(n, kUnobserved) {}

  void set(NodeIndex i, bool value) {
    if (obs_[i] != kUnobserved) throw Error("node assigned twice in evidence");
    obs_[i] = value ? 1 : 0;
  }

  std::size_t size() const { return obs_.size(); }
  bool observed(NodeIndex i) const { return obs_[i] != kUnobserved; }
  bool value(NodeIndex i) const { return obs_[i] == 1; }
  bool is_true(NodeIndex i) const { return obs_[i] == 1; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(obs_.begin(), obs_.end(), [](auto v) { return v != kUnobserved; }));
  }
  std::size_t count_true() const { return static_cast<std::size_t>(std::count(obs_.begin(), obs_.end(), 1)); }

  std::vector<NodeIndex> nodes() const {
    std::vector<NodeIndex> out;
    for (NodeIndex i = 0; i < obs_.size(); ++i)
      if (observed(i)) out.push_back(i);
    return out;
  }

  bool operator==(const EvidenceSet&) const = default;

 private:
  static constexpr std::int8_t kUnobserved = -1;
  std::vector<std::int8_t> obs_;
};

inline EvidenceSet evidence_from_map(const Network& net, const std::map<std::string, bool>& values) {
  EvidenceSet ev(net.size());
  for (const auto& [id, v] : values) ev.set(net.index_of(id), v);
  return ev;
}

/// Evidence files are flat objects mapping node ids to booleans.
inline EvidenceSet parse_evidence(const Network& net, std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("syntax error: ") + e.what());
  }
  if (!doc.is_object()) throw Error("evidence document must be a JSON object");
  EvidenceSet ev(net.size());
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto idx = net.find(it.key());
    if (!idx) throw Error("evidence node unknown: " + it.key());
    if (!it.value().is_boolean()) throw Error("evidence value for " + it.key() + " must be boolean");
    ev.set(*idx, it.value().get<bool>());
  }
  return ev;
}

inline nlohmann::ordered_json evidence_to_json(const Network& net, const EvidenceSet& ev) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (NodeIndex i : ev.nodes()) doc[net.id(i)] = ev.value(i);
  return doc;
}

/// Noisy-or probability that node j is true, parent states keyed by id.
/// The map must cover exactly the parents of j.
inline double noisy_or_prob(const Network& net, NodeIndex j, const std::map<std::string, bool>& parent_values) {
  std::size_t matched = 0;
  double q = 1.0 - net.node(j).leak;
  for (const ParentLink& pl : net.parents(j)) {
    auto it = parent_values.find(net.id(pl.node));
    if (it == parent_values.end()) throw Error("missing parent assignment: " + net.id(pl.node));
    ++matched;
    if (it->second) q *= 1.0 - pl.p;
  }
  if (matched != parent_values.size()) throw Error("extraneous parent assignment for node " + net.id(j));
  return 1.0 - q;
}

/// Sum of log factors over all nodes; -infinity when any factor is zero.
inline double joint_log_prob(const Network& net, std::span<const std::uint8_t> values) {
  if (values.size() != net.size()) throw Error("incomplete assignment");
  double total = 0.0;
  for (NodeIndex j : net.topo_order()) {
    const double f = net.factor(j, values);
    if (f <= 0.0) return -std::numeric_limits<double>::infinity();
    total += std::log(f);
  }
  return total;
}

inline double joint_log_prob(const Network& net, const std::map<std::string, bool>& assignment) {
  Assignment values(net.size(), 0);
  std::vector<bool> seen(net.size(), false);
  for (const auto& [id, v] : assignment) {
    NodeIndex i = net.index_of(id);
    values[i] = v ? 1 : 0;
    seen[i] = true;
  }
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (!seen[i]) throw Error("incomplete assignment: missing " + net.id(i));
  return joint_log_prob(net, values);
}

/// Parents, children and co-parents of children, excluding n. Sorted by index.
inline std::vector<NodeIndex> markov_blanket(const Network& net, NodeIndex n) {
  if (n >= net.size()) throw Error("unknown node index");
  std::vector<NodeIndex> out;
  for (const ParentLink& p : net.parents(n)) out.push_back(p.node);
  for (const ChildLink& c : net.children(n)) {
    out.push_back(c.node);
    for (const ParentLink& sp : net.parents(c.node)) out.push_back(sp.node);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  out.erase(std::remove(out.begin(), out.end(), n), out.end());
  return out;
}

}  // namespace noisyor
