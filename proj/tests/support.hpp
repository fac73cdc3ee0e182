#pragma once

// Test-side oracles. Everything here is computed from the edge list and node
// leaks directly, without the library's adjacency lists, factor caches or
// inference routines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "noisyor/network.hpp"
#include "noisyor/rng.hpp"

namespace testsupport {

using noisyor::Assignment;
using noisyor::Edge;
using noisyor::EvidenceSet;
using noisyor::Network;
using noisyor::Node;
using noisyor::NodeIndex;
using noisyor::NodeKind;
using noisyor::Rng;

inline Network vase() {
  return Network({{"e", NodeKind::Model, 0.01}, {"b", NodeKind::Model, 0.02}, {"v", NodeKind::Sensory, 0.001}},
                 {{0, 2, 0.9}, {1, 2, 0.8}});
}

inline EvidenceSet vase_broken(const Network& net) {
  EvidenceSet ev(net.size());
  ev.set(net.index_of("v"), true);
  return ev;
}

struct RandomNetOptions {
  std::size_t nodes = 8;
  double edge_prob = 0.3;
  std::size_t max_parents = 4;
  double leak_lo = 0.02, leak_hi = 0.5;
  double p_lo = 0.05, p_hi = 0.95;
};

/// Random DAG whose file order is a random permutation of a hidden causal
/// order, so index order and topological order differ.
inline Network random_network(Rng& rng, const RandomNetOptions& o) {
  const std::size_t n = o.nodes;
  std::vector<std::size_t> slot(n);  // causal position -> node index
  std::iota(slot.begin(), slot.end(), 0);
  rng.shuffle(slot);
  std::vector<Node> nodes(n);
  for (std::size_t i = 0; i < n; ++i)
    nodes[i] = {"n" + std::to_string(i), NodeKind::Model, o.leak_lo + (o.leak_hi - o.leak_lo) * rng.uniform()};
  std::vector<Edge> edges;
  for (std::size_t b = 1; b < n; ++b) {
    std::size_t parents = 0;
    for (std::size_t a = 0; a < b && parents < o.max_parents; ++a) {
      if (rng.uniform() < o.edge_prob) {
        edges.push_back({slot[a], slot[b], o.p_lo + (o.p_hi - o.p_lo) * rng.uniform()});
        ++parents;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool has_child = false;
    for (const Edge& e : edges) has_child |= e.from == i;
    if (!has_child) nodes[i].kind = NodeKind::Sensory;
  }
  return Network(std::move(nodes), std::move(edges));
}

/// Observes each node with probability `frac`, value true with probability `p_true`.
inline EvidenceSet random_evidence(Rng& rng, const Network& net, double frac, double p_true) {
  EvidenceSet ev(net.size());
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (rng.uniform() < frac) ev.set(i, rng.uniform() < p_true);
  return ev;
}

/// Joint probability straight from the noisy-or definition.
inline double oracle_joint(const Network& net, const Assignment& x) {
  double prob = 1.0;
  for (NodeIndex j = 0; j < net.size(); ++j) {
    double q = 1.0 - net.node(j).leak;
    for (const Edge& e : net.edges())
      if (e.to == j && x[e.from]) q *= 1.0 - e.p;
    prob *= x[j] ? 1.0 - q : q;
  }
  return prob;
}

/// Calls f(x) for every complete assignment consistent with the evidence.
inline void for_each_state(const Network& net, const EvidenceSet& ev, const std::function<void(const Assignment&)>& f) {
  std::vector<NodeIndex> free;
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (!ev.observed(i)) free.push_back(i);
  Assignment x(net.size(), 0);
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (ev.observed(i)) x[i] = ev.value(i);
  for (std::uint64_t m = 0; m < (std::uint64_t{1} << free.size()); ++m) {
    for (std::size_t b = 0; b < free.size(); ++b) x[free[b]] = (m >> b) & 1;
    f(x);
  }
}

/// Posterior marginals by brute force; returns the evidence probability too.
inline std::vector<double> brute_posteriors(const Network& net, const EvidenceSet& ev, double* evidence_prob = nullptr) {
  std::vector<double> mass(net.size(), 0.0);
  double z = 0.0;
  for_each_state(net, ev, [&](const Assignment& x) {
    const double w = oracle_joint(net, x);
    z += w;
    for (NodeIndex i = 0; i < net.size(); ++i)
      if (x[i]) mass[i] += w;
  });
  if (evidence_prob) *evidence_prob = z;
  for (double& m : mass) m /= z;
  return mass;
}

/// P(n = 1 | every other node as in x, except the nodes in sum_out, which
/// are marginalized).
inline double brute_conditional(const Network& net, Assignment x, NodeIndex n, const std::vector<NodeIndex>& sum_out) {
  double w[2] = {0.0, 0.0};
  for (int v = 0; v < 2; ++v) {
    x[n] = static_cast<std::uint8_t>(v);
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << sum_out.size()); ++m) {
      for (std::size_t b = 0; b < sum_out.size(); ++b) x[sum_out[b]] = (m >> b) & 1;
      w[v] += oracle_joint(net, x);
    }
  }
  return w[1] / (w[0] + w[1]);
}

/// reach[a][b] = 1 iff there is a directed path a -> ... -> b (a != b),
/// from the edge list by Floyd-Warshall closure.
inline std::vector<std::vector<std::uint8_t>> reachability(const Network& net) {
  const std::size_t n = net.size();
  std::vector<std::vector<std::uint8_t>> r(n, std::vector<std::uint8_t>(n, 0));
  for (const Edge& e : net.edges()) r[e.from][e.to] = 1;
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (r[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (r[k][j]) r[i][j] = 1;
  return r;
}

/// d-separation by the moralized ancestral graph criterion.
inline bool moral_separated(const Network& net, NodeIndex x, const std::vector<NodeIndex>& z,
                            const std::vector<NodeIndex>& w) {
  const std::size_t n = net.size();
  const auto reach = reachability(net);
  std::vector<std::uint8_t> keep(n, 0), in_z(n, 0);
  std::vector<NodeIndex> seeds = z;
  seeds.push_back(x);
  seeds.insert(seeds.end(), w.begin(), w.end());
  for (NodeIndex s : seeds) {
    keep[s] = 1;
    for (NodeIndex a = 0; a < n; ++a)
      if (reach[a][s]) keep[a] = 1;
  }
  for (NodeIndex s : z) in_z[s] = 1;
  std::vector<std::vector<std::uint8_t>> adj(n, std::vector<std::uint8_t>(n, 0));
  for (const Edge& e : net.edges()) {
    if (!keep[e.from] || !keep[e.to]) continue;
    adj[e.from][e.to] = adj[e.to][e.from] = 1;
  }
  for (NodeIndex c = 0; c < n; ++c) {
    if (!keep[c]) continue;
    std::vector<NodeIndex> ps;
    for (const Edge& e : net.edges())
      if (e.to == c) ps.push_back(e.from);
    for (NodeIndex a : ps)
      for (NodeIndex b : ps)
        if (a != b) adj[a][b] = 1;
  }
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<NodeIndex> stack{x};
  seen[x] = 1;
  while (!stack.empty()) {
    NodeIndex i = stack.back();
    stack.pop_back();
    for (NodeIndex j = 0; j < n; ++j)
      if (adj[i][j] && !seen[j] && !in_z[j]) {
        seen[j] = 1;
        stack.push_back(j);
      }
  }
  for (NodeIndex t : w)
    if (t != x && !in_z[t] && seen[t]) return false;
  return true;
}

/// Unclamped set by the declarative definition: ancestors of true evidence
/// (each true evidence node counting as its own ancestor) and their
/// descendants, minus evidence.
inline std::vector<std::uint8_t> declarative_unclamped(const Network& net, const EvidenceSet& ev) {
  const std::size_t n = net.size();
  const auto reach = reachability(net);
  std::vector<std::uint8_t> anc(n, 0), out(n, 0);
  for (NodeIndex t = 0; t < n; ++t) {
    if (!ev.is_true(t)) continue;
    anc[t] = 1;
    for (NodeIndex a = 0; a < n; ++a)
      if (reach[a][t]) anc[a] = 1;
  }
  for (NodeIndex i = 0; i < n; ++i) {
    if (ev.observed(i)) continue;
    bool u = anc[i];
    for (NodeIndex a = 0; a < n && !u; ++a) u = anc[a] && reach[a][i];
    out[i] = u;
  }
  return out;
}

}  // namespace testsupport
