#pragma once

// Pre-simulation analysis: clamping of nodes no positive evidence can reach,
// and classification of each free node by the direction evidence arrives from.

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "noisyor/network.hpp"

namespace noisyor {

enum class SignalPhase { Backward, Forward };

struct ClampResult {
  std::vector<NodeIndex> clamped_false;
  std::vector<NodeIndex> unclamped;
  /// Order in which nodes first received a signal (only filled on request).
  std::vector<std::pair<SignalPhase, NodeIndex>> signal_trace;
  std::vector<std::uint8_t> clamped;  // dense flag per node

  bool is_clamped(NodeIndex i) const { return !clamped.empty() && clamped[i] != 0; }
};

/// Clamping pass: every node starts clamped false, true evidence sends a
/// signal to its ancestors, then every signalled node sends a signal to its
/// descendants. Signalled non-evidence nodes are unclamped. Only true
/// observations emit signals.
inline ClampResult clamp_pass(const Network& net, const EvidenceSet& ev, bool trace = false) {
  if (ev.size() != net.size()) throw Error("evidence does not match network");
  const std::size_t n = net.size();
  ClampResult out;
  std::vector<std::uint8_t> backward(n, 0), signalled(n, 0);

  std::vector<NodeIndex> stack;
  for (NodeIndex i = 0; i < n; ++i) {
    if (ev.is_true(i)) {
      backward[i] = 1;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    NodeIndex i = stack.back();
    stack.pop_back();
    for (const ParentLink& p : net.parents(i)) {
      if (!backward[p.node]) {
        backward[p.node] = 1;
        if (trace) out.signal_trace.emplace_back(SignalPhase::Backward, p.node);
        stack.push_back(p.node);
      }
    }
  }

  signalled = backward;
  for (NodeIndex i = 0; i < n; ++i)
    if (backward[i]) stack.push_back(i);
  while (!stack.empty()) {
    NodeIndex i = stack.back();
    stack.pop_back();
    for (const ChildLink& c : net.children(i)) {
      if (!signalled[c.node]) {
        signalled[c.node] = 1;
        if (trace) out.signal_trace.emplace_back(SignalPhase::Forward, c.node);
        stack.push_back(c.node);
      }
    }
  }

  out.clamped.assign(n, 0);
  for (NodeIndex i = 0; i < n; ++i) {
    if (ev.observed(i)) continue;
    if (signalled[i]) {
      out.unclamped.push_back(i);
    } else {
      out.clamped_false.push_back(i);
      out.clamped[i] = 1;
    }
  }
  return out;
}

/// Clamp result with nothing clamped, for strategies that skip the pass.
inline ClampResult no_clamp(const Network& net, const EvidenceSet& ev) {
  ClampResult out;
  out.clamped.assign(net.size(), 0);
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (!ev.observed(i)) out.unclamped.push_back(i);
  return out;
}

inline bool is_free(const EvidenceSet& ev, const ClampResult& clamp, NodeIndex i) {
  return !ev.observed(i) && !clamp.is_clamped(i);
}

/// For each node, whether some strict descendant is observed.
inline std::vector<std::uint8_t> evidence_below(const Network& net, const EvidenceSet& ev) {
  std::vector<std::uint8_t> below(net.size(), 0);
  const auto& topo = net.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    for (const ChildLink& c : net.children(*it)) {
      if (ev.observed(c.node) || below[c.node]) {
        below[*it] = 1;
        break;
      }
    }
  }
  return below;
}

/// Children of n through which diagnostic evidence flows back to n: observed
/// children and children with an observed descendant.
inline std::vector<NodeIndex> evidential_children(const Network& net, const EvidenceSet& ev,
                                                  const ClampResult& clamp, NodeIndex n) {
  if (!is_free(ev, clamp, n)) throw Error("node is not free: " + net.id(n));
  const auto below = evidence_below(net, ev);
  std::vector<NodeIndex> out;
  for (const ChildLink& c : net.children(n))
    if (ev.observed(c.node) || below[c.node]) out.push_back(c.node);
  return out;
}

enum class FlowStatus { Observed, Clamped, ForwardSampled, DiagnosticSampled };

inline std::string_view to_string(FlowStatus s) {
  switch (s) {
    case FlowStatus::Observed: return "observed";
    case FlowStatus::Clamped: return "clamped";
    case FlowStatus::ForwardSampled: return "forward";
    case FlowStatus::DiagnosticSampled: return "diagnostic";
  }
  return "?";
}

struct FlowInfo {
  FlowStatus status = FlowStatus::ForwardSampled;
  std::vector<NodeIndex> evidential_children;
  /// Parents, evidential children and their other parents (sorted).
  std::vector<NodeIndex> conditioning_set;
};

/// Flow classification for every node. Free nodes with an evidential child
/// are sampled diagnostically, all other free nodes are forward sampled
/// from their parents alone.
inline std::vector<FlowInfo> classify_flow(const Network& net, const EvidenceSet& ev, const ClampResult& clamp) {
  const auto below = evidence_below(net, ev);
  std::vector<FlowInfo> out(net.size());
  for (NodeIndex i = 0; i < net.size(); ++i) {
    FlowInfo& f = out[i];
    if (ev.observed(i)) {
      f.status = FlowStatus::Observed;
      continue;
    }
    if (clamp.is_clamped(i)) {
      f.status = FlowStatus::Clamped;
      continue;
    }
    for (const ChildLink& c : net.children(i))
      if (ev.observed(c.node) || below[c.node]) f.evidential_children.push_back(c.node);
    f.status = f.evidential_children.empty() ? FlowStatus::ForwardSampled : FlowStatus::DiagnosticSampled;
    for (const ParentLink& p : net.parents(i)) f.conditioning_set.push_back(p.node);
    for (NodeIndex c : f.evidential_children) {
      f.conditioning_set.push_back(c);
      for (const ParentLink& sp : net.parents(c))
        if (sp.node != i) f.conditioning_set.push_back(sp.node);
    }
    std::sort(f.conditioning_set.begin(), f.conditioning_set.end());
    f.conditioning_set.erase(std::unique(f.conditioning_set.begin(), f.conditioning_set.end()),
                             f.conditioning_set.end());
  }
  return out;
}

}  // namespace noisyor
