#pragma once

// Markov chain samplers for noisy-or networks: single-site, pair-blocking and
// pair-swapping moves under Gibbs or Metropolis transition rules, with
// Markov-blanket (Rao-Blackwellized) scoring of node marginals.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "noisyor/evidence_analysis.hpp"
#include "noisyor/network.hpp"
#include "noisyor/rng.hpp"

namespace noisyor {

enum class TransitionRule { Gibbs, Metropolis };

enum class MovePolicy {
  SingleSite,
  BlockSpousesCover,
  BlockSpousesParentTrue,
  SwapSpousesCover,
  SwapSpousesChildTrue,
  OptimizedRandom,
  OptimizedFwdBwd,
};

/// Which shared children make two spouses eligible under the "cover" policies.
enum class CoverReading {
  EvidenceOrAncestor,  // a true observation, or an ancestor of one
  EvidenceChild,       // a true observation only
};

struct StrategySpec {
  std::string name;
  bool clamp = false;
  /// Condition diagnostic nodes on the evidence-separating subset of their
  /// blanket and forward sample the rest; otherwise use the full blanket.
  bool flow_aware = false;
  MovePolicy move_policy = MovePolicy::SingleSite;
  TransitionRule rule = TransitionRule::Gibbs;
  double swap_fraction = 0.8;
  CoverReading cover = CoverReading::EvidenceOrAncestor;
};

enum class PairMove { None, Block, Swap };
enum class PairEligibility { None, Cover, SharedChildTrue };
enum class Schedule { RandomOrder, ForwardBackward };

inline PairMove pair_move(MovePolicy p) {
  switch (p) {
    case MovePolicy::SingleSite: return PairMove::None;
    case MovePolicy::BlockSpousesCover:
    case MovePolicy::BlockSpousesParentTrue: return PairMove::Block;
    default: return PairMove::Swap;
  }
}

inline PairEligibility pair_eligibility(MovePolicy p) {
  switch (p) {
    case MovePolicy::SingleSite: return PairEligibility::None;
    case MovePolicy::BlockSpousesCover:
    case MovePolicy::SwapSpousesCover: return PairEligibility::Cover;
    default: return PairEligibility::SharedChildTrue;
  }
}

inline Schedule schedule(MovePolicy p) {
  return p == MovePolicy::OptimizedFwdBwd ? Schedule::ForwardBackward : Schedule::RandomOrder;
}

inline std::string_view to_string(MovePolicy p) {
  switch (p) {
    case MovePolicy::SingleSite: return "single-site";
    case MovePolicy::BlockSpousesCover: return "block-spouses-cover";
    case MovePolicy::BlockSpousesParentTrue: return "block-spouses-parent-true";
    case MovePolicy::SwapSpousesCover: return "swap-spouses-cover";
    case MovePolicy::SwapSpousesChildTrue: return "swap-spouses-child-true";
    case MovePolicy::OptimizedRandom: return "optimized-random";
    case MovePolicy::OptimizedFwdBwd: return "optimized-fwd-bwd";
  }
  return "?";
}

/// The ten named strategies, in table order.
inline const std::vector<StrategySpec>& strategy_presets() {
  static const std::vector<StrategySpec> presets = [] {
    using MP = MovePolicy;
    using TR = TransitionRule;
    std::vector<StrategySpec> v;
    v.push_back({"gibbs", false, false, MP::SingleSite, TR::Gibbs});
    v.push_back({"gibbs-clamp", true, false, MP::SingleSite, TR::Gibbs});
    v.push_back({"gibbs-flow", false, true, MP::SingleSite, TR::Gibbs});
    v.push_back({"block-spouses-cover", false, false, MP::BlockSpousesCover, TR::Gibbs});
    v.push_back({"block-spouses-parent-true", false, false, MP::BlockSpousesParentTrue, TR::Gibbs});
    v.push_back({"swap-spouses-cover", false, false, MP::SwapSpousesCover, TR::Gibbs});
    v.push_back({"swap-spouses-child-true", false, false, MP::SwapSpousesChildTrue, TR::Gibbs});
    v.push_back({"metropolis", false, false, MP::SingleSite, TR::Metropolis});
    v.push_back({"optimized-random", true, true, MP::OptimizedRandom, TR::Metropolis});
    v.push_back({"optimized-fwd-bwd", true, true, MP::OptimizedFwdBwd, TR::Metropolis});
    return v;
  }();
  return presets;
}

inline StrategySpec strategy_preset(std::string_view name) {
  for (const auto& s : strategy_presets())
    if (s.name == name) return s;
  throw Error("unknown strategy: " + std::string(name));
}

inline void validate_strategy(const StrategySpec& s) {
  if (!(s.swap_fraction >= 0.0 && s.swap_fraction <= 1.0)) throw Error("swap_fraction out of range");
  // A pair that only ever swaps keeps its number of true nodes fixed.
  if (pair_move(s.move_policy) == PairMove::Swap && s.swap_fraction >= 1.0)
    throw Error("swap policies need swap_fraction < 1 so paired nodes keep single-site moves");
}

/// Per-node estimate accumulator: sum of credited probabilities and the
/// number of moves that could have changed the node.
struct MarginalAccumulator {
  std::vector<double> sum;
  std::vector<std::uint64_t> count;

  MarginalAccumulator() = default;
  explicit MarginalAccumulator(std::size_t n) : sum(n, 0.0), count(n, 0) {}

  void record(NodeIndex i, double p) {
    sum[i] += p;
    ++count[i];
  }

  void merge(const MarginalAccumulator& other) {
    if (sum.empty()) {
      *this = other;
      return;
    }
    for (std::size_t i = 0; i < sum.size(); ++i) {
      sum[i] += other.sum[i];
      count[i] += other.count[i];
    }
  }
};

struct SamplerState {
  Assignment values;
  Rng rng;
  std::uint64_t sweep_count = 0;
  /// Number of node factor evaluations spent so far.
  std::uint64_t work = 0;
};

enum class NodeRole : std::uint8_t { Fixed, Diagnostic, Forward };

/// Immutable per-run setup: evidence, clamping, flow classification and the
/// spouse structure used by pair moves. Holds a reference to the network,
/// which must outlive it.
class SamplingContext {
 public:
  struct SpouseLink {
    NodeIndex spouse;
    NodeIndex child;
  };

  SamplingContext(const Network& net, EvidenceSet ev, StrategySpec strategy, Profile profile = Profile::Strict)
      : net_(&net), ev_(std::move(ev)), strategy_(std::move(strategy)) {
    require_valid(net, profile);
    validate_strategy(strategy_);
    if (ev_.size() != net.size()) throw Error("evidence does not match network");
    clamp_ = strategy_.clamp ? clamp_pass(net, ev_) : no_clamp(net, ev_);
    flow_ = classify_flow(net, ev_, clamp_);

    const std::size_t n = net.size();
    role_.assign(n, NodeRole::Fixed);
    scored_children_.resize(n);
    for (NodeIndex i : net.topo_order()) {
      if (!is_free(ev_, clamp_, i)) continue;
      free_.push_back(i);
      if (strategy_.flow_aware && flow_[i].status == FlowStatus::ForwardSampled) {
        role_[i] = NodeRole::Forward;
        forward_.push_back(i);
      } else {
        role_[i] = NodeRole::Diagnostic;
        movable_.push_back(i);
        if (strategy_.flow_aware) {
          scored_children_[i] = flow_[i].evidential_children;
        } else {
          for (const ChildLink& c : net.children(i)) scored_children_[i].push_back(c.node);
        }
      }
    }
    build_spouses();
  }

  const Network& network() const { return *net_; }
  const EvidenceSet& evidence() const { return ev_; }
  const StrategySpec& strategy() const { return strategy_; }
  const ClampResult& clamp() const { return clamp_; }
  const std::vector<FlowInfo>& flow() const { return flow_; }
  NodeRole role(NodeIndex i) const { return role_[i]; }

  /// Free nodes in topological order.
  const std::vector<NodeIndex>& free_nodes() const { return free_; }
  /// Free nodes resampled from a conditional (all free nodes unless flow aware).
  const std::vector<NodeIndex>& movable_nodes() const { return movable_; }
  /// Free nodes drawn from their parents only, topological order.
  const std::vector<NodeIndex>& forward_nodes() const { return forward_; }
  /// Children whose factors enter the conditional of i.
  std::span<const NodeIndex> scored_children(NodeIndex i) const { return scored_children_[i]; }
  std::span<const SpouseLink> spouses(NodeIndex i) const { return spouses_[i]; }

  /// Whether a structurally paired (a, b) may currently be pair-moved.
  bool pair_gate(std::span<const std::uint8_t> values, NodeIndex a, NodeIndex b) const {
    if (pair_eligibility(strategy_.move_policy) != PairEligibility::SharedChildTrue) return true;
    for (const SpouseLink& s : spouses_[a])
      if (s.spouse == b && values[s.child]) return true;
    return false;
  }

 private:
  void build_spouses() {
    const Network& net = *net_;
    const std::size_t n = net.size();
    spouses_.assign(n, {});
    const PairEligibility elig = pair_eligibility(strategy_.move_policy);
    if (elig == PairEligibility::None) return;

    std::vector<std::uint8_t> true_ancestor(n, 0);
    std::vector<NodeIndex> stack;
    for (NodeIndex i = 0; i < n; ++i)
      if (ev_.is_true(i)) stack.push_back(i);
    while (!stack.empty()) {
      NodeIndex i = stack.back();
      stack.pop_back();
      for (const ParentLink& p : net.parents(i))
        if (!true_ancestor[p.node]) {
          true_ancestor[p.node] = 1;
          stack.push_back(p.node);
        }
    }

    auto eligible_child = [&](NodeIndex c) {
      if (ev_.is_true(c)) return true;
      if (ev_.observed(c)) return false;
      if (elig == PairEligibility::Cover)
        return strategy_.cover == CoverReading::EvidenceOrAncestor && true_ancestor[c] != 0;
      return role_[c] == NodeRole::Diagnostic;
    };

    for (NodeIndex a : movable_) {
      for (NodeIndex c : scored_children_[a]) {
        if (!eligible_child(c)) continue;
        for (const ParentLink& p : net.parents(c)) {
          const NodeIndex b = p.node;
          if (b == a || role_[b] != NodeRole::Diagnostic) continue;
          const auto& sc = scored_children_[b];
          if (std::find(sc.begin(), sc.end(), c) == sc.end()) continue;
          spouses_[a].push_back({b, c});
        }
      }
    }
  }

  const Network* net_;
  EvidenceSet ev_;
  StrategySpec strategy_;
  ClampResult clamp_;
  std::vector<FlowInfo> flow_;
  std::vector<NodeRole> role_;
  std::vector<NodeIndex> free_, movable_, forward_;
  std::vector<std::vector<NodeIndex>> scored_children_;
  std::vector<std::vector<SpouseLink>> spouses_;
};

// ---------------------------------------------------------------------------
// Local weights

/// Unnormalized weights of n = false / n = true: the node's own factor times
/// the factors of the given children, with every other node held fixed.
inline std::array<double, 2> conditional_weights(const Network& net, std::span<const std::uint8_t> values,
                                                 NodeIndex n, std::span<const NodeIndex> children) {
  const double q = net.prob_false(n, values);
  double w0 = q, w1 = 1.0 - q;
  for (NodeIndex c : children) {
    double q_rest = 1.0 - net.node(c).leak;
    double keep = 1.0;
    for (const ParentLink& pl : net.parents(c)) {
      if (pl.node == n) keep = 1.0 - pl.p;
      else if (values[pl.node]) q_rest *= 1.0 - pl.p;
    }
    const double q1 = q_rest * keep;
    if (values[c]) {
      w0 *= 1.0 - q_rest;
      w1 *= 1.0 - q1;
    } else {
      w0 *= q_rest;
      w1 *= q1;
    }
  }
  return {w0, w1};
}

inline double normalized_true(const std::array<double, 2>& w, const Network& net, NodeIndex n) {
  const double z = w[0] + w[1];
  if (!(z > 0.0)) throw Error("degenerate conditional: both values of " + net.id(n) + " have zero weight");
  return w[1] / z;
}

/// P(n = true | xi): conditioning on parents, evidential children and their
/// other parents. Forward-sampled nodes reduce to the noisy-or value.
inline double conditional_prob(const Network& net, std::span<const std::uint8_t> values, NodeIndex n,
                               const FlowInfo& flow) {
  if (flow.status == FlowStatus::Observed || flow.status == FlowStatus::Clamped)
    throw Error("conditional requested for a fixed node: " + net.id(n));
  if (flow.status == FlowStatus::ForwardSampled) return net.prob_true(n, values);
  return normalized_true(conditional_weights(net, values, n, flow.evidential_children), net, n);
}

/// P(n = true | Markov blanket).
inline double full_blanket_conditional(const Network& net, std::span<const std::uint8_t> values, NodeIndex n) {
  std::vector<NodeIndex> children;
  for (const ChildLink& c : net.children(n)) children.push_back(c.node);
  return normalized_true(conditional_weights(net, values, n, children), net, n);
}

/// A set of candidate joint states that differ only on delta_nodes.
struct MoveProposal {
  std::vector<NodeIndex> delta_nodes;
  std::vector<Assignment> candidate_states;
  TransitionRule rule = TransitionRule::Gibbs;
};

/// Gibbs transition distribution over the candidates: each candidate is
/// weighted by the factors of the changing nodes and their children; all
/// other factors are common to every candidate and cancel.
inline std::vector<double> transition_distribution(const Network& net, const MoveProposal& proposal) {
  const auto& states = proposal.candidate_states;
  if (states.empty()) throw Error("empty candidate set");
  std::vector<std::uint8_t> in_delta(net.size(), 0);
  for (NodeIndex d : proposal.delta_nodes) in_delta[d] = 1;
  for (const Assignment& s : states) {
    if (s.size() != net.size()) throw Error("candidate state has the wrong size");
    for (NodeIndex i = 0; i < net.size(); ++i)
      if (!in_delta[i] && s[i] != states.front()[i])
        throw Error("candidate states disagree outside the changing set at " + net.id(i));
  }
  std::vector<NodeIndex> affected = proposal.delta_nodes;
  for (NodeIndex d : proposal.delta_nodes)
    for (const ChildLink& c : net.children(d)) affected.push_back(c.node);
  std::sort(affected.begin(), affected.end());
  affected.erase(std::unique(affected.begin(), affected.end()), affected.end());

  std::vector<double> w;
  double z = 0.0;
  for (const Assignment& s : states) {
    double prod = 1.0;
    for (NodeIndex k : affected) prod *= net.factor(k, s);
    w.push_back(prod);
    z += prod;
  }
  if (!(z > 0.0)) throw Error("all candidate states have zero weight");
  for (double& x : w) x /= z;
  return w;
}

/// Acceptance probability min(1, proposed / current).
inline double metropolis_probability(double weight_current, double weight_proposed) {
  if (!(weight_current > 0.0)) throw Error("metropolis: current state has zero weight");
  if (!(weight_proposed >= 0.0)) throw Error("metropolis: negative weight");
  return std::min(1.0, weight_proposed / weight_current);
}

inline bool metropolis_accept(double weight_current, double weight_proposed, Rng& rng) {
  if (!(weight_current > 0.0) || !(weight_proposed > 0.0)) throw Error("metropolis: nonpositive weight");
  const double a = metropolis_probability(weight_current, weight_proposed);
  return a >= 1.0 || rng.uniform() < a;
}

// ---------------------------------------------------------------------------
// Move kernels. Each kernel gives the distribution of the moved nodes' next
// local state (bit 0 = first node, bit 1 = second node) and the probability
// credited to each node's estimate. Samplers and explicit transition matrices
// are both built from these.

struct LocalKernel {
  std::size_t arity = 1;
  std::array<NodeIndex, 2> nodes{};
  std::uint8_t current = 0;
  std::array<double, 4> next{};
  std::array<double, 2> score{};
  std::uint64_t work = 0;
};

inline std::uint8_t local_mask(std::span<const std::uint8_t> values, NodeIndex a) { return values[a] ? 1 : 0; }

inline std::uint8_t local_mask(std::span<const std::uint8_t> values, NodeIndex a, NodeIndex b) {
  return static_cast<std::uint8_t>((values[a] ? 1 : 0) | (values[b] ? 2 : 0));
}

/// Forward-sampled nodes are redrawn from their noisy-or value under either
/// rule; all other nodes use the rule on their conditional.
inline LocalKernel single_site_kernel(const SamplingContext& ctx, std::span<const std::uint8_t> values,
                                      NodeIndex n) {
  const Network& net = ctx.network();
  LocalKernel k;
  k.arity = 1;
  k.nodes = {n, n};
  k.current = local_mask(values, n);
  if (ctx.role(n) == NodeRole::Forward) {
    const double p = net.prob_true(n, values);
    k.next = {1.0 - p, p, 0.0, 0.0};
    k.score[0] = p;
    k.work = 1;
    return k;
  }
  const auto children = ctx.scored_children(n);
  const auto w = conditional_weights(net, values, n, children);
  k.work = 1 + children.size();
  const double p = normalized_true(w, net, n);
  k.score[0] = p;
  if (ctx.strategy().rule == TransitionRule::Gibbs) {
    k.next = {1.0 - p, p, 0.0, 0.0};
  } else {
    const std::uint8_t c = k.current, o = static_cast<std::uint8_t>(1 - c);
    const double a = metropolis_probability(w[c], w[o]);
    k.next[o] = a;
    k.next[c] = 1.0 - a;
  }
  return k;
}

/// Unnormalized weights of the four joint states of (a, b).
inline std::array<double, 4> pair_weights(const SamplingContext& ctx, std::span<const std::uint8_t> values,
                                          NodeIndex a, NodeIndex b, std::uint64_t* work = nullptr) {
  const Network& net = ctx.network();
  std::vector<NodeIndex> affected{a, b};
  for (NodeIndex c : ctx.scored_children(a)) affected.push_back(c);
  for (NodeIndex c : ctx.scored_children(b)) affected.push_back(c);
  std::sort(affected.begin(), affected.end());
  affected.erase(std::unique(affected.begin(), affected.end()), affected.end());

  Assignment local(values.begin(), values.end());
  std::array<double, 4> w{};
  for (std::uint8_t m = 0; m < 4; ++m) {
    local[a] = m & 1;
    local[b] = (m >> 1) & 1;
    double prod = 1.0;
    for (NodeIndex k : affected) prod *= net.factor(k, local);
    w[m] = prod;
  }
  if (work) *work += 4 * affected.size();
  return w;
}

inline std::array<double, 2> pair_marginals(const std::array<double, 4>& d) {
  return {d[1] + d[3], d[2] + d[3]};
}

inline LocalKernel block_kernel(const SamplingContext& ctx, std::span<const std::uint8_t> values, NodeIndex a,
                                NodeIndex b) {
  LocalKernel k;
  k.arity = 2;
  k.nodes = {a, b};
  k.current = local_mask(values, a, b);
  const auto w = pair_weights(ctx, values, a, b, &k.work);
  const double z = w[0] + w[1] + w[2] + w[3];
  if (!(z > 0.0)) throw Error("degenerate block: all states of " + ctx.network().id(a) + "," +
                              ctx.network().id(b) + " have zero weight");
  std::array<double, 4> d{};
  for (int m = 0; m < 4; ++m) d[m] = w[m] / z;
  k.score = pair_marginals(d);
  if (ctx.strategy().rule == TransitionRule::Gibbs) {
    k.next = d;
  } else {
    // Propose one of the other three states uniformly.
    double stay = 1.0;
    for (std::uint8_t m = 0; m < 4; ++m) {
      if (m == k.current) continue;
      k.next[m] = metropolis_probability(w[k.current], w[m]) / 3.0;
      stay -= k.next[m];
    }
    k.next[k.current] = stay;
  }
  return k;
}

/// Swap chain on (a, b): the only candidate besides the current state is the
/// one with the two values exchanged. Equal values leave nothing to move;
/// the nodes are then credited with their current values.
inline LocalKernel swap_kernel(const SamplingContext& ctx, std::span<const std::uint8_t> values, NodeIndex a,
                               NodeIndex b) {
  LocalKernel k;
  k.arity = 2;
  k.nodes = {a, b};
  k.current = local_mask(values, a, b);
  if (values[a] == values[b]) {
    k.next[k.current] = 1.0;
    k.score = {static_cast<double>(values[a]), static_cast<double>(values[b])};
    return k;
  }
  const std::uint8_t ex = static_cast<std::uint8_t>(3 - k.current);  // 01 <-> 10
  const auto w = pair_weights(ctx, values, a, b, &k.work);
  const double z = w[k.current] + w[ex];
  if (!(z > 0.0)) throw Error("degenerate swap on " + ctx.network().id(a) + "," + ctx.network().id(b));
  std::array<double, 4> d{};
  d[k.current] = w[k.current] / z;
  d[ex] = w[ex] / z;
  k.score = pair_marginals(d);
  if (ctx.strategy().rule == TransitionRule::Gibbs) {
    k.next = d;
  } else {
    const double acc = metropolis_probability(w[k.current], w[ex]);
    k.next[ex] = acc;
    k.next[k.current] = 1.0 - acc;
  }
  return k;
}

/// Draws the next local state, writes it and credits the scores.
inline void apply_kernel(const LocalKernel& k, SamplerState& state, MarginalAccumulator* acc) {
  const std::size_t n_states = std::size_t{1} << k.arity;
  std::uint8_t chosen = k.current;
  if (k.next[k.current] < 1.0) {
    const double u = state.rng.uniform();
    double cum = 0.0;
    bool picked = false;
    for (std::uint8_t m = 0; m < n_states; ++m) {
      cum += k.next[m];
      if (u < cum) {
        chosen = m;
        picked = true;
        break;
      }
    }
    if (!picked) {
      // Rounding left the total just under u; take the last reachable state.
      for (std::uint8_t m = 0; m < n_states; ++m)
        if (k.next[m] > 0.0) chosen = m;
    }
  }
  state.values[k.nodes[0]] = chosen & 1;
  if (k.arity == 2) state.values[k.nodes[1]] = (chosen >> 1) & 1;
  state.work += k.work;
  if (acc) {
    acc->record(k.nodes[0], k.score[0]);
    if (k.arity == 2) acc->record(k.nodes[1], k.score[1]);
  }
}

inline void single_site_move(const SamplingContext& ctx, SamplerState& state, NodeIndex n,
                             MarginalAccumulator* acc) {
  if (ctx.role(n) == NodeRole::Fixed) throw Error("single-site move on a fixed node: " + ctx.network().id(n));
  apply_kernel(single_site_kernel(ctx, state.values, n), state, acc);
}

inline void check_pair(const SamplingContext& ctx, NodeIndex a, NodeIndex b) {
  if (a == b) throw Error("pair move needs two distinct nodes");
  if (ctx.role(a) == NodeRole::Fixed || ctx.role(b) == NodeRole::Fixed)
    throw Error("pair contains an evidence or clamped node");
}

inline void block_pair_move(const SamplingContext& ctx, SamplerState& state, NodeIndex a, NodeIndex b,
                            MarginalAccumulator* acc) {
  check_pair(ctx, a, b);
  apply_kernel(block_kernel(ctx, state.values, a, b), state, acc);
}

inline void swap_pair_move(const SamplingContext& ctx, SamplerState& state, NodeIndex a, NodeIndex b,
                           MarginalAccumulator* acc) {
  check_pair(ctx, a, b);
  apply_kernel(swap_kernel(ctx, state.values, a, b), state, acc);
}

// ---------------------------------------------------------------------------
// Pairing and sweeps

struct Pairing {
  std::vector<std::pair<NodeIndex, NodeIndex>> pairs;
  std::vector<NodeIndex> singles;
};

/// Random greedy pairing over nodes that have at least one eligible spouse.
/// Depends only on structure and the random stream, never on node values.
inline Pairing structural_pairing(const SamplingContext& ctx, Rng& rng) {
  Pairing out;
  const auto& movable = ctx.movable_nodes();
  if (pair_move(ctx.strategy().move_policy) == PairMove::None) {
    out.singles = movable;
    return out;
  }
  const std::size_t n = ctx.network().size();
  std::vector<NodeIndex> eligible;
  for (NodeIndex i : movable)
    if (!ctx.spouses(i).empty()) eligible.push_back(i);
  rng.shuffle(eligible);

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> pos(n, kNone);
  for (std::size_t r = 0; r < eligible.size(); ++r) pos[eligible[r]] = r;
  std::vector<std::uint8_t> used(n, 0);
  for (NodeIndex x : eligible) {
    if (used[x]) continue;
    std::size_t best = kNone;
    for (const auto& s : ctx.spouses(x))
      if (!used[s.spouse] && pos[s.spouse] != kNone && (best == kNone || pos[s.spouse] < pos[best]))
        best = s.spouse;
    if (best == kNone) continue;
    used[x] = used[best] = 1;
    out.pairs.emplace_back(x, best);
  }
  for (NodeIndex i : movable)
    if (!used[i]) out.singles.push_back(i);
  return out;
}

/// Pairs usable in the current state plus every other free node as a single.
inline Pairing pair_nodes(const SamplingContext& ctx, std::span<const std::uint8_t> values, Rng& rng) {
  Pairing structural = structural_pairing(ctx, rng);
  Pairing out;
  for (const auto& [a, b] : structural.pairs) {
    if (ctx.pair_gate(values, a, b)) {
      out.pairs.emplace_back(a, b);
    } else {
      out.singles.push_back(a);
      out.singles.push_back(b);
    }
  }
  out.singles.insert(out.singles.end(), structural.singles.begin(), structural.singles.end());
  out.singles.insert(out.singles.end(), ctx.forward_nodes().begin(), ctx.forward_nodes().end());
  return out;
}

struct MoveUnit {
  enum class Kind : std::uint8_t { Single, Pair, Forward };
  Kind kind = Kind::Single;
  NodeIndex a = 0;
  NodeIndex b = 0;
};

struct SweepPlan {
  std::vector<MoveUnit> steps;
  bool backward = false;
};

/// Visit plan for one sweep. Random schedules shuffle the conditional moves
/// and then forward sample in topological order. The forward-backward
/// schedule alternates a topological pass over all free nodes with a
/// reverse pass over the conditionally sampled nodes only.
inline SweepPlan plan_sweep(const SamplingContext& ctx, Rng& rng, std::uint64_t sweep_index) {
  SweepPlan plan;
  Pairing pairing = structural_pairing(ctx, rng);
  const Network& net = ctx.network();
  using K = MoveUnit::Kind;

  if (schedule(ctx.strategy().move_policy) == Schedule::RandomOrder) {
    for (const auto& [a, b] : pairing.pairs) plan.steps.push_back({K::Pair, a, b});
    for (NodeIndex s : pairing.singles) plan.steps.push_back({K::Single, s, s});
    rng.shuffle(plan.steps);
    for (NodeIndex f : ctx.forward_nodes()) plan.steps.push_back({K::Forward, f, f});
    return plan;
  }

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> partner(net.size(), kNone);
  for (const auto& [a, b] : pairing.pairs) {
    partner[a] = b;
    partner[b] = a;
  }
  plan.backward = (sweep_index % 2) == 1;
  if (!plan.backward) {
    // A pair is moved at its later member so that no child of either member
    // is drawn before both have settled.
    for (NodeIndex i : ctx.free_nodes()) {
      if (ctx.role(i) == NodeRole::Forward) {
        plan.steps.push_back({K::Forward, i, i});
      } else if (partner[i] == kNone) {
        plan.steps.push_back({K::Single, i, i});
      } else if (net.topo_rank(partner[i]) < net.topo_rank(i)) {
        plan.steps.push_back({K::Pair, partner[i], i});
      }
    }
  } else {
    const auto& movable = ctx.movable_nodes();
    for (auto it = movable.rbegin(); it != movable.rend(); ++it) {
      const NodeIndex i = *it;
      if (partner[i] == kNone) {
        plan.steps.push_back({K::Single, i, i});
      } else if (net.topo_rank(partner[i]) < net.topo_rank(i)) {
        plan.steps.push_back({K::Pair, partner[i], i});
      }
    }
  }
  return plan;
}

inline void apply_unit(const SamplingContext& ctx, SamplerState& state, const MoveUnit& u,
                       MarginalAccumulator* acc) {
  using K = MoveUnit::Kind;
  if (u.kind != K::Pair) {
    apply_kernel(single_site_kernel(ctx, state.values, u.a), state, acc);
    return;
  }
  const PairMove pm = pair_move(ctx.strategy().move_policy);
  if (ctx.pair_gate(state.values, u.a, u.b)) {
    if (pm == PairMove::Block) {
      apply_kernel(block_kernel(ctx, state.values, u.a, u.b), state, acc);
      return;
    }
    if (state.rng.uniform() < ctx.strategy().swap_fraction) {
      apply_kernel(swap_kernel(ctx, state.values, u.a, u.b), state, acc);
      return;
    }
  }
  apply_kernel(single_site_kernel(ctx, state.values, u.a), state, acc);
  apply_kernel(single_site_kernel(ctx, state.values, u.b), state, acc);
}

inline void run_sweep(const SamplingContext& ctx, SamplerState& state, MarginalAccumulator* acc) {
  const SweepPlan plan = plan_sweep(ctx, state.rng, state.sweep_count);
  for (const MoveUnit& u : plan.steps) apply_unit(ctx, state, u, acc);
  ++state.sweep_count;
}

/// Nodes that must be false in every positive-probability state: free
/// nodes with a certain link into a false observation or into another such
/// node.
inline std::vector<std::uint8_t> forced_false(const SamplingContext& ctx) {
  const Network& net = ctx.network();
  const EvidenceSet& ev = ctx.evidence();
  std::vector<std::uint8_t> forced(net.size(), 0);
  const auto& topo = net.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const NodeIndex i = *it;
    if (ctx.role(i) == NodeRole::Fixed) continue;
    for (const ChildLink& c : net.children(i)) {
      const bool child_false = (ev.observed(c.node) && !ev.value(c.node)) || forced[c.node] ||
                               ctx.clamp().is_clamped(c.node);
      if (c.p >= 1.0 && child_false) {
        forced[i] = 1;
        break;
      }
    }
  }
  return forced;
}

/// Evidence and clamps fixed, remaining nodes forward sampled in topological
/// order. Throws when the evidence has zero probability.
inline SamplerState initialize_state(const SamplingContext& ctx, std::uint64_t seed) {
  const Network& net = ctx.network();
  const EvidenceSet& ev = ctx.evidence();
  SamplerState st;
  st.rng = Rng(seed);
  st.values.assign(net.size(), 0);
  for (NodeIndex i : ev.nodes()) st.values[i] = ev.value(i) ? 1 : 0;
  const auto forced = forced_false(ctx);
  for (NodeIndex i : net.topo_order()) {
    if (ctx.role(i) == NodeRole::Fixed) continue;
    const double p = net.prob_true(i, st.values);
    st.values[i] = (!forced[i] && st.rng.bernoulli(p)) ? 1 : 0;
  }
  if (!std::isfinite(joint_log_prob(net, st.values)))
    throw Error("evidence has zero probability under the network");
  return st;
}

/// Per-node estimates: sum / count for free nodes, 0 for clamped nodes and
/// the observed value for evidence. A free node never moved reports 0.
inline std::vector<double> estimate_marginals(const MarginalAccumulator& acc, const SamplingContext& ctx) {
  const Network& net = ctx.network();
  std::vector<double> out(net.size(), 0.0);
  for (NodeIndex i = 0; i < net.size(); ++i) {
    if (ctx.evidence().observed(i)) out[i] = ctx.evidence().value(i) ? 1.0 : 0.0;
    else if (ctx.clamp().is_clamped(i)) out[i] = 0.0;
    else if (acc.count[i] > 0) out[i] = std::clamp(acc.sum[i] / static_cast<double>(acc.count[i]), 0.0, 1.0);
  }
  return out;
}

struct ChainOptions {
  std::uint64_t sweeps = 1000;
  std::uint64_t burn_in = 0;
  std::uint64_t seed = 0;
};

/// Called after the given number of scored sweeps.
using CheckpointFn = std::function<void(std::uint64_t sweeps, const MarginalAccumulator&, const SamplerState&)>;

struct ChainResult {
  MarginalAccumulator acc;
  std::uint64_t work = 0;
};

inline ChainResult run_chain(const SamplingContext& ctx, const ChainOptions& opt, const CheckpointFn& checkpoint = {}) {
  SamplerState st = initialize_state(ctx, opt.seed);
  for (std::uint64_t s = 0; s < opt.burn_in; ++s) run_sweep(ctx, st, nullptr);
  ChainResult r;
  r.acc = MarginalAccumulator(ctx.network().size());
  for (std::uint64_t s = 1; s <= opt.sweeps; ++s) {
    run_sweep(ctx, st, &r.acc);
    if (checkpoint) checkpoint(s, r.acc, st);
  }
  r.work = st.work;
  return r;
}

struct SampleResult {
  std::vector<double> marginals;
  MarginalAccumulator acc;
  std::uint64_t work = 0;
};

/// Runs independent chains (seed of chain c: derive_seed(seed, {c})) and
/// merges their accumulators in chain order.
inline SampleResult sample(const SamplingContext& ctx, std::uint64_t sweeps, std::uint64_t seed,
                           std::uint64_t burn_in = 0, std::size_t chains = 1) {
  if (chains == 0) throw Error("need at least one chain");
  std::vector<ChainResult> results(chains);
  std::vector<std::exception_ptr> errors(chains);
  auto run_one = [&](std::size_t c) {
    try {
      results[c] = run_chain(ctx, {sweeps, burn_in, chains == 1 ? seed : derive_seed(seed, {c})});
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (chains == 1) {
    run_one(0);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t c = 0; c < chains; ++c) workers.emplace_back(run_one, c);
    for (auto& w : workers) w.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  SampleResult out;
  for (const ChainResult& r : results) {
    out.acc.merge(r.acc);
    out.work += r.work;
  }
  out.marginals = estimate_marginals(out.acc, ctx);
  return out;
}

}  // namespace noisyor
