#pragma once

// Ground truth machinery: exhaustive posterior enumeration, an exact
// inclusion-exclusion route for two-layer networks, forward-sampled priors,
// d-separation queries and explicit transition matrices of the samplers.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "noisyor/evidence_analysis.hpp"
#include "noisyor/network.hpp"
#include "noisyor/rng.hpp"
#include "noisyor/sampler.hpp"

namespace noisyor {

enum class ExactMethod { Auto, Enumerate, TwoLayer };

struct ExactOptions {
  std::size_t max_free = 22;
  ExactMethod method = ExactMethod::Enumerate;
  /// Largest number of true observations the two-layer route accepts.
  std::size_t max_positive = 20;
};

struct ExactResult {
  std::vector<double> marginals;
  double log_evidence = 0.0;
  std::string method;
};

namespace detail {

/// Log of a product of factors with zero factors counted apart, so that
/// removing and re-adding factors never mixes infinities.
struct LogProduct {
  double finite = 0.0;
  std::size_t zeros = 0;

  void add(double f) {
    if (f > 0.0) finite += std::log(f);
    else ++zeros;
  }
  void remove(double f) {
    if (f > 0.0) finite -= std::log(f);
    else --zeros;
  }
  double value() const { return zeros ? -std::numeric_limits<double>::infinity() : finite; }
};

inline ExactResult enumerate_posteriors(const Network& net, const EvidenceSet& ev, std::size_t max_free) {
  std::vector<NodeIndex> vars;
  for (NodeIndex i : net.topo_order())
    if (!ev.observed(i)) vars.push_back(i);
  if (vars.size() > max_free)
    throw Error("network has " + std::to_string(vars.size()) + " free nodes; exact enumeration is capped at " +
                std::to_string(max_free));

  Assignment values(net.size(), 0);
  for (NodeIndex i : ev.nodes()) values[i] = ev.value(i) ? 1 : 0;

  std::vector<double> factor(net.size());
  LogProduct logw;
  for (NodeIndex j = 0; j < net.size(); ++j) {
    factor[j] = net.factor(j, values);
    logw.add(factor[j]);
  }

  const std::size_t k = vars.size();
  double scale = -std::numeric_limits<double>::infinity();
  double total = 0.0;
  std::vector<double> true_mass(k, 0.0);

  auto accumulate = [&] {
    const double lw = logw.value();
    if (lw == -std::numeric_limits<double>::infinity()) return;
    if (lw > scale) {
      const double r = std::exp(scale - lw);  // 0 on the first finite state
      total *= r;
      for (double& t : true_mass) t *= r;
      scale = lw;
    }
    const double w = std::exp(lw - scale);
    total += w;
    for (std::size_t b = 0; b < k; ++b)
      if (values[vars[b]]) true_mass[b] += w;
  };

  auto refresh = [&](NodeIndex j) {
    logw.remove(factor[j]);
    factor[j] = net.factor(j, values);
    logw.add(factor[j]);
  };

  // Gray-code walk: successive states differ in exactly one free node.
  accumulate();
  const std::uint64_t n_states = std::uint64_t{1} << k;
  for (std::uint64_t step = 1; step < n_states; ++step) {
    const auto bit = static_cast<std::size_t>(std::countr_zero(step));
    const NodeIndex x = vars[bit];
    values[x] ^= 1;
    refresh(x);
    for (const ChildLink& c : net.children(x)) refresh(c.node);
    accumulate();
  }
  if (!(total > 0.0)) throw Error("evidence has zero probability under the network");

  ExactResult out;
  out.method = "enumeration";
  out.marginals.assign(net.size(), 0.0);
  for (NodeIndex i : ev.nodes()) out.marginals[i] = ev.value(i) ? 1.0 : 0.0;
  for (std::size_t b = 0; b < k; ++b) out.marginals[vars[b]] = true_mass[b] / total;
  out.log_evidence = scale + std::log(total);
  return out;
}

}  // namespace detail

/// True when every edge runs from a root into a childless node.
inline bool is_two_layer(const Network& net) {
  for (const Edge& e : net.edges())
    if (!net.parents(e.from).empty() || !net.children(e.to).empty()) return false;
  return true;
}

namespace detail {

using HighPrecision = boost::multiprecision::cpp_bin_float_50;

/// Exact posteriors of a two-layer noisy-or network. The probability that a
/// set A of effects is all false factorizes over the causes, so the
/// probability of the observed effects follows by inclusion-exclusion over
/// the true observations. The alternating sum cancels heavily, hence the
/// extended precision.
inline ExactResult two_layer_posteriors(const Network& net, const EvidenceSet& ev, std::size_t max_positive) {
  if (!is_two_layer(net)) throw Error("network is not two-layer");
  using HP = HighPrecision;
  const std::size_t n = net.size();

  std::vector<NodeIndex> roots, positive, negative, hidden_effects;
  std::vector<std::uint8_t> is_root(n, 0);
  for (NodeIndex i = 0; i < n; ++i) {
    if (net.parents(i).empty() && !net.children(i).empty()) {
      roots.push_back(i);
      is_root[i] = 1;
    }
  }
  for (NodeIndex i = 0; i < n; ++i) {
    if (is_root[i]) continue;
    if (ev.observed(i)) (ev.value(i) ? positive : negative).push_back(i);
    else hidden_effects.push_back(i);
  }
  if (positive.size() > max_positive)
    throw Error("two-layer route is limited to " + std::to_string(max_positive) + " true observations");

  // Effects forced false in a query: the negatives plus optionally one more.
  auto evidence_mass = [&](NodeIndex extra_false, NodeIndex root_true) -> HP {
    constexpr NodeIndex kNone = std::numeric_limits<NodeIndex>::max();
    std::vector<NodeIndex> negs = negative;
    if (extra_false != kNone) negs.push_back(extra_false);

    HP leak_neg = 1;
    for (NodeIndex f : negs) leak_neg *= HP(1.0 - net.node(f).leak);

    std::vector<HP> neg_keep(n, HP(1));
    for (NodeIndex f : negs)
      for (const ParentLink& p : net.parents(f)) neg_keep[p.node] *= HP(1.0 - p.p);

    // Per-root factor given the product A of (1 - p) over its forced-false effects.
    auto root_term = [&](NodeIndex r, const HP& a) -> HP {
      if (ev.observed(r)) {
        const HP leak = net.node(r).leak;
        return ev.value(r) ? HP(leak * a) : HP(1 - leak);
      }
      if (r == root_true) return HP(net.node(r).leak) * a;
      const HP prior = net.node(r).leak;
      return (1 - prior) + prior * a;
    };

    const std::size_t k = positive.size();
    HP sum = 0;
    std::vector<HP> keep(n);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << k); ++mask) {
      HP term = leak_neg;
      for (NodeIndex r : roots) keep[r] = neg_keep[r];
      for (std::size_t b = 0; b < k; ++b) {
        if (!((mask >> b) & 1)) continue;
        const NodeIndex f = positive[b];
        term *= HP(1.0 - net.node(f).leak);
        for (const ParentLink& p : net.parents(f)) keep[p.node] *= HP(1.0 - p.p);
      }
      for (NodeIndex r : roots) term *= root_term(r, keep[r]);
      if (std::popcount(mask) % 2) sum -= term;
      else sum += term;
    }
    // Observed childless, parentless nodes sit in positive/negative with an
    // empty parent list, so their leak term is already included.
    return sum;
  };

  constexpr NodeIndex kNone = std::numeric_limits<NodeIndex>::max();
  const HP z = evidence_mass(kNone, kNone);
  if (!(z > 0)) throw Error("evidence has zero probability under the network");

  ExactResult out;
  out.method = "two-layer";
  out.marginals.assign(n, 0.0);
  for (NodeIndex i = 0; i < n; ++i) {
    if (ev.observed(i)) {
      out.marginals[i] = ev.value(i) ? 1.0 : 0.0;
    } else if (is_root[i]) {
      out.marginals[i] = static_cast<double>(evidence_mass(kNone, i) / z);
    } else if (net.parents(i).empty()) {
      out.marginals[i] = net.node(i).leak;
    }
  }
  for (NodeIndex s : hidden_effects) {
    if (net.parents(s).empty()) continue;
    out.marginals[s] = static_cast<double>(1 - evidence_mass(s, kNone) / z);
  }
  out.log_evidence = static_cast<double>(log(z));
  return out;
}

}  // namespace detail

/// Exact posterior marginals P(n = true | evidence) for every node.
inline ExactResult exact_posteriors(const Network& net, const EvidenceSet& ev, const ExactOptions& opt = {}) {
  if (ev.size() != net.size()) throw Error("evidence does not match network");
  const std::size_t free = net.size() - ev.count();
  switch (opt.method) {
    case ExactMethod::Enumerate: return detail::enumerate_posteriors(net, ev, opt.max_free);
    case ExactMethod::TwoLayer: return detail::two_layer_posteriors(net, ev, opt.max_positive);
    case ExactMethod::Auto:
      if (free <= opt.max_free) return detail::enumerate_posteriors(net, ev, opt.max_free);
      if (is_two_layer(net) && ev.count_true() <= opt.max_positive)
        return detail::two_layer_posteriors(net, ev, opt.max_positive);
      throw Error("network has " + std::to_string(free) + " free nodes, above the enumeration cap of " +
                  std::to_string(opt.max_free) + ", and no other exact route applies");
  }
  throw Error("unknown exact method");
}

/// Prior marginals by ancestral sampling.
inline std::vector<double> prior_marginals_forward(const Network& net, std::size_t n_samples, Rng& rng) {
  if (n_samples == 0) throw Error("need at least one sample");
  std::vector<std::uint64_t> hits(net.size(), 0);
  Assignment values(net.size(), 0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    for (NodeIndex j : net.topo_order()) {
      values[j] = rng.bernoulli(net.prob_true(j, values)) ? 1 : 0;
      hits[j] += values[j];
    }
  }
  std::vector<double> out(net.size());
  for (NodeIndex j = 0; j < net.size(); ++j) out[j] = static_cast<double>(hits[j]) / static_cast<double>(n_samples);
  return out;
}

/// True iff no active trail links x to any node of targets given the
/// conditioning set (reachability over (node, direction) pairs).
inline bool d_separated(const Network& net, NodeIndex x, const std::vector<NodeIndex>& given,
                        const std::vector<NodeIndex>& targets) {
  const std::size_t n = net.size();
  if (x >= n) throw Error("unknown node index");
  std::vector<std::uint8_t> in_z(n, 0), z_ancestor(n, 0);
  for (NodeIndex z : given) {
    if (z >= n) throw Error("unknown node index");
    in_z[z] = 1;
  }
  if (in_z[x]) throw Error("query node is in the conditioning set");

  // Nodes with a descendant (or themselves) in the conditioning set.
  std::vector<NodeIndex> stack(given.begin(), given.end());
  for (NodeIndex z : given) z_ancestor[z] = 1;
  while (!stack.empty()) {
    NodeIndex i = stack.back();
    stack.pop_back();
    for (const ParentLink& p : net.parents(i))
      if (!z_ancestor[p.node]) {
        z_ancestor[p.node] = 1;
        stack.push_back(p.node);
      }
  }

  enum Dir : std::uint8_t { kUp = 0, kDown = 1 };  // up: arrived from a child
  std::vector<std::uint8_t> seen(2 * n, 0), reached(n, 0);
  std::deque<std::pair<NodeIndex, Dir>> queue{{x, kUp}};
  while (!queue.empty()) {
    auto [i, d] = queue.front();
    queue.pop_front();
    if (seen[2 * i + d]) continue;
    seen[2 * i + d] = 1;
    if (!in_z[i]) reached[i] = 1;
    if (d == kUp && !in_z[i]) {
      for (const ParentLink& p : net.parents(i)) queue.emplace_back(p.node, kUp);
      for (const ChildLink& c : net.children(i)) queue.emplace_back(c.node, kDown);
    } else if (d == kDown) {
      if (!in_z[i])
        for (const ChildLink& c : net.children(i)) queue.emplace_back(c.node, kDown);
      if (z_ancestor[i])
        for (const ParentLink& p : net.parents(i)) queue.emplace_back(p.node, kUp);
    }
  }
  for (NodeIndex w : targets) {
    if (w >= n) throw Error("unknown node index");
    if (w != x && reached[w]) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Explicit transition matrices

/// States of a subset of nodes; every other node keeps its base value.
/// Factors of dropped nodes are left out of the target distribution, which
/// sums them out when they are barren (no observed descendants).
struct ChainSpace {
  std::vector<NodeIndex> vars;
  Assignment base;
  std::vector<std::uint8_t> dropped;

  std::size_t dim() const { return std::size_t{1} << vars.size(); }

  void decode(std::size_t index, Assignment& values) const {
    values = base;
    for (std::size_t b = 0; b < vars.size(); ++b) values[vars[b]] = (index >> b) & 1;
  }

  std::size_t encode(std::span<const std::uint8_t> values) const {
    std::size_t index = 0;
    for (std::size_t b = 0; b < vars.size(); ++b)
      if (values[vars[b]]) index |= std::size_t{1} << b;
    return index;
  }
};

inline Assignment fixed_values(const SamplingContext& ctx) {
  Assignment base(ctx.network().size(), 0);
  for (NodeIndex i : ctx.evidence().nodes()) base[i] = ctx.evidence().value(i) ? 1 : 0;
  return base;
}

/// All free nodes of the run.
inline ChainSpace full_space(const SamplingContext& ctx, std::size_t max_vars = 12) {
  ChainSpace s{ctx.free_nodes(), fixed_values(ctx), std::vector<std::uint8_t>(ctx.network().size(), 0)};
  if (s.vars.size() > max_vars) throw Error("too many free nodes for an explicit transition matrix");
  return s;
}

/// Conditionally sampled nodes only; forward-sampled nodes are summed out.
inline ChainSpace conditional_space(const SamplingContext& ctx, std::size_t max_vars = 12) {
  ChainSpace s{ctx.movable_nodes(), fixed_values(ctx), std::vector<std::uint8_t>(ctx.network().size(), 0)};
  for (NodeIndex f : ctx.forward_nodes()) s.dropped[f] = 1;
  if (s.vars.size() > max_vars) throw Error("too many free nodes for an explicit transition matrix");
  return s;
}

/// Target distribution over the space, by direct evaluation of every state.
inline std::vector<double> space_posterior(const Network& net, const ChainSpace& space) {
  const std::size_t dim = space.dim();
  std::vector<double> logw(dim);
  Assignment values;
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < dim; ++s) {
    space.decode(s, values);
    double lw = 0.0;
    for (NodeIndex j = 0; j < net.size(); ++j) {
      if (space.dropped[j]) continue;
      const double f = net.factor(j, values);
      lw += f > 0.0 ? std::log(f) : -std::numeric_limits<double>::infinity();
    }
    logw[s] = lw;
    top = std::max(top, lw);
  }
  if (top == -std::numeric_limits<double>::infinity()) throw Error("all states have zero probability");
  std::vector<double> p(dim);
  double z = 0.0;
  for (std::size_t s = 0; s < dim; ++s) z += p[s] = std::exp(logw[s] - top);
  for (double& x : p) x /= z;
  return p;
}

/// Row-sparse kernel: at most four successors per state.
struct SparseKernel {
  struct Row {
    std::uint8_t n = 0;
    std::array<std::uint32_t, 4> to{};
    std::array<double, 4> p{};

    void add(std::uint32_t t, double prob) {
      if (prob == 0.0) return;
      for (std::uint8_t i = 0; i < n; ++i)
        if (to[i] == t) {
          p[i] += prob;
          return;
        }
      to[n] = t;
      p[n] = prob;
      ++n;
    }
  };
  std::vector<Row> rows;

  std::vector<double> push(const std::vector<double>& dist) const {
    std::vector<double> out(dist.size(), 0.0);
    for (std::size_t s = 0; s < rows.size(); ++s) {
      if (dist[s] == 0.0) continue;
      const Row& r = rows[s];
      for (std::uint8_t i = 0; i < r.n; ++i) out[r.to[i]] += dist[s] * r.p[i];
    }
    return out;
  }
};

enum class ElementaryMove { Single, Block, Swap };

namespace detail {

inline std::size_t with_local(const ChainSpace& space, std::size_t index, const LocalKernel& k, std::uint8_t m) {
  Assignment values;
  space.decode(index, values);
  values[k.nodes[0]] = m & 1;
  if (k.arity == 2) values[k.nodes[1]] = (m >> 1) & 1;
  return space.encode(values);
}

inline bool in_space(const ChainSpace& space, NodeIndex n) {
  return std::find(space.vars.begin(), space.vars.end(), n) != space.vars.end();
}

/// Adds weight * (distribution of the kernel) starting from `index`.
inline void add_kernel(const ChainSpace& space, std::size_t index, const LocalKernel& k, double weight,
                       SparseKernel::Row& row) {
  for (std::uint8_t m = 0; m < (1u << k.arity); ++m)
    if (k.next[m] > 0.0) row.add(static_cast<std::uint32_t>(with_local(space, index, k, m)), weight * k.next[m]);
}

/// Two single-site moves in sequence, a then b.
inline void add_single_pair(const SamplingContext& ctx, const ChainSpace& space, std::size_t index, NodeIndex a,
                            NodeIndex b, double weight, SparseKernel::Row& row) {
  Assignment values;
  space.decode(index, values);
  const LocalKernel ka = single_site_kernel(ctx, values, a);
  for (std::uint8_t ma = 0; ma < 2; ++ma) {
    if (ka.next[ma] == 0.0) continue;
    Assignment mid = values;
    mid[a] = ma;
    const LocalKernel kb = single_site_kernel(ctx, mid, b);
    for (std::uint8_t mb = 0; mb < 2; ++mb) {
      if (kb.next[mb] == 0.0) continue;
      Assignment end = mid;
      end[b] = mb;
      row.add(static_cast<std::uint32_t>(space.encode(end)), weight * ka.next[ma] * kb.next[mb]);
    }
  }
}

}  // namespace detail

/// Kernel of one elementary chain (single node, blocked pair, swapped pair).
inline SparseKernel elementary_kernel(const SamplingContext& ctx, const ChainSpace& space, ElementaryMove move,
                                      NodeIndex a, NodeIndex b = 0) {
  SparseKernel K;
  K.rows.resize(space.dim());
  Assignment values;
  for (std::size_t s = 0; s < space.dim(); ++s) {
    space.decode(s, values);
    LocalKernel k = move == ElementaryMove::Single  ? single_site_kernel(ctx, values, a)
                    : move == ElementaryMove::Block ? block_kernel(ctx, values, a, b)
                                                    : swap_kernel(ctx, values, a, b);
    detail::add_kernel(space, s, k, 1.0, K.rows[s]);
  }
  return K;
}

/// Kernel of one sweep step as the sampler executes it, including the pair
/// gate and the swap/single-site mixture. Steps on nodes outside the space
/// act as the identity.
inline SparseKernel unit_kernel(const SamplingContext& ctx, const ChainSpace& space, const MoveUnit& u) {
  SparseKernel K;
  K.rows.resize(space.dim());
  Assignment values;
  const bool a_in = detail::in_space(space, u.a);
  for (std::size_t s = 0; s < space.dim(); ++s) {
    auto& row = K.rows[s];
    if (!a_in) {
      row.add(static_cast<std::uint32_t>(s), 1.0);
      continue;
    }
    space.decode(s, values);
    if (u.kind != MoveUnit::Kind::Pair) {
      detail::add_kernel(space, s, single_site_kernel(ctx, values, u.a), 1.0, row);
      continue;
    }
    if (!ctx.pair_gate(values, u.a, u.b)) {
      detail::add_single_pair(ctx, space, s, u.a, u.b, 1.0, row);
    } else if (pair_move(ctx.strategy().move_policy) == PairMove::Block) {
      detail::add_kernel(space, s, block_kernel(ctx, values, u.a, u.b), 1.0, row);
    } else {
      const double f = ctx.strategy().swap_fraction;
      detail::add_kernel(space, s, swap_kernel(ctx, values, u.a, u.b), f, row);
      detail::add_single_pair(ctx, space, s, u.a, u.b, 1.0 - f, row);
    }
  }
  return K;
}

struct TransitionMatrix {
  std::vector<NodeIndex> nodes;
  std::size_t dim = 0;
  std::vector<double> p;  // row-major

  double at(std::size_t i, std::size_t j) const { return p[i * dim + j]; }

  std::vector<double> left_multiply(const std::vector<double>& v) const {
    std::vector<double> out(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i) {
      if (v[i] == 0.0) continue;
      for (std::size_t j = 0; j < dim; ++j) out[j] += v[i] * p[i * dim + j];
    }
    return out;
  }
};

inline TransitionMatrix to_matrix(const ChainSpace& space, const SparseKernel& K) {
  TransitionMatrix T{space.vars, space.dim(), std::vector<double>(space.dim() * space.dim(), 0.0)};
  for (std::size_t s = 0; s < T.dim; ++s)
    for (std::uint8_t i = 0; i < K.rows[s].n; ++i) T.p[s * T.dim + K.rows[s].to[i]] += K.rows[s].p[i];
  return T;
}

/// Product of the step kernels of a sweep plan, in execution order.
inline TransitionMatrix plan_matrix(const SamplingContext& ctx, const ChainSpace& space, const SweepPlan& plan) {
  std::vector<SparseKernel> kernels;
  for (const MoveUnit& u : plan.steps) kernels.push_back(unit_kernel(ctx, space, u));
  const std::size_t dim = space.dim();
  TransitionMatrix T{space.vars, dim, std::vector<double>(dim * dim, 0.0)};
  std::vector<double> row(dim);
  for (std::size_t s = 0; s < dim; ++s) {
    std::fill(row.begin(), row.end(), 0.0);
    row[s] = 1.0;
    for (const SparseKernel& K : kernels) row = K.push(row);
    std::copy(row.begin(), row.end(), T.p.begin() + static_cast<std::ptrdiff_t>(s * dim));
  }
  return T;
}

/// Sweep plans drawn the way the sampler draws them.
inline std::vector<SweepPlan> sample_plans(const SamplingContext& ctx, std::size_t count, std::uint64_t seed,
                                           std::uint64_t first_sweep = 0) {
  Rng rng(seed);
  std::vector<SweepPlan> plans;
  for (std::size_t i = 0; i < count; ++i) plans.push_back(plan_sweep(ctx, rng, first_sweep + i));
  return plans;
}

/// Expected one-sweep matrix: the uniform mixture of the given plans' matrices.
/// Every plan is a composition of kernels that leave the target invariant,
/// so the mixture shares the same stationary distribution.
inline TransitionMatrix explicit_transition_matrix(const SamplingContext& ctx, const ChainSpace& space,
                                                   const std::vector<SweepPlan>& plans) {
  if (plans.empty()) throw Error("no sweep plans");
  TransitionMatrix mix{space.vars, space.dim(), std::vector<double>(space.dim() * space.dim(), 0.0)};
  for (const SweepPlan& plan : plans) {
    const TransitionMatrix T = plan_matrix(ctx, space, plan);
    for (std::size_t i = 0; i < T.p.size(); ++i) mix.p[i] += T.p[i] / static_cast<double>(plans.size());
  }
  return mix;
}

}  // namespace noisyor
