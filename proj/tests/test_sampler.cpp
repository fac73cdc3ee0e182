#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "noisyor/exact.hpp"
#include "noisyor/sampler.hpp"
#include "support.hpp"

using namespace noisyor;
using testsupport::vase;
using testsupport::vase_broken;

namespace {

// Vase joint weights given v = 1, by local state index (bit 0 = e, bit 1 = b).
constexpr double kW00 = 0.99 * 0.98 * 0.001;
constexpr double kW10 = 0.01 * 0.98 * 0.9001;
constexpr double kW01 = 0.99 * 0.02 * 0.8002;
constexpr double kW11 = 0.01 * 0.02 * 0.98002;
constexpr double kZ = kW00 + kW10 + kW01 + kW11;

Assignment vase_state(int e, int b) { return {std::uint8_t(e), std::uint8_t(b), 1}; }

StrategySpec with_rule(const char* preset, TransitionRule rule) {
  StrategySpec s = strategy_preset(preset);
  s.rule = rule;
  return s;
}

}  // namespace

TEST(VaseWeights, HandEnumeration) {
  EXPECT_NEAR(kW10, 0.00882098, 1e-11);
  EXPECT_NEAR(kW01, 0.01584396, 1e-11);
  EXPECT_NEAR(kW11, 0.000196004, 1e-12);
  EXPECT_NEAR(kW00, 0.0009702, 1e-12);
  const Network net = vase();
  for (int m = 0; m < 4; ++m) {
    const double w[4] = {kW00, kW10, kW01, kW11};
    EXPECT_NEAR(testsupport::oracle_joint(net, vase_state(m & 1, m >> 1)), w[m], 1e-15);
  }
}

TEST(ConditionalProb, Vase) {
  const Network net = vase();
  const SamplingContext ctx(net, vase_broken(net), strategy_preset("gibbs-flow"));
  const double p = conditional_prob(net, vase_state(0, 0), 0, ctx.flow()[0]);
  EXPECT_NEAR(p, 0.90091, 5e-6);
  EXPECT_NEAR(p, testsupport::brute_conditional(net, vase_state(0, 0), 0, {}), 1e-13);
  EXPECT_NEAR(p, kW10 / (kW10 + kW00), 1e-13);
  EXPECT_THROW(conditional_prob(net, vase_state(0, 0), 2, ctx.flow()[2]), Error);
}

TEST(ConditionalProb, ForwardAndPriorCases) {
  const Network net({{"a", NodeKind::Model, 0.3}, {"f", NodeKind::Model, 0.001}}, {{0, 1, 0.9}});
  EvidenceSet ev(2);
  ev.set(0, true);
  const auto flow = classify_flow(net, ev, no_clamp(net, ev));
  ASSERT_EQ(flow[1].status, FlowStatus::ForwardSampled);
  EXPECT_NEAR(conditional_prob(net, Assignment{1, 0}, 1, flow[1]), 0.9001, 1e-15);
  const EvidenceSet none(2);
  const auto flow0 = classify_flow(net, none, no_clamp(net, none));
  EXPECT_DOUBLE_EQ(conditional_prob(net, Assignment{0, 0}, 0, flow0[0]), 0.3);
}

TEST(TransitionDistribution, VaseBlock) {
  const Network net = vase();
  MoveProposal prop{{0, 1}, {vase_state(1, 0), vase_state(0, 1), vase_state(1, 1), vase_state(0, 0)}};
  const auto d = transition_distribution(net, prop);
  EXPECT_NEAR(d[0], 0.34149, 5e-6);
  EXPECT_NEAR(d[1], 0.613367, 1e-6);
  EXPECT_NEAR(d[2], 0.00759, 5e-6);
  EXPECT_NEAR(d[3], 0.03756, 5e-6);
  EXPECT_NEAR(d[1], kW01 / kZ, 1e-13);
}

TEST(TransitionDistribution, SingleSiteIsFullBlanketConditional) {
  Rng rng(4);
  for (int t = 0; t < 40; ++t) {
    const Network net = testsupport::random_network(rng, {.nodes = 9, .edge_prob = 0.35});
    Assignment x(net.size());
    for (auto& v : x) v = rng.bernoulli(0.5);
    for (NodeIndex n = 0; n < net.size(); ++n) {
      Assignment x0 = x, x1 = x;
      x0[n] = 0;
      x1[n] = 1;
      const auto d = transition_distribution(net, {{n}, {x0, x1}});
      EXPECT_NEAR(d[1], full_blanket_conditional(net, x, n), 1e-12);
    }
  }
}

TEST(TransitionDistribution, MatchesFullJointRatios) {
  Rng rng(8);
  for (int t = 0; t < 60; ++t) {
    const Network net = testsupport::random_network(rng, {.nodes = 5 + rng.below(11), .edge_prob = 0.3});
    Assignment x(net.size());
    for (auto& v : x) v = rng.bernoulli(0.5);
    const NodeIndex a = rng.below(net.size());
    NodeIndex b = rng.below(net.size() - 1);
    if (b >= a) ++b;
    std::vector<Assignment> states;
    for (int m = 0; m < 4; ++m) {
      Assignment s = x;
      s[a] = m & 1;
      s[b] = (m >> 1) & 1;
      states.push_back(s);
    }
    const auto d = transition_distribution(net, {{a, b}, states});
    double z = 0.0;
    for (const auto& s : states) z += testsupport::oracle_joint(net, s);
    for (int m = 0; m < 4; ++m) EXPECT_NEAR(d[m], testsupport::oracle_joint(net, states[m]) / z, 1e-12);
  }
}

TEST(TransitionDistribution, SymmetryAndErrors) {
  const Network net({{"a", NodeKind::Model, 0.2}, {"b", NodeKind::Model, 0.2}}, {});
  const auto d = transition_distribution(net, {{0, 1}, {Assignment{1, 0}, Assignment{0, 1}}});
  EXPECT_DOUBLE_EQ(d[0], 0.5);
  EXPECT_DOUBLE_EQ(d[1], 0.5);
  EXPECT_THROW(transition_distribution(net, {{0}, {Assignment{1, 0}, Assignment{0, 1}}}), Error);
}

TEST(Metropolis, AcceptRule) {
  Rng rng(12);
  const double ratio = kW01 / kW10;
  EXPECT_NEAR(ratio, 1.796, 5e-4);
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(metropolis_accept(kW10, kW01, rng));
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(metropolis_accept(0.3, 0.3, rng));
  int accepted = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) accepted += metropolis_accept(kW01, kW10, rng);
  EXPECT_NEAR(kW10 / kW01, 0.5567, 5e-4);
  EXPECT_NEAR(static_cast<double>(accepted) / n, kW10 / kW01, 0.02);
  EXPECT_THROW(metropolis_accept(0.0, 0.1, rng), Error);
  EXPECT_THROW(metropolis_accept(0.1, 0.0, rng), Error);
  EXPECT_DOUBLE_EQ(metropolis_probability(0.1, 0.0), 0.0);
}

TEST(SingleSite, ForcedValue) {
  const Network net({{"a", NodeKind::Model, 0.5}, {"c", NodeKind::Sensory, 0.01}}, {{0, 1, 1.0}});
  EvidenceSet ev(2);
  ev.set(0, true);
  const SamplingContext ctx(net, ev, strategy_preset("gibbs"));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    SamplerState st{Assignment{1, 0}, Rng(seed)};
    MarginalAccumulator acc(2);
    single_site_move(ctx, st, 1, &acc);
    EXPECT_EQ(st.values[1], 1);
    EXPECT_DOUBLE_EQ(acc.sum[1], 1.0);
    EXPECT_EQ(acc.count[1], 1u);
  }
}

TEST(SingleSite, LongRunFrequencyMatchesConditional) {
  const Network net = vase();
  for (auto rule : {TransitionRule::Gibbs, TransitionRule::Metropolis}) {
    const SamplingContext ctx(net, vase_broken(net), with_rule("gibbs", rule));
    SamplerState st{vase_state(0, 0), Rng(21)};
    MarginalAccumulator acc(3);
    int on = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      single_site_move(ctx, st, 0, &acc);
      on += st.values[0];
    }
    EXPECT_NEAR(static_cast<double>(on) / n, 0.90091, 0.01);
    EXPECT_NEAR(acc.sum[0] / static_cast<double>(acc.count[0]), 0.90091, 1e-5);
  }
}

TEST(SingleSite, ZeroWeightFlipNeverAccepted) {
  // c has no leak and a false parent, so c = true has zero weight.
  const Network net({{"a", NodeKind::Model, 0.5}, {"c", NodeKind::Model, 0.0}}, {{0, 1, 0.7}});
  EvidenceSet ev(2);
  ev.set(0, false);
  const SamplingContext ctx(net, ev, strategy_preset("metropolis"), Profile::Permissive);
  SamplerState st{Assignment{0, 0}, Rng(2)};
  for (int i = 0; i < 1000; ++i) {
    single_site_move(ctx, st, 1, nullptr);
    ASSERT_EQ(st.values[1], 0);
  }
  EXPECT_THROW(SamplingContext(net, ev, strategy_preset("metropolis")), Error);
}

TEST(BlockPair, LongRunFrequencies) {
  const Network net = vase();
  for (auto rule : {TransitionRule::Gibbs, TransitionRule::Metropolis}) {
    const SamplingContext ctx(net, vase_broken(net), with_rule("block-spouses-cover", rule));
    SamplerState st{vase_state(1, 0), Rng(5)};
    MarginalAccumulator acc(3);
    std::array<int, 4> hits{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      block_pair_move(ctx, st, 0, 1, &acc);
      ++hits[st.values[0] | (st.values[1] << 1)];
    }
    EXPECT_NEAR(hits[1] / double(n), 0.3415, 0.01);
    EXPECT_NEAR(hits[2] / double(n), 0.6134, 0.01);
    EXPECT_NEAR(hits[3] / double(n), 0.0076, 0.01);
    EXPECT_NEAR(hits[0] / double(n), 0.0376, 0.01);
    // Rao-Blackwellized scores are exact in every state.
    EXPECT_NEAR(acc.sum[0] / double(acc.count[0]), 0.349074, 1e-5);
    EXPECT_NEAR(acc.sum[1] / double(acc.count[1]), 0.620954, 1e-5);
  }
}

TEST(BlockPair, IndependentNodesAndDeterministicCorner) {
  const Network ind({{"a", NodeKind::Model, 0.3}, {"b", NodeKind::Model, 0.6}}, {});
  const SamplingContext ctx(ind, EvidenceSet(2), strategy_preset("block-spouses-cover"));
  const LocalKernel k = block_kernel(ctx, Assignment{0, 0}, 0, 1);
  EXPECT_NEAR(k.next[0], 0.7 * 0.4, 1e-15);
  EXPECT_NEAR(k.next[1], 0.3 * 0.4, 1e-15);
  EXPECT_NEAR(k.next[2], 0.7 * 0.6, 1e-15);
  EXPECT_NEAR(k.next[3], 0.3 * 0.6, 1e-15);

  // c = true is only reachable with both parents true (no leak, certain AND-like pair via evidence).
  const Network corner({{"a", NodeKind::Model, 0.5}, {"b", NodeKind::Model, 0.5}, {"c", NodeKind::Sensory, 0.0},
                        {"d", NodeKind::Sensory, 0.0}},
                       {{0, 2, 1.0}, {1, 3, 1.0}});
  EvidenceSet ev(4);
  ev.set(2, true);
  ev.set(3, true);
  const SamplingContext cctx(corner, ev, strategy_preset("block-spouses-cover"), Profile::Permissive);
  SamplerState st{Assignment{1, 1, 1, 1}, Rng(3)};
  for (int i = 0; i < 100; ++i) {
    block_pair_move(cctx, st, 0, 1, nullptr);
    ASSERT_EQ(st.values[0], 1);
    ASSERT_EQ(st.values[1], 1);
  }
  EXPECT_THROW(block_pair_move(cctx, st, 0, 2, nullptr), Error);
}

TEST(SwapPair, Vase) {
  const Network net = vase();
  const SamplingContext gibbs(net, vase_broken(net), strategy_preset("swap-spouses-cover"));
  const LocalKernel k = swap_kernel(gibbs, vase_state(1, 0), 0, 1);
  EXPECT_NEAR(k.next[2], 0.642368, 1e-6);
  EXPECT_NEAR(k.next[2], kW01 / (kW01 + kW10), 1e-13);
  EXPECT_EQ(k.next[0] + k.next[3], 0.0);

  const SamplingContext metro(net, vase_broken(net), with_rule("swap-spouses-cover", TransitionRule::Metropolis));
  EXPECT_DOUBLE_EQ(swap_kernel(metro, vase_state(1, 0), 0, 1).next[2], 1.0);
  EXPECT_NEAR(swap_kernel(metro, vase_state(0, 1), 0, 1).next[1], kW10 / kW01, 1e-13);

  SamplerState st{vase_state(0, 0), Rng(4)};
  MarginalAccumulator acc(3);
  swap_pair_move(gibbs, st, 0, 1, &acc);
  EXPECT_EQ(st.values, vase_state(0, 0));
  EXPECT_EQ(acc.count[0], 1u);
  EXPECT_EQ(acc.sum[0], 0.0);
}

TEST(Pairing, Examples) {
  const Network net = vase();
  Rng rng(1);
  const SamplingContext cover(net, vase_broken(net), strategy_preset("block-spouses-cover"));
  const Pairing p = pair_nodes(cover, vase_state(1, 0), rng);
  ASSERT_EQ(p.pairs.size(), 1u);
  EXPECT_TRUE(p.singles.empty());

  const Network three({{"a", NodeKind::Model, 0.1}, {"b", NodeKind::Model, 0.1}, {"c", NodeKind::Model, 0.1},
                       {"s", NodeKind::Sensory, 0.01}},
                      {{0, 3, 0.9}, {1, 3, 0.9}, {2, 3, 0.9}});
  EvidenceSet ev3(4);
  ev3.set(3, true);
  const SamplingContext c3(three, ev3, strategy_preset("swap-spouses-cover"));
  std::set<std::pair<NodeIndex, NodeIndex>> seen;
  for (int i = 0; i < 200; ++i) {
    const Pairing q = pair_nodes(c3, Assignment{1, 0, 0, 1}, rng);
    ASSERT_EQ(q.pairs.size(), 1u);
    ASSERT_EQ(q.singles.size(), 1u);
    seen.insert(std::minmax(q.pairs[0].first, q.pairs[0].second));
  }
  EXPECT_EQ(seen.size(), 3u);

  // Shared child c is free and currently false: no pair qualifies.
  const Network deep({{"a", NodeKind::Model, 0.1}, {"b", NodeKind::Model, 0.1}, {"c", NodeKind::Model, 0.1},
                      {"s", NodeKind::Sensory, 0.01}},
                     {{0, 2, 0.9}, {1, 2, 0.9}, {2, 3, 0.9}});
  EvidenceSet evd(4);
  evd.set(3, true);
  const SamplingContext child(deep, evd, strategy_preset("swap-spouses-child-true"));
  const Pairing off = pair_nodes(child, Assignment{1, 0, 0, 1}, rng);
  EXPECT_TRUE(off.pairs.empty());
  EXPECT_EQ(off.singles.size(), 3u);
  EXPECT_EQ(pair_nodes(child, Assignment{1, 0, 1, 1}, rng).pairs.size(), 1u);
}

TEST(Pairing, CoverReadings) {
  // a, b share c, an unobserved ancestor of the true observation s.
  const Network deep({{"a", NodeKind::Model, 0.1}, {"b", NodeKind::Model, 0.1}, {"c", NodeKind::Model, 0.1},
                      {"s", NodeKind::Sensory, 0.01}},
                     {{0, 2, 0.9}, {1, 2, 0.9}, {2, 3, 0.9}});
  EvidenceSet ev(4);
  ev.set(3, true);
  StrategySpec s = strategy_preset("swap-spouses-cover");
  EXPECT_EQ(SamplingContext(deep, ev, s).spouses(0).size(), 1u);
  s.cover = CoverReading::EvidenceChild;
  EXPECT_TRUE(SamplingContext(deep, ev, s).spouses(0).empty());
}

TEST(Presets, NamesAndComposition) {
  const std::vector<std::string> names{"gibbs",
                                       "gibbs-clamp",
                                       "gibbs-flow",
                                       "block-spouses-cover",
                                       "block-spouses-parent-true",
                                       "swap-spouses-cover",
                                       "swap-spouses-child-true",
                                       "metropolis",
                                       "optimized-random",
                                       "optimized-fwd-bwd"};
  ASSERT_EQ(strategy_presets().size(), names.size());
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(strategy_presets()[i].name, names[i]);
  for (const char* opt : {"optimized-random", "optimized-fwd-bwd"}) {
    const StrategySpec s = strategy_preset(opt);
    EXPECT_TRUE(s.clamp);
    EXPECT_TRUE(s.flow_aware);
    EXPECT_EQ(s.rule, TransitionRule::Metropolis);
    EXPECT_EQ(pair_move(s.move_policy), PairMove::Swap);
    EXPECT_EQ(pair_eligibility(s.move_policy), PairEligibility::SharedChildTrue);
  }
  EXPECT_DOUBLE_EQ(strategy_preset("swap-spouses-cover").swap_fraction, 0.8);
  EXPECT_THROW(strategy_preset("annealing"), Error);
  StrategySpec bad = strategy_preset("swap-spouses-cover");
  bad.swap_fraction = 1.0;
  EXPECT_THROW(validate_strategy(bad), Error);
  bad.swap_fraction = -0.1;
  EXPECT_THROW(validate_strategy(bad), Error);
}

TEST(Sweep, EveryMovableNodeCanMoveAlone) {
  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const Network net = testsupport::random_network(rng, {.nodes = 10, .edge_prob = 0.35});
    const EvidenceSet ev = testsupport::random_evidence(rng, net, 0.3, 0.6);
    for (const auto& preset : strategy_presets()) {
      if (pair_move(preset.move_policy) != PairMove::Swap) continue;
      const SamplingContext ctx(net, ev, preset);
      for (int k = 0; k < 4; ++k) {
        const SweepPlan plan = plan_sweep(ctx, rng, static_cast<std::uint64_t>(k));
        std::set<NodeIndex> touched;
        for (const MoveUnit& u : plan.steps) {
          touched.insert(u.a);
          touched.insert(u.b);
        }
        const auto& must = plan.backward ? ctx.movable_nodes() : ctx.free_nodes();
        for (NodeIndex i : must) EXPECT_TRUE(touched.count(i)) << preset.name;
      }
    }
  }
}

TEST(Sweep, GibbsConvergesOnVase) {
  const Network net = vase();
  const SamplingContext ctx(net, vase_broken(net), strategy_preset("gibbs"));
  const auto r = sample(ctx, 10000, 42);
  EXPECT_NEAR(r.marginals[0], 0.3491, 0.02);
  EXPECT_NEAR(r.marginals[1], 0.6210, 0.02);
  EXPECT_EQ(r.marginals[2], 1.0);
}

TEST(Sweep, ClampWithoutPositiveEvidence) {
  const Network net = vase();
  EvidenceSet ev(3);
  ev.set(2, false);
  const SamplingContext ctx(net, ev, strategy_preset("gibbs-clamp"));
  EXPECT_TRUE(ctx.free_nodes().empty());
  const auto r = sample(ctx, 100, 1);
  EXPECT_EQ(r.marginals, (std::vector<double>{0.0, 0.0, 0.0}));
  EXPECT_EQ(r.acc.count[0], 0u);
}

TEST(Sweep, FwdBwdWithoutDiagnosticNodes) {
  const Network net({{"a", NodeKind::Model, 0.2}, {"b", NodeKind::Model, 0.3}, {"s", NodeKind::Sensory, 0.1}},
                    {{0, 1, 0.5}, {1, 2, 0.5}});
  EvidenceSet ev(3);
  ev.set(0, true);
  StrategySpec s = strategy_preset("optimized-fwd-bwd");
  s.clamp = false;
  const SamplingContext ctx(net, ev, s);
  EXPECT_TRUE(ctx.movable_nodes().empty());
  Rng rng(1);
  EXPECT_EQ(plan_sweep(ctx, rng, 0).steps.size(), 2u);
  EXPECT_TRUE(plan_sweep(ctx, rng, 1).steps.empty());
  const auto r = sample(ctx, 20000, 3);
  EXPECT_NEAR(r.marginals[1], 1.0 - 0.7 * 0.5, 1e-9);
  EXPECT_NEAR(r.marginals[2], 0.1 + 0.9 * 0.5 * 0.65, 0.01);
}

TEST(Estimates, Accumulator) {
  const Network net = vase();
  const SamplingContext ctx(net, vase_broken(net), strategy_preset("gibbs"));
  MarginalAccumulator acc(3);
  acc.sum[0] = 3.0;
  acc.count[0] = 10;
  acc.record(1, 0.90091);
  const auto m = estimate_marginals(acc, ctx);
  EXPECT_DOUBLE_EQ(m[0], 0.3);
  EXPECT_DOUBLE_EQ(m[1], 0.90091);
  EXPECT_DOUBLE_EQ(m[2], 1.0);
  MarginalAccumulator other(3);
  other.record(0, 1.0);
  acc.merge(other);
  EXPECT_DOUBLE_EQ(acc.sum[0], 4.0);
  EXPECT_EQ(acc.count[0], 11u);
}

TEST(Initialize, Examples) {
  const Network quiet({{"a", NodeKind::Model, 1e-12}, {"b", NodeKind::Model, 1e-12}, {"s", NodeKind::Sensory, 1e-12}},
                      {{0, 2, 0.9}, {1, 2, 0.9}});
  const SamplingContext qctx(quiet, EvidenceSet(3), strategy_preset("gibbs"));
  for (std::uint64_t seed = 0; seed < 200; ++seed)
    EXPECT_EQ(initialize_state(qctx, seed).values, (Assignment{0, 0, 0}));

  const Network net = vase();
  const SamplingContext ctx(net, vase_broken(net), strategy_preset("gibbs"));
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const SamplerState st = initialize_state(ctx, seed);
    EXPECT_EQ(st.values[2], 1);
    EXPECT_EQ(initialize_state(ctx, seed).values, st.values);
  }
}

TEST(Initialize, AvoidsForcedContradictions) {
  // a -> s with p = 1 and s observed false forces a false.
  const Network net({{"a", NodeKind::Model, 0.9}, {"s", NodeKind::Sensory, 0.01}}, {{0, 1, 1.0}});
  EvidenceSet ev(2);
  ev.set(1, false);
  const SamplingContext ctx(net, ev, strategy_preset("gibbs"));
  for (std::uint64_t seed = 0; seed < 50; ++seed) EXPECT_EQ(initialize_state(ctx, seed).values[0], 0);
}

TEST(Sample, DeterministicAndMergesChains) {
  Rng rng(13);
  const Network net = testsupport::random_network(rng, {.nodes = 10, .edge_prob = 0.3});
  const EvidenceSet ev = testsupport::random_evidence(rng, net, 0.3, 0.6);
  for (const auto& preset : strategy_presets()) {
    const SamplingContext ctx(net, ev, preset);
    const auto a = sample(ctx, 300, 77, 10, 3);
    const auto b = sample(ctx, 300, 77, 10, 3);
    EXPECT_EQ(a.marginals, b.marginals) << preset.name;
    EXPECT_EQ(a.work, b.work);
    MarginalAccumulator merged(net.size());
    for (std::uint64_t c = 0; c < 3; ++c) merged.merge(run_chain(ctx, {300, 10, derive_seed(77, {c})}).acc);
    EXPECT_EQ(merged.sum, a.acc.sum);
    EXPECT_EQ(merged.count, a.acc.count);
  }
}

TEST(Sample, AllStrategiesConvergeOnSmallNetworks) {
  Rng rng(2024);
  for (int t = 0; t < 6; ++t) {
    const Network net = testsupport::random_network(
        rng, {.nodes = 6 + rng.below(7), .edge_prob = 0.3, .leak_lo = 0.05, .leak_hi = 0.4, .p_lo = 0.2, .p_hi = 0.9});
    const EvidenceSet ev = testsupport::random_evidence(rng, net, 0.3, 0.6);
    for (const auto& preset : strategy_presets()) {
      const SamplingContext ctx(net, ev, preset);
      // Clamping changes the target: clamped nodes behave as false evidence.
      EvidenceSet target = ev;
      for (NodeIndex i : ctx.clamp().clamped_false) target.set(i, false);
      const auto truth = testsupport::brute_posteriors(net, target);
      const auto r = sample(ctx, 10000, derive_seed(9, {static_cast<std::uint64_t>(t)}));
      for (NodeIndex i = 0; i < net.size(); ++i)
        EXPECT_NEAR(r.marginals[i], truth[i], 0.02) << preset.name << " node " << net.id(i) << " net " << t;
    }
  }
}
