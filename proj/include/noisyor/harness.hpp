#pragma once

// Experiment harness: synthetic diagnostic networks and cases, the error
// metric, and multi-strategy comparison reports.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "noisyor/exact.hpp"
#include "noisyor/network.hpp"
#include "noisyor/rng.hpp"
#include "noisyor/sampler.hpp"

namespace noisyor {

/// Accuracy bound for a true posterior t: sqrt(t (1 - t)) / 5, never
/// narrower than the floor.
inline double error_bound(double truth, double epsilon_floor) {
  return std::max(std::sqrt(std::max(0.0, truth * (1.0 - truth))) / 5.0, epsilon_floor);
}

inline bool is_accurate(double estimate, double truth, double epsilon_floor) {
  return std::abs(estimate - truth) <= error_bound(truth, epsilon_floor);
}

/// Number of listed nodes whose estimate falls outside the bound.
inline std::size_t error_count(std::span<const double> estimates, std::span<const double> truths,
                               std::span<const NodeIndex> nodes, double epsilon_floor = 0.01) {
  if (estimates.size() != truths.size()) throw Error("estimates and truths cover different nodes");
  if (epsilon_floor < 0.0) throw Error("epsilon floor must be nonnegative");
  std::size_t errors = 0;
  for (NodeIndex i : nodes) {
    if (i >= truths.size()) throw Error("node outside the estimate range");
    if (!is_accurate(estimates[i], truths[i], epsilon_floor)) ++errors;
  }
  return errors;
}

inline std::size_t error_count(const std::map<std::string, double>& estimates,
                               const std::map<std::string, double>& truths, double epsilon_floor = 0.01) {
  if (estimates.size() != truths.size()) throw Error("estimates and truths cover different nodes");
  if (epsilon_floor < 0.0) throw Error("epsilon floor must be nonnegative");
  std::size_t errors = 0;
  for (const auto& [id, t] : truths) {
    auto it = estimates.find(id);
    if (it == estimates.end()) throw Error("no estimate for node " + id);
    if (!is_accurate(it->second, t, epsilon_floor)) ++errors;
  }
  return errors;
}

inline std::vector<NodeIndex> model_nodes(const Network& net) {
  std::vector<NodeIndex> out;
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (net.node(i).kind == NodeKind::Model) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic networks

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct GeneratorParams {
  std::size_t n_model = 60;
  std::size_t n_sensory = 30;
  std::size_t n_links = 200;
  Interval prior_range{0.001, 0.03};
  Interval link_range{0.9, 0.999};
  Interval sensory_leak_range{0.0001, 0.001};
  /// Fraction of sensory nodes guaranteed at least two model parents.
  double competing_fraction = 0.5;
  /// 1 gives the two-layer model/sensory form; larger values split the model
  /// nodes into that many causal layers linked forward.
  std::size_t layers = 1;
  std::uint64_t seed = 1;
};

namespace detail {

inline double draw(Rng& rng, const Interval& r) { return r.lo + (r.hi - r.lo) * rng.uniform(); }

inline void check_interval(const Interval& r, const char* what, bool open_zero) {
  if (!(r.lo <= r.hi) || !is_probability(r.lo) || !is_probability(r.hi))
    throw Error(std::string("invalid ") + what);
  if (open_zero && (r.lo <= 0.0 || r.hi >= 1.0))
    throw Error(std::string(what) + " must lie strictly inside (0,1)");
}

}  // namespace detail

/// Random diagnostic network: model nodes m1..mM, sensory sinks s1..sK.
/// Every sensory node gets one model parent, a fraction get a second
/// competing one, and the remaining links are spread uniformly over the
/// allowed pairs. Deterministic in the seed.
inline Network generate_network(const GeneratorParams& params) {
  const std::size_t M = params.n_model, K = params.n_sensory;
  if (M == 0) throw Error("need at least one model node");
  if (params.layers == 0 || params.layers > M) throw Error("layers must be between 1 and the model count");
  if (params.n_links < K) throw Error("infeasible: fewer links than sensory nodes");
  if (!(params.competing_fraction >= 0.0 && params.competing_fraction <= 1.0))
    throw Error("competing_fraction out of range");
  detail::check_interval(params.prior_range, "prior_range", true);
  detail::check_interval(params.sensory_leak_range, "sensory_leak_range", true);
  detail::check_interval(params.link_range, "link_range", false);

  Rng rng(params.seed);
  std::vector<Node> nodes;
  for (std::size_t i = 0; i < M; ++i)
    nodes.push_back({"m" + std::to_string(i + 1), NodeKind::Model, detail::draw(rng, params.prior_range)});
  for (std::size_t i = 0; i < K; ++i)
    nodes.push_back({"s" + std::to_string(i + 1), NodeKind::Sensory, detail::draw(rng, params.sensory_leak_range)});

  auto layer_of = [&](std::size_t m) { return m * params.layers / M; };
  std::vector<std::pair<NodeIndex, NodeIndex>> allowed;
  for (std::size_t a = 0; a < M; ++a) {
    for (std::size_t b = 0; b < M; ++b)
      if (layer_of(a) < layer_of(b)) allowed.emplace_back(a, b);
    for (std::size_t s = 0; s < K; ++s) allowed.emplace_back(a, M + s);
  }
  if (params.n_links > allowed.size()) throw Error("infeasible: more links than allowed node pairs");

  std::vector<std::uint8_t> taken(allowed.size(), 0);
  auto pair_slot = [&](NodeIndex from, NodeIndex to) {
    // Sensory links are laid out per model node after its model links.
    for (std::size_t i = 0; i < allowed.size(); ++i)
      if (allowed[i].first == from && allowed[i].second == to) return i;
    throw Error("internal: pair not allowed");
  };

  std::size_t competing = static_cast<std::size_t>(std::ceil(params.competing_fraction * static_cast<double>(K)));
  competing = std::min({competing, params.n_links - K, M >= 2 ? K : std::size_t{0}});
  std::vector<std::size_t> sensory_order(K);
  for (std::size_t s = 0; s < K; ++s) sensory_order[s] = s;
  rng.shuffle(sensory_order);

  std::size_t placed = 0;
  for (std::size_t r = 0; r < K; ++r) {
    const std::size_t s = sensory_order[r];
    const NodeIndex first = rng.below(M);
    taken[pair_slot(first, M + s)] = 1;
    ++placed;
    if (r < competing) {
      NodeIndex second = rng.below(M - 1);
      if (second >= first) ++second;
      taken[pair_slot(second, M + s)] = 1;
      ++placed;
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < allowed.size(); ++i)
    if (!taken[i]) rest.push_back(i);
  rng.shuffle(rest);
  for (std::size_t i = 0; placed < params.n_links; ++i, ++placed) taken[rest[i]] = 1;

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < allowed.size(); ++i)
    if (taken[i]) edges.push_back({allowed[i].first, allowed[i].second, 0.0});
  std::sort(edges.begin(), edges.end(),
            [](const Edge& x, const Edge& y) { return std::tie(x.to, x.from) < std::tie(y.to, y.from); });
  for (Edge& e : edges) e.p = detail::draw(rng, params.link_range);
  return Network(std::move(nodes), std::move(edges));
}

struct CountRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

struct TestCase {
  EvidenceSet evidence;
  std::size_t n_positive = 0;
};

/// Cases drawn by forward sampling a world from the prior and observing a
/// random subset of its sensory nodes with the requested sizes.
inline std::vector<TestCase> generate_cases(const Network& net, std::size_t n_cases, CountRange evidence_range,
                                            CountRange positive_range, std::uint64_t seed,
                                            std::size_t max_attempts = 100000) {
  std::vector<NodeIndex> sensory;
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (net.node(i).kind == NodeKind::Sensory) sensory.push_back(i);
  if (evidence_range.lo > evidence_range.hi || positive_range.lo > positive_range.hi)
    throw Error("infeasible: empty range");
  if (evidence_range.hi > sensory.size()) throw Error("infeasible: evidence range exceeds the sensory node count");
  if (positive_range.lo > evidence_range.hi) throw Error("infeasible: more positives than observations");

  Rng rng(seed);
  std::vector<TestCase> cases;
  Assignment world(net.size());
  for (std::size_t c = 0; c < n_cases; ++c) {
    bool done = false;
    for (std::size_t attempt = 0; attempt < max_attempts && !done; ++attempt) {
      for (NodeIndex j : net.topo_order()) world[j] = rng.bernoulli(net.prob_true(j, world)) ? 1 : 0;
      std::vector<NodeIndex> on, off;
      for (NodeIndex s : sensory) (world[s] ? on : off).push_back(s);
      const std::size_t n_ev = evidence_range.lo + rng.below(evidence_range.hi - evidence_range.lo + 1);
      const std::size_t pos_lo = std::max(positive_range.lo, n_ev > off.size() ? n_ev - off.size() : 0);
      const std::size_t pos_hi = std::min({positive_range.hi, on.size(), n_ev});
      if (pos_lo > pos_hi) continue;
      const std::size_t n_pos = pos_lo + rng.below(pos_hi - pos_lo + 1);
      rng.shuffle(on);
      rng.shuffle(off);
      TestCase tc{EvidenceSet(net.size()), n_pos};
      for (std::size_t i = 0; i < n_pos; ++i) tc.evidence.set(on[i], true);
      for (std::size_t i = 0; i < n_ev - n_pos; ++i) tc.evidence.set(off[i], false);
      cases.push_back(std::move(tc));
      done = true;
    }
    if (!done) throw Error("infeasible: no sampled world matched the requested evidence ranges");
  }
  return cases;
}

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentConfig {
  Network network;
  std::vector<TestCase> cases;
  /// Optional per-case reference marginals; exact inference is used otherwise.
  std::vector<std::vector<double>> truths;
  std::vector<std::string> truth_labels;
  std::vector<StrategySpec> strategies;
  std::vector<std::uint64_t> checkpoints{5, 500, 1000, 2000};
  std::size_t repetitions = 20;
  std::uint64_t seed = 1;
  double epsilon_floor = 0.01;
  std::string baseline = "gibbs";
  std::size_t threads = 1;
  bool wall_time = false;
  ExactOptions exact{22, ExactMethod::Auto, 20};
};

struct ReportRow {
  std::string strategy;
  /// Mean error count at each checkpoint over every (case, repetition).
  std::vector<double> mean_errors;
  /// Error count per checkpoint, case and repetition.
  std::vector<std::vector<std::vector<std::size_t>>> errors;
  std::uint64_t work = 0;
  double time_ratio = 0.0;
  double wall_seconds = 0.0;
  double wall_ratio = 0.0;
};

struct Report {
  std::vector<std::uint64_t> checkpoints;
  std::string baseline;
  std::size_t repetitions = 0;
  std::size_t n_cases = 0;
  double epsilon_floor = 0.0;
  std::vector<std::string> truth_methods;
  /// seeds[case][rep], shared by every strategy.
  std::vector<std::vector<std::uint64_t>> seeds;
  std::vector<ReportRow> rows;
  bool wall_time = false;

  const ReportRow& row(std::string_view name) const {
    for (const auto& r : rows)
      if (r.strategy == name) return r;
    throw Error("no report row for " + std::string(name));
  }
};

/// Seed of repetition r on case c: derive_seed(master, {c, r}). Strategies
/// share seeds so that they are compared on common random streams.
inline std::uint64_t cell_seed(std::uint64_t master, std::size_t c, std::size_t r) {
  return derive_seed(master, {c, r});
}

inline Report run_experiment(const ExperimentConfig& cfg) {
  if (cfg.repetitions == 0) throw Error("repetitions must be at least 1");
  if (cfg.checkpoints.empty()) throw Error("no checkpoints");
  for (std::size_t i = 1; i < cfg.checkpoints.size(); ++i)
    if (cfg.checkpoints[i] <= cfg.checkpoints[i - 1]) throw Error("checkpoints must increase");
  if (cfg.cases.empty()) throw Error("no cases");
  if (!cfg.truths.empty() && cfg.truths.size() != cfg.cases.size()) throw Error("one truth per case is required");

  const Network& net = cfg.network;
  const auto models = model_nodes(net);
  Report rep;
  rep.checkpoints = cfg.checkpoints;
  rep.baseline = cfg.baseline;
  rep.repetitions = cfg.repetitions;
  rep.n_cases = cfg.cases.size();
  rep.epsilon_floor = cfg.epsilon_floor;
  rep.wall_time = cfg.wall_time;

  std::vector<std::vector<double>> truths = cfg.truths;
  if (truths.empty()) {
    for (const TestCase& tc : cfg.cases) {
      ExactResult ex = exact_posteriors(net, tc.evidence, cfg.exact);
      truths.push_back(std::move(ex.marginals));
      rep.truth_methods.push_back(ex.method);
    }
  } else {
    rep.truth_methods = cfg.truth_labels;
    rep.truth_methods.resize(truths.size(), "reference");
  }
  for (std::size_t c = 0; c < cfg.cases.size(); ++c) {
    rep.seeds.emplace_back();
    for (std::size_t r = 0; r < cfg.repetitions; ++r) rep.seeds.back().push_back(cell_seed(cfg.seed, c, r));
  }

  const std::size_t S = cfg.strategies.size(), C = cfg.cases.size(), R = cfg.repetitions;
  const std::size_t P = cfg.checkpoints.size();
  struct Cell {
    std::vector<std::size_t> errors;
    std::uint64_t work = 0;
    double seconds = 0.0;
  };
  std::vector<Cell> cells(S * C * R);
  // Contexts are built once per (strategy, case) and shared by repetitions.
  std::vector<std::unique_ptr<SamplingContext>> contexts(S * C);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t c = 0; c < C; ++c)
      contexts[s * C + c] = std::make_unique<SamplingContext>(net, cfg.cases[c].evidence, cfg.strategies[s]);

  auto run_cell = [&](std::size_t job) {
    const std::size_t s = job / (C * R), c = (job / R) % C, r = job % R;
    const SamplingContext& ctx = *contexts[s * C + c];
    Cell& cell = cells[job];
    cell.errors.assign(P, 0);
    std::size_t next = 0;
    auto checkpoint = [&](std::uint64_t sweeps, const MarginalAccumulator& acc, const SamplerState&) {
      if (next < P && sweeps == cfg.checkpoints[next]) {
        const auto est = estimate_marginals(acc, ctx);
        cell.errors[next++] = error_count(est, truths[c], models, cfg.epsilon_floor);
      }
    };
    const auto t0 = std::chrono::steady_clock::now();
    ChainResult res = run_chain(ctx, {cfg.checkpoints.back(), 0, rep.seeds[c][r]}, checkpoint);
    cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    cell.work = res.work;
  };

  const std::size_t n_jobs = cells.size();
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.threads, n_jobs));
  if (n_threads == 1) {
    for (std::size_t j = 0; j < n_jobs; ++j) run_cell(j);
  } else {
    std::atomic<std::size_t> next_job{0};
    std::vector<std::exception_ptr> errors(n_threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t j; (j = next_job.fetch_add(1)) < n_jobs;) run_cell(j);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  for (std::size_t s = 0; s < S; ++s) {
    ReportRow row;
    row.strategy = cfg.strategies[s].name;
    row.mean_errors.assign(P, 0.0);
    row.errors.assign(P, std::vector<std::vector<std::size_t>>(C, std::vector<std::size_t>(R, 0)));
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t r = 0; r < R; ++r) {
        const Cell& cell = cells[(s * C + c) * R + r];
        for (std::size_t k = 0; k < P; ++k) {
          row.errors[k][c][r] = cell.errors[k];
          row.mean_errors[k] += static_cast<double>(cell.errors[k]);
        }
        row.work += cell.work;
        row.wall_seconds += cell.seconds;
      }
    }
    for (double& m : row.mean_errors) m /= static_cast<double>(C * R);
    rep.rows.push_back(std::move(row));
  }

  const ReportRow* base = nullptr;
  for (const auto& r : rep.rows)
    if (r.strategy == cfg.baseline) base = &r;
  for (auto& r : rep.rows) {
    r.time_ratio = base && base->work ? static_cast<double>(r.work) / static_cast<double>(base->work) : 0.0;
    r.wall_ratio = base && base->wall_seconds > 0.0 ? r.wall_seconds / base->wall_seconds : 0.0;
  }
  return rep;
}

inline nlohmann::ordered_json report_to_json(const Report& rep, bool include_cells = false) {
  nlohmann::ordered_json j;
  j["baseline"] = rep.baseline;
  j["checkpoints"] = rep.checkpoints;
  j["repetitions"] = rep.repetitions;
  j["cases"] = rep.n_cases;
  j["epsilon_floor"] = rep.epsilon_floor;
  j["truth"] = rep.truth_methods;
  j["seeds"] = rep.seeds;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows) {
    nlohmann::ordered_json row;
    row["strategy"] = r.strategy;
    row["time_ratio"] = r.time_ratio;
    row["work"] = r.work;
    if (rep.wall_time) row["wall_ratio"] = r.wall_ratio;
    row["mean_errors"] = r.mean_errors;
    if (include_cells) row["errors"] = r.errors;
    j["rows"].push_back(std::move(row));
  }
  return j;
}

/// Plain-text table: strategy, time ratio, then mean errors per checkpoint.
inline std::string render_table(const Report& rep) {
  std::size_t width = 8;
  for (const auto& r : rep.rows) width = std::max(width, r.strategy.size());
  std::ostringstream out;
  char buf[64];
  out << std::string(width, ' ') << "    Time";
  for (auto cp : rep.checkpoints) {
    std::snprintf(buf, sizeof buf, "  %10s", (std::to_string(cp) + " Runs").c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& r : rep.rows) {
    out << r.strategy << std::string(width - r.strategy.size(), ' ');
    std::snprintf(buf, sizeof buf, "  %6.2f", rep.wall_time ? r.wall_ratio : r.time_ratio);
    out << buf;
    for (double m : r.mean_errors) {
      std::snprintf(buf, sizeof buf, "  %10.1f", m);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON configuration

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path + ": syntax error: " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline GeneratorParams generator_params_from_json(const nlohmann::json& j) {
  GeneratorParams p;
  auto interval = [&](const char* key, Interval& dst) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) throw Error(std::string(key) + " must be a [lo, hi] pair");
    dst = {a[0].get<double>(), a[1].get<double>()};
  };
  p.n_model = j.value("models", p.n_model);
  p.n_sensory = j.value("sensors", p.n_sensory);
  p.n_links = j.value("links", p.n_links);
  p.seed = j.value("seed", p.seed);
  p.layers = j.value("layers", p.layers);
  p.competing_fraction = j.value("competing_fraction", p.competing_fraction);
  interval("prior_range", p.prior_range);
  interval("link_range", p.link_range);
  interval("sensory_leak_range", p.sensory_leak_range);
  return p;
}

/// Reads {"marginals": {id: p, ...}} into a dense vector.
inline std::vector<double> marginals_from_json(const Network& net, const nlohmann::json& j) {
  if (!j.contains("marginals") || !j.at("marginals").is_object()) throw Error("truth file lacks 'marginals'");
  std::vector<double> out(net.size(), 0.0);
  std::vector<std::uint8_t> seen(net.size(), 0);
  for (auto it = j.at("marginals").begin(); it != j.at("marginals").end(); ++it) {
    const NodeIndex i = net.index_of(it.key());
    out[i] = it.value().get<double>();
    seen[i] = 1;
  }
  for (NodeIndex i = 0; i < net.size(); ++i)
    if (!seen[i]) throw Error("truth file has no value for " + net.id(i));
  return out;
}

inline CountRange count_range_from_json(const nlohmann::json& j, const char* key, CountRange fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2) throw Error(std::string(key) + " must be a [lo, hi] pair");
  return {a[0].get<std::size_t>(), a[1].get<std::size_t>()};
}

/// Bench configuration; relative file paths resolve against base_dir.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j, const std::string& base_dir = ".") {
  auto resolve = [&](const std::string& p) { return (p.empty() || p[0] == '/') ? p : base_dir + "/" + p; };
  ExperimentConfig cfg;
  if (!j.contains("network")) throw Error("bench config needs 'network'");
  const auto& jn = j.at("network");
  if (jn.is_string()) cfg.network = parse_network(read_text_file(resolve(jn.get<std::string>())));
  else if (jn.is_object() && jn.contains("generate")) cfg.network = generate_network(generator_params_from_json(jn.at("generate")));
  else throw Error("'network' must be a file name or {\"generate\": {...}}");

  if (!j.contains("cases")) throw Error("bench config needs 'cases'");
  const auto& jc = j.at("cases");
  if (jc.is_array()) {
    for (const auto& f : jc) {
      EvidenceSet ev = parse_evidence(cfg.network, read_text_file(resolve(f.get<std::string>())));
      const std::size_t pos = ev.count_true();
      cfg.cases.push_back({std::move(ev), pos});
    }
  } else if (jc.is_object() && jc.contains("generate")) {
    const auto& g = jc.at("generate");
    cfg.cases = generate_cases(cfg.network, g.value("count", std::size_t{5}),
                               count_range_from_json(g, "evidence", {4, 20}),
                               count_range_from_json(g, "positive", {2, 9}), g.value("seed", std::uint64_t{1}));
  } else {
    throw Error("'cases' must be a list of evidence files or {\"generate\": {...}}");
  }

  if (j.contains("truths")) {
    for (const auto& f : j.at("truths")) {
      cfg.truths.push_back(marginals_from_json(cfg.network, read_json_file(resolve(f.get<std::string>()))));
      cfg.truth_labels.push_back("file:" + f.get<std::string>());
    }
  }
  if (j.contains("strategies")) {
    for (const auto& s : j.at("strategies")) cfg.strategies.push_back(strategy_preset(s.get<std::string>()));
  } else {
    cfg.strategies = strategy_presets();
  }
  if (j.contains("checkpoints")) cfg.checkpoints = j.at("checkpoints").get<std::vector<std::uint64_t>>();
  cfg.repetitions = j.value("repetitions", cfg.repetitions);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.epsilon_floor = j.value("epsilon_floor", cfg.epsilon_floor);
  cfg.baseline = j.value("baseline", cfg.baseline);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.wall_time = j.value("wall_time", cfg.wall_time);
  return cfg;
}

}  // namespace noisyor
