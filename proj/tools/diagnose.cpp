// Command-line front end: sampling, exact inference, evidence analysis,
// network generation and benchmark runs. All outputs are JSON.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "noisyor/noisyor.hpp"

namespace {

using nlohmann::ordered_json;
using namespace noisyor;

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

ordered_json marginals_json(const Network& net, const std::vector<double>& m) {
  ordered_json out = ordered_json::object();
  for (NodeIndex i = 0; i < net.size(); ++i) out[net.id(i)] = m[i];
  return out;
}

ordered_json ids(const Network& net, const std::vector<NodeIndex>& nodes) {
  ordered_json out = ordered_json::array();
  for (NodeIndex i : nodes) out.push_back(net.id(i));
  return out;
}

struct Inputs {
  std::string network;
  std::string evidence;
};

std::pair<Network, EvidenceSet> load(const Inputs& in) {
  Network net = parse_network(read_text_file(in.network));
  EvidenceSet ev = parse_evidence(net, read_text_file(in.evidence));
  return {std::move(net), std::move(ev)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inference in noisy-or diagnostic networks"};
  app.require_subcommand(1);

  Inputs sample_in;
  std::string strategy = "optimized-fwd-bwd", sample_out;
  std::uint64_t sweeps = 2000, seed = 1, burn_in = 0;
  std::size_t chains = 1;
  auto* sample_cmd = app.add_subcommand("sample", "Estimate posterior marginals by sampling");
  sample_cmd->add_option("--network", sample_in.network, "Network JSON file")->required();
  sample_cmd->add_option("--evidence", sample_in.evidence, "Evidence JSON file")->required();
  sample_cmd->add_option("--strategy", strategy, "Strategy preset name")->capture_default_str();
  sample_cmd->add_option("--sweeps", sweeps, "Scored sweeps per chain")->capture_default_str();
  sample_cmd->add_option("--seed", seed, "Master seed")->capture_default_str();
  sample_cmd->add_option("--burn-in", burn_in, "Unscored sweeps per chain")->capture_default_str();
  sample_cmd->add_option("--chains", chains, "Independent chains")->capture_default_str()->check(CLI::PositiveNumber);
  sample_cmd->add_option("--out", sample_out, "Output file (- for stdout)")->required();

  Inputs exact_in;
  std::string exact_out, exact_method = "enumerate";
  std::size_t max_free = 22;
  auto* exact_cmd = app.add_subcommand("exact", "Exact posterior marginals");
  exact_cmd->add_option("--network", exact_in.network, "Network JSON file")->required();
  exact_cmd->add_option("--evidence", exact_in.evidence, "Evidence JSON file")->required();
  exact_cmd->add_option("--out", exact_out, "Output file (- for stdout)")->required();
  exact_cmd->add_option("--method", exact_method, "enumerate, two-layer or auto")
      ->capture_default_str()
      ->check(CLI::IsMember({"enumerate", "two-layer", "auto"}));
  exact_cmd->add_option("--max-free", max_free, "Enumeration cap on free nodes")->capture_default_str();

  Inputs analyze_in;
  std::string analyze_out = "-";
  auto* analyze_cmd = app.add_subcommand("analyze", "Clamping and evidence-flow classification");
  analyze_cmd->add_option("--network", analyze_in.network, "Network JSON file")->required();
  analyze_cmd->add_option("--evidence", analyze_in.evidence, "Evidence JSON file")->required();
  analyze_cmd->add_option("--out", analyze_out, "Output file (- for stdout)")->capture_default_str();

  GeneratorParams gen;
  std::string gen_out;
  std::vector<double> prior_range, link_range, sensory_leak_range;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic diagnostic network");
  gen_cmd->add_option("--models", gen.n_model, "Model nodes")->required();
  gen_cmd->add_option("--sensors", gen.n_sensory, "Sensory nodes")->required();
  gen_cmd->add_option("--links", gen.n_links, "Links")->required();
  gen_cmd->add_option("--seed", gen.seed, "Seed")->required();
  gen_cmd->add_option("--layers", gen.layers, "Causal layers of model nodes")->capture_default_str();
  gen_cmd->add_option("--competing-fraction", gen.competing_fraction,
                      "Fraction of sensory nodes with two or more parents")
      ->capture_default_str();
  gen_cmd->add_option("--prior-range", prior_range, "Model leak range lo hi")->expected(2);
  gen_cmd->add_option("--link-range", link_range, "Link strength range lo hi")->expected(2);
  gen_cmd->add_option("--sensory-leak-range", sensory_leak_range, "Sensory leak range lo hi")->expected(2);
  gen_cmd->add_option("--out", gen_out, "Output file (- for stdout)")->required();

  std::string bench_config, bench_out, bench_table;
  double epsilon_floor = -1.0;
  std::size_t threads = 0;
  bool wall_time = false, cells = false;
  auto* bench_cmd = app.add_subcommand("bench", "Compare strategies on a set of cases");
  bench_cmd->add_option("--config", bench_config, "Benchmark configuration JSON")->required();
  bench_cmd->add_option("--out", bench_out, "Report JSON file (- for stdout)")->required();
  bench_cmd->add_option("--table", bench_table, "Also write the text table here (- for stdout)");
  bench_cmd->add_option("--epsilon-floor", epsilon_floor, "Override the error-bound floor");
  bench_cmd->add_option("--threads", threads, "Worker threads (overrides the config)");
  bench_cmd->add_flag("--wall-time", wall_time, "Also report wall-clock ratios (not reproducible)");
  bench_cmd->add_flag("--cells", cells, "Include per-case, per-repetition error counts");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sample_cmd) {
      auto [net, ev] = load(sample_in);
      SamplingContext ctx(net, ev, strategy_preset(strategy));
      const SampleResult r = sample(ctx, sweeps, seed, burn_in, chains);
      ordered_json j;
      j["strategy"] = strategy;
      j["sweeps"] = sweeps;
      j["burn_in"] = burn_in;
      j["chains"] = chains;
      j["seed"] = seed;
      j["work"] = r.work;
      j["marginals"] = marginals_json(net, r.marginals);
      write_output(sample_out, dump(j));
    } else if (*exact_cmd) {
      auto [net, ev] = load(exact_in);
      ExactOptions opt;
      opt.max_free = max_free;
      opt.method = exact_method == "auto"        ? ExactMethod::Auto
                   : exact_method == "two-layer" ? ExactMethod::TwoLayer
                                                 : ExactMethod::Enumerate;
      const ExactResult r = exact_posteriors(net, ev, opt);
      ordered_json j;
      j["method"] = r.method;
      j["log_evidence"] = r.log_evidence;
      j["marginals"] = marginals_json(net, r.marginals);
      write_output(exact_out, dump(j));
    } else if (*analyze_cmd) {
      auto [net, ev] = load(analyze_in);
      const ClampResult clamp = clamp_pass(net, ev);
      const auto flow = classify_flow(net, ev, clamp);
      ordered_json j;
      j["clamped"] = ids(net, clamp.clamped_false);
      j["unclamped"] = ids(net, clamp.unclamped);
      ordered_json nodes = ordered_json::object();
      for (NodeIndex i = 0; i < net.size(); ++i) {
        ordered_json n;
        n["status"] = to_string(flow[i].status);
        if (flow[i].status == FlowStatus::DiagnosticSampled || flow[i].status == FlowStatus::ForwardSampled) {
          n["evidential_children"] = ids(net, flow[i].evidential_children);
          n["conditioning_set"] = ids(net, flow[i].conditioning_set);
        }
        nodes[net.id(i)] = std::move(n);
      }
      j["nodes"] = std::move(nodes);
      write_output(analyze_out, dump(j));
    } else if (*gen_cmd) {
      if (!prior_range.empty()) gen.prior_range = {prior_range[0], prior_range[1]};
      if (!link_range.empty()) gen.link_range = {link_range[0], link_range[1]};
      if (!sensory_leak_range.empty()) gen.sensory_leak_range = {sensory_leak_range[0], sensory_leak_range[1]};
      write_output(gen_out, serialize_network(generate_network(gen)));
    } else if (*bench_cmd) {
      const std::filesystem::path cfg_path(bench_config);
      const std::string base = cfg_path.has_parent_path() ? cfg_path.parent_path().string() : ".";
      ExperimentConfig cfg = experiment_from_json(read_json_file(bench_config), base);
      if (epsilon_floor >= 0.0) cfg.epsilon_floor = epsilon_floor;
      if (threads > 0) cfg.threads = threads;
      if (wall_time) cfg.wall_time = true;
      const Report rep = run_experiment(cfg);
      write_output(bench_out, dump(report_to_json(rep, cells)));
      if (!bench_table.empty()) write_output(bench_table, render_table(rep));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
