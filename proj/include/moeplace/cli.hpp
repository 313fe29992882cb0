// Copyright 2026 The moeplace Authors
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "moeplace/clustering.hpp"
#include "moeplace/cost_model.hpp"
#include "moeplace/error.hpp"
#include "moeplace/json_io.hpp"
#include "moeplace/placement.hpp"
#include "moeplace/routing_stats.hpp"
#include "moeplace/topology.hpp"
#include "moeplace/trace_gen.hpp"

namespace moeplace::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInvalidInput = 2,
  kInfeasible = 3,
  kEnumerationLimit = 4,
};

// Log verbosity comes from MOEPLACE_LOG_LEVEL (quiet | info | debug).
class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {
    if (const char* v = std::getenv("MOEPLACE_LOG_LEVEL")) {
      const std::string s(v);
      if (s == "quiet") level_ = 0;
      if (s == "debug") level_ = 2;
    }
  }
  void info(const std::string& msg) const {
    if (level_ >= 1) err_ << msg << "\n";
  }
  void debug(const std::string& msg) const {
    if (level_ >= 2) err_ << "debug: " << msg << "\n";
  }

 private:
  std::ostream& err_;
  int level_ = 1;
};

struct CostFlags {
  double compute_per_token = CostParams{}.compute_time_per_token;
  double bytes_per_token = CostParams{}.bytes_per_token;
  double layer_overhead = CostParams{}.fixed_overhead_per_layer;

  CostParams params() const { return {compute_per_token, bytes_per_token, layer_overhead}; }

  void attach(CLI::App* cmd) {
    cmd->add_option("--compute-per-token", compute_per_token,
                    "Seconds of expert compute per routed token")
        ->capture_default_str();
    cmd->add_option("--bytes-per-token", bytes_per_token, "Dispatch payload per token in bytes")
        ->capture_default_str();
    cmd->add_option("--layer-overhead", layer_overhead, "Fixed non-MoE seconds per layer")
        ->capture_default_str();
  }
};

// Parses "layer:e1,e2,...:fraction".
inline HotOverride parse_hot(const std::string& text) {
  const auto a = text.find(':');
  const auto b = text.rfind(':');
  if (a == std::string::npos || a == b) {
    throw InvalidInput("--hot expects layer:e1,e2,...:fraction, got \"" + text + "\"");
  }
  HotOverride h;
  try {
    h.layer = std::stoi(text.substr(0, a));
    std::stringstream experts(text.substr(a + 1, b - a - 1));
    std::string item;
    while (std::getline(experts, item, ',')) h.experts.push_back(std::stoi(item));
    h.mass_fraction = std::stod(text.substr(b + 1));
  } catch (const std::logic_error&) {
    throw InvalidInput("--hot expects layer:e1,e2,...:fraction, got \"" + text + "\"");
  }
  return h;
}

inline std::string summarize_conservation(const RoutingStats& s) {
  const auto v = validate(s);
  std::ostringstream out;
  out << "trace: " << s.num_layers << " layers x " << s.num_experts << " experts, top_k="
      << s.top_k << ", tokens=" << s.tokens_total << "\n";
  out << "conservation: " << (v.empty() ? "ok" : "VIOLATED") << " (" << v.size()
      << " violations; per-layer load " << s.layer_tokens() << ", per-transition pairs "
      << Count(s.top_k) * s.layer_tokens() << ")\n";
  return out.str();
}

struct PipelineOutputs {
  Clustering clustering;
  Placement placement;
  Baseline baseline;
  CostReport report;
  CostReport baseline_report;
  ComparisonSummary comparison;
};

enum class PipelineMode { kAuto, kExact, kHeuristic, kExhaustiveOracle };

struct PipelineConfig {
  std::filesystem::path trace;
  std::optional<std::filesystem::path> topology;
  std::optional<int> gpus;
  double bandwidth = 900e9;
  Count balance_slack = 0;
  PipelineMode mode = PipelineMode::kAuto;
  std::optional<double> gap;
  CostParams cost;
  std::filesystem::path out_dir;
};

inline PipelineMode parse_pipeline_mode(const std::string& s) {
  if (s == "exact") return PipelineMode::kExact;
  if (s == "heuristic") return PipelineMode::kHeuristic;
  if (s == "exhaustive-oracle") return PipelineMode::kExhaustiveOracle;
  return PipelineMode::kAuto;
}

// Resolves the fleet: an explicit topology file, or a uniform fleet of
// `gpus` GPUs. Both given and disagreeing is an error.
inline Topology resolve_topology(const std::optional<std::filesystem::path>& path,
                                 std::optional<int> gpus, double bandwidth) {
  if (path) {
    Topology t = load_topology(*path);
    if (gpus && *gpus != t.num_gpus()) {
      throw InvalidInput("--gpus " + std::to_string(*gpus) + " disagrees with topology " +
                         path->string() + " (" + std::to_string(t.num_gpus()) + " GPUs)");
    }
    return t;
  }
  if (!gpus) throw InvalidInput("pass --topology or --gpus");
  return uniform_topology(*gpus, bandwidth);
}

inline void check_trace_fits(const RoutingStats& stats, const Topology& topology,
                             const std::string& trace_name) {
  if (topology.num_gpus() > stats.num_experts) {
    throw InvalidInput("trace " + trace_name + " has " + std::to_string(stats.num_experts) +
                       " experts per layer but the topology has " +
                       std::to_string(topology.num_gpus()) +
                       " GPUs; every GPU needs at least one expert");
  }
}

// Runs clustering, placement and scoring of both the optimized and the
// contiguous placements. Pure apart from reading the input files.
inline PipelineOutputs run_pipeline(const RoutingStats& stats, const Topology& topology,
                                    const PipelineConfig& cfg, const Log& log) {
  const int g = topology.num_gpus();
  PipelineOutputs out;
  const auto cluster_mode = cfg.mode == PipelineMode::kHeuristic ? ClusterMode::kHeuristic
                            : cfg.mode == PipelineMode::kAuto    ? ClusterMode::kAuto
                                                                 : ClusterMode::kExact;
  log.debug("partitions per layer: " + std::to_string(partition_count(stats.num_experts, g)));
  out.clustering = solve_clustering(stats, g, cluster_mode);
  log.info("clustering: O1 = " + json_io::format_double(out.clustering.objective));

  const CommCostTensor costs = comm_costs(stats, out.clustering);
  PlacementOptions opt;
  opt.balance_slack = cfg.balance_slack;
  opt.gap = cfg.gap.value_or(cfg.mode == PipelineMode::kHeuristic ? kDefaultHeuristicGap : 0.0);
  out.placement = cfg.mode == PipelineMode::kExhaustiveOracle
                      ? solve_placement_exhaustive(costs, out.clustering, topology, opt)
                      : solve_placement(costs, out.clustering, topology, opt);
  log.debug("placement slack " + std::to_string(opt.balance_slack) + ", gap " +
            json_io::format_double(opt.gap));
  log.info("placement: O2 = " + json_io::format_double(out.placement.objective));

  out.baseline = baseline_contiguous(stats.num_experts, stats.num_layers, g);
  out.baseline.clustering.objective = objective_o1(stats, out.baseline.clustering);
  out.baseline.placement.objective =
      objective_o2(comm_costs(stats, out.baseline.clustering), out.baseline.placement, topology);

  out.report = evaluate(stats, out.clustering, out.placement, topology, cfg.cost);
  out.baseline_report =
      evaluate(stats, out.baseline.clustering, out.baseline.placement, topology, cfg.cost);
  out.comparison = compare(out.baseline_report, out.report);
  return out;
}

inline void write_pipeline(const PipelineOutputs& o, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  emit(o.clustering, dir / "clustering.json");
  emit(o.placement, dir / "placement.json");
  emit(o.report, dir / "report.json");
  json_io::write_text(dir / "report.csv", to_csv(o.report));
  emit(o.baseline.clustering, dir / "baseline_clustering.json");
  emit(o.baseline.placement, dir / "baseline_placement.json");
  emit(o.baseline_report, dir / "baseline_report.json");
  json_io::write_text(dir / "baseline_report.csv", to_csv(o.baseline_report));
  json_io::write_file(dir / "comparison.json", to_json(o.comparison));
}

inline std::string describe(const std::optional<double>& v) {
  return v ? json_io::format_double(*v) : std::string("n/a");
}

// Entry point of the moeplace tool. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Expert placement for Mixture-of-Experts serving", "moeplace"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file supplying option values");
  Log log(err);

  // generate-trace
  TraceGenSpec gen;
  std::vector<std::string> hot;
  std::filesystem::path gen_out;
  auto* gen_cmd = app.add_subcommand("generate-trace", "Synthesize routing statistics");
  gen_cmd->add_option("--layers", gen.num_layers, "MoE layers")->required();
  gen_cmd->add_option("--experts", gen.num_experts, "Experts per layer")->required();
  gen_cmd->add_option("--top-k", gen.top_k, "Experts per token per layer")->capture_default_str();
  gen_cmd->add_option("--tokens", gen.tokens, "Tokens to simulate")->required();
  gen_cmd->add_option("--skew", gen.marginal_skew, "Zipf exponent of expert popularity")
      ->capture_default_str();
  gen_cmd->add_option("--dependency", gen.dependency_strength,
                      "Weight of each expert's preferred successor, in [0,1]")
      ->capture_default_str();
  gen_cmd->add_option("--hot", hot, "Force a token share: layer:e1,e2,...:fraction (repeatable)");
  gen_cmd->add_option("--seed", gen.seed, "Token sampling seed")->capture_default_str();
  gen_cmd->add_option("--structure-seed", gen.structure_seed,
                      "Seed of the workload structure (popular experts, successors)")
      ->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "Output trace JSON")->required();

  // cluster
  std::filesystem::path trace_path, out_path, clustering_path, placement_path;
  std::optional<std::filesystem::path> topology_path;
  std::optional<int> gpus;
  double bandwidth = 900e9;
  std::string cluster_mode = "auto";
  auto* cluster_cmd = app.add_subcommand("cluster", "Balance expert loads into one cluster per GPU");
  cluster_cmd->add_option("--trace", trace_path, "Trace JSON")->required();
  cluster_cmd->add_option("--gpus", gpus, "Number of GPUs (clusters per layer)")->required();
  cluster_cmd->add_option("--mode", cluster_mode, "auto | exact | heuristic")
      ->check(CLI::IsMember({"auto", "exact", "heuristic"}))
      ->capture_default_str();
  cluster_cmd->add_option("--out", out_path, "Output clustering JSON")->required();

  // place
  Count slack = 0;
  std::optional<double> gap;
  std::string place_mode = "exact";
  auto* place_cmd = app.add_subcommand("place", "Assign clusters to GPUs");
  place_cmd->add_option("--trace", trace_path, "Trace JSON")->required();
  place_cmd->add_option("--clustering", clustering_path, "Clustering JSON")->required();
  place_cmd->add_option("--topology", topology_path, "Topology JSON");
  place_cmd->add_option("--gpus", gpus, "Uniform fleet size when no topology is given");
  place_cmd->add_option("--bandwidth", bandwidth, "Uniform link bandwidth, bytes/s")
      ->capture_default_str();
  place_cmd->add_option("--slack", slack, "Allowed per-GPU deviation from E*L/G experts")
      ->capture_default_str();
  place_cmd->add_option("--mode", place_mode, "exact | heuristic | exhaustive")
      ->check(CLI::IsMember({"exact", "heuristic", "exhaustive"}))
      ->capture_default_str();
  place_cmd->add_option("--gap", gap, "Relative optimality gap (heuristic default 0.025)");
  place_cmd->add_option("--out", out_path, "Output placement JSON")->required();

  // evaluate
  CostFlags cost;
  std::optional<std::filesystem::path> csv_path;
  std::optional<std::filesystem::path> eval_clustering;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a placement with the cost model");
  eval_cmd->add_option("--trace", trace_path, "Trace JSON")->required();
  eval_cmd->add_option("--placement", placement_path, "Placement JSON")->required();
  eval_cmd->add_option("--clustering", eval_clustering,
                       "Clustering JSON (derived from the placement when omitted)");
  eval_cmd->add_option("--topology", topology_path, "Topology JSON");
  eval_cmd->add_option("--gpus", gpus, "Uniform fleet size when no topology is given");
  eval_cmd->add_option("--bandwidth", bandwidth, "Uniform link bandwidth, bytes/s")
      ->capture_default_str();
  eval_cmd->add_option("--out", out_path, "Output report JSON")->required();
  eval_cmd->add_option("--csv", csv_path, "Also write the report as CSV");
  cost.attach(eval_cmd);

  // pipeline
  PipelineConfig cfg;
  std::string pipeline_mode = "auto";
  auto* pipe_cmd = app.add_subcommand("pipeline", "Cluster, place, and compare against the baseline");
  pipe_cmd->add_option("--trace", cfg.trace, "Trace JSON")->required();
  pipe_cmd->add_option("--topology", cfg.topology, "Topology JSON");
  pipe_cmd->add_option("--gpus", cfg.gpus, "GPU count (uniform fleet when no topology is given)");
  pipe_cmd->add_option("--bandwidth", cfg.bandwidth, "Uniform link bandwidth, bytes/s")
      ->capture_default_str();
  pipe_cmd->add_option("--slack", cfg.balance_slack, "Allowed per-GPU expert-count deviation")
      ->capture_default_str();
  pipe_cmd->add_option("--mode", pipeline_mode, "auto | exact | heuristic | exhaustive-oracle")
      ->check(CLI::IsMember({"auto", "exact", "heuristic", "exhaustive-oracle"}))
      ->capture_default_str();
  pipe_cmd->add_option("--gap", cfg.gap, "Relative optimality gap of the placement search");
  pipe_cmd->add_option("--out-dir", cfg.out_dir, "Directory for all artifacts")->required();
  CostFlags pipe_cost;
  pipe_cost.attach(pipe_cmd);

  // compare
  std::filesystem::path baseline_report, optimized_report;
  auto* cmp_cmd = app.add_subcommand("compare", "Compare two cost reports");
  cmp_cmd->add_option("--baseline", baseline_report, "Baseline report JSON")->required();
  cmp_cmd->add_option("--optimized", optimized_report, "Optimized report JSON")->required();
  cmp_cmd->add_option("--out", out_path, "Output comparison JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) {
      for (const auto& h : hot) gen.hot_overrides.push_back(parse_hot(h));
      const RoutingStats stats = generate(gen);
      emit(stats, gen_out);
      out << summarize_conservation(stats);
      for (const auto& h : gen.hot_overrides) {
        Count sum = 0;
        for (int e : h.experts) sum += stats.load[std::size_t(h.layer)][std::size_t(e)];
        out << "layer " << h.layer << " hot share: "
            << json_io::format_double(double(sum) / double(stats.layer_tokens())) << "\n";
      }
    } else if (*cluster_cmd) {
      const RoutingStats stats = ingest(trace_path);
      const auto mode = cluster_mode == "exact"       ? ClusterMode::kExact
                        : cluster_mode == "heuristic" ? ClusterMode::kHeuristic
                                                      : ClusterMode::kAuto;
      const Clustering c = solve_clustering(stats, *gpus, mode);
      emit(c, out_path);
      out << "O1 = " << json_io::format_double(c.objective) << "\n";
    } else if (*place_cmd) {
      const RoutingStats stats = ingest(trace_path);
      const Clustering c = load_clustering(clustering_path);
      const Topology topo = resolve_topology(topology_path, gpus, bandwidth);
      check_trace_fits(stats, topo, trace_path.string());
      const CommCostTensor costs = comm_costs(stats, c);
      PlacementOptions opt;
      opt.balance_slack = slack;
      opt.gap = gap.value_or(place_mode == "heuristic" ? kDefaultHeuristicGap : 0.0);
      const Placement p = place_mode == "exhaustive"
                              ? solve_placement_exhaustive(costs, c, topo, opt)
                              : solve_placement(costs, c, topo, opt);
      emit(p, out_path);
      out << "O2 = " << json_io::format_double(p.objective) << "\n";
    } else if (*eval_cmd) {
      const RoutingStats stats = ingest(trace_path);
      const Placement p = load_placement(placement_path);
      const Clustering c = eval_clustering ? load_clustering(*eval_clustering) : clustering_of(p);
      const Topology topo = resolve_topology(topology_path, gpus, bandwidth);
      check_trace_fits(stats, topo, trace_path.string());
      const CostReport r = evaluate(stats, c, p, topo, cost.params());
      emit(r, out_path);
      if (csv_path) json_io::write_text(*csv_path, to_csv(r));
      out << "end_to_end = " << json_io::format_double(r.end_to_end) << " s\n";
    } else if (*pipe_cmd) {
      cfg.mode = parse_pipeline_mode(pipeline_mode);
      cfg.cost = pipe_cost.params();
      check_params(cfg.cost);
      const RoutingStats stats = ingest(cfg.trace);
      const Topology topo = resolve_topology(cfg.topology, cfg.gpus, cfg.bandwidth);
      check_trace_fits(stats, topo, cfg.trace.string());
      const PipelineOutputs o = run_pipeline(stats, topo, cfg, log);
      write_pipeline(o, cfg.out_dir);
      out << "O1 optimized = " << json_io::format_double(o.clustering.objective)
          << ", baseline = " << json_io::format_double(o.baseline.clustering.objective) << "\n";
      out << "O2 optimized = " << json_io::format_double(o.placement.objective)
          << ", baseline = " << json_io::format_double(o.baseline.placement.objective) << "\n";
      out << "end_to_end optimized = " << json_io::format_double(o.report.end_to_end)
          << " s, baseline = " << json_io::format_double(o.baseline_report.end_to_end) << " s\n";
      out << "speedup = " << describe(o.comparison.speedup) << "\n";
    } else if (*cmp_cmd) {
      const ComparisonSummary s =
          compare(load_cost_report(baseline_report), load_cost_report(optimized_report));
      if (!out_path.empty()) json_io::write_file(out_path, to_json(s));
      out << json_io::to_string(to_json(s));
    }
  } catch (const BalanceInfeasible& e) {
    err << "error: " << e.what() << "\n";
    return kInfeasible;
  } catch (const EnumerationLimit& e) {
    err << "error: " << e.what() << "\n";
    return kEnumerationLimit;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kInvalidInput;
  }
  return kOk;
}

}  // namespace moeplace::cli
