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
// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>

#include "moeplace/cli.hpp"
#include "moeplace/moeplace.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace moeplace {
namespace {

// Speedup of the optimized placement over the contiguous baseline on the
// skewed fixture, two-node topology, kFixtureCost parameters.
constexpr double kPinnedSpeedup = 1.4994433761590698;

const CostParams kFixtureCost{5e-9, 8192.0, 1e-4};

// Generator settings of fixtures/skewed_e8_l32.json.
TraceGenSpec fixture_spec() {
  TraceGenSpec s;
  s.num_layers = 32;
  s.num_experts = 8;
  s.top_k = 2;
  s.tokens = 50000;
  s.marginal_skew = 0.8;
  s.dependency_strength = 0.6;
  s.hot_overrides = {{14, {0, 1}, 0.64}, {23, {6, 7}, 0.69}};
  s.seed = 2024;
  s.structure_seed = 7;
  return s;
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) {
      pass = false;
      detail.str("");
      detail << what;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::vector<Count> zipf_loads(Rng& rng, int E, double skew, Count tokens) {
  std::vector<double> w(static_cast<std::size_t>(E));
  for (int e = 0; e < E; ++e) w[std::size_t(e)] = 1.0 / std::pow(double(e + 1), skew);
  rng.shuffle(std::span<double>(w));
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<Count> load;
  for (double x : w) load.push_back(Count(std::floor(x / sum * double(tokens))));
  return load;
}

Count scaled_layer_deviation(const std::vector<Count>& load, const std::vector<int>& assign, int G) {
  std::vector<Count> t(std::size_t(G), 0);
  for (std::size_t e = 0; e < load.size(); ++e) t[std::size_t(assign[e])] += load[e];
  const Count total = std::accumulate(load.begin(), load.end(), Count{0});
  Count dev = 0;
  for (Count x : t) dev += std::llabs(Count(G) * x - total);
  return dev;
}

RoutingStats layer_stats(const std::vector<Count>& load) {
  RoutingStats s = RoutingStats::zeros(1, int(load.size()), 1);
  s.load[0] = load;
  s.tokens_total = std::accumulate(load.begin(), load.end(), Count{0});
  return s;
}

const RoutingStats& fixture_trace() {
  static const RoutingStats s = ingest(test::kFixtures / "skewed_e8_l32.json");
  return s;
}

const Topology& two_node() {
  static const Topology t = load_topology(test::kFixtures / "two_node_4gpu.json");
  return t;
}

Topology random_topology(Rng& rng, int G) {
  std::vector<std::vector<double>> bw(std::size_t(G), std::vector<double>(std::size_t(G), 0.0));
  for (int a = 0; a < G; ++a) {
    for (int b = a + 1; b < G; ++b) {
      bw[std::size_t(a)][std::size_t(b)] = bw[std::size_t(b)][std::size_t(a)] = double(1 + rng.below(4));
    }
  }
  return Topology(bw);
}

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  args.insert(args.begin(), "moeplace");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return code;
}

// Every (trace, topology) pair the suite treats as a fixture, with the
// pipeline's clustering and placement.
struct Scenario {
  std::string name;
  RoutingStats stats;
  Topology topology;
  Clustering clustering;
  Placement placement;
};

std::vector<Scenario> scenarios() {
  std::vector<Scenario> out;
  auto add = [&](std::string name, RoutingStats s, Topology t) {
    Scenario sc{std::move(name), std::move(s), std::move(t), {}, {}};
    sc.clustering = solve_clustering(sc.stats, sc.topology.num_gpus(), ClusterMode::kAuto);
    sc.placement = solve_placement(comm_costs(sc.stats, sc.clustering), sc.clustering, sc.topology);
    out.push_back(std::move(sc));
  };
  add("skewed_e8_l32/two-node", fixture_trace(), two_node());
  add("skewed_e8_l32/single-node", fixture_trace(), load_topology(test::kFixtures / "single_node_4gpu.json"));
  add("two_layer/3gpu", ingest(test::kFixtures / "two_layer_trace.json"), uniform_topology(3, 1e9));
  return out;
}

// 1. Exact load balancing equals a brute-force minimum over all labeled
// surjective assignments.
Outcome clustering_exactness() {
  Outcome o;
  Rng rng(101);
  const auto start = std::chrono::steady_clock::now();
  int n = 0;
  for (; n < 200; ++n) {
    const int E = 4 + int(rng.below(5));
    const int G = 2 + int(rng.below(3));
    const auto load = zipf_loads(rng, E, 0.5 + 1.5 * rng.uniform(), 10000);
    const auto c = solve_exact(layer_stats(load), G);
    const Count got = scaled_layer_deviation(load, c.assign[0], G);
    const Count want = oracle::brute_force_partition(load, G).min_scaled_deviation;
    o.require(got == want, "instance " + std::to_string(n) + ": scaled deviation " + std::to_string(got) +
                               " vs oracle " + std::to_string(want));
  }
  const double secs = seconds_since(start);
  o.require(secs < 10.0, "took " + std::to_string(secs) + " s");
  if (o.pass) o.detail << n << " instances in " << secs << " s";
  return o;
}

// 2. Per layer, the optimum never exceeds the contiguous blocking, and beats
// it on the hot layer of the skewed fixture.
Outcome clustering_dominance() {
  Outcome o;
  std::vector<RoutingStats> traces{fixture_trace()};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TraceGenSpec spec = fixture_spec();
    spec.tokens = 5000;
    spec.seed = seed;
    spec.structure_seed = seed * 31;
    spec.marginal_skew = 0.2 * double(seed);
    spec.hot_overrides.clear();
    traces.push_back(generate(spec));
  }
  int layers = 0;
  for (const auto& s : traces) {
    const auto best = solve_exact(s, 4);
    const auto base = contiguous_clustering(s.num_experts, s.num_layers, 4);
    for (std::size_t l = 0; l < s.load.size(); ++l, ++layers) {
      o.require(scaled_layer_deviation(s.load[l], best.assign[l], 4) <=
                    scaled_layer_deviation(s.load[l], base.assign[l], 4),
                "layer " + std::to_string(l) + " worse than contiguous");
    }
  }
  const auto& f = fixture_trace();
  const auto best = solve_exact(f, 4);
  const auto base = contiguous_clustering(8, 32, 4);
  const Count opt = scaled_layer_deviation(f.load[14], best.assign[14], 4);
  const Count contiguous = scaled_layer_deviation(f.load[14], base.assign[14], 4);
  o.require(opt < contiguous, "hot layer not strictly improved");
  if (o.pass) {
    o.detail << layers << " layers; hot layer deviation " << double(opt) / 4 << " vs " << double(contiguous) / 4;
  }
  return o;
}

// 3. Branch and bound agrees with exhaustive enumeration; 4 (part). Every
// slack-0 result is exactly balanced.
Outcome placement_equivalence(int* balanced_checked) {
  Outcome o;
  Rng rng(303);
  const auto start = std::chrono::steady_clock::now();
  int infeasible = 0;
  for (int i = 0; i < 200; ++i) {
    const int G = 2 + int(rng.below(2));
    const int L = 2 + int(rng.below(3));
    const int E = G + int(rng.below(5));
    const auto cl = oracle::random_clustering(rng, L, E, G);
    const auto c = oracle::random_costs(rng, L, G, 50);
    const auto topo = random_topology(rng, G);
    PlacementOptions opt;
    opt.balance_slack = Count(rng.below(2));
    const std::string tag = "instance " + std::to_string(i);
    std::optional<Placement> a, b;
    std::optional<Count> ea, eb;
    try {
      a = solve_placement(c, cl, topo, opt);
    } catch (const BalanceInfeasible& e) {
      ea = e.min_slack();
    }
    try {
      b = solve_placement_exhaustive(c, cl, topo, opt);
    } catch (const BalanceInfeasible& e) {
      eb = e.min_slack();
    }
    if (a && b) {
      o.require(a->gpu_of_cluster == b->gpu_of_cluster, tag + ": permutation sequences differ");
      o.require(a->objective == b->objective, tag + ": objectives differ");
      if (opt.balance_slack == 0) {
        const auto n = experts_per_gpu(*a, G);
        for (Count x : n) o.require(x * G == Count(E) * L, tag + ": slack-0 placement unbalanced");
        ++*balanced_checked;
      }
    } else {
      o.require(!a && !b && ea == eb, tag + ": solvers disagree on feasibility");
      ++infeasible;
    }
  }
  const double secs = seconds_since(start);
  o.require(secs < 60.0, "took " + std::to_string(secs) + " s");
  if (o.pass) o.detail << "200 instances (" << infeasible << " infeasible in both) in " << secs << " s";
  return o;
}

// 4. Balance at slack 0 and loud divisibility errors.
Outcome balance(int balanced_checked, const std::vector<Scenario>& fixtures) {
  Outcome o;
  for (const auto& sc : fixtures) {
    const int G = sc.topology.num_gpus();
    for (Count x : experts_per_gpu(sc.placement, G)) {
      o.require(x * G == Count(sc.stats.num_experts) * sc.stats.num_layers, sc.name + ": unbalanced");
    }
    ++balanced_checked;
  }
  // 8 experts x 3 layers cannot split evenly over 5 GPUs.
  Rng rng(4);
  const auto cl = oracle::random_clustering(rng, 3, 8, 5);
  const auto c = oracle::random_costs(rng, 3, 5, 10);
  bool raised = false;
  try {
    solve_placement(c, cl, uniform_topology(5, 1.0));
  } catch (const BalanceInfeasible& e) {
    raised = e.min_slack() > 0;
  }
  o.require(raised, "indivisible E*L/G did not raise");
  raised = false;
  try {
    baseline_contiguous(6, 2, 4);
  } catch (const InvalidInput&) {
    raised = true;
  }
  o.require(raised, "contiguous baseline with E % G != 0 did not raise");
  test::TempDir dir("moeplace_accept_");
  emit(generate([] {
         TraceGenSpec s = fixture_spec();
         s.num_layers = 3;
         s.hot_overrides.clear();
         s.tokens = 500;
         return s;
       }()),
       dir / "t.json");
  o.require(run_cli({"pipeline", "--trace", (dir / "t.json").string(), "--gpus", "5", "--out-dir",
                     (dir / "o").string()}) == cli::kInfeasible,
            "CLI accepted an indivisible balance");
  if (o.pass) o.detail << balanced_checked << " slack-0 placements exactly balanced; 3 divisibility errors raised";
  return o;
}

// 5. The hot pair is split and the hot layer's max GPU share falls to the
// enumeration optimum.
Outcome skew_separation() {
  Outcome o;
  const auto& s = fixture_trace();
  const auto& load = s.load[14];
  const double slots = double(s.layer_tokens());
  const auto target = oracle::brute_force_partition(load, 4, 0, 1);
  o.require(!target.any_minimizer_joins, "oracle: some optimum keeps experts 0 and 1 together");

  const auto cl = solve_exact(s, 4);
  const auto pl = solve_placement(comm_costs(s, cl), cl, two_node());
  const auto base = baseline_contiguous(8, 32, 4);
  const auto r = evaluate(s, cl, pl, two_node(), kFixtureCost);
  const auto rb = evaluate(s, base.clustering, base.placement, two_node(), kFixtureCost);
  const auto& opt_share = r.gpu_token_share[14];
  const auto& base_share = rb.gpu_token_share[14];
  const double opt_max = *std::max_element(opt_share.begin(), opt_share.end());
  const double base_max = *std::max_element(base_share.begin(), base_share.end());
  o.require(cl.assign[14][0] != cl.assign[14][1], "experts 0 and 1 share a cluster");
  o.require(std::abs(base_max - 0.64) <= 0.5 / slots, "baseline max share is " + std::to_string(base_max));
  const double lo = double(target.min_of_max_load) / slots;
  const double hi = double(target.max_of_max_load) / slots;
  o.require(opt_max >= lo && opt_max <= hi, "optimized max share " + std::to_string(opt_max) +
                                                " outside oracle range [" + std::to_string(lo) + ", " +
                                                std::to_string(hi) + "]");
  if (o.pass) {
    o.detail << "layer 14 max share " << base_max << " -> " << opt_max << " (oracle " << lo;
    if (hi != lo) o.detail << ".." << hi;
    o.detail << ")";
  }
  return o;
}

// 6. The placement objective and the cost model share one pair-max.
Outcome objective_consistency(const std::vector<Scenario>& fixtures) {
  Outcome o;
  double worst = 0.0;
  auto check = [&](const std::string& name, const RoutingStats& s, const Clustering& c, const Placement& p,
                   const Topology& t) {
    const auto r = evaluate(s, c, p, t, kFixtureCost);
    double sum = 0.0;
    for (const auto& x : r.per_transition_comm) sum += x.tail;
    const double want = objective_o2(comm_costs(s, c), p, t) * kFixtureCost.bytes_per_token;
    const double rel = want == 0.0 ? std::abs(sum) : std::abs(sum - want) / want;
    worst = std::max(worst, rel);
    o.require(rel <= 1e-12, name + ": relative gap " + std::to_string(rel));
  };
  for (const auto& sc : fixtures) {
    check(sc.name, sc.stats, sc.clustering, sc.placement, sc.topology);
    if (sc.stats.num_experts % sc.topology.num_gpus() == 0) {
      const auto b = baseline_contiguous(sc.stats.num_experts, sc.stats.num_layers, sc.topology.num_gpus());
      check(sc.name + " baseline", sc.stats, b.clustering, b.placement, sc.topology);
    }
  }
  if (o.pass) o.detail << "max relative gap " << worst << " over " << fixtures.size() << " fixtures";
  return o;
}

// 7. Modeled speedup on the skewed fixture, pinned.
Outcome speedup() {
  Outcome o;
  cli::PipelineConfig cfg;
  cfg.cost = kFixtureCost;
  std::ostringstream sink;
  const auto out = cli::run_pipeline(fixture_trace(), two_node(), cfg, cli::Log(sink));
  const double s = out.comparison.speedup.value_or(0.0);
  o.require(s > 1.0, "speedup " + std::to_string(s) + " <= 1");
  o.require(std::abs(s - kPinnedSpeedup) <= 1e-9 * kPinnedSpeedup,
            "speedup " + json_io::format_double(s) + " drifted from pinned " + json_io::format_double(kPinnedSpeedup));
  o.require(out.placement.objective <= out.baseline.placement.objective * (1 + 1e-12) ||
                out.clustering != out.baseline.clustering,
            "placement objective above baseline");
  if (o.pass) {
    o.detail << "speedup " << json_io::format_double(s) << ", end_to_end "
             << json_io::format_double(out.baseline_report.end_to_end) << " s -> "
             << json_io::format_double(out.report.end_to_end) << " s";
  }
  return o;
}

// 8. Two batches of one workload route alike.
Outcome routing_invariance() {
  Outcome o;
  TraceGenSpec a = fixture_spec();
  TraceGenSpec b = a;
  b.seed = 4048;
  const auto tv = total_variation(generate(a), generate(b));
  const double worst = *std::max_element(tv.begin(), tv.end());
  o.require(worst < 0.05, "max total variation " + std::to_string(worst));
  if (o.pass) o.detail << "max per-layer total variation " << worst;
  return o;
}

void check_conservation(Outcome& o, const std::string& name, const RoutingStats& s, const Clustering& c,
                        const Placement& p, const Topology& t) {
  o.require(validate(s).empty(), name + ": trace invariants violated");
  const auto costs = comm_costs(s, c);
  const auto r = evaluate(s, c, p, t, kFixtureCost);
  const int G = t.num_gpus();
  for (std::size_t l = 0; l < costs.costs.size(); ++l) {
    Count trans = 0, cluster = 0, gpu = 0;
    for (const auto& row : s.transitions[l]) trans += std::accumulate(row.begin(), row.end(), Count{0});
    for (const auto& row : costs.costs[l]) cluster += std::accumulate(row.begin(), row.end(), Count{0});
    for (const auto& row : layer_pair_volumes(costs, p, int(l))) gpu += std::accumulate(row.begin(), row.end(), Count{0});
    o.require(trans == cluster && trans == gpu, name + ": transition mass not conserved at " + std::to_string(l));
    o.require(r.per_transition_comm[l].tail >= r.per_transition_comm[l].avg, name + ": comm tail < avg");
  }
  const auto loads = cluster_loads(s, c);
  for (std::size_t l = 0; l < loads.size(); ++l) {
    o.require(std::accumulate(loads[l].begin(), loads[l].end(), Count{0}) == s.layer_tokens(),
              name + ": cluster loads lose tokens");
    const double want = kFixtureCost.compute_time_per_token * double(s.layer_tokens());
    const double got = r.per_layer_compute[l].avg * G;
    o.require(std::abs(got - want) <= 1e-12 * std::max(want, 1e-300), name + ": compute time not conserved");
    o.require(r.per_layer_compute[l].tail >= r.per_layer_compute[l].avg, name + ": compute tail < avg");
  }
  double e2e = 0.0;
  for (const auto& x : r.per_layer_compute) e2e += kFixtureCost.fixed_overhead_per_layer + x.tail;
  for (const auto& x : r.per_transition_comm) e2e += x.tail;
  o.require(e2e == r.end_to_end, name + ": end_to_end composition");
}

// 9. Conservation on fixtures and random instances.
Outcome conservation(const std::vector<Scenario>& fixtures) {
  Outcome o;
  for (const auto& sc : fixtures) check_conservation(o, sc.name, sc.stats, sc.clustering, sc.placement, sc.topology);
  Rng rng(909);
  for (int i = 0; i < 100; ++i) {
    TraceGenSpec spec;
    spec.num_layers = 1 + int(rng.below(6));
    spec.num_experts = 2 + int(rng.below(8));
    spec.top_k = 1 + int(rng.below(std::uint64_t(std::min(spec.num_experts, 3))));
    spec.tokens = 1 + Count(rng.below(2000));
    spec.marginal_skew = 2.0 * rng.uniform();
    spec.dependency_strength = rng.uniform();
    spec.seed = rng.next();
    spec.structure_seed = rng.next();
    if (spec.num_experts >= spec.top_k + 2 && rng.below(2) == 0) {
      spec.hot_overrides.push_back({int(rng.below(std::uint64_t(spec.num_layers))), {0, 1}, 0.6});
    }
    const auto s = generate(spec);
    const int G = 1 + int(rng.below(std::uint64_t(std::min(spec.num_experts, 4))));
    const auto c = solve_clustering(s, G, ClusterMode::kAuto);
    PlacementOptions opt;
    opt.balance_slack = Count(spec.num_experts) * spec.num_layers;
    const auto p = solve_placement(comm_costs(s, c), c, uniform_topology(G, 1e9), opt);
    check_conservation(o, "random " + std::to_string(i), s, c, p, uniform_topology(G, 1e9));
  }
  if (o.pass) o.detail << fixtures.size() << " fixtures and 100 random instances";
  return o;
}

// 10. Byte-identical artifacts across runs.
Outcome determinism() {
  Outcome o;
  test::TempDir dir("moeplace_accept_");
  const auto trace = (test::kFixtures / "skewed_e8_l32.json").string();
  const auto topo = (test::kFixtures / "two_node_4gpu.json").string();
  for (const char* run : {"a", "b"}) {
    o.require(run_cli({"pipeline", "--trace", trace, "--topology", topo, "--compute-per-token", "5e-9",
                       "--layer-overhead", "1e-4", "--out-dir", (dir / run).string()}) == cli::kOk,
              "pipeline failed");
  }
  int files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir / "a")) {
    ++files;
    o.require(test::read_all(entry.path()) == test::read_all(dir / "b" / entry.path().filename()),
              entry.path().filename().string() + " differs");
  }
  o.require(files == 9, "expected 9 artifacts, found " + std::to_string(files));
  // The committed fixture regenerates byte for byte.
  emit(generate(fixture_spec()), dir / "regen.json");
  o.require(test::read_all(dir / "regen.json") == test::read_all(trace), "fixture trace does not regenerate");
  if (o.pass) o.detail << files << " artifacts identical across two runs; fixture regenerates";
  return o;
}

// Wall time of the full-size (E=8, L=32, G=4) pipeline.
Outcome runtime() {
  Outcome o;
  test::TempDir dir("moeplace_accept_");
  const auto start = std::chrono::steady_clock::now();
  const int code = run_cli({"pipeline", "--trace", (test::kFixtures / "skewed_e8_l32.json").string(), "--topology",
                            (test::kFixtures / "two_node_4gpu.json").string(), "--out-dir", dir.path().string()});
  const double secs = seconds_since(start);
  o.require(code == cli::kOk, "pipeline exit code " + std::to_string(code));
  o.require(secs < 60.0, "took " + std::to_string(secs) + " s");
  if (o.pass) o.detail << "E=8 L=32 G=4 pipeline in " << secs << " s";
  return o;
}

}  // namespace
}  // namespace moeplace

int main() {
  using namespace moeplace;
  int failures = 0;
  auto report = [&](const std::string& id, const std::string& title, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail.str("");
      o.detail << "exception: " << e.what();
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << id << " " << title << ": " << o.detail.str() << std::endl;
  };

  const auto fixtures = scenarios();
  int balanced = 0;
  report("1", "load-balancing exactness", clustering_exactness);
  report("2", "load-balancing dominance over contiguous", clustering_dominance);
  report("3", "placement oracle equivalence", [&] { return placement_equivalence(&balanced); });
  report("4", "expert balance at slack 0", [&] { return balance(balanced, fixtures); });
  report("5", "hot pair separation", skew_separation);
  report("6", "objective and cost model agree", [&] { return objective_consistency(fixtures); });
  report("7", "modeled speedup over contiguous", speedup);
  report("8", "routing invariance across batches", routing_invariance);
  report("9", "conservation", [&] { return conservation(fixtures); });
  report("10", "deterministic artifacts", determinism);
  report("11", "full-size pipeline runtime", runtime);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
