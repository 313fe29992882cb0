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
// Builds a trace whose layer 14 sends 64% of its tokens to experts 0 and 1,
// then shows how the contiguous and optimized placements spread that layer.
#include <iostream>

#include "moeplace/moeplace.hpp"

int main() {
  using namespace moeplace;
  TraceGenSpec spec;
  spec.num_layers = 32;
  spec.num_experts = 8;
  spec.top_k = 2;
  spec.tokens = 20000;
  spec.marginal_skew = 0.8;
  spec.dependency_strength = 0.6;
  spec.hot_overrides = {{14, {0, 1}, 0.64}};
  spec.seed = 1;
  const RoutingStats stats = generate(spec);

  const Topology topology = hierarchical_topology(2, 2, 900e9, 50e9);
  const Clustering clustering = solve_exact(stats, 4);
  const Placement placement = solve_placement(comm_costs(stats, clustering), clustering, topology);
  const Baseline baseline = baseline_contiguous(8, 32, 4);

  const CostParams params;
  const CostReport opt = evaluate(stats, clustering, placement, topology, params);
  const CostReport base =
      evaluate(stats, baseline.clustering, baseline.placement, topology, params);

  std::cout << "layer 14 GPU token shares\n";
  for (int g = 0; g < 4; ++g) {
    std::cout << "  gpu " << g << ": baseline " << base.gpu_token_share[14][std::size_t(g)]
              << ", optimized " << opt.gpu_token_share[14][std::size_t(g)] << "\n";
  }
  const auto summary = compare(base, opt);
  std::cout << "modeled speedup: " << summary.speedup.value_or(0.0) << "\n";
  return 0;
}
