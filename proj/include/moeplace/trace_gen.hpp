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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "moeplace/error.hpp"
#include "moeplace/json_io.hpp"
#include "moeplace/rng.hpp"
#include "moeplace/routing_stats.hpp"

namespace moeplace {

// Forces `mass_fraction` of the layer's top_k * tokens routing slots onto
// `experts`. The share is met exactly (up to rounding of the slot count).
struct HotOverride {
  int layer = 0;
  std::vector<int> experts;
  double mass_fraction = 0.0;
};

// Parameters of the synthetic routing workload.
//
// The workload *structure* (which experts are popular on each layer and each
// expert's preferred successor) is drawn from structure_seed; the sampled
// tokens are drawn from seed. Two traces with the same structure_seed and
// different seeds are two batches of the same task.
struct TraceGenSpec {
  int num_layers = 1;
  int num_experts = 1;
  int top_k = 1;
  Count tokens = 0;
  double marginal_skew = 0.0;
  double dependency_strength = 0.0;
  std::vector<HotOverride> hot_overrides;
  std::uint64_t seed = 0;
  std::uint64_t structure_seed = 0;
};

inline void check_spec(const TraceGenSpec& spec) {
  if (spec.num_layers < 1 || spec.num_experts < 1 || spec.top_k < 1) {
    throw InvalidInput("layers, experts and top_k must all be >= 1");
  }
  if (spec.top_k > spec.num_experts) {
    throw InvalidInput("top_k (" + std::to_string(spec.top_k) + ") exceeds the number of experts (" +
                       std::to_string(spec.num_experts) + ")");
  }
  if (spec.tokens < 1) throw InvalidInput("tokens must be >= 1");
  if (!(spec.marginal_skew >= 0.0) || !std::isfinite(spec.marginal_skew)) {
    throw InvalidInput("marginal_skew must be a finite non-negative number");
  }
  if (!(spec.dependency_strength >= 0.0 && spec.dependency_strength <= 1.0)) {
    throw InvalidInput("dependency_strength must lie in [0, 1]");
  }
  std::set<int> seen_layers;
  for (const auto& h : spec.hot_overrides) {
    const std::string where = "hot override on layer " + std::to_string(h.layer);
    if (h.layer < 0 || h.layer >= spec.num_layers) throw InvalidInput(where + ": layer out of range");
    if (!seen_layers.insert(h.layer).second) throw InvalidInput(where + ": duplicate layer");
    if (h.experts.empty()) throw InvalidInput(where + ": empty expert set");
    std::set<int> uniq(h.experts.begin(), h.experts.end());
    if (uniq.size() != h.experts.size()) throw InvalidInput(where + ": repeated expert");
    if (*uniq.begin() < 0 || *uniq.rbegin() >= spec.num_experts) {
      throw InvalidInput(where + ": expert index out of range");
    }
    if (!(h.mass_fraction > 0.0 && h.mass_fraction <= 1.0)) {
      throw InvalidInput(where + ": mass_fraction must lie in (0, 1]");
    }
    const Count hot = Count(h.experts.size());
    const Count k = spec.top_k;
    const Count lo = std::max<Count>(0, k - (spec.num_experts - hot));
    const Count hi = std::min<Count>(k, hot);
    const Count slots = Count(std::llround(h.mass_fraction * double(k * spec.tokens)));
    if (slots < lo * spec.tokens || slots > hi * spec.tokens) {
      throw InvalidInput(where + ": share " + json_io::format_double(h.mass_fraction) +
                         " is unreachable with top_k=" + std::to_string(k) + " over " +
                         std::to_string(hot) + " experts");
    }
  }
}

namespace detail {

// Draws `count` distinct entries of `candidates` with probability
// proportional to weight, appending them to `out`. Zero total weight falls
// back to uniform over what remains.
inline void draw_without_replacement(std::vector<int> candidates, const std::vector<double>& weight,
                                     int count, Rng& rng, std::vector<int>& out) {
  for (int n = 0; n < count; ++n) {
    double total = 0.0;
    for (int e : candidates) total += weight[std::size_t(e)];
    std::size_t pick = candidates.size() - 1;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double w = weight[std::size_t(candidates[i])];
        if (w <= 0.0) continue;
        pick = i;
        if (u < w) break;
        u -= w;
      }
    } else {
      pick = std::size_t(rng.below(candidates.size()));
    }
    out.push_back(candidates[pick]);
    candidates.erase(candidates.begin() + std::ptrdiff_t(pick));
  }
}

inline std::string describe_overrides(const std::vector<HotOverride>& hot) {
  std::string s;
  for (const auto& h : hot) {
    if (!s.empty()) s += ";";
    s += std::to_string(h.layer) + ":";
    for (std::size_t i = 0; i < h.experts.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(h.experts[i]);
    }
    s += ":" + json_io::format_double(h.mass_fraction);
  }
  return s;
}

}  // namespace detail

// Simulates spec.tokens tokens through an L-layer Markov routing process and
// returns the aggregated statistics. Deterministic in (spec, seeds).
//
// Layer marginals are Zipf(marginal_skew) over a per-layer permutation of the
// experts. The expert set at layer l+1 is drawn from
//   (1 - d) * marginal[l+1] + d * (share of the previous set whose preferred
//   successor is e)
// with d = dependency_strength; preferred successors form a permutation per
// layer transition.
inline RoutingStats generate(const TraceGenSpec& spec) {
  check_spec(spec);
  const int L = spec.num_layers;
  const int E = spec.num_experts;
  const int k = spec.top_k;
  const auto Ez = std::size_t(E);

  Rng structure(spec.structure_seed);
  std::vector<std::vector<double>> marginal(static_cast<std::size_t>(L), std::vector<double>(Ez));
  std::vector<std::vector<int>> successor(std::size_t(L > 1 ? L - 1 : 0), std::vector<int>(Ez));
  for (auto& m : marginal) {
    std::vector<int> order(Ez);
    std::iota(order.begin(), order.end(), 0);
    structure.shuffle(std::span<int>(order));
    double total = 0.0;
    for (std::size_t rank = 0; rank < Ez; ++rank) {
      const double w = std::pow(double(rank + 1), -spec.marginal_skew);
      m[std::size_t(order[rank])] = w;
      total += w;
    }
    for (double& w : m) w /= total;
  }
  for (auto& succ : successor) {
    std::iota(succ.begin(), succ.end(), 0);
    structure.shuffle(std::span<int>(succ));
  }

  Rng rng(spec.seed);
  // Per-token number of hot slots for each overridden layer.
  std::vector<const HotOverride*> hot_at(std::size_t(L), nullptr);
  std::vector<std::vector<std::int8_t>> hot_quota(static_cast<std::size_t>(L));
  for (const auto& h : spec.hot_overrides) {
    hot_at[std::size_t(h.layer)] = &h;
    const Count slots = Count(std::llround(h.mass_fraction * double(Count(k) * spec.tokens)));
    const Count base = slots / spec.tokens;
    const Count extra = slots % spec.tokens;
    auto& quota = hot_quota[std::size_t(h.layer)];
    quota.assign(std::size_t(spec.tokens), std::int8_t(base));
    for (Count t = 0; t < extra; ++t) quota[std::size_t(t)] = std::int8_t(base + 1);
    rng.shuffle(std::span<std::int8_t>(quota));
  }
  std::vector<std::vector<int>> hot_set(static_cast<std::size_t>(L)), cold_set(static_cast<std::size_t>(L));
  for (std::size_t l = 0; l < std::size_t(L); ++l) {
    if (!hot_at[l]) continue;
    std::vector<bool> is_hot(Ez, false);
    for (int e : hot_at[l]->experts) is_hot[std::size_t(e)] = true;
    for (int e = 0; e < E; ++e) (is_hot[std::size_t(e)] ? hot_set[l] : cold_set[l]).push_back(e);
  }

  RoutingStats stats = RoutingStats::zeros(L, E, k);
  stats.tokens_total = spec.tokens;
  std::vector<int> all(Ez);
  std::iota(all.begin(), all.end(), 0);
  std::vector<double> weight(Ez);
  std::vector<int> prev, cur;
  prev.reserve(Ez);
  cur.reserve(Ez);
  const double d = spec.dependency_strength;

  for (Count t = 0; t < spec.tokens; ++t) {
    prev.clear();
    for (std::size_t l = 0; l < std::size_t(L); ++l) {
      if (l == 0) {
        weight = marginal[0];
      } else {
        for (std::size_t e = 0; e < Ez; ++e) weight[e] = (1.0 - d) * marginal[l][e];
        for (int p : prev) weight[std::size_t(successor[l - 1][std::size_t(p)])] += d / k;
      }
      cur.clear();
      if (hot_at[l]) {
        const int hot = hot_quota[l][std::size_t(t)];
        detail::draw_without_replacement(hot_set[l], weight, hot, rng, cur);
        detail::draw_without_replacement(cold_set[l], weight, k - hot, rng, cur);
      } else {
        detail::draw_without_replacement(all, weight, k, rng, cur);
      }
      for (int e : cur) ++stats.load[l][std::size_t(e)];
      if (l > 0) {
        auto& tr = stats.transitions[l - 1];
        for (int a : prev) {
          for (int b : cur) ++tr[std::size_t(a)][std::size_t(b)];
        }
      }
      std::swap(prev, cur);
    }
  }

  stats.meta["generator"] = "markov-zipf";
  stats.meta["seed"] = std::to_string(spec.seed);
  stats.meta["structure_seed"] = std::to_string(spec.structure_seed);
  stats.meta["marginal_skew"] = json_io::format_double(spec.marginal_skew);
  stats.meta["dependency_strength"] = json_io::format_double(spec.dependency_strength);
  if (!spec.hot_overrides.empty()) {
    stats.meta["hot_overrides"] = detail::describe_overrides(spec.hot_overrides);
  }
  return stats;
}

}  // namespace moeplace
