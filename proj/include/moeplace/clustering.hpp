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
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "moeplace/error.hpp"
#include "moeplace/json_io.hpp"
#include "moeplace/routing_stats.hpp"

namespace moeplace {

// Per-layer partition of the experts into num_clusters labeled, non-empty
// clusters. assign[l][e] is the cluster of expert e at layer l.
struct Clustering {
  int num_layers = 0;
  int num_experts = 0;
  int num_clusters = 0;
  std::vector<std::vector<int>> assign;
  // Total absolute deviation of cluster loads from the per-layer mean.
  double objective = 0.0;

  bool operator==(const Clustering&) const = default;
};

// Throws InvalidInput unless every expert has a cluster in [0, G) and every
// cluster is non-empty on every layer.
inline void check_clustering(const Clustering& c) {
  if (c.num_layers < 1 || c.num_experts < 1 || c.num_clusters < 1) {
    throw InvalidInput("clustering dimensions must be >= 1");
  }
  if (c.num_clusters > c.num_experts) {
    throw InvalidInput("clustering has more clusters (" + std::to_string(c.num_clusters) +
                       ") than experts (" + std::to_string(c.num_experts) + ")");
  }
  if (c.assign.size() != std::size_t(c.num_layers)) {
    throw InvalidInput("clustering assign must have one row per layer");
  }
  for (std::size_t l = 0; l < c.assign.size(); ++l) {
    const auto& row = c.assign[l];
    if (row.size() != std::size_t(c.num_experts)) {
      throw InvalidInput("clustering assign row " + std::to_string(l) + " has wrong length");
    }
    std::vector<int> size(std::size_t(c.num_clusters), 0);
    for (int id : row) {
      if (id < 0 || id >= c.num_clusters) {
        throw InvalidInput("cluster id " + std::to_string(id) + " out of range at layer " +
                           std::to_string(l));
      }
      ++size[std::size_t(id)];
    }
    for (std::size_t k = 0; k < size.size(); ++k) {
      if (size[k] == 0) {
        throw InvalidInput("cluster " + std::to_string(k) + " is empty at layer " +
                           std::to_string(l));
      }
    }
  }
}

namespace detail {

inline void check_dims(const RoutingStats& stats, const Clustering& c) {
  if (stats.num_layers != c.num_layers || stats.num_experts != c.num_experts) {
    throw InvalidInput("clustering is " + std::to_string(c.num_layers) + "x" +
                       std::to_string(c.num_experts) + " but the trace is " +
                       std::to_string(stats.num_layers) + "x" + std::to_string(stats.num_experts));
  }
}

// G * (sum of |T_c - mean|) for one layer, exact in integers.
inline Count scaled_deviation(std::span<const Count> cluster_load, Count layer_total) {
  const Count g = Count(cluster_load.size());
  Count dev = 0;
  for (Count t : cluster_load) {
    const Count d = g * t - layer_total;
    dev += d < 0 ? -d : d;
  }
  return dev;
}

}  // namespace detail

// Token load of each cluster: result[l][c] = sum of load[l][e] over e in c.
inline CountMatrix cluster_loads(const RoutingStats& stats, const Clustering& c) {
  detail::check_dims(stats, c);
  CountMatrix t(std::size_t(c.num_layers), std::vector<Count>(std::size_t(c.num_clusters), 0));
  for (std::size_t l = 0; l < t.size(); ++l) {
    for (std::size_t e = 0; e < std::size_t(c.num_experts); ++e) {
      t[l][std::size_t(c.assign[l][e])] += stats.load[l][e];
    }
  }
  return t;
}

inline double mean_load(const RoutingStats& stats, int layer, int num_clusters) {
  const auto& row = stats.load.at(std::size_t(layer));
  return double(std::accumulate(row.begin(), row.end(), Count{0})) / double(num_clusters);
}

inline Count layer_total(const RoutingStats& stats, std::size_t layer) {
  const auto& row = stats.load[layer];
  return std::accumulate(row.begin(), row.end(), Count{0});
}

// Sum over layers and clusters of |T[l][c] - mean_load(l)|.
inline double objective_o1(const RoutingStats& stats, const Clustering& c) {
  const auto t = cluster_loads(stats, c);
  double total = 0.0;
  for (std::size_t l = 0; l < t.size(); ++l) {
    total += double(detail::scaled_deviation(t[l], layer_total(stats, l))) / double(c.num_clusters);
  }
  return total;
}

// Relabels one layer's assignment so that clusters are numbered in order of
// their smallest expert index (restricted-growth form).
inline std::vector<int> canonical_labels(std::span<const int> row, int num_clusters) {
  std::vector<int> relabel(std::size_t(num_clusters), -1);
  std::vector<int> out(row.size());
  int next = 0;
  for (std::size_t e = 0; e < row.size(); ++e) {
    auto& id = relabel[std::size_t(row[e])];
    if (id < 0) id = next++;
    out[e] = id;
  }
  return out;
}

// Stirling number of the second kind S(n, k), saturating at UINT64_MAX.
inline std::uint64_t partition_count(int n, int k) {
  if (n < 0 || k < 0) return 0;
  std::vector<std::uint64_t> row(std::size_t(k) + 1, 0);
  row[0] = 1;
  for (int i = 1; i <= n; ++i) {
    for (int j = std::min(i, k); j >= 1; --j) {
      const std::uint64_t a = row[std::size_t(j)];
      const std::uint64_t b = row[std::size_t(j - 1)];
      std::uint64_t prod = 0;
      if (a != 0 && std::uint64_t(j) > UINT64_MAX / a) {
        prod = UINT64_MAX;
      } else {
        prod = std::uint64_t(j) * a;
      }
      row[std::size_t(j)] = prod > UINT64_MAX - b ? UINT64_MAX : prod + b;
    }
    row[0] = 0;
  }
  return row[std::size_t(k)];
}

inline constexpr std::uint64_t kDefaultPartitionLimit = 1'000'000;

namespace detail {

// Enumerates the restricted-growth strings of one layer in lexicographic
// order, keeping the first string of minimum deviation.
class ExactLayerSearch {
 public:
  ExactLayerSearch(std::span<const Count> load, int num_clusters)
      : load_(load),
        clusters_(num_clusters),
        total_(std::accumulate(load.begin(), load.end(), Count{0})),
        current_(load.size(), 0),
        block_load_(std::size_t(num_clusters), 0) {}

  std::vector<int> run() {
    recurse(0, 0);
    return best_;
  }

  Count best_deviation() const { return best_dev_; }

 private:
  void recurse(std::size_t i, int used) {
    const int n = int(load_.size());
    if (i == load_.size()) {
      if (used != clusters_) return;
      const Count dev = scaled_deviation(block_load_, total_);
      if (dev < best_dev_) {
        best_dev_ = dev;
        best_ = current_;
      }
      return;
    }
    const int remaining_after = n - int(i) - 1;
    if (remaining_after >= clusters_ - used) {
      for (int b = 0; b < used; ++b) place(i, b, used);
    }
    if (used < clusters_ && remaining_after >= clusters_ - used - 1) place(i, used, used + 1);
  }

  void place(std::size_t i, int block, int used) {
    current_[i] = block;
    block_load_[std::size_t(block)] += load_[i];
    recurse(i + 1, used);
    block_load_[std::size_t(block)] -= load_[i];
  }

  std::span<const Count> load_;
  int clusters_;
  Count total_;
  std::vector<int> current_;
  std::vector<Count> block_load_;
  std::vector<int> best_;
  Count best_dev_ = std::numeric_limits<Count>::max();
};

inline void check_cluster_count(const RoutingStats& stats, int num_clusters) {
  if (num_clusters < 1) throw InvalidInput("number of clusters must be >= 1");
  if (num_clusters > stats.num_experts) {
    throw InvalidInput("cannot form " + std::to_string(num_clusters) +
                       " non-empty clusters from " + std::to_string(stats.num_experts) +
                       " experts");
  }
}

inline Clustering empty_clustering(const RoutingStats& stats, int num_clusters) {
  Clustering c;
  c.num_layers = stats.num_layers;
  c.num_experts = stats.num_experts;
  c.num_clusters = num_clusters;
  c.assign.resize(std::size_t(stats.num_layers));
  return c;
}

}  // namespace detail

// Optimal clustering by exhaustive enumeration of set partitions, layer by
// layer. Among optimal partitions the lexicographically smallest canonical
// assignment wins.
inline Clustering solve_exact(const RoutingStats& stats, int num_clusters,
                              std::uint64_t partition_limit = kDefaultPartitionLimit) {
  detail::check_cluster_count(stats, num_clusters);
  const auto partitions = partition_count(stats.num_experts, num_clusters);
  if (partitions > partition_limit) {
    throw EnumerationLimit("exact clustering would enumerate " + std::to_string(partitions) +
                           " partitions per layer (limit " + std::to_string(partition_limit) +
                           "); use the heuristic solver");
  }
  Clustering c = detail::empty_clustering(stats, num_clusters);
  Count scaled_total = 0;
  for (std::size_t l = 0; l < std::size_t(stats.num_layers); ++l) {
    detail::ExactLayerSearch search(stats.load[l], num_clusters);
    c.assign[l] = search.run();
    scaled_total += search.best_deviation();
  }
  c.objective = double(scaled_total) / double(num_clusters);
  return c;
}

namespace detail {

// Longest-processing-time seeding followed by single-move / pairwise-swap
// descent on the scaled deviation.
inline std::vector<int> heuristic_layer(std::span<const Count> load, int num_clusters) {
  const std::size_t n = load.size();
  const auto g = std::size_t(num_clusters);
  const Count total = std::accumulate(load.begin(), load.end(), Count{0});
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return load[a] > load[b]; });

  std::vector<int> assign(n, 0);
  std::vector<Count> t(g, 0);
  std::vector<int> size(g, 0);
  for (std::size_t e : order) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < g; ++c) {
      if (t[c] < t[best] || (t[c] == t[best] && size[c] < size[best])) best = c;
    }
    assign[e] = int(best);
    t[best] += load[e];
    ++size[best];
  }

  const Count G = Count(g);
  auto term = [&](Count x) {
    const Count d = G * x - total;
    return d < 0 ? -d : d;
  };
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t e = 0; e < n && !improved; ++e) {
      const auto a = std::size_t(assign[e]);
      if (size[a] == 1) continue;
      for (std::size_t b = 0; b < g; ++b) {
        if (b == a) continue;
        const Count before = term(t[a]) + term(t[b]);
        const Count after = term(t[a] - load[e]) + term(t[b] + load[e]);
        if (after < before) {
          t[a] -= load[e];
          t[b] += load[e];
          --size[a];
          ++size[b];
          assign[e] = int(b);
          improved = true;
          break;
        }
      }
    }
    for (std::size_t e = 0; e < n && !improved; ++e) {
      for (std::size_t f = e + 1; f < n; ++f) {
        const auto a = std::size_t(assign[e]);
        const auto b = std::size_t(assign[f]);
        if (a == b || load[e] == load[f]) continue;
        const Count delta = load[f] - load[e];
        const Count before = term(t[a]) + term(t[b]);
        const Count after = term(t[a] + delta) + term(t[b] - delta);
        if (after < before) {
          t[a] += delta;
          t[b] -= delta;
          std::swap(assign[e], assign[f]);
          improved = true;
          break;
        }
      }
    }
  }
  return canonical_labels(assign, num_clusters);
}

}  // namespace detail

// Scalable clustering for instances beyond the enumeration budget. Not
// guaranteed optimal; always satisfies the non-empty cluster constraint.
inline Clustering solve_heuristic(const RoutingStats& stats, int num_clusters) {
  detail::check_cluster_count(stats, num_clusters);
  Clustering c = detail::empty_clustering(stats, num_clusters);
  for (std::size_t l = 0; l < std::size_t(stats.num_layers); ++l) {
    c.assign[l] = detail::heuristic_layer(stats.load[l], num_clusters);
  }
  c.objective = objective_o1(stats, c);
  return c;
}

enum class ClusterMode { kAuto, kExact, kHeuristic };

// kAuto picks exact enumeration when the per-layer partition count is within
// partition_limit, else the heuristic.
inline Clustering solve_clustering(const RoutingStats& stats, int num_clusters, ClusterMode mode,
                                   std::uint64_t partition_limit = kDefaultPartitionLimit) {
  switch (mode) {
    case ClusterMode::kExact:
      return solve_exact(stats, num_clusters, partition_limit);
    case ClusterMode::kHeuristic:
      return solve_heuristic(stats, num_clusters);
    case ClusterMode::kAuto:
      break;
  }
  detail::check_cluster_count(stats, num_clusters);
  if (partition_count(stats.num_experts, num_clusters) <= partition_limit) {
    return solve_exact(stats, num_clusters, partition_limit);
  }
  return solve_heuristic(stats, num_clusters);
}

// Experts split into index-contiguous blocks of E/G, identical on every
// layer. The objective is left at 0 until scored against a trace.
inline Clustering contiguous_clustering(int num_experts, int num_layers, int num_clusters) {
  if (num_experts < 1 || num_layers < 1 || num_clusters < 1) {
    throw InvalidInput("contiguous baseline dimensions must be >= 1");
  }
  if (num_experts % num_clusters != 0) {
    throw InvalidInput("contiguous baseline needs the expert count (" +
                       std::to_string(num_experts) + ") divisible by the GPU count (" +
                       std::to_string(num_clusters) + ")");
  }
  Clustering c;
  c.num_layers = num_layers;
  c.num_experts = num_experts;
  c.num_clusters = num_clusters;
  const int block = num_experts / num_clusters;
  std::vector<int> row(static_cast<std::size_t>(num_experts));
  for (int e = 0; e < num_experts; ++e) row[std::size_t(e)] = e / block;
  c.assign.assign(std::size_t(num_layers), row);
  return c;
}

inline Json to_json(const Clustering& c) {
  Json j;
  j["num_clusters"] = c.num_clusters;
  j["assign"] = c.assign;
  j["objective"] = c.objective;
  return j;
}

inline Clustering clustering_from_json(const Json& j) {
  using namespace json_io;
  Clustering c;
  c.num_clusters = int(count(field(j, "num_clusters"), "num_clusters"));
  const auto& assign = field(j, "assign");
  if (!assign.is_array() || assign.empty()) throw InvalidInput("assign must be a non-empty array");
  c.num_layers = int(assign.size());
  for (std::size_t l = 0; l < assign.size(); ++l) {
    const auto name = index("assign", l);
    if (!assign[l].is_array()) throw InvalidInput(name + " must be an array");
    std::vector<int> row;
    for (std::size_t e = 0; e < assign[l].size(); ++e) {
      row.push_back(int(count(assign[l][e], index(name, e))));
    }
    c.assign.push_back(std::move(row));
  }
  c.num_experts = int(c.assign.front().size());
  c.objective = number(field(j, "objective"), "objective");
  check_clustering(c);
  return c;
}

inline Clustering load_clustering(const std::filesystem::path& path) {
  const Json doc = json_io::read_file(path);
  try {
    return clustering_from_json(doc);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline void emit(const Clustering& c, const std::filesystem::path& path) {
  json_io::write_file(path, to_json(c));
}

}  // namespace moeplace
