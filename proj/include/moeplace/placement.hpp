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
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "moeplace/clustering.hpp"
#include "moeplace/error.hpp"
#include "moeplace/json_io.hpp"
#include "moeplace/routing_stats.hpp"
#include "moeplace/topology.hpp"

namespace moeplace {

// costs[l][a][b]: tokens moving from cluster a at layer l to cluster b at
// layer l+1, for l in [0, L-1).
struct CommCostTensor {
  int num_clusters = 0;
  CountTensor costs;

  bool operator==(const CommCostTensor&) const = default;
};

// Per-layer cluster -> GPU bijection and the composed expert -> GPU map.
struct Placement {
  std::vector<std::vector<int>> gpu_of_cluster;
  std::vector<std::vector<int>> expert_to_gpu;
  double objective = 0.0;
  Count balance_slack = 0;

  bool operator==(const Placement&) const = default;
};

inline CommCostTensor comm_costs(const RoutingStats& stats, const Clustering& clustering) {
  detail::check_dims(stats, clustering);
  const auto g = std::size_t(clustering.num_clusters);
  CommCostTensor c;
  c.num_clusters = clustering.num_clusters;
  c.costs.assign(stats.transitions.size(), CountMatrix(g, std::vector<Count>(g, 0)));
  for (std::size_t l = 0; l < stats.transitions.size(); ++l) {
    const auto& from = clustering.assign[l];
    const auto& to = clustering.assign[l + 1];
    for (std::size_t a = 0; a < from.size(); ++a) {
      auto& row = c.costs[l][std::size_t(from[a])];
      for (std::size_t b = 0; b < to.size(); ++b) {
        row[std::size_t(to[b])] += stats.transitions[l][a][b];
      }
    }
  }
  return c;
}

// Experts hosted by each GPU, summed over layers.
inline std::vector<Count> experts_per_gpu(const Placement& p, int num_gpus) {
  std::vector<Count> n(std::size_t(num_gpus), 0);
  for (const auto& row : p.expert_to_gpu) {
    for (int g : row) ++n[std::size_t(g)];
  }
  return n;
}

// Smallest integer slack s with |count_g - E*L/G| <= s for every GPU.
inline Count required_slack(std::span<const Count> per_gpu, Count experts_total) {
  const Count g = Count(per_gpu.size());
  Count worst = 0;
  for (Count c : per_gpu) worst = std::max(worst, c * g > experts_total ? c * g - experts_total
                                                                      : experts_total - c * g);
  return (worst + g - 1) / g;
}

namespace detail {

inline bool is_permutation_row(const std::vector<int>& row, int n) {
  if (row.size() != std::size_t(n)) return false;
  std::vector<bool> seen(std::size_t(n), false);
  for (int v : row) {
    if (v < 0 || v >= n || seen[std::size_t(v)]) return false;
    seen[std::size_t(v)] = true;
  }
  return true;
}

inline void check_permutations(const Placement& p, int num_gpus) {
  for (std::size_t l = 0; l < p.gpu_of_cluster.size(); ++l) {
    if (!is_permutation_row(p.gpu_of_cluster[l], num_gpus)) {
      throw InvalidInput("gpu_of_cluster row " + std::to_string(l) + " is not a permutation of 0.." +
                         std::to_string(num_gpus - 1));
    }
  }
}

inline void check_balance(const Placement& p, int num_gpus, Count experts_total) {
  if (p.balance_slack < 0) throw InvalidInput("balance_slack must be non-negative");
  const auto n = experts_per_gpu(p, num_gpus);
  const Count need = required_slack(n, experts_total);
  if (need > p.balance_slack) {
    throw InvalidInput("placement violates the expert balance: needs slack " +
                       std::to_string(need) + ", declared " + std::to_string(p.balance_slack));
  }
}

}  // namespace detail

// Checks a placement against the clustering it was built from: permutation
// rows, composition, and balance at the declared slack.
inline void check_placement(const Placement& p, const Clustering& c) {
  check_clustering(c);
  const int g = c.num_clusters;
  if (p.gpu_of_cluster.size() != std::size_t(c.num_layers) ||
      p.expert_to_gpu.size() != std::size_t(c.num_layers)) {
    throw InvalidInput("placement has " + std::to_string(p.gpu_of_cluster.size()) +
                       " layers, clustering has " + std::to_string(c.num_layers));
  }
  detail::check_permutations(p, g);
  for (std::size_t l = 0; l < p.expert_to_gpu.size(); ++l) {
    if (p.expert_to_gpu[l].size() != std::size_t(c.num_experts)) {
      throw InvalidInput("expert_to_gpu row " + std::to_string(l) + " has wrong length");
    }
    for (std::size_t e = 0; e < p.expert_to_gpu[l].size(); ++e) {
      if (p.expert_to_gpu[l][e] != p.gpu_of_cluster[l][std::size_t(c.assign[l][e])]) {
        throw InvalidInput("expert_to_gpu[" + std::to_string(l) + "][" + std::to_string(e) +
                           "] disagrees with the cluster assignment");
      }
    }
  }
  detail::check_balance(p, g, Count(c.num_experts) * c.num_layers);
}

// Recovers the clustering implied by a placement alone: cluster c of layer l
// is the set of experts on GPU gpu_of_cluster[l][c]. Validates the placement
// on the way.
inline Clustering clustering_of(const Placement& p) {
  if (p.gpu_of_cluster.empty() || p.gpu_of_cluster.front().empty()) {
    throw InvalidInput("placement is empty");
  }
  if (p.expert_to_gpu.size() != p.gpu_of_cluster.size() || p.expert_to_gpu.front().empty()) {
    throw InvalidInput("expert_to_gpu must have one non-empty row per layer");
  }
  const int g = int(p.gpu_of_cluster.front().size());
  detail::check_permutations(p, g);
  Clustering c;
  c.num_layers = int(p.gpu_of_cluster.size());
  c.num_experts = int(p.expert_to_gpu.front().size());
  c.num_clusters = g;
  for (std::size_t l = 0; l < p.gpu_of_cluster.size(); ++l) {
    std::vector<int> cluster_on(static_cast<std::size_t>(g));
    for (int k = 0; k < g; ++k) cluster_on[std::size_t(p.gpu_of_cluster[l][std::size_t(k)])] = k;
    if (p.expert_to_gpu[l].size() != std::size_t(c.num_experts)) {
      throw InvalidInput("expert_to_gpu row " + std::to_string(l) + " has wrong length");
    }
    std::vector<int> row;
    for (int gpu : p.expert_to_gpu[l]) {
      if (gpu < 0 || gpu >= g) {
        throw InvalidInput("expert_to_gpu value " + std::to_string(gpu) + " out of range at layer " +
                           std::to_string(l));
      }
      row.push_back(cluster_on[std::size_t(gpu)]);
    }
    c.assign.push_back(std::move(row));
  }
  check_clustering(c);
  detail::check_balance(p, g, Count(c.num_experts) * c.num_layers);
  return c;
}

inline Placement compose_placement(const Clustering& c, std::vector<std::vector<int>> gpu_of_cluster,
                                   Count balance_slack) {
  Placement p;
  p.gpu_of_cluster = std::move(gpu_of_cluster);
  p.balance_slack = balance_slack;
  p.expert_to_gpu.resize(p.gpu_of_cluster.size());
  for (std::size_t l = 0; l < p.gpu_of_cluster.size(); ++l) {
    for (int k : c.assign[l]) p.expert_to_gpu[l].push_back(p.gpu_of_cluster[l][std::size_t(k)]);
  }
  return p;
}

// V[g1][g2]: tokens moving from GPU g1 at layer l to GPU g2 at layer l+1.
// The diagonal holds GPU-local traffic.
inline CountMatrix layer_pair_volumes(const CommCostTensor& c, const Placement& p, int layer) {
  const auto g = std::size_t(c.num_clusters);
  CountMatrix v(g, std::vector<Count>(g, 0));
  const auto l = std::size_t(layer);
  for (std::size_t a = 0; a < g; ++a) {
    for (std::size_t b = 0; b < g; ++b) {
      v[std::size_t(p.gpu_of_cluster[l][a])][std::size_t(p.gpu_of_cluster[l + 1][b])] +=
          c.costs[l][a][b];
    }
  }
  return v;
}

// Largest bandwidth-normalized volume over ordered remote GPU pairs. This is
// the single definition of a transition's communication tail, shared by the
// placement objective and the cost model.
inline double max_normalized_volume(const CountMatrix& volumes, const Topology& topology) {
  double worst = 0.0;
  for (std::size_t a = 0; a < volumes.size(); ++a) {
    for (std::size_t b = 0; b < volumes.size(); ++b) {
      if (a == b) continue;
      worst = std::max(worst, double(volumes[a][b]) / topology.bandwidth(int(a), int(b)));
    }
  }
  return worst;
}

// Sum over layer transitions of the per-transition communication tail.
inline double objective_o2(const CommCostTensor& c, const Placement& p, const Topology& topology) {
  double total = 0.0;
  for (std::size_t l = 0; l < c.costs.size(); ++l) {
    total += max_normalized_volume(layer_pair_volumes(c, p, int(l)), topology);
  }
  return total;
}

struct PlacementOptions {
  Count balance_slack = 0;
  // Relative optimality gap; 0 proves optimality.
  double gap = 0.0;
};

inline constexpr double kDefaultHeuristicGap = 0.025;

namespace detail {

using Fixed = unsigned __int128;

inline void check_solver_inputs(const CommCostTensor& c, const Clustering& clustering,
                                const Topology& topology, const PlacementOptions& opt) {
  check_clustering(clustering);
  const int g = clustering.num_clusters;
  if (topology.num_gpus() != g) {
    throw InvalidInput("topology has " + std::to_string(topology.num_gpus()) +
                       " GPUs but the clustering has " + std::to_string(g) + " clusters");
  }
  if (c.num_clusters != g || c.costs.size() != std::size_t(clustering.num_layers - 1)) {
    throw InvalidInput("communication costs do not match the clustering dimensions");
  }
  for (const auto& m : c.costs) {
    if (m.size() != std::size_t(g)) throw InvalidInput("communication cost matrix has wrong size");
    for (const auto& row : m) {
      if (row.size() != std::size_t(g)) throw InvalidInput("communication cost matrix has wrong size");
    }
  }
  if (opt.balance_slack < 0) throw InvalidInput("balance slack must be non-negative");
  if (!(opt.gap >= 0.0)) throw InvalidInput("optimality gap must be non-negative");
}

inline std::vector<std::vector<int>> all_permutations(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

inline std::vector<std::vector<Count>> cluster_sizes(const Clustering& c) {
  std::vector<std::vector<Count>> s(std::size_t(c.num_layers),
                                    std::vector<Count>(std::size_t(c.num_clusters), 0));
  for (std::size_t l = 0; l < s.size(); ++l) {
    for (int k : c.assign[l]) ++s[l][std::size_t(k)];
  }
  return s;
}

// Per-transition communication tails of a permutation pair, in double and on
// a common fixed-point grid. The solvers rank placements by exact integer
// sums on that grid so that ties and pruning do not depend on summation
// order; the grid is fine enough that it refines double-precision ordering.
class TransitionCost {
 public:
  TransitionCost(const CommCostTensor& c, const Topology& topology) : c_(c), topology_(topology) {
    double min_bw = std::numeric_limits<double>::infinity();
    const int g = topology.num_gpus();
    for (int a = 0; a < g; ++a) {
      for (int b = 0; b < g; ++b) {
        if (a != b) min_bw = std::min(min_bw, topology.bandwidth(a, b));
      }
    }
    double bound = 0.0;
    for (const auto& m : c.costs) {
      Count worst = 0;
      for (const auto& row : m) {
        for (Count v : row) worst = std::max(worst, v);
      }
      if (g > 1) bound += double(worst) / min_bw;
    }
    if (bound > 0.0) {
      int exp = 0;
      std::frexp(bound, &exp);
      // bound < 2^exp; keep sums below 2^124.
      scale_exp_ = 124 - exp;
    }
  }

  double tail(std::size_t layer, const std::vector<int>& from, const std::vector<int>& to) const {
    const auto& m = c_.costs[layer];
    double worst = 0.0;
    for (std::size_t a = 0; a < m.size(); ++a) {
      for (std::size_t b = 0; b < m.size(); ++b) {
        const int ga = from[a];
        const int gb = to[b];
        if (ga == gb) continue;
        worst = std::max(worst, double(m[a][b]) / topology_.bandwidth(ga, gb));
      }
    }
    return worst;
  }

  Fixed fixed(std::size_t layer, const std::vector<int>& from, const std::vector<int>& to) const {
    const double scaled = std::ldexp(tail(layer, from, to), scale_exp_);
    return Fixed(std::nearbyint(scaled));
  }

 private:
  const CommCostTensor& c_;
  const Topology& topology_;
  int scale_exp_ = 0;
};

struct StateHash {
  std::size_t operator()(const std::vector<Count>& v) const noexcept {
    std::size_t h = 1469598103934665603ull;
    for (Count x : v) h = (h ^ std::size_t(x)) * 1099511628211ull;
    return h;
  }
};

using StateSet = std::unordered_set<std::vector<Count>, StateHash>;

// Balance feasibility over GPU-anonymous states. After fixing layers 0..l
// the only thing that matters for the balance constraint is the multiset of
// per-GPU expert counts, kept as a sorted vector. good[l] holds the states
// reachable from the first l+1 layers that can still be completed within the
// slack; every layer's good set is empty iff the slack is infeasible.
class BalanceOracle {
 public:
  BalanceOracle(const std::vector<std::vector<Count>>& sizes, Count slack) {
    const std::size_t L = sizes.size();
    const std::size_t g = sizes.front().size();
    Count total = 0;
    for (const auto& s : sizes) total += std::accumulate(s.begin(), s.end(), Count{0});
    const Count G = Count(g);
    lo_ = (total + G - 1) / G - slack;
    hi_ = total / G + slack;

    std::vector<Count> min_rem(L, 0), max_rem(L, 0);
    for (std::size_t l = L - 1; l-- > 0;) {
      min_rem[l] = min_rem[l + 1] + *std::min_element(sizes[l + 1].begin(), sizes[l + 1].end());
      max_rem[l] = max_rem[l + 1] + *std::max_element(sizes[l + 1].begin(), sizes[l + 1].end());
    }
    auto plausible = [&](const std::vector<Count>& s, std::size_t l) {
      return s.front() + max_rem[l] >= lo_ && s.back() + min_rem[l] <= hi_;
    };

    std::vector<std::vector<std::vector<Count>>> arrangements(L);
    for (std::size_t l = 0; l < L; ++l) {
      auto a = sizes[l];
      std::sort(a.begin(), a.end());
      do {
        arrangements[l].push_back(a);
      } while (std::next_permutation(a.begin(), a.end()));
    }

    std::vector<StateSet> reach(L);
    {
      auto s = sizes[0];
      std::sort(s.begin(), s.end());
      if (plausible(s, 0)) reach[0].insert(s);
    }
    std::vector<Count> next(g);
    for (std::size_t l = 0; l + 1 < L; ++l) {
      for (const auto& s : reach[l]) {
        for (const auto& a : arrangements[l + 1]) {
          for (std::size_t k = 0; k < g; ++k) next[k] = s[k] + a[k];
          std::sort(next.begin(), next.end());
          if (plausible(next, l + 1)) reach[l + 1].insert(next);
        }
      }
    }

    good_.assign(L, {});
    for (const auto& s : reach[L - 1]) {
      if (s.front() >= lo_ && s.back() <= hi_) good_[L - 1].insert(s);
    }
    for (std::size_t l = L - 1; l-- > 0;) {
      for (const auto& s : reach[l]) {
        for (const auto& a : arrangements[l + 1]) {
          for (std::size_t k = 0; k < g; ++k) next[k] = s[k] + a[k];
          std::sort(next.begin(), next.end());
          if (good_[l + 1].count(next)) {
            good_[l].insert(s);
            break;
          }
        }
      }
    }
  }

  bool feasible() const { return !good_.front().empty(); }

  // `counts` are per-GPU expert counts after fixing layers 0..layer.
  bool completable(std::size_t layer, std::vector<Count> counts) const {
    std::sort(counts.begin(), counts.end());
    return good_[layer].count(counts) != 0;
  }

 private:
  Count lo_ = 0;
  Count hi_ = 0;
  std::vector<StateSet> good_;
};

// Smallest slack at which the clustering admits a balanced placement.
inline Count min_feasible_slack(const std::vector<std::vector<Count>>& sizes) {
  const std::size_t g = sizes.front().size();
  std::vector<Count> identity(g, 0);
  Count total = 0;
  for (const auto& s : sizes) {
    for (std::size_t k = 0; k < g; ++k) identity[k] += s[k];
    total += std::accumulate(s.begin(), s.end(), Count{0});
  }
  Count hi = required_slack(identity, total);
  Count lo = 0;
  while (lo < hi) {
    const Count mid = lo + (hi - lo) / 2;
    if (BalanceOracle(sizes, mid).feasible()) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  return lo;
}

[[noreturn]] inline void throw_infeasible(Count requested, Count minimum) {
  throw BalanceInfeasible("no placement balances experts across GPUs within slack " +
                              std::to_string(requested) + "; the minimum achievable slack is " +
                              std::to_string(minimum),
                          minimum);
}

inline void check_divisible(const Clustering& c, Count slack) {
  const Count total = Count(c.num_experts) * c.num_layers;
  if (slack == 0 && total % c.num_clusters != 0) {
    throw BalanceInfeasible("E*L = " + std::to_string(total) + " is not divisible by G = " +
                                std::to_string(c.num_clusters) +
                                "; exact balance is impossible, pass a positive slack",
                            min_feasible_slack(cluster_sizes(c)));
  }
}

inline constexpr int kMaxExactGpus = 6;

// Depth-first branch and bound over layers; children are visited in
// lexicographic permutation order.
class PlacementSearch {
 public:
  PlacementSearch(const CommCostTensor& c, const Clustering& clustering, const Topology& topology,
                  const PlacementOptions& opt)
      : cost_(c, topology),
        perms_(all_permutations(clustering.num_clusters)),
        sizes_(cluster_sizes(clustering)),
        balance_(sizes_, opt.balance_slack),
        layers_(std::size_t(clustering.num_layers)),
        gap_(opt.gap) {
    if (!balance_.feasible()) throw_infeasible(opt.balance_slack, min_feasible_slack(sizes_));
    build_bound();
    seen_.resize(layers_);
  }

  std::vector<std::size_t> run() {
    dive();
    std::vector<std::size_t> prefix;
    std::vector<Count> counts(sizes_.front().size(), 0);
    for (std::size_t p = 0; p < perms_.size(); ++p) {
      descend(0, p, Fixed{0}, counts, prefix);
    }
    return best_;
  }

  const std::vector<std::vector<int>>& permutations() const { return perms_; }

 private:
  // bound_[l][p]: cheapest completion from layer l under permutation p,
  // ignoring the balance constraint.
  void build_bound() {
    const std::size_t P = perms_.size();
    bound_.assign(layers_, std::vector<Fixed>(P, Fixed{0}));
    for (std::size_t l = layers_ - 1; l-- > 0;) {
      for (std::size_t p = 0; p < P; ++p) {
        Fixed best = ~Fixed{0};
        for (std::size_t q = 0; q < P; ++q) {
          const Fixed v = cost_.fixed(l, perms_[p], perms_[q]) + bound_[l + 1][q];
          best = std::min(best, v);
        }
        bound_[l][p] = best;
      }
    }
  }

  void add(std::vector<Count>& counts, std::size_t layer, std::size_t p, int sign) const {
    const auto& perm = perms_[p];
    for (std::size_t k = 0; k < perm.size(); ++k) {
      counts[std::size_t(perm[k])] += sign * sizes_[layer][k];
    }
  }

  // Greedy descent along the bound for an initial incumbent.
  void dive() {
    std::vector<Count> counts(sizes_.front().size(), 0);
    std::vector<std::size_t> seq;
    Fixed cost{0};
    for (std::size_t l = 0; l < layers_; ++l) {
      std::size_t pick = perms_.size();
      Fixed pick_score = ~Fixed{0};
      for (std::size_t q = 0; q < perms_.size(); ++q) {
        add(counts, l, q, +1);
        const bool ok = balance_.completable(l, counts);
        add(counts, l, q, -1);
        if (!ok) continue;
        const Fixed step = l == 0 ? Fixed{0} : cost_.fixed(l - 1, perms_[seq.back()], perms_[q]);
        const Fixed score = step + bound_[l][q];
        if (score < pick_score) {
          pick_score = score;
          pick = q;
        }
      }
      if (l > 0) cost += cost_.fixed(l - 1, perms_[seq.back()], perms_[pick]);
      add(counts, l, pick, +1);
      seq.push_back(pick);
    }
    best_ = std::move(seq);
    best_cost_ = cost;
  }

  bool prune(Fixed lower, int prefix_order) const {
    if (gap_ > 0.0 && (long double)lower * (1.0L + gap_) >= (long double)best_cost_) return true;
    return prefix_order > 0 ? lower >= best_cost_ : lower > best_cost_;
  }

  // -1, 0, +1 comparing prefix+next against the incumbent's prefix.
  int compare_prefix(const std::vector<std::size_t>& prefix, std::size_t next) const {
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (prefix[i] != best_[i]) return prefix[i] < best_[i] ? -1 : 1;
    }
    const std::size_t i = prefix.size();
    if (next != best_[i]) return next < best_[i] ? -1 : 1;
    return 0;
  }

  // A state already expanded with a cost no higher was reached through a
  // lexicographically smaller prefix, so it dominates this one.
  bool dominated(std::size_t layer, std::size_t p, const std::vector<Count>& counts, Fixed cost) {
    key_.assign(counts.begin(), counts.end());
    key_.push_back(Count(p));
    auto [it, inserted] = seen_[layer].try_emplace(key_, cost);
    if (inserted) return false;
    if (it->second <= cost) return true;
    it->second = cost;
    return false;
  }

  void descend(std::size_t layer, std::size_t p, Fixed cost, std::vector<Count>& counts,
               std::vector<std::size_t>& prefix) {
    if (layer > 0) cost += cost_.fixed(layer - 1, perms_[prefix.back()], perms_[p]);
    if (prune(cost + bound_[layer][p], compare_prefix(prefix, p))) return;
    add(counts, layer, p, +1);
    if (balance_.completable(layer, counts) && !dominated(layer, p, counts, cost)) {
      prefix.push_back(p);
      if (layer + 1 == layers_) {
        if (cost < best_cost_ || (cost == best_cost_ && prefix < best_)) {
          best_cost_ = cost;
          best_ = prefix;
        }
      } else {
        for (std::size_t q = 0; q < perms_.size(); ++q) descend(layer + 1, q, cost, counts, prefix);
      }
      prefix.pop_back();
    }
    add(counts, layer, p, -1);
  }

  TransitionCost cost_;
  std::vector<std::vector<int>> perms_;
  std::vector<std::vector<Count>> sizes_;
  BalanceOracle balance_;
  std::size_t layers_;
  double gap_;
  std::vector<std::vector<Fixed>> bound_;
  std::vector<std::size_t> best_;
  Fixed best_cost_{0};
  std::vector<std::unordered_map<std::vector<Count>, Fixed, StateHash>> seen_;
  std::vector<Count> key_;
};

}  // namespace detail

// Optimal cluster -> GPU assignment for every layer, minimizing the summed
// per-transition communication tail subject to per-GPU expert balance within
// options.balance_slack. Among optimal placements, the lexicographically
// smallest sequence of gpu_of_cluster rows is returned.
//
// Throws BalanceInfeasible when no placement meets the slack (including E*L
// not divisible by G at slack 0).
inline Placement solve_placement(const CommCostTensor& c, const Clustering& clustering,
                                 const Topology& topology, const PlacementOptions& options = {}) {
  detail::check_solver_inputs(c, clustering, topology, options);
  if (clustering.num_clusters > detail::kMaxExactGpus) {
    throw InvalidInput("exact placement supports at most " + std::to_string(detail::kMaxExactGpus) +
                       " GPUs, got " + std::to_string(clustering.num_clusters));
  }
  detail::check_divisible(clustering, options.balance_slack);
  detail::PlacementSearch search(c, clustering, topology, options);
  const auto seq = search.run();
  std::vector<std::vector<int>> rows;
  for (std::size_t p : seq) rows.push_back(search.permutations()[p]);
  Placement placement = compose_placement(clustering, std::move(rows), options.balance_slack);
  placement.objective = objective_o2(c, placement, topology);
  return placement;
}

inline constexpr double kExhaustiveLimit = 1e7;

// Reference solver: enumerates every permutation sequence. Intended as a test
// oracle for solve_placement; shares only the objective definition with it.
inline Placement solve_placement_exhaustive(const CommCostTensor& c, const Clustering& clustering,
                                            const Topology& topology,
                                            const PlacementOptions& options = {}) {
  detail::check_solver_inputs(c, clustering, topology, options);
  const auto perms = detail::all_permutations(clustering.num_clusters);
  const std::size_t L = std::size_t(clustering.num_layers);
  if (std::pow(double(perms.size()), double(L)) > kExhaustiveLimit) {
    throw InvalidInput("exhaustive placement limited to (G!)^L <= 1e7 sequences");
  }
  detail::check_divisible(clustering, options.balance_slack);
  const auto sizes = detail::cluster_sizes(clustering);
  const detail::TransitionCost cost(c, topology);
  const Count total = Count(clustering.num_experts) * clustering.num_layers;
  const auto g = std::size_t(clustering.num_clusters);

  std::vector<std::size_t> seq(L, 0), best;
  detail::Fixed best_cost = ~detail::Fixed{0};
  Count least_slack = std::numeric_limits<Count>::max();
  std::vector<Count> counts(g);
  while (true) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t k = 0; k < g; ++k) counts[std::size_t(perms[seq[l]][k])] += sizes[l][k];
    }
    const Count slack = required_slack(counts, total);
    least_slack = std::min(least_slack, slack);
    if (slack <= options.balance_slack) {
      detail::Fixed v{0};
      for (std::size_t l = 0; l + 1 < L; ++l) v += cost.fixed(l, perms[seq[l]], perms[seq[l + 1]]);
      if (v < best_cost) {
        best_cost = v;
        best = seq;
      }
    }
    std::size_t d = L;
    while (d > 0 && ++seq[d - 1] == perms.size()) seq[--d] = 0;
    if (d == 0) break;
  }
  if (best.empty()) detail::throw_infeasible(options.balance_slack, least_slack);
  std::vector<std::vector<int>> rows;
  for (std::size_t p : best) rows.push_back(perms[p]);
  Placement placement = compose_placement(clustering, std::move(rows), options.balance_slack);
  placement.objective = objective_o2(c, placement, topology);
  return placement;
}

// Contiguous-block baseline: experts [c*E/G, (c+1)*E/G) form cluster c, which
// lives on GPU c on every layer.
struct Baseline {
  Clustering clustering;
  Placement placement;
};

inline Baseline baseline_contiguous(int num_experts, int num_layers, int num_gpus) {
  Baseline b;
  b.clustering = contiguous_clustering(num_experts, num_layers, num_gpus);
  std::vector<int> identity(static_cast<std::size_t>(num_gpus));
  std::iota(identity.begin(), identity.end(), 0);
  b.placement = compose_placement(
      b.clustering, std::vector<std::vector<int>>(std::size_t(num_layers), identity), 0);
  return b;
}

inline Json to_json(const Placement& p) {
  Json j;
  j["balance_slack"] = p.balance_slack;
  j["objective"] = p.objective;
  j["gpu_of_cluster"] = p.gpu_of_cluster;
  j["expert_to_gpu"] = p.expert_to_gpu;
  return j;
}

// Structural parse only; callers validate against a clustering with
// check_placement or derive one with clustering_of.
inline Placement placement_from_json(const Json& j) {
  using namespace json_io;
  Placement p;
  p.balance_slack = count(field(j, "balance_slack"), "balance_slack");
  p.objective = number(field(j, "objective"), "objective");
  auto read_rows = [&](const char* name) {
    const auto& arr = field(j, name);
    if (!arr.is_array()) throw InvalidInput(std::string(name) + " must be an array");
    std::vector<std::vector<int>> rows;
    for (std::size_t l = 0; l < arr.size(); ++l) {
      const auto where = index(name, l);
      if (!arr[l].is_array()) throw InvalidInput(where + " must be an array");
      std::vector<int> row;
      for (std::size_t i = 0; i < arr[l].size(); ++i) {
        row.push_back(int(count(arr[l][i], index(where, i))));
      }
      rows.push_back(std::move(row));
    }
    return rows;
  };
  p.gpu_of_cluster = read_rows("gpu_of_cluster");
  p.expert_to_gpu = read_rows("expert_to_gpu");
  return p;
}

inline Placement load_placement(const std::filesystem::path& path) {
  const Json doc = json_io::read_file(path);
  try {
    return placement_from_json(doc);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline void emit(const Placement& p, const std::filesystem::path& path) {
  json_io::write_file(path, to_json(p));
}

}  // namespace moeplace
