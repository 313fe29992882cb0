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
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "moeplace/clustering.hpp"
#include "moeplace/error.hpp"
#include "moeplace/json_io.hpp"
#include "moeplace/placement.hpp"
#include "moeplace/routing_stats.hpp"
#include "moeplace/topology.hpp"

namespace moeplace {

// Linear timing model. Expert compute is uniform per token; dispatch volume
// is converted to bytes with a fixed per-token payload.
struct CostParams {
  double compute_time_per_token = 1e-9;
  double bytes_per_token = 8192.0;
  double fixed_overhead_per_layer = 0.0;
};

inline void check_params(const CostParams& p) {
  auto ok = [](double v) { return v >= 0.0 && std::isfinite(v); };
  if (!ok(p.compute_time_per_token) || !ok(p.bytes_per_token) || !ok(p.fixed_overhead_per_layer)) {
    throw InvalidInput("cost parameters must be finite and non-negative");
  }
}

struct TailAvg {
  double tail = 0.0;
  double avg = 0.0;
  bool operator==(const TailAvg&) const = default;
};

struct VolumeSummary {
  Count max = 0;
  double mean = 0.0;
  bool operator==(const VolumeSummary&) const = default;
};

struct CostReport {
  std::vector<TailAvg> per_layer_compute;
  std::vector<TailAvg> per_transition_comm;
  double end_to_end = 0.0;
  std::vector<std::vector<double>> gpu_token_share;
  std::vector<VolumeSummary> pair_volume_summary;

  bool operator==(const CostReport&) const = default;
};

// Modeled per-layer compute and per-transition all-to-all times for a
// placement. Tail is the slowest GPU (compute) or GPU pair (communication);
// averages run over GPUs and over ordered remote pairs. Phases compose
// serially:
//   end_to_end = sum_l (overhead + compute tail) + sum_t (comm tail).
inline CostReport evaluate(const RoutingStats& stats, const Clustering& clustering,
                           const Placement& placement, const Topology& topology,
                           const CostParams& params) {
  check_params(params);
  detail::check_dims(stats, clustering);
  if (topology.num_gpus() != clustering.num_clusters) {
    throw InvalidInput("topology has " + std::to_string(topology.num_gpus()) +
                       " GPUs but the placement uses " + std::to_string(clustering.num_clusters));
  }
  check_placement(placement, clustering);

  const auto g = std::size_t(clustering.num_clusters);
  const double layer_tokens = double(stats.layer_tokens());
  CostReport r;
  for (std::size_t l = 0; l < std::size_t(stats.num_layers); ++l) {
    std::vector<Count> tokens(g, 0);
    for (std::size_t e = 0; e < std::size_t(stats.num_experts); ++e) {
      tokens[std::size_t(placement.expert_to_gpu[l][e])] += stats.load[l][e];
    }
    TailAvg t;
    std::vector<double> share(g, 0.0);
    for (std::size_t k = 0; k < g; ++k) {
      const double time = params.compute_time_per_token * double(tokens[k]);
      t.tail = std::max(t.tail, time);
      t.avg += time;
      share[k] = layer_tokens > 0.0 ? double(tokens[k]) / layer_tokens : 0.0;
    }
    // A mean can round above the max when all terms are equal.
    t.avg = std::min(t.avg / double(g), t.tail);
    r.per_layer_compute.push_back(t);
    r.gpu_token_share.push_back(std::move(share));
  }

  const CommCostTensor costs = comm_costs(stats, clustering);
  const double pairs = double(g * (g - 1));
  for (std::size_t l = 0; l < costs.costs.size(); ++l) {
    const CountMatrix v = layer_pair_volumes(costs, placement, int(l));
    TailAvg t;
    t.tail = params.bytes_per_token * max_normalized_volume(v, topology);
    VolumeSummary vs;
    for (std::size_t a = 0; a < g; ++a) {
      for (std::size_t b = 0; b < g; ++b) {
        if (a == b) continue;
        t.avg += params.bytes_per_token * double(v[a][b]) / topology.bandwidth(int(a), int(b));
        vs.max = std::max(vs.max, v[a][b]);
        vs.mean += double(v[a][b]);
      }
    }
    if (g > 1) {
      t.avg = std::min(t.avg / pairs, t.tail);
      vs.mean /= pairs;
    }
    r.per_transition_comm.push_back(t);
    r.pair_volume_summary.push_back(vs);
  }

  for (const auto& t : r.per_layer_compute) r.end_to_end += params.fixed_overhead_per_layer + t.tail;
  for (const auto& t : r.per_transition_comm) r.end_to_end += t.tail;
  return r;
}

// Total experts per GPU across layers.
inline std::vector<Count> gpu_memory_share(const Clustering& clustering, const Placement& placement) {
  check_placement(placement, clustering);
  return experts_per_gpu(placement, clustering.num_clusters);
}

struct MetricChange {
  double baseline = 0.0;
  double optimized = 0.0;
  // optimized / baseline; 1 when both are zero, unset when only the baseline is.
  std::optional<double> ratio;
  // 100 * (1 - ratio).
  std::optional<double> reduction_pct;
};

struct ComparisonSummary {
  std::optional<double> speedup;
  MetricChange end_to_end;
  MetricChange compute_tail_mean;
  MetricChange compute_tail_max;
  MetricChange comm_tail_mean;
  MetricChange comm_tail_max;
};

namespace detail {

inline MetricChange change(double base, double opt) {
  MetricChange m{base, opt, std::nullopt, std::nullopt};
  if (base > 0.0) {
    m.ratio = opt / base;
  } else if (opt == 0.0) {
    m.ratio = 1.0;
  }
  if (m.ratio) m.reduction_pct = 100.0 * (1.0 - *m.ratio);
  return m;
}

inline std::pair<double, double> mean_max_tail(const std::vector<TailAvg>& v) {
  double sum = 0.0, worst = 0.0;
  for (const auto& t : v) {
    sum += t.tail;
    worst = std::max(worst, t.tail);
  }
  return {v.empty() ? 0.0 : sum / double(v.size()), worst};
}

}  // namespace detail

// Relative change from `baseline` to `optimized`; speedup is
// baseline.end_to_end / optimized.end_to_end.
inline ComparisonSummary compare(const CostReport& baseline, const CostReport& optimized) {
  ComparisonSummary s;
  s.end_to_end = detail::change(baseline.end_to_end, optimized.end_to_end);
  if (optimized.end_to_end > 0.0) {
    s.speedup = baseline.end_to_end / optimized.end_to_end;
  } else if (baseline.end_to_end == 0.0) {
    s.speedup = 1.0;
  }
  const auto [bc_mean, bc_max] = detail::mean_max_tail(baseline.per_layer_compute);
  const auto [oc_mean, oc_max] = detail::mean_max_tail(optimized.per_layer_compute);
  const auto [bm_mean, bm_max] = detail::mean_max_tail(baseline.per_transition_comm);
  const auto [om_mean, om_max] = detail::mean_max_tail(optimized.per_transition_comm);
  s.compute_tail_mean = detail::change(bc_mean, oc_mean);
  s.compute_tail_max = detail::change(bc_max, oc_max);
  s.comm_tail_mean = detail::change(bm_mean, om_mean);
  s.comm_tail_max = detail::change(bm_max, om_max);
  return s;
}

namespace detail {

inline Json optional_number(const std::optional<double>& v) {
  return v ? Json(*v) : Json(nullptr);
}

inline Json to_json(const MetricChange& m) {
  Json j;
  j["baseline"] = m.baseline;
  j["optimized"] = m.optimized;
  j["ratio"] = optional_number(m.ratio);
  j["reduction_pct"] = optional_number(m.reduction_pct);
  return j;
}

inline std::vector<TailAvg> tail_avg_list(const Json& j, const std::string& where) {
  if (!j.is_array()) throw InvalidInput(where + " must be an array");
  std::vector<TailAvg> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto name = json_io::index(where, i);
    out.push_back({json_io::number(json_io::field(j[i], "tail"), name + ".tail"),
                   json_io::number(json_io::field(j[i], "avg"), name + ".avg")});
  }
  return out;
}

}  // namespace detail

inline Json to_json(const CostReport& r) {
  Json j;
  auto tail_avg = [](const std::vector<TailAvg>& v) {
    Json arr = Json::array();
    for (const auto& t : v) {
      Json item;
      item["tail"] = t.tail;
      item["avg"] = t.avg;
      arr.push_back(item);
    }
    return arr;
  };
  j["end_to_end"] = r.end_to_end;
  j["per_layer_compute"] = tail_avg(r.per_layer_compute);
  j["per_transition_comm"] = tail_avg(r.per_transition_comm);
  j["gpu_token_share"] = r.gpu_token_share;
  Json vols = Json::array();
  for (const auto& v : r.pair_volume_summary) {
    Json item;
    item["max"] = v.max;
    item["mean"] = v.mean;
    vols.push_back(item);
  }
  j["pair_volume_summary"] = vols;
  return j;
}

inline CostReport cost_report_from_json(const Json& j) {
  using namespace json_io;
  CostReport r;
  r.end_to_end = number(field(j, "end_to_end"), "end_to_end");
  r.per_layer_compute = detail::tail_avg_list(field(j, "per_layer_compute"), "per_layer_compute");
  r.per_transition_comm =
      detail::tail_avg_list(field(j, "per_transition_comm"), "per_transition_comm");
  const auto& shares = field(j, "gpu_token_share");
  if (!shares.is_array()) throw InvalidInput("gpu_token_share must be an array");
  for (std::size_t l = 0; l < shares.size(); ++l) {
    const auto name = index("gpu_token_share", l);
    if (!shares[l].is_array()) throw InvalidInput(name + " must be an array");
    std::vector<double> row;
    for (std::size_t g = 0; g < shares[l].size(); ++g) row.push_back(number(shares[l][g], index(name, g)));
    r.gpu_token_share.push_back(std::move(row));
  }
  const auto& vols = field(j, "pair_volume_summary");
  if (!vols.is_array()) throw InvalidInput("pair_volume_summary must be an array");
  for (std::size_t i = 0; i < vols.size(); ++i) {
    const auto name = index("pair_volume_summary", i);
    r.pair_volume_summary.push_back({count(field(vols[i], "max"), name + ".max"),
                                     number(field(vols[i], "mean"), name + ".mean")});
  }
  return r;
}

inline CostReport load_cost_report(const std::filesystem::path& path) {
  const Json doc = json_io::read_file(path);
  try {
    return cost_report_from_json(doc);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline void emit(const CostReport& r, const std::filesystem::path& path) {
  json_io::write_file(path, to_json(r));
}

// One row per layer (compute) and per transition (comm).
inline std::string to_csv(const CostReport& r) {
  using json_io::format_double;
  std::ostringstream out;
  out << "phase,index,tail_s,avg_s,max_gpu_token_share,max_pair_volume,mean_pair_volume\n";
  for (std::size_t l = 0; l < r.per_layer_compute.size(); ++l) {
    const auto& shares = r.gpu_token_share[l];
    const double top = shares.empty() ? 0.0 : *std::max_element(shares.begin(), shares.end());
    out << "compute," << l << "," << format_double(r.per_layer_compute[l].tail) << ","
        << format_double(r.per_layer_compute[l].avg) << "," << format_double(top) << ",,\n";
  }
  for (std::size_t t = 0; t < r.per_transition_comm.size(); ++t) {
    out << "comm," << t << "," << format_double(r.per_transition_comm[t].tail) << ","
        << format_double(r.per_transition_comm[t].avg) << ",," << r.pair_volume_summary[t].max
        << "," << format_double(r.pair_volume_summary[t].mean) << "\n";
  }
  return out.str();
}

inline Json to_json(const ComparisonSummary& s) {
  Json j;
  j["speedup"] = detail::optional_number(s.speedup);
  j["end_to_end"] = detail::to_json(s.end_to_end);
  j["compute_tail_mean"] = detail::to_json(s.compute_tail_mean);
  j["compute_tail_max"] = detail::to_json(s.compute_tail_max);
  j["comm_tail_mean"] = detail::to_json(s.comm_tail_mean);
  j["comm_tail_max"] = detail::to_json(s.comm_tail_max);
  return j;
}

}  // namespace moeplace
