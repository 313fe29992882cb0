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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "moeplace/error.hpp"
#include "moeplace/json_io.hpp"

namespace moeplace {

using Count = std::int64_t;
using CountMatrix = std::vector<std::vector<Count>>;
using CountTensor = std::vector<CountMatrix>;

// Aggregated token-routing profile of one (model, dataset) pair.
//
// load[l][e] counts tokens routed to expert e at layer l. transitions[l][a][b]
// counts (expert a at layer l, expert b at layer l+1) co-activation pairs; a
// token activating top_k experts on both layers contributes top_k^2 pairs.
struct RoutingStats {
  int num_layers = 0;
  int num_experts = 0;
  int top_k = 1;
  Count tokens_total = 0;
  CountMatrix load;
  CountTensor transitions;
  std::map<std::string, std::string> meta;

  static RoutingStats zeros(int num_layers, int num_experts, int top_k) {
    RoutingStats s;
    s.num_layers = num_layers;
    s.num_experts = num_experts;
    s.top_k = top_k;
    const auto e = static_cast<std::size_t>(num_experts);
    s.load.assign(static_cast<std::size_t>(num_layers), std::vector<Count>(e, 0));
    s.transitions.assign(static_cast<std::size_t>(num_layers > 0 ? num_layers - 1 : 0),
                         CountMatrix(e, std::vector<Count>(e, 0)));
    return s;
  }

  Count layer_tokens() const { return static_cast<Count>(top_k) * tokens_total; }

  bool operator==(const RoutingStats&) const = default;
};

enum class ViolationKind {
  kDimension,
  kNegativeCount,
  kLoadConservation,
  kTransitionTotal,
  kTransitionRow,
  kTransitionColumn,
};

struct Violation {
  ViolationKind kind;
  int layer = -1;
  int expert = -1;
  std::string message;
};

namespace detail {

inline std::string violation_at(int layer, int expert) {
  std::string s = "layer " + std::to_string(layer);
  if (expert >= 0) s += ", expert " + std::to_string(expert);
  return s;
}

}  // namespace detail

// Every violated RoutingStats invariant; empty iff the stats are consistent.
inline std::vector<Violation> validate(const RoutingStats& s) {
  std::vector<Violation> out;
  auto report = [&](ViolationKind kind, int layer, int expert, std::string msg) {
    out.push_back({kind, layer, expert, std::move(msg)});
  };

  if (s.num_layers < 1 || s.num_experts < 1 || s.top_k < 1) {
    report(ViolationKind::kDimension, -1, -1,
           "num_layers, num_experts and top_k must all be >= 1");
    return out;
  }
  if (s.top_k > s.num_experts) {
    report(ViolationKind::kDimension, -1, -1, "top_k exceeds num_experts");
  }
  if (s.tokens_total < 0) {
    report(ViolationKind::kNegativeCount, -1, -1, "tokens_total is negative");
  }
  const auto L = static_cast<std::size_t>(s.num_layers);
  const auto E = static_cast<std::size_t>(s.num_experts);
  bool dims_ok = s.load.size() == L && s.transitions.size() == L - 1;
  for (const auto& row : s.load) dims_ok = dims_ok && row.size() == E;
  for (const auto& m : s.transitions) {
    dims_ok = dims_ok && m.size() == E;
    for (const auto& row : m) dims_ok = dims_ok && row.size() == E;
  }
  if (!dims_ok) {
    report(ViolationKind::kDimension, -1, -1,
           "load must be [L][E] and transitions [L-1][E][E]");
    return out;
  }

  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t e = 0; e < E; ++e) {
      if (s.load[l][e] < 0) {
        report(ViolationKind::kNegativeCount, int(l), int(e),
               "negative load at " + detail::violation_at(int(l), int(e)));
      }
    }
  }
  for (std::size_t l = 0; l + 1 < L; ++l) {
    for (std::size_t a = 0; a < E; ++a) {
      for (std::size_t b = 0; b < E; ++b) {
        if (s.transitions[l][a][b] < 0) {
          report(ViolationKind::kNegativeCount, int(l), int(a),
                 "negative transition count at " + detail::violation_at(int(l), int(a)) +
                     " -> expert " + std::to_string(b));
        }
      }
    }
  }

  const Count per_layer = s.layer_tokens();
  const Count k = s.top_k;
  for (std::size_t l = 0; l < L; ++l) {
    Count sum = 0;
    for (Count v : s.load[l]) sum += v;
    if (sum != per_layer) {
      report(ViolationKind::kLoadConservation, int(l), -1,
             "load at " + detail::violation_at(int(l), -1) + " sums to " + std::to_string(sum) +
                 ", expected top_k * tokens_total = " + std::to_string(per_layer));
    }
  }
  for (std::size_t l = 0; l + 1 < L; ++l) {
    Count total = 0;
    std::vector<Count> col(E, 0);
    for (std::size_t a = 0; a < E; ++a) {
      Count row = 0;
      for (std::size_t b = 0; b < E; ++b) {
        row += s.transitions[l][a][b];
        col[b] += s.transitions[l][a][b];
      }
      total += row;
      if (row != k * s.load[l][a]) {
        report(ViolationKind::kTransitionRow, int(l), int(a),
               "transitions out of " + detail::violation_at(int(l), int(a)) + " sum to " +
                   std::to_string(row) + ", expected top_k * load = " +
                   std::to_string(k * s.load[l][a]));
      }
    }
    for (std::size_t b = 0; b < E; ++b) {
      if (col[b] != k * s.load[l + 1][b]) {
        report(ViolationKind::kTransitionColumn, int(l), int(b),
               "transitions into " + detail::violation_at(int(l) + 1, int(b)) + " sum to " +
                   std::to_string(col[b]) + ", expected top_k * load = " +
                   std::to_string(k * s.load[l + 1][b]));
      }
    }
    if (total != k * per_layer) {
      report(ViolationKind::kTransitionTotal, int(l), -1,
             "transitions at " + detail::violation_at(int(l), -1) + " sum to " +
                 std::to_string(total) + ", expected top_k^2 * tokens_total = " +
                 std::to_string(k * per_layer));
    }
  }
  return out;
}

// Per-layer total-variation distance between the normalized load
// distributions of two traces. An all-zero layer is a point mass on nothing:
// distance 0 to another all-zero layer, 1 to anything else.
inline std::vector<double> total_variation(const RoutingStats& a, const RoutingStats& b) {
  if (a.num_layers != b.num_layers || a.num_experts != b.num_experts ||
      a.load.size() != b.load.size()) {
    throw InvalidInput("total_variation: traces have different dimensions (" +
                       std::to_string(a.num_layers) + "x" + std::to_string(a.num_experts) +
                       " vs " + std::to_string(b.num_layers) + "x" +
                       std::to_string(b.num_experts) + ")");
  }
  std::vector<double> tv(a.load.size(), 0.0);
  for (std::size_t l = 0; l < a.load.size(); ++l) {
    const auto& pa = a.load[l];
    const auto& pb = b.load[l];
    if (pa.size() != pb.size()) throw InvalidInput("total_variation: ragged load rows");
    Count sa = 0, sb = 0;
    for (Count v : pa) sa += v;
    for (Count v : pb) sb += v;
    if (sa == 0 || sb == 0) {
      tv[l] = (sa == 0 && sb == 0) ? 0.0 : 1.0;
      continue;
    }
    double d = 0.0;
    for (std::size_t e = 0; e < pa.size(); ++e) {
      d += std::abs(double(pa[e]) / double(sa) - double(pb[e]) / double(sb));
    }
    tv[l] = std::min(1.0, 0.5 * d);
  }
  return tv;
}

inline Json to_json(const RoutingStats& s) {
  Json j;
  j["num_layers"] = s.num_layers;
  j["num_experts"] = s.num_experts;
  j["top_k"] = s.top_k;
  j["tokens_total"] = s.tokens_total;
  j["load"] = s.load;
  j["transitions"] = s.transitions;
  Json meta = Json::object();
  for (const auto& [k, v] : s.meta) meta[k] = v;
  j["meta"] = meta;
  return j;
}

// Parses and validates a trace document; throws InvalidInput naming the
// offending field or the first violated invariant.
inline RoutingStats routing_stats_from_json(const Json& j) {
  using namespace json_io;
  RoutingStats s;
  const Count L = count(field(j, "num_layers"), "num_layers");
  const Count E = count(field(j, "num_experts"), "num_experts");
  const Count k = count(field(j, "top_k"), "top_k");
  if (L < 1 || E < 1 || k < 1) {
    throw InvalidInput("num_layers, num_experts and top_k must all be >= 1");
  }
  s.num_layers = int(L);
  s.num_experts = int(E);
  s.top_k = int(k);
  s.tokens_total = count(field(j, "tokens_total"), "tokens_total");

  const auto& load = array(field(j, "load"), "load", std::size_t(L));
  s.load.resize(std::size_t(L));
  for (std::size_t l = 0; l < std::size_t(L); ++l) {
    const auto name = index("load", l);
    const auto& row = array(load[l], name, std::size_t(E));
    for (std::size_t e = 0; e < std::size_t(E); ++e) {
      s.load[l].push_back(count(row[e], index(name, e)));
    }
  }
  const auto& tr = array(field(j, "transitions"), "transitions", std::size_t(L - 1));
  s.transitions.resize(std::size_t(L - 1));
  for (std::size_t l = 0; l + 1 < std::size_t(L); ++l) {
    const auto name = index("transitions", l);
    const auto& mat = array(tr[l], name, std::size_t(E));
    s.transitions[l].resize(std::size_t(E));
    for (std::size_t a = 0; a < std::size_t(E); ++a) {
      const auto row_name = index(name, a);
      const auto& row = array(mat[a], row_name, std::size_t(E));
      for (std::size_t b = 0; b < std::size_t(E); ++b) {
        s.transitions[l][a].push_back(count(row[b], index(row_name, b)));
      }
    }
  }
  if (auto it = j.find("meta"); it != j.end()) {
    if (!it->is_object()) throw InvalidInput("meta must be an object");
    for (auto m = it->begin(); m != it->end(); ++m) {
      s.meta[m.key()] = m.value().is_string() ? m.value().get<std::string>() : m.value().dump();
    }
  }
  if (auto v = validate(s); !v.empty()) {
    throw InvalidInput("inconsistent routing statistics: " + v.front().message +
                       (v.size() > 1 ? " (+" + std::to_string(v.size() - 1) + " more)" : ""));
  }
  return s;
}

inline RoutingStats ingest(const std::filesystem::path& path) {
  const Json doc = json_io::read_file(path);
  try {
    return routing_stats_from_json(doc);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline void emit(const RoutingStats& s, const std::filesystem::path& path) {
  json_io::write_file(path, to_json(s));
}

}  // namespace moeplace
