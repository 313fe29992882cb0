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
#include <filesystem>
#include <string>
#include <vector>

#include "moeplace/error.hpp"
#include "moeplace/json_io.hpp"

namespace moeplace {

// GPU fleet with pairwise bandwidths in bytes/sec. The diagonal is unused:
// traffic between experts on the same GPU never touches the interconnect,
// and is stored as 0.
class Topology {
 public:
  Topology() = default;

  // Validates symmetry and strictly positive, finite off-diagonal entries.
  Topology(std::vector<std::vector<double>> bandwidth, std::vector<std::string> labels = {})
      : bandwidth_(std::move(bandwidth)), labels_(std::move(labels)) {
    const std::size_t g = bandwidth_.size();
    if (g < 1) throw InvalidInput("topology needs at least one GPU");
    if (!labels_.empty() && labels_.size() != g) {
      throw InvalidInput("topology has " + std::to_string(labels_.size()) + " labels for " +
                         std::to_string(g) + " GPUs");
    }
    for (std::size_t a = 0; a < g; ++a) {
      if (bandwidth_[a].size() != g) throw InvalidInput("bandwidth matrix must be square");
    }
    for (std::size_t a = 0; a < g; ++a) {
      bandwidth_[a][a] = 0.0;
      for (std::size_t b = 0; b < g; ++b) {
        if (a == b) continue;
        const double v = bandwidth_[a][b];
        if (!(v > 0.0) || !std::isfinite(v)) {
          throw InvalidInput("bandwidth[" + std::to_string(a) + "][" + std::to_string(b) +
                             "] must be positive and finite");
        }
        if (v != bandwidth_[b][a]) {
          throw InvalidInput("bandwidth matrix is not symmetric at (" + std::to_string(a) + ", " +
                             std::to_string(b) + ")");
        }
      }
    }
  }

  int num_gpus() const { return int(bandwidth_.size()); }
  double bandwidth(int from, int to) const { return bandwidth_[std::size_t(from)][std::size_t(to)]; }
  const std::vector<std::vector<double>>& bandwidth_matrix() const { return bandwidth_; }
  const std::vector<std::string>& labels() const { return labels_; }

  // Same topology with every bandwidth multiplied by `factor` > 0.
  Topology scaled(double factor) const {
    auto bw = bandwidth_;
    for (auto& row : bw) {
      for (double& v : row) v *= factor;
    }
    return Topology(std::move(bw), labels_);
  }

  bool operator==(const Topology&) const = default;

 private:
  std::vector<std::vector<double>> bandwidth_;
  std::vector<std::string> labels_;
};

inline Topology uniform_topology(int num_gpus, double bandwidth) {
  if (num_gpus < 1) throw InvalidInput("num_gpus must be >= 1");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
    throw InvalidInput("bandwidth must be positive and finite");
  }
  const auto g = std::size_t(num_gpus);
  return Topology(std::vector<std::vector<double>>(g, std::vector<double>(g, bandwidth)));
}

// `nodes` servers of `gpus_per_node` GPUs each; GPU i lives on node
// i / gpus_per_node.
inline Topology hierarchical_topology(int nodes, int gpus_per_node, double intra_bw,
                                      double inter_bw) {
  if (nodes < 1 || gpus_per_node < 1) throw InvalidInput("node and GPU counts must be >= 1");
  if (!(inter_bw > 0.0) || !std::isfinite(intra_bw) || !(intra_bw >= inter_bw)) {
    throw InvalidInput("hierarchical topology needs intra_bw >= inter_bw > 0");
  }
  const auto g = std::size_t(nodes) * std::size_t(gpus_per_node);
  std::vector<std::vector<double>> bw(g, std::vector<double>(g, 0.0));
  std::vector<std::string> labels;
  for (std::size_t a = 0; a < g; ++a) {
    labels.push_back("node" + std::to_string(a / std::size_t(gpus_per_node)) + "/gpu" +
                     std::to_string(a % std::size_t(gpus_per_node)));
    for (std::size_t b = 0; b < g; ++b) {
      if (a == b) continue;
      const bool same_node = a / std::size_t(gpus_per_node) == b / std::size_t(gpus_per_node);
      bw[a][b] = same_node ? intra_bw : inter_bw;
    }
  }
  return Topology(std::move(bw), std::move(labels));
}

inline Json to_json(const Topology& t) {
  Json j;
  j["num_gpus"] = t.num_gpus();
  j["bandwidth"] = t.bandwidth_matrix();
  j["labels"] = t.labels();
  return j;
}

inline Topology topology_from_json(const Json& j) {
  using namespace json_io;
  const auto g = std::size_t(count(field(j, "num_gpus"), "num_gpus"));
  if (g < 1) throw InvalidInput("num_gpus must be >= 1");
  const auto& bw_json = array(field(j, "bandwidth"), "bandwidth", g);
  std::vector<std::vector<double>> bw(g);
  for (std::size_t a = 0; a < g; ++a) {
    const auto name = index("bandwidth", a);
    const auto& row = array(bw_json[a], name, g);
    for (std::size_t b = 0; b < g; ++b) bw[a].push_back(number(row[b], index(name, b)));
  }
  std::vector<std::string> labels;
  if (auto it = j.find("labels"); it != j.end() && !it->empty()) {
    const auto& arr = array(*it, "labels", g);
    for (const auto& s : arr) {
      if (!s.is_string()) throw InvalidInput("labels must be strings");
      labels.push_back(s.get<std::string>());
    }
  }
  return Topology(std::move(bw), std::move(labels));
}

inline Topology load_topology(const std::filesystem::path& path) {
  const Json doc = json_io::read_file(path);
  try {
    return topology_from_json(doc);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline void emit(const Topology& t, const std::filesystem::path& path) {
  json_io::write_file(path, to_json(t));
}

}  // namespace moeplace
