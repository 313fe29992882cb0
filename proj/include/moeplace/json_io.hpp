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

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "moeplace/error.hpp"

namespace moeplace {

using Json = nlohmann::ordered_json;

namespace json_io {

namespace internal {

inline bool is_flat_array(const Json& j) {
  if (!j.is_array()) return false;
  for (const auto& item : j) {
    if (item.is_structured()) return false;
  }
  return true;
}

inline void write(std::ostream& out, const Json& j, int depth) {
  const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
  const std::string inner(static_cast<std::size_t>(depth + 1) * 2, ' ');
  if (j.is_object()) {
    if (j.empty()) {
      out << "{}";
      return;
    }
    out << "{\n";
    bool first = true;
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!first) out << ",\n";
      first = false;
      out << inner << Json(it.key()).dump() << ": ";
      write(out, it.value(), depth + 1);
    }
    out << "\n" << pad << "}";
  } else if (j.is_array() && !is_flat_array(j)) {
    out << "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out << ",\n";
      out << inner;
      write(out, j[i], depth + 1);
    }
    out << "\n" << pad << "]";
  } else if (j.is_array()) {
    out << "[";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out << ", ";
      out << j[i].dump();
    }
    out << "]";
  } else {
    out << j.dump();
  }
}

}  // namespace internal

// Objects and nested arrays one element per line, scalar arrays inline.
// Key order is insertion order, so the output is stable.
inline std::string to_string(const Json& j) {
  std::ostringstream out;
  internal::write(out, j, 0);
  out << "\n";
  return out.str();
}

inline void write_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << to_string(j);
  if (!out) throw InvalidInput("failed writing " + path.string());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << text;
}

inline Json read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw InvalidInput(path.string() + ": malformed JSON: " + e.what());
  }
}

inline const Json& field(const Json& obj, const char* name) {
  if (!obj.is_object()) throw InvalidInput("expected a JSON object");
  auto it = obj.find(name);
  if (it == obj.end()) throw InvalidInput(std::string("missing field \"") + name + "\"");
  return *it;
}

// Non-negative integer count; `where` names the field in error messages.
inline std::int64_t count(const Json& j, const std::string& where) {
  if (!j.is_number_integer()) throw InvalidInput(where + " must be an integer");
  const std::int64_t v = j.get<std::int64_t>();
  if (v < 0) throw InvalidInput(where + " is negative (" + std::to_string(v) + ")");
  return v;
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw InvalidInput(where + " must be a number");
  return j.get<double>();
}

inline const Json& array(const Json& j, const std::string& where, std::size_t size) {
  if (!j.is_array()) throw InvalidInput(where + " must be an array");
  if (j.size() != size) {
    throw InvalidInput(where + " has " + std::to_string(j.size()) + " entries, expected " +
                       std::to_string(size));
  }
  return j;
}

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string index(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

}  // namespace json_io
}  // namespace moeplace
