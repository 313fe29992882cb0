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

#include <cstdint>
#include <stdexcept>
#include <string>

namespace moeplace {

// Malformed input: bad dimensions, out-of-range parameters, unparsable files.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The exact clustering enumeration would exceed its partition budget.
class EnumerationLimit : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No placement satisfies the expert-count balance at the requested slack.
class BalanceInfeasible : public std::runtime_error {
 public:
  BalanceInfeasible(const std::string& what, std::int64_t min_slack)
      : std::runtime_error(what), min_slack_(min_slack) {}

  // Smallest slack at which a balanced placement exists, or -1 when unknown
  // (E*L not divisible by G at slack 0).
  std::int64_t min_slack() const noexcept { return min_slack_; }

 private:
  std::int64_t min_slack_;
};

}  // namespace moeplace
