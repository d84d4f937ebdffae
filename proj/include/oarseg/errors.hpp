// Copyright 2026 The oarseg Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace oarseg {

// Bad user input, malformed files, violated preconditions. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor extents that do not fit an operation's contract.
class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Misuse of the autodiff graph (backward on a detached tensor, non-scalar loss).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced somewhere in the numeric path. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  NumericError(std::string op, std::string scope, const std::string& detail)
      : std::runtime_error(format(op, scope, detail)), op_(std::move(op)), scope_(std::move(scope)) {}

  const std::string& op() const noexcept { return op_; }
  // Dotted module path active when the failure happened, empty outside any module.
  const std::string& scope() const noexcept { return scope_; }

 private:
  static std::string format(const std::string& op, const std::string& scope,
                            const std::string& detail) {
    std::string msg = "numeric failure in op '" + op + "'";
    if (!scope.empty()) msg += " (layer " + scope + ")";
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  std::string op_;
  std::string scope_;
};

namespace detail {

inline std::vector<std::string>& scope_stack() {
  thread_local std::vector<std::string> stack;
  return stack;
}

}  // namespace detail

inline std::string current_scope() {
  std::string out;
  for (const auto& s : detail::scope_stack()) {
    if (!out.empty()) out += '.';
    out += s;
  }
  return out;
}

// Names the layer being evaluated so numeric errors can point at it.
class ScopeGuard {
 public:
  explicit ScopeGuard(std::string name) { detail::scope_stack().push_back(std::move(name)); }
  ~ScopeGuard() { detail::scope_stack().pop_back(); }
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;
};

}  // namespace oarseg
