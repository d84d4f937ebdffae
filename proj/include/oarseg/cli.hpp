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

#include <iostream>
#include <string>
#include <vector>

namespace oarseg::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kNumeric = 2 };

// Runs one subcommand; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

// Expands --config FILE (a flag object or a run manifest) and `rerun` into plain arguments.
// Flags given explicitly on the command line win over the file.
std::vector<std::string> expand_arguments(const std::vector<std::string>& args);

}  // namespace oarseg::cli
