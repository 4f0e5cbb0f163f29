// Copyright 2026 The sparsecomm Authors
//
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

// Command-line driver: cost reports, simulations, workload statistics and
// toy training runs, all configured from JSON files.

#ifndef SPARSECOMM_CLI_H_
#define SPARSECOMM_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace sparsecomm {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitInvariantFailure = 2,
  kExitRuntimeError = 3,
};

// args excludes the program name, e.g. {"simulate", "--config", "f.json"}.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sparsecomm

#endif  // SPARSECOMM_CLI_H_
