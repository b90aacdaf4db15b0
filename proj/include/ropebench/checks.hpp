#pragma once

#include <string>
#include <vector>

// Self-contained invariant and gradient suites behind the `check` CLI
// subcommand. Each check returns a pass flag plus a one-line measurement
// detail. Named fault injections deliberately break one invariant so the
// suite's failure path can be exercised end to end.

namespace ropebench {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Supported --mutate names.
std::vector<std::string> known_mutations();

// Runs every check; mutation "" is the healthy build. Unknown mutation names
// throw std::invalid_argument.
std::vector<CheckResult> run_checks(const std::string& mutation = "");

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace ropebench
