#pragma once

#include <string>
#include <vector>

namespace qfv {

/// Parses and runs one CLI invocation. Returns the process exit status:
/// 0 success, 2 validation/configuration errors, 1 runtime errors.
int run_cli(const std::vector<std::string>& args);

}  // namespace qfv
