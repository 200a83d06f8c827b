#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bplab {

/// Runs one bplab command. `args` excludes the program name. Returns the
/// process exit code; failures print one JSON error line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bplab
