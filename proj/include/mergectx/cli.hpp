#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mergectx {

/// Subcommands: merge, topk, eval, bench, simmatrix.
/// Exit codes: 0 success, 1 runtime/config failure (JSON error on `err`), 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

} // namespace mergectx
