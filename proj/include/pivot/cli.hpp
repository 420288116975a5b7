#pragma once

#include <string>
#include <vector>

namespace pivot::cli {

// Runs one subcommand (world-log | data-build | train-encoder | train-decoder
// | train-rl | refine | eval | ablate | oracle-check). Prints one JSON summary
// line on stdout. Returns 0 on success, 1 on validation errors, 2 on resource
// errors.
int run_command(const std::vector<std::string>& args);
int run_command(int argc, const char* const* argv);

} // namespace pivot::cli
