#pragma once

// Command-line front end: sample, filter, bandit, assess-series,
// assess-stationarity.
//
// Parameters come from built-in defaults, then an optional JSON config file
// (--config), then flags. Keys are snake_case in JSON and --kebab-case on
// the command line. Exit codes: 0 success, 1 runtime error (a JSON error
// report goes to stderr), 2 usage error.

#include "reflex/errors.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace reflex::cli {

inline constexpr int kSchemaVersion = 1;

/// Bad flags, unknown or mistyped keys, missing seed, out-of-range values.
class UsageError : public Error {
public:
  using Error::Error;
};

struct RunConfig {
  std::string subcommand;
  nlohmann::ordered_json values; // fully resolved, defaults included
  int workers = 1;
};

std::vector<std::string> subcommands();

/// Merges defaults, `file_values` and `flag_values` (flag text keyed by
/// snake_case name) and validates the result. Throws UsageError.
RunConfig resolve_config(const std::string& subcommand, const nlohmann::json& file_values,
                         const std::map<std::string, std::string>& flag_values, int workers);

/// Runs a resolved configuration. Returns the exit code; runtime errors are
/// reported on `err` as JSON.
int execute(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Full command line (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace reflex::cli
