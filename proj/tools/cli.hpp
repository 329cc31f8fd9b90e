#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace speechconf::cli {

/// Runs one verb (`args[0]`) with its flags. Returns the process exit code:
/// 0 success, 1 validation error, 2 runtime failure. Errors and warnings go
/// to `err` as one JSON object per line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// ISO-8601 UTC time of SOURCE_DATE_EPOCH when set, else of the current time.
std::string creation_time();

}  // namespace speechconf::cli
