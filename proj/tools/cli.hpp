#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nsvd::cli {

/// Exit codes: 0 success, 1 usage error, 2 numerical, format or verification failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nsvd::cli
