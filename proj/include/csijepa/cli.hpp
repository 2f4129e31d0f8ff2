#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace csijepa {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes: 0 success, 1 runtime failure, 2 usage error. Failures print a
/// single diagnostic line to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, char** argv);

}  // namespace csijepa
