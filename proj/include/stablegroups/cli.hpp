#pragma once

// Command-line entry point: gen, train, verify-theory, sweep, report.
// Exit codes: 0 success, 1 usage, 2 config/data, 3 numeric or verification
// failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace stablegroups::cli {

/// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

} // namespace stablegroups::cli
