#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dpguard::cli {

// Exit codes: 0 success, 1 usage/validation/config error, 2 runtime error.
int run(int argc, char** argv);
// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dpguard::cli
