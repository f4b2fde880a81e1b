#pragma once

// Command-line front end. Subcommands evolve | slits | experiment | relax |
// regime, each driven by a structured config file; see the repository README
// for the config grammar and the report schema.

#include <iosfwd>
#include <string>
#include <vector>

namespace subqm {

// Runs one command in-process; args exclude the program name. Exit codes:
// 0 success, 2 config error, 3 numeric failure, 4 I/O failure.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Forwards to the stream overload with std::cout / std::cerr.
int cli_main(int argc, const char* const* argv);

}  // namespace subqm
