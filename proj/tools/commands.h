#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace detfuse::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitInvalid = 2;

// Runs the command line `args` (args[0] is the program name) and returns
// the exit code. Subcommands: fuse, vote, evaluate, simulate, report.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Parses an IoU spec: "0.5", "0.5,0.75" or a range "0.5:0.95:0.05".
// Throws InvalidArgument.
std::vector<double> parse_iou_spec(const std::string& spec);

}  // namespace detfuse::cli
