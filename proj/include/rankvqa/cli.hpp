#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rankvqa {

// Full command-line entry point: generate | train | eval | gradcheck | ablate.
// args excludes the program name. Returns the process exit code: 0 iff the
// command's contract succeeded.
int cli_main(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace rankvqa
