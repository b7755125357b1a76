#pragma once

#include <string>
#include <vector>

namespace dmvt {

// Dispatches one command invocation (args exclude the program name). Catches
// everything and maps it to a process exit code: 0 success, 2 user/config
// error, 64 usage error, 1 internal failure.
int cli_main(const std::vector<std::string> &args);

}  // namespace dmvt
