#pragma once

#include <string>
#include <vector>

namespace folkvae::cli {

// Entry point behind main(). Returns the process exit code: 0 on success,
// 2 on usage errors (unknown subcommand/flag), 1 on runtime failures, which
// print one line "error[<category>]: <message>" to stderr.
int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

} // namespace folkvae::cli
