#pragma once

#include <iosfwd>

namespace embkit::cli {

// Runs one embkit command line. Results go to `out`; stats and error
// reports go to `err`. Returns the process exit code: 0 on success, 2 for
// configuration errors, 1 for everything else.
//
// Option values are resolved as: command-line flag, then EMBKIT_<NAME>
// environment variable (upper case, dashes as underscores), then the JSON
// file given by --config, then the built-in default.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace embkit::cli
