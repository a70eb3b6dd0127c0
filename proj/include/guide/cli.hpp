#pragma once

#include <iosfwd>

namespace guide {

// Entry point of the `guide` tool. Returns 0 on success, 2 on a usage
// error, 1 on a runtime error.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace guide
