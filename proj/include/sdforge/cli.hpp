#pragma once

#include <iosfwd>

namespace sdforge {

/// Entry point of the `sdforge` tool. Returns 0 on success, 1 for usage,
/// validation and parse errors, 2 for runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace sdforge
