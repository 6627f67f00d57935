#pragma once

#include <ostream>

namespace gstrs {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

/// Entry point for the `gstrs` command line: synth, cluster, train, eval,
/// gradcheck, defaults.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace gstrs
