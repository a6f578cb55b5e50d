#pragma once

// The `flare` command line: preprocess, synth, train, eval, mutate-eval,
// grad-check and serve. Relative paths resolve against --workdir.

#include <iostream>
#include <ostream>

namespace flare::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // a run or an embedded check failed
inline constexpr int kExitUsage = 2;

inline constexpr const char* kVersion = "0.1.0";

int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace flare::cli
