#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fsle/error.hpp"

namespace fsle::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

// 10 + the ErrorKind ordinal: kInvalidArgument = 10 ... kIo = 24.
int exit_code(ErrorKind kind);

// `args` excludes the program name. Reports go to `out` (or the --out file),
// diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fsle::cli
