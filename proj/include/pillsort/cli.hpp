#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pillsort::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitStage = 3;
inline constexpr int kExitIo = 4;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pillsort::cli
