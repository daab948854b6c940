#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace artprobe {

// Environment variable naming the default data root (holding manifest.tsv).
inline constexpr const char* kDataRootEnv = "ARTPROBE_DATA";

// Runs one command line (without the program name). Returns 0 on success,
// 1 on usage or validation errors, 2 on I/O errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace artprobe
