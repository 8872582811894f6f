#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace icll {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;    // bad flags, spec strings or config values
inline constexpr int kExitNumeric = 3;  // NaN/Inf during training or inference
inline constexpr int kExitIo = 4;       // unreadable/unwritable files, corrupt checkpoints

// `args` excludes the program name. Normal output goes to `out`, diagnostics
// to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// Flat `key = value` config text to `--key=value` arguments. Blank lines and
// lines starting with '#' are skipped; surrounding quotes on values are
// removed. Throws SpecError on a line without '='.
std::vector<std::string> config_to_args(const std::string& text);

}  // namespace icll
