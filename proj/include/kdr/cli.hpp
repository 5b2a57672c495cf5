// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace kdr {

/// Exit codes of every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUserError = 1;
inline constexpr int kExitRuntimeFailure = 2;

/// Parses `argv` (argv[0] is the program name) and runs the command. JSON goes
/// to `out`, diagnostics to `err`; the interactive review reads `in`.
int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

/// Convenience overload; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

/// Indented `key: value` lines for human readers.
std::string render_pretty(const nlohmann::ordered_json& j);

} // namespace kdr
