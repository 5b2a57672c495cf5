// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace kdr {

enum class ExitStatus { ok, error, timeout };

std::string_view exit_status_name(ExitStatus s) noexcept;
ExitStatus parse_exit_status(std::string_view s);

struct ProducedFile {
    std::string path; ///< relative to the working directory
    std::string kind; ///< chart | table | data
    std::uintmax_t size = 0;

    friend bool operator==(const ProducedFile&, const ProducedFile&) = default;
};

struct ExecutionResult {
    ExitStatus exit_status = ExitStatus::error;
    int exit_code = -1;
    std::string stdout_text;
    std::string stderr_text;
    bool stdout_truncated = false;
    bool stderr_truncated = false;
    std::vector<ProducedFile> produced_files;
    double wall_seconds = 0;
    std::string workdir;
};

struct SandboxLimits {
    double wall_seconds = 30;
    std::size_t output_bytes = 64 * 1024;
    std::string interpreter = "python3";
};

/// chart for images and PDFs, table for CSV/TSV/spreadsheets/HTML/Markdown,
/// data for everything else.
std::string guess_file_kind(std::string_view path);

/// Runs `script` with an isolated Python interpreter inside `workdir` (created
/// if missing, must be empty). The child gets its own network namespace when
/// the kernel allows it, an audit hook that rejects sockets, subprocesses and
/// writes outside the working directory, resource limits, and is killed with
/// its process group at the wall-clock limit.
///
/// The interpreter pre-binds `Entity`, `Event`, `List`, `text`, `number` and
/// `date`, so rendered class definitions and declarations execute as is.
/// Throws SandboxUnavailable when the interpreter cannot be started.
ExecutionResult execute_script(const std::string& script, const SandboxLimits& limits, const std::string& workdir);

nlohmann::ordered_json execution_result_to_json(const ExecutionResult& r);
ExecutionResult execution_result_from_json(const nlohmann::json& j);

} // namespace kdr
