// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>
#include <string_view>

namespace kdr {

enum class Errc {
    // ontology
    duplicate_name,
    unknown_parent,
    kind_mismatch,
    cycle_detected,
    unknown_concept,
    empty_import,
    invalid_identifier,
    schema_violation,
    // llm gateway
    precondition,
    backend_unavailable,
    context_too_long,
    // alignment
    unparseable_verdict,
    // extraction
    no_imports_found,
    parse_failure,
    empty_output,
    unknown_gold_type,
    // knowledge store
    type_mismatch,
    key_mismatch,
    unknown_id,
    unrenderable_value,
    io_failure,
    corrupt_record,
    // reasoning
    unbalanced_tags,
    empty_query,
    no_concept_found,
    rejected_code,
    no_topic_entity,
    no_instances_found,
    sandbox_unavailable,
    search_backend_unavailable,
    empty_corpus,
    // pipeline
    unparseable_proposal,
    not_approved,
    dangling_artifact,
    empty_plan,
    // evalkit
    gold_parent_missing,
    shape_mismatch,
    subgraph_load_failure,
    unparseable_score,
};

std::string_view errc_name(Errc code) noexcept;

/// Error raised by every kdr operation. `position` carries a byte offset into
/// the parsed input for parser errors and a 1-based line number for record
/// readers (see `line()`).
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Error(Errc code, const std::string& message, std::size_t position)
        : std::runtime_error(std::string(errc_name(code)) + " at " + std::to_string(position) + ": " + message),
          code_(code), position_(position) {}

    Errc code() const noexcept { return code_; }
    std::optional<std::size_t> position() const noexcept { return position_; }

private:
    Errc code_;
    std::optional<std::size_t> position_;
};

/// Non-fatal problem recorded while a tolerant operation carries on.
struct Diagnostic {
    Errc code;
    std::string message;
};

using Diagnostics = std::vector<Diagnostic>;

} // namespace kdr
