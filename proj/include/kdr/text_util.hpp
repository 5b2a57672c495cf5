// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kdr::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string collapse_whitespace(std::string_view s);

/// Merge-key normalization: case-fold, collapse internal whitespace, strip
/// punctuation at both ends.
std::string normalize_name(std::string_view s);

/// Matching normalization used by the evaluators: case-fold + whitespace
/// collapse, nothing else.
std::string normalize_answer(std::string_view s);

/// Lower-cased alphanumeric tokens. CamelCase and snake_case words are split,
/// bytes >= 0x80 are kept as word characters.
std::vector<std::string> tokenize(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool starts_with_ci(std::string_view s, std::string_view prefix);
bool contains_word(std::string_view haystack, std::string_view word);

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

bool is_concept_identifier(std::string_view s);
bool is_attribute_identifier(std::string_view s);

/// "hot dog" -> "HotDog"; used when importing foreign taxonomies.
std::string to_concept_identifier(std::string_view label);
/// "people.person.place_of_birth" -> "people_person_place_of_birth"
std::string to_attribute_identifier(std::string_view label);

/// First fenced code block body, or the whole response when none exists.
std::string extract_code_block(std::string_view response);

/// Double-quoted literal with backslash escapes, readable by both the
/// instantiation parser and a Python interpreter.
std::string quote(std::string_view s);

/// Shortest round-trippable decimal form of a finite double.
std::string format_number(double v);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

} // namespace kdr::text
