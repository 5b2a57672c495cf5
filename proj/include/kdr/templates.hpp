// SPDX-License-Identifier: Apache-2.0
#pragma once

// Instruction strings shared by extraction, training-data generation and the
// reasoning cycles. `{task}` and `{type}` are substituted verbatim.

#include <string>
#include <string_view>

namespace kdr::templates {

inline constexpr std::string_view kInstantiation =
    "Some {task} Types are imported above. Please instantiate all the possible {task} Objects in the following "
    "sentence.";

inline constexpr std::string_view kOpenImporting =
    "According to the {task} Types you have learned, please import all the possible {task} Types in the sentence";

inline constexpr std::string_view kClosedImporting =
    "Some {task} Types are imported above. Please import all the possible {task} Types in the following sentence.";

inline constexpr std::string_view kSchemaRecall =
    "Please generate the detailed schema of the class {type} from {task} based on your memory.";

inline constexpr std::string_view kSentencePrefix = "Sentence: ";

inline constexpr std::string_view kCodegenContract =
    "All objects relevant to the query are already instantiated from the classes above and stored in a list "
    "variable named `search_results`. Write Python code that answers the query using only these class definitions "
    "and `search_results`; do not redefine them. Print the findings. Save any chart as a PNG file in the current "
    "directory. Reply with a single ```python code block.";

inline constexpr std::string_view kTopicEntities =
    "Extract the topic entities mentioned in the following query. Answer with one entity name per line and nothing "
    "else.";

inline constexpr std::string_view kJudge =
    "You review the result of an analysis script. Decide whether it satisfies the query. Answer `PASS: {reason}` "
    "or `FAIL: {what to fix}` on the first line.";

inline constexpr std::string_view kSummarize =
    "Summarize the information in the document that is relevant to the query. Keep facts, numbers and names.";

inline constexpr std::string_view kSufficiency =
    "Do the notes contain enough information to write a well-supported answer to the query? Answer "
    "`SUFFICIENT` or `INSUFFICIENT: {missing information}` on the first line.";

inline constexpr std::string_view kWriter =
    "Write a concise, well-organized passage that answers the query from the notes. Cite sources as [n] using the "
    "numbers of the notes.";

inline constexpr std::string_view kMerge =
    "Merge the computed results and the written text into one coherent section. When they conflict, prefer the "
    "computed results. Return only the section body.";

inline constexpr std::string_view kGlobalRevision =
    "Polish the report from a global perspective: remove repetition, resolve inconsistencies between sections and "
    "keep every section heading unchanged. Return the full report in markdown with `## ` section headings.";

inline constexpr std::string_view kPlan =
    "Decompose the research task into report sections. Start each section with a `## ` heading. Inside a section, "
    "wrap each question that needs computation over the knowledge base in <begin_data_analysis> and "
    "<end_data_analysis>, and each question that needs web information in <begin_web_search> and "
    "<end_web_search>.";

inline constexpr std::string_view kProposeOntology =
    "Infer the concepts relevant to the research topic and their attributes. Reply with one ```json block of the "
    "form {\"namespaces\": {\"{namespace}\": [{\"name\": ..., \"kind\": \"entity\" or \"event\", "
    "\"description\": ..., \"attributes\": [{\"name\": ..., \"type\": ...}]}]}}. Attribute types are text, "
    "number, date, a concept name, or List[...] of those.";

inline constexpr std::string_view kAnswerSentinel =
    "After the analysis, print a line `ANSWERS:` followed by one answer per line.";

/// Replaces every `{key}` occurrence with `value`.
inline std::string substitute(std::string_view tmpl, std::string_view key, std::string_view value) {
    const std::string needle = "{" + std::string(key) + "}";
    std::string out;
    std::size_t pos = 0;
    while (true) {
        auto hit = tmpl.find(needle, pos);
        if (hit == std::string_view::npos) break;
        out.append(tmpl.substr(pos, hit - pos));
        out.append(value);
        pos = hit + needle.size();
    }
    out.append(tmpl.substr(pos));
    return out;
}

} // namespace kdr::templates
