// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kdr/knowledge_store.hpp"
#include "kdr/llm.hpp"
#include "kdr/ontology.hpp"
#include "kdr/sandbox.hpp"
#include "kdr/web_search.hpp"

namespace kdr {

// ---------------------------------------------------------------------------
// Task decomposition

enum class RequestKind { data_analysis, web_search };

std::string_view request_kind_name(RequestKind k) noexcept;

struct CycleRequest {
    RequestKind kind = RequestKind::data_analysis;
    std::string query;

    friend bool operator==(const CycleRequest&, const CycleRequest&) = default;
};

struct CyclePlan {
    std::string section_title;
    std::vector<CycleRequest> requests;

    friend bool operator==(const CyclePlan&, const CyclePlan&) = default;
};

/// Title used for requests that appear before the first heading.
inline constexpr std::string_view kDefaultSectionTitle = "Findings";

/// Markdown headings (`#` to `######`) open sections; every
/// `<begin_X>...<end_X>` pair (X = data_analysis | web_search) becomes a
/// request. Sections without requests are dropped. Throws UnbalancedTags
/// (nested, unclosed, stray or unknown tag; position = byte offset of the
/// offending tag) and EmptyQuery.
std::vector<CyclePlan> parse_decomposition(std::string_view plan_text);

/// Inverse of parse_decomposition for well-formed plans.
std::string render_decomposition(const std::vector<CyclePlan>& plans);

// ---------------------------------------------------------------------------
// Knowledge computation cycle

struct ConceptHit {
    std::string name; ///< qualified
    std::string class_code;
    double score = 0;
};

/// Text indexed for a concept: name (also split at case changes),
/// description and attribute names with underscores as spaces.
std::string concept_search_text(const Concept& c);

/// Full-text search over concepts. Throws NoConceptFound, Precondition (limit 0).
std::vector<ConceptHit> ontology_search(const std::string& query, const OntologyGraph& graph, std::size_t limit);

std::string render_codegen_prompt(const std::string& query, const std::vector<std::string>& class_codes,
                                  const std::optional<std::string>& feedback, const std::string& note = {});

/// Returns the first fenced block of the response (else the whole response).
/// Throws RejectedCode when the code never mentions `search_results`.
std::string generate_analysis_code(const std::string& query, const std::vector<std::string>& class_codes,
                                   const std::optional<std::string>& feedback, LlmGateway& llm,
                                   const std::string& note = {});

/// One name per line; bullets, numbering and quotes are stripped.
std::vector<std::string> parse_topic_entities(std::string_view response);

struct InstanceQueryResult {
    std::vector<std::string> entities; ///< names returned by the model
    std::vector<std::string> seeds;    ///< matched object ids
    std::vector<KnowledgeObject> objects;
};

/// Topic-entity recognition, exact-then-fuzzy name lookup, then a `hops`-hop
/// subgraph. Throws NoTopicEntity, NoInstancesFound.
InstanceQueryResult instance_query(const std::string& query, const KnowledgeStore& store, LlmGateway& llm, int hops);

/// Qualified names needed to execute code over `objects` with the classes in
/// `concepts`: those concepts, the objects' concepts and all ancestors,
/// parents before children.
std::vector<std::string> class_closure(const OntologyGraph& graph, const std::vector<std::string>& concepts,
                                       const std::vector<KnowledgeObject>& objects);

/// Class definitions, then `search_results` declarations, then the analysis
/// code. Throws RejectedCode, UnrenderableValue.
std::string assemble_script(const std::vector<std::string>& class_codes, const std::vector<KnowledgeObject>& objects,
                            const std::string& analysis_code, const OntologyGraph& graph,
                            const NameLookup& lookup = nullptr);

struct Verdict {
    bool pass = false;
    std::string feedback;
    bool judged = false;      ///< the model was consulted
    bool unparseable = false; ///< the judge's answer had no PASS/FAIL token
};

/// Failed executions fail without consulting the model (feedback = stderr).
Verdict evaluate_result(const std::string& query, const ExecutionResult& result, LlmGateway& llm);

enum class CycleStatus { passed, exhausted, failed };

std::string_view cycle_status_name(CycleStatus s) noexcept;

struct IterationRecord {
    int index = 0;
    std::vector<std::string> concepts;
    std::string code;
    std::size_t instance_count = 0;
    std::optional<ExecutionResult> execution;
    bool pass = false;
    std::string feedback;
};

struct ComputationTrace {
    std::string query;
    std::vector<IterationRecord> iterations;
    CycleStatus final_status = CycleStatus::failed;
    std::string reason;
    std::vector<std::string> artifacts; ///< absolute paths of files produced by the passing iteration
    std::string workdir;

    /// stdout of the passing iteration, empty otherwise.
    std::string output() const;
};

struct ComputationConfig {
    int max_iterations = 3;
    int hops = 2;
    std::size_t concept_limit = 5;
    SandboxLimits limits;
    std::string workdir;                    ///< per-cycle directory; a temporary one when empty
    std::string codegen_note;               ///< extra instruction appended to the code prompt
    std::vector<std::string> fixed_concepts; ///< skip ontology search when set
    std::vector<std::string> seed_ids;       ///< skip topic-entity recognition when set
};

/// search -> generate -> instance query -> assemble -> execute -> evaluate,
/// repeated with the evaluator's feedback until a pass or max_iterations.
/// The instance query runs once per cycle since its input never changes.
ComputationTrace run_computation_cycle(const std::string& query, const OntologyGraph& graph,
                                       const KnowledgeStore& store, LlmGateway& llm, const ComputationConfig& cfg);

nlohmann::ordered_json computation_trace_to_json(const ComputationTrace& t);

// ---------------------------------------------------------------------------
// Text generation cycle

struct Source {
    std::string title;
    std::string url;

    friend bool operator==(const Source&, const Source&) = default;
};

struct TextResult {
    std::string query;
    std::string text;
    std::vector<Source> sources;
    bool sufficient = false;
    int rounds = 0;
    std::optional<std::string> reason;
};

struct TextCycleConfig {
    int max_rounds = 3;
    std::size_t hits_per_round = 3;
};

/// Rounds of search, per-hit summarization and a sufficiency check; the
/// writer runs once on the collected notes. An empty corpus yields empty text
/// with a reason. Throws SearchBackendUnavailable.
TextResult run_text_cycle(const std::string& query, SearchBackend& search, LlmGateway& llm,
                          const TextCycleConfig& cfg);

nlohmann::ordered_json text_result_to_json(const TextResult& t);

// ---------------------------------------------------------------------------
// Merge and revise

struct SectionInputs {
    std::string title;
    std::vector<ComputationTrace> computations;
    std::vector<TextResult> texts;
};

/// Text-only sections are returned as written; otherwise the model merges
/// computed output and text, preferring computed results.
std::string merge_section(const SectionInputs& in, LlmGateway& llm);

struct SectionBody {
    std::string title;
    std::string body;

    friend bool operator==(const SectionBody&, const SectionBody&) = default;
};

/// Global revision pass. The revised report must keep the section headings
/// in order; otherwise the input is returned unchanged and a diagnostic recorded.
std::vector<SectionBody> revise_report(const std::string& title, const std::vector<SectionBody>& sections,
                                       LlmGateway& llm, Diagnostics* issues = nullptr);

} // namespace kdr
