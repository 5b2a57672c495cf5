// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdr/error.hpp"
#include "kdr/knowledge_store.hpp"
#include "kdr/llm.hpp"
#include "kdr/ontology.hpp"
#include "kdr/reasoning.hpp"
#include "kdr/web_search.hpp"

namespace kdr {

// ---------------------------------------------------------------------------
// Tasks

enum class TaskMode { organize, research };

struct ResearchTask {
    std::string topic;
    TaskMode mode = TaskMode::organize;
    std::string corpus_path; ///< organize only
    std::string kb_path;
    std::string output_path; ///< run directory
};

/// Throws Precondition when a field required by the mode is missing.
void validate_task(const ResearchTask& task);

/// Stable run id derived from mode and topic.
std::string run_id(const ResearchTask& task);

// ---------------------------------------------------------------------------
// Ontology proposal and review

enum class ProposalStatus { proposed, approved, edited };

std::string_view proposal_status_name(ProposalStatus s) noexcept;
ProposalStatus parse_proposal_status(std::string_view s);

struct ProposedOntology {
    std::string topic;
    std::vector<Concept> concepts;
    ProposalStatus status = ProposalStatus::proposed;
    std::string reviewer_note;

    friend bool operator==(const ProposedOntology&, const ProposedOntology&) = default;
};

/// Concepts as an ontology file document.
nlohmann::json proposal_ontology_json(const ProposedOntology& p);
/// `{topic, status, reviewer_note, ontology}`.
nlohmann::ordered_json proposal_to_json(const ProposedOntology& p);
ProposedOntology proposal_from_json(const nlohmann::json& j);
void save_proposal(const ProposedOntology& p, const std::string& path);
ProposedOntology load_proposal(const std::string& path);

/// Parses the model's ```json block as an ontology file. Throws UnparseableProposal.
std::vector<Concept> parse_proposal_response(std::string_view response);

/// Asks the model for concepts and attributes and writes the proposal to
/// `proposal_path`. On UnparseableProposal the raw response is kept at
/// `{proposal_path}.raw.txt`.
ProposedOntology propose_ontology(const std::string& topic, LlmGateway& llm, const std::string& proposal_path,
                                  const std::string& ns = "Research");

struct ReviewDecision {
    bool approve = false;
    std::optional<std::string> edited_path; ///< ontology file replacing the proposed concepts
    std::string note;
};

/// Approves the proposal or replaces it with a revalidated edited ontology
/// file; the result is written back to `proposal_path`. Throws
/// SchemaViolation (invalid edit), NotApproved (neither approve nor edit).
ProposedOntology review_gate(const std::string& proposal_path, const ReviewDecision& decision);

// ---------------------------------------------------------------------------
// Knowledge base files

/// The ontology of a KB file lives next to it.
std::string ontology_sidecar_path(const std::string& kb_path);

/// Missing files give an empty store when `allow_missing`; otherwise IoFailure.
std::unique_ptr<KnowledgeStore> load_kb(const std::string& kb_path, Clock clock = system_clock_ms,
                                        bool allow_missing = false);
void save_kb(const KnowledgeStore& store, const std::string& kb_path);

/// Counter starting at `start`, advanced by one per call; used under scripted mocks.
Clock logical_clock(Timestamp start = 1);

// ---------------------------------------------------------------------------
// Corpus

struct Passage {
    std::string document;
    int index = 0;
    std::string text;
};

struct Document {
    std::string id; ///< path relative to the corpus root
    std::vector<Passage> passages;
};

inline constexpr std::size_t kMaxPassageWords = 400;

/// Crude HTML to text: drops script/style, turns block tags into paragraph
/// breaks and decodes the common entities.
std::string html_to_text(std::string_view html);

/// Paragraph-aligned passages of at most `max_words` words; longer paragraphs
/// are cut at word boundaries.
std::vector<std::string> split_passages(std::string_view text, std::size_t max_words = kMaxPassageWords);

/// `.txt`, `.md`, `.html`/`.htm` files under `dir`, sorted by relative path.
/// Throws IoFailure when `dir` is not a directory.
std::vector<Document> load_corpus(const std::string& dir, std::size_t max_words = kMaxPassageWords);

// ---------------------------------------------------------------------------
// Organization phase

struct DocumentError {
    std::string document;
    std::string error;
};

struct OrganizationManifest {
    std::string topic;
    std::size_t documents = 0;
    std::size_t passages = 0;
    std::size_t concepts_aligned = 0;
    std::size_t objects_extracted = 0;
    std::size_t objects_ingested = 0;
    std::size_t store_objects = 0;
    std::vector<DocumentError> errors;
};

nlohmann::ordered_json manifest_to_json(const OrganizationManifest& m);

struct OrganizationConfig {
    std::string run_dir; ///< manifest.json goes here when set
    std::size_t candidate_count = 10;
};

/// Aligns the approved concepts into the store's ontology, extracts every
/// passage (closed mode, one namespace per subtask) and ingests the objects.
/// Per-document failures land in the manifest. Throws NotApproved.
OrganizationManifest run_organization(const ProposedOntology& proposal, const std::vector<Document>& corpus,
                                      KnowledgeStore& store, LlmGateway& llm, const OrganizationConfig& cfg = {});

// ---------------------------------------------------------------------------
// Research phase

struct ReportSection {
    std::string title;
    std::string body;
    std::vector<std::string> artifacts; ///< files to publish with the section
};

struct ReportDocument {
    std::string title;
    std::vector<ReportSection> sections;
    std::vector<Source> sources; ///< deduplicated, first-seen order
    Timestamp generated_at = 0;
};

struct ResearchConfig {
    std::string run_dir; ///< required
    ComputationConfig computation;
    TextCycleConfig text;
    Clock clock = system_clock_ms;
};

std::string render_plan_prompt(const std::string& topic, const OntologyGraph& graph);

/// Caveat placed under a section whose computation did not pass.
std::string computation_caveat(const std::string& query, const std::string& reason);

/// Plan, per-section cycles, merge, global revision. Writes plan.txt and
/// sections/{n}/trace.json under the run directory and reuses a section whose
/// cached key still matches. `search` may be null (text cycles then report
/// that no backend is configured). Throws UnbalancedTags, EmptyQuery, EmptyPlan.
ReportDocument run_research(const std::string& topic, const KnowledgeStore& store, LlmGateway& llm,
                            SearchBackend* search, const ResearchConfig& cfg);

/// Writes `{out_dir}/report.md` and copies artifacts to `{out_dir}/artifacts/`.
/// Returns the report path. Throws Precondition (no sections),
/// DanglingArtifact, IoFailure.
std::string assemble_report(const ReportDocument& doc, const std::string& out_dir);

/// Markdown of a report whose artifacts are published under `artifacts/`.
std::string render_report_markdown(const ReportDocument& doc);

} // namespace kdr
