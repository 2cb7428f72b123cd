#pragma once

#include "courseassist/llm.hpp"
#include "courseassist/prompts.hpp"
#include "courseassist/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace courseassist {

enum class IntentSource { Model, KeywordFallback };

struct Intent {
  IntentCategory category = IntentCategory::Lecture;
  double confidence = 0.0;
  IntentSource source = IntentSource::Model;
};

struct SubQuestion {
  std::string text;
  std::size_t index = 0;
  std::optional<RetrievalSet> retrieval;
};

enum class JudgeSource { Model, Heuristic, Both };

struct Evidence {
  std::size_t span_start = 0;
  std::size_t span_end = 0;
  std::string reason;
};

struct GuardVerdict {
  bool contains_solution = false;
  std::vector<Evidence> evidence;
  JudgeSource judge_source = JudgeSource::Both;
};

enum class Route { LectureRAG, ExamPrepDecompose, AssignmentGuarded };
std::string_view to_string(Route r);
Route route_for(IntentCategory c);

struct Citation {
  std::string chunk_id;
  std::string doc_id;
  std::string title;
  std::size_t seq = 0;
};

struct TutorAnswer {
  std::string text;
  Intent intent;
  Route route = Route::LectureRAG;
  std::vector<std::string> citations;  // chunk ids, in prompt order
  std::vector<Citation> citation_refs;
  std::vector<GuardVerdict> guard_trail;
  std::size_t rewrites_applied = 0;
  bool fallback_used = false;
  // Non-fatal degradations: dense_unavailable, decomposition_degraded,
  // no_sources, judge_unavailable, rewrite_unavailable.
  std::vector<std::string> degradations;
  std::vector<SubQuestion> sub_questions;
};

void to_json(nlohmann::json& j, const Intent& i);
void to_json(nlohmann::json& j, const SubQuestion& s);
void to_json(nlohmann::json& j, const GuardVerdict& v);
void to_json(nlohmann::json& j, const TutorAnswer& a);

// Public view: text, route, citations as {title, seq}, fallback_used. Guard
// evidence stays internal.
nlohmann::json public_projection(const TutorAnswer& a);

struct TranscriptTurn {
  Role role = Role::User;
  std::string text;
  std::optional<nlohmann::json> answer_meta;
};

struct Session {
  std::string session_id;
  std::string course_id;
  std::vector<TranscriptTurn> transcript;
  std::string created_at;
};

void to_json(nlohmann::json& j, const TranscriptTurn& t);
void from_json(const nlohmann::json& j, TranscriptTurn& t);

struct PipelineConfig {
  std::size_t max_subquestions = 5;
  std::size_t context_chunk_cap = 12;
  std::size_t max_rewrites = 2;
  std::size_t conversation_window = 6;
  std::size_t min_solution_lines = 3;
  double code_overlap_threshold = 0.5;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string chat_model = "mock-chat";
};

struct CodeBlock {
  std::size_t span_start = 0;
  std::size_t span_end = 0;
  std::string content;
  std::size_t lines = 0;  // non-blank content lines
};

// Fenced (``` or ~~~) and indented (4 spaces / tab) Markdown code blocks.
std::vector<CodeBlock> find_code_blocks(std::string_view text);

// Identifier-like tokens: [A-Za-z_][A-Za-z0-9_]*.
std::set<std::string> identifier_tokens(std::string_view text);

// The rule-based half of solution detection.
GuardVerdict heuristic_solution_check(std::string_view answer_text,
                                      std::string_view assignment_context,
                                      std::size_t min_solution_lines = 3,
                                      double code_overlap_threshold = 0.5);

// Keyword table used when the model cannot classify a question.
Intent keyword_intent(std::string_view question);

// Parses a numbered list ("1. ..." or "1) ...") into item texts.
std::vector<std::string> parse_numbered_list(std::string_view text);

// Looks up the display title of a course id; defaults to the id itself.
using CourseTitleLookup = std::function<std::string(const std::string&)>;

class Tutor {
 public:
  Tutor(const RetrievalEngine& retrieval, Gateway& gateway, PromptSet prompts = PromptSet::builtin(),
        PipelineConfig config = {}, CourseTitleLookup course_title = {});

  Intent classify_intent(const std::string& question, const std::string& course_context,
                         const std::vector<TranscriptTurn>& transcript = {});
  std::vector<SubQuestion> decompose_question(const std::string& question,
                                              const std::string& course_context = {},
                                              const std::vector<TranscriptTurn>& transcript = {});

  TutorAnswer answer_lecture(const std::string& question, const std::string& course_id,
                             const std::vector<TranscriptTurn>& transcript = {});
  TutorAnswer answer_examprep(const std::string& question, const std::string& course_id,
                              const std::vector<TranscriptTurn>& transcript = {});
  TutorAnswer answer_assignment(const std::string& question, const std::string& course_id,
                                const std::vector<TranscriptTurn>& transcript = {});

  // Heuristic first; the model judge is consulted only when the heuristic
  // finds nothing. Judge failures count as a solution.
  GuardVerdict detect_solution(const std::string& answer_text,
                               const std::string& assignment_context);
  std::string rewrite_to_hints(const std::string& answer_text, const std::string& question,
                               const GuardVerdict& verdict,
                               const std::vector<TranscriptTurn>& transcript = {},
                               const std::string& course_context = {});

  // Classifies, dispatches to one route and appends the user and assistant
  // turns to `session`. Callers serialize access to a session.
  TutorAnswer answer_question(const std::string& question, Session& session);

  const PromptSet& prompts() const { return prompts_; }
  const PipelineConfig& config() const { return config_; }

 private:
  struct Context {
    std::string rendered;
    std::vector<std::string> chunk_ids;
    std::vector<Citation> refs;
    std::string assignment_text;
  };

  std::shared_ptr<const CourseSnapshot> snapshot_for(const std::string& course_id) const;
  RetrievalSet retrieve(const std::string& text, const std::string& course_id,
                        const RetrievalPolicy& policy, TutorAnswer& answer);
  Context build_context(const CourseSnapshot& snapshot, const std::vector<FusedHit>& hits) const;
  std::string render_transcript(const std::vector<TranscriptTurn>& transcript) const;
  std::string course_name(const std::string& course_id) const;
  CompletionResult call(const std::string& stage, const std::string& tag,
                        const std::map<std::string, std::string>& values);

  const RetrievalEngine& retrieval_;
  Gateway& gateway_;
  PromptSet prompts_;
  PipelineConfig config_;
  CourseTitleLookup course_title_;
  GuardVerdict refusal_verdict_;
};

}  // namespace courseassist
