#pragma once

#include "courseassist/errors.hpp"
#include "courseassist/llm.hpp"
#include "courseassist/pipeline.hpp"
#include "courseassist/prompts.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace courseassist {

class ParseError : public UserError {
 public:
  ParseError(std::size_t line_no, const std::string& what)
      : UserError("parse_error", "line " + std::to_string(line_no) + ": " + what), line_no_(line_no) {}
  std::size_t line_no() const { return line_no_; }

 private:
  std::size_t line_no_;
};

class DuplicateId : public UserError {
 public:
  DuplicateId(std::size_t line_no, const std::string& qa_id)
      : UserError("duplicate_id", "line " + std::to_string(line_no) + ": duplicate qa_id " + qa_id),
        qa_id_(qa_id) {}
  const std::string& qa_id() const { return qa_id_; }

 private:
  std::string qa_id_;
};

class InvalidScore : public UserError {
 public:
  explicit InvalidScore(const std::string& what) : UserError("invalid_score", "invalid score: " + what) {}
};

enum class QaCategory { Homework, Conceptual };
enum class SystemKind { Pipeline, Baseline };
enum class Criterion { Usefulness, Accuracy, Appropriateness };

inline constexpr std::array<Criterion, 3> kCriteria{Criterion::Usefulness, Criterion::Accuracy,
                                                    Criterion::Appropriateness};
inline constexpr std::array<SystemKind, 2> kSystems{SystemKind::Pipeline, SystemKind::Baseline};

std::string_view to_string(QaCategory c);
std::string_view to_string(SystemKind s);
std::string_view to_string(Criterion c);
SystemKind system_from_string(std::string_view s);
Criterion criterion_from_string(std::string_view s);

struct EvalRecord {
  std::string qa_id;
  std::string question;
  std::string reference_answer;
  QaCategory category = QaCategory::Homework;
};

// JSONL, one record per line. Blank lines are skipped. An empty file yields
// an empty list and a warning.
std::vector<EvalRecord> load_dataset(const std::filesystem::path& path,
                                     std::vector<std::string>* warnings = nullptr);
std::vector<EvalRecord> parse_dataset(const std::string& text, std::vector<std::string>* warnings = nullptr);

struct GeneratedAnswer {
  std::string qa_id;
  SystemKind system = SystemKind::Pipeline;
  int run_index = 1;
  std::string text;
  std::optional<std::string> route;
  std::int64_t timing_ms = 0;
  bool ok = true;
  std::string error;
};
void to_json(nlohmann::json& j, const GeneratedAnswer& a);
void from_json(const nlohmann::json& j, GeneratedAnswer& a);

// Produces one answer. Implementations must be safe to call concurrently.
class AnswerSource {
 public:
  struct Output {
    std::string text;
    std::optional<std::string> route;
  };
  virtual ~AnswerSource() = default;
  virtual Output answer(const EvalRecord& record, const std::string& course_id) = 0;
};

// The in-process tutor; one fresh session per question.
class TutorSource final : public AnswerSource {
 public:
  explicit TutorSource(Tutor& tutor) : tutor_(tutor) {}
  Output answer(const EvalRecord& record, const std::string& course_id) override;

 private:
  Tutor& tutor_;
};

// A running tutor service reached over HTTP.
class ServiceSource final : public AnswerSource {
 public:
  ServiceSource(std::string base_url, std::string token);
  Output answer(const EvalRecord& record, const std::string& course_id) override;

 private:
  std::string base_url_;
  std::string token_;
};

// Bare chat completion prompted with the question only.
class ChatBaselineSource final : public AnswerSource {
 public:
  ChatBaselineSource(Gateway& gateway, const PromptSet& prompts, double temperature = 0.0,
                     int max_tokens = 1024);
  Output answer(const EvalRecord& record, const std::string& course_id) override;

 private:
  Gateway& gateway_;
  PromptTemplate prompt_;
  double temperature_;
  int max_tokens_;
};

struct GenerateOptions {
  int runs = 2;
  std::size_t concurrency = 4;
  std::string homework_course;    // Homework questions go here
  std::string conceptual_course;  // empty: same as homework_course
  std::optional<std::filesystem::path> answers_path;  // resumable JSONL log
};

struct GenerateResult {
  std::vector<GeneratedAnswer> answers;  // latest row per triple, dataset order
  std::size_t generated = 0;             // attempts made in this call
  std::size_t failed = 0;
};

// Answers every (record, system, run) triple that does not already have a
// successful row in options.answers_path. Failures are recorded, not thrown.
GenerateResult generate(const std::vector<EvalRecord>& records, AnswerSource& pipeline,
                        AnswerSource* baseline, const GenerateOptions& options);

// Reads answers.jsonl; later rows for the same triple win.
std::vector<GeneratedAnswer> load_answers(const std::filesystem::path& path);

struct BlindingEntry {
  std::string qa_id;
  SystemKind system = SystemKind::Pipeline;
  int run_index = 1;
};

struct BlindingKey {
  std::string secret;                           // hex HMAC key
  std::map<std::string, BlindingEntry> entries;  // blinded key -> identity

  std::string blind(const std::string& qa_id, SystemKind system, int run_index) const;
  void save(const std::filesystem::path& path) const;
  static BlindingKey load(const std::filesystem::path& path);
};

inline const std::vector<std::string> kSheetColumns{
    "qa_id",     "question", "reference_answer", "answer_text", "blinded_system_key",
    "usefulness", "accuracy", "appropriateness", "rater_id"};

struct SheetResult {
  std::vector<std::filesystem::path> sheets;
  std::filesystem::path key_path;
  std::size_t rows = 0;
};

// One CSV per run (rater pass) with the criterion columns left blank. Only
// successful answers get rows. The key file is written next to, not into,
// the sheets. `secret` is generated when empty.
SheetResult emit_rating_sheets(const std::vector<EvalRecord>& records,
                               const std::vector<GeneratedAnswer>& answers,
                               const std::filesystem::path& out_dir,
                               const std::filesystem::path& key_path, std::string secret = {});

struct RubricScore {
  std::string qa_id;
  SystemKind system = SystemKind::Pipeline;
  Criterion criterion = Criterion::Usefulness;
  int run_index = 1;
  double score = 0.0;
  std::string rater_id;
};

// Only 0, 0.5 and 1 are accepted.
double parse_score(std::string_view text);
double validate_score(double value);

// Unblinds filled-in sheets. Blank criterion cells are skipped.
std::vector<RubricScore> load_scored_sheets(const std::vector<std::filesystem::path>& sheets,
                                            const BlindingKey& key);
std::vector<RubricScore> load_scores_jsonl(const std::filesystem::path& path);

struct AggregateReport {
  std::map<SystemKind, std::map<Criterion, double>> means;
  std::map<SystemKind, std::map<Criterion, std::size_t>> pairs;  // (qa, run) pairs behind each mean
  std::map<SystemKind, double> average;                           // mean of the criterion means
  std::vector<std::string> flags;                                 // e.g. items missing a run
};

// Per (system, criterion): mean over (qa_id, run) pairs; several raters on
// one pair are averaged first.
AggregateReport aggregate(const std::vector<RubricScore>& scores, int expected_runs = 2);
AggregateReport report_from_means(const std::map<SystemKind, std::map<Criterion, double>>& means);

double round_half_up(double value, int decimals = 2);
std::string display_score(double value);  // half-up, two decimals

nlohmann::json report_json(const AggregateReport& report);
std::string report_markdown(const AggregateReport& report);

// Minimal RFC 4180 CSV.
std::string csv_row(const std::vector<std::string>& fields);
std::vector<std::vector<std::string>> parse_csv(const std::string& text);

}  // namespace courseassist
