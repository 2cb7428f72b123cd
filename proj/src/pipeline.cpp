#include "courseassist/pipeline.hpp"

#include "courseassist/errors.hpp"
#include "courseassist/text.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <map>
#include <set>

namespace courseassist {

using json = nlohmann::json;

namespace {

constexpr std::string_view kNoSourceNotice =
    "Note: no matching course materials were found, so this answer is not based on the "
    "course content.\n\n";

std::string_view to_string(IntentSource s) {
  return s == IntentSource::Model ? "Model" : "KeywordFallback";
}

std::string_view to_string(JudgeSource s) {
  switch (s) {
    case JudgeSource::Model: return "Model";
    case JudgeSource::Heuristic: return "Heuristic";
    case JudgeSource::Both: return "Both";
  }
  return "Both";
}

void add_degradation(TutorAnswer& a, const std::string& what) {
  if (std::find(a.degradations.begin(), a.degradations.end(), what) == a.degradations.end()) {
    a.degradations.push_back(what);
  }
}

std::string format_ratio(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

struct Line {
  std::string_view text;
  std::size_t begin = 0;
  std::size_t end = 0;  // excluding the newline
};

std::vector<Line> lines_with_offsets(std::string_view text) {
  std::vector<Line> out;
  std::size_t pos = 0;
  for (auto l : split_lines(text)) {
    out.push_back(Line{l, pos, pos + l.size()});
    pos += l.size() + 1;
  }
  return out;
}

// Returns the fence character and run length when `line` opens or closes a fence.
std::optional<std::pair<char, std::size_t>> fence_of(std::string_view line) {
  std::size_t indent = 0;
  while (indent < line.size() && indent < 3 && line[indent] == ' ') ++indent;
  if (indent >= line.size()) return std::nullopt;
  const char c = line[indent];
  if (c != '`' && c != '~') return std::nullopt;
  std::size_t n = 0;
  while (indent + n < line.size() && line[indent + n] == c) ++n;
  if (n < 3) return std::nullopt;
  return std::make_pair(c, n);
}

bool is_indented_code_line(std::string_view line) {
  return !is_blank(line) && (line.starts_with("    ") || line.starts_with("\t"));
}

std::string label_text(std::string_view raw) {
  std::string s = to_lower_ascii(trim(raw));
  auto strip = [](char c) {
    return c == '"' || c == '\'' || c == '*' || c == '`' || c == '.' || c == ':' || c == ' ';
  };
  while (!s.empty() && strip(s.front())) s.erase(s.begin());
  while (!s.empty() && strip(s.back())) s.pop_back();
  return s;
}

std::optional<IntentCategory> exact_label(const std::string& s) {
  if (s == "lecture") return IntentCategory::Lecture;
  if (s == "assignment") return IntentCategory::Assignment;
  if (s == "examprep" || s == "exam prep" || s == "exam_prep" || s == "exam-prep" ||
      s == "exam preparation") {
    return IntentCategory::ExamPrep;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(Route r) {
  switch (r) {
    case Route::LectureRAG: return "LectureRAG";
    case Route::ExamPrepDecompose: return "ExamPrepDecompose";
    case Route::AssignmentGuarded: return "AssignmentGuarded";
  }
  return "LectureRAG";
}

Route route_for(IntentCategory c) {
  switch (c) {
    case IntentCategory::Lecture: return Route::LectureRAG;
    case IntentCategory::ExamPrep: return Route::ExamPrepDecompose;
    case IntentCategory::Assignment: return Route::AssignmentGuarded;
  }
  return Route::LectureRAG;
}

void to_json(json& j, const Intent& i) {
  j = json{{"category", to_string(i.category)},
           {"confidence", i.confidence},
           {"source", to_string(i.source)}};
}

void to_json(json& j, const SubQuestion& s) {
  j = json{{"text", s.text}, {"index", s.index}};
  j["retrieval"] = s.retrieval ? json(*s.retrieval) : json(nullptr);
}

void to_json(json& j, const GuardVerdict& v) {
  json evidence = json::array();
  for (const auto& e : v.evidence) {
    evidence.push_back(
        json{{"span_start", e.span_start}, {"span_end", e.span_end}, {"reason", e.reason}});
  }
  j = json{{"contains_solution", v.contains_solution},
           {"evidence", evidence},
           {"judge_source", to_string(v.judge_source)}};
}

void to_json(json& j, const TutorAnswer& a) {
  json refs = json::array();
  for (const auto& c : a.citation_refs) {
    refs.push_back(
        json{{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"title", c.title}, {"seq", c.seq}});
  }
  j = json{{"text", a.text},
           {"intent", a.intent},
           {"route", to_string(a.route)},
           {"citations", a.citations},
           {"citation_refs", refs},
           {"guard_trail", a.guard_trail},
           {"rewrites_applied", a.rewrites_applied},
           {"fallback_used", a.fallback_used},
           {"degradations", a.degradations},
           {"sub_questions", a.sub_questions}};
}

json public_projection(const TutorAnswer& a) {
  json citations = json::array();
  for (const auto& c : a.citation_refs) citations.push_back(json{{"title", c.title}, {"seq", c.seq}});
  return json{{"text", a.text},
              {"route", to_string(a.route)},
              {"citations", citations},
              {"fallback_used", a.fallback_used}};
}

void to_json(json& j, const TranscriptTurn& t) {
  j = json{{"role", to_string(t.role)}, {"text", t.text}};
  if (t.answer_meta) j["answer_meta"] = *t.answer_meta;
}

void from_json(const json& j, TranscriptTurn& t) {
  t.role = role_from_string(j.at("role").get<std::string>());
  t.text = j.at("text").get<std::string>();
  if (j.contains("answer_meta") && !j["answer_meta"].is_null()) t.answer_meta = j["answer_meta"];
}

std::vector<CodeBlock> find_code_blocks(std::string_view text) {
  const auto lines = lines_with_offsets(text);
  std::vector<CodeBlock> blocks;
  std::size_t i = 0;
  while (i < lines.size()) {
    if (auto open = fence_of(lines[i].text)) {
      CodeBlock b;
      b.span_start = lines[i].begin;
      std::size_t j = i + 1;
      bool closed = false;
      for (; j < lines.size(); ++j) {
        auto close = fence_of(lines[j].text);
        if (close && close->first == open->first && close->second >= open->second &&
            is_blank(trim(lines[j].text).substr(close->second))) {
          closed = true;
          break;
        }
        b.content.append(lines[j].text).push_back('\n');
        if (!is_blank(lines[j].text)) ++b.lines;
      }
      b.span_end = closed ? lines[j].end : text.size();
      blocks.push_back(std::move(b));
      i = closed ? j + 1 : lines.size();
      continue;
    }
    const bool after_break = i == 0 || is_blank(lines[i - 1].text);
    if (after_break && is_indented_code_line(lines[i].text)) {
      CodeBlock b;
      b.span_start = lines[i].begin;
      std::size_t last = i;
      std::size_t j = i;
      while (j < lines.size() && (is_indented_code_line(lines[j].text) || is_blank(lines[j].text))) {
        if (is_indented_code_line(lines[j].text)) last = j;
        ++j;
      }
      for (std::size_t k = i; k <= last; ++k) {
        b.content.append(lines[k].text).push_back('\n');
        if (!is_blank(lines[k].text)) ++b.lines;
      }
      b.span_end = lines[last].end;
      blocks.push_back(std::move(b));
      i = last + 1;
      continue;
    }
    ++i;
  }
  return blocks;
}

std::set<std::string> identifier_tokens(std::string_view text) {
  std::set<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_ident_start(text[i]) && (i == 0 || !is_ident_char(text[i - 1]))) {
      std::size_t j = i + 1;
      while (j < text.size() && is_ident_char(text[j])) ++j;
      out.emplace(text.substr(i, j - i));
      i = j;
      continue;
    }
    ++i;
  }
  return out;
}

GuardVerdict heuristic_solution_check(std::string_view answer_text,
                                      std::string_view assignment_context,
                                      std::size_t min_solution_lines,
                                      double code_overlap_threshold) {
  GuardVerdict v;
  v.judge_source = JudgeSource::Heuristic;
  const auto spec_ids = identifier_tokens(assignment_context);
  for (const auto& block : find_code_blocks(answer_text)) {
    if (block.lines >= min_solution_lines) {
      v.evidence.push_back(Evidence{block.span_start, block.span_end,
                                    "code block with " + std::to_string(block.lines) + " lines"});
      continue;
    }
    const auto ids = identifier_tokens(block.content);
    if (ids.empty() || spec_ids.empty()) continue;
    std::size_t shared = 0;
    for (const auto& id : ids) shared += spec_ids.count(id);
    const double jaccard = static_cast<double>(shared) /
                           static_cast<double>(ids.size() + spec_ids.size() - shared);
    if (jaccard >= code_overlap_threshold) {
      v.evidence.push_back(Evidence{
          block.span_start, block.span_end,
          "code block overlaps assignment identifiers (jaccard " + format_ratio(jaccard) + ")"});
    }
  }
  v.contains_solution = !v.evidence.empty();
  return v;
}

Intent keyword_intent(std::string_view question) {
  static const std::set<std::string> kAssignment{"homework", "homeworks", "hw", "assignment",
                                                 "assignments", "exercise", "exercises", "project",
                                                 "pset"};
  static const std::set<std::string> kExam{"exam", "exams", "midterm", "midterms", "final",
                                           "finals", "study", "studying", "quiz"};
  const auto terms = tokenize_terms(question);
  bool assignment = false;
  bool exam = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (kAssignment.count(terms[i])) assignment = true;
    if (terms[i] == "problem" && i + 1 < terms.size() &&
        std::all_of(terms[i + 1].begin(), terms[i + 1].end(),
                    [](char c) { return c >= '0' && c <= '9'; })) {
      assignment = true;
    }
    if (kExam.count(terms[i])) exam = true;
  }
  // Assignment wins ties: it is the only guarded route.
  if (assignment) return Intent{IntentCategory::Assignment, 0.6, IntentSource::KeywordFallback};
  if (exam) return Intent{IntentCategory::ExamPrep, 0.6, IntentSource::KeywordFallback};
  return Intent{IntentCategory::Lecture, 0.34, IntentSource::KeywordFallback};
}

std::vector<std::string> parse_numbered_list(std::string_view text) {
  std::vector<std::string> items;
  for (auto line : split_lines(text)) {
    auto l = trim(line);
    std::size_t i = 0;
    while (i < l.size() && l[i] >= '0' && l[i] <= '9') ++i;
    if (i == 0 || i >= l.size() || (l[i] != '.' && l[i] != ')')) continue;
    auto item = trim(l.substr(i + 1));
    if (!item.empty()) items.emplace_back(item);
  }
  return items;
}

Tutor::Tutor(const RetrievalEngine& retrieval, Gateway& gateway, PromptSet prompts,
             PipelineConfig config, CourseTitleLookup course_title)
    : retrieval_(retrieval),
      gateway_(gateway),
      prompts_(std::move(prompts)),
      config_(std::move(config)),
      course_title_(std::move(course_title)) {
  const auto check = heuristic_solution_check(prompts_.refusal(), "", config_.min_solution_lines,
                                              config_.code_overlap_threshold);
  if (check.contains_solution) {
    throw InvalidArgument("refusal template must not contain code blocks");
  }
  refusal_verdict_ = GuardVerdict{false, {}, JudgeSource::Heuristic};
}

std::string Tutor::course_name(const std::string& course_id) const {
  if (course_title_) {
    auto title = course_title_(course_id);
    if (!title.empty()) return title;
  }
  return course_id;
}

std::shared_ptr<const CourseSnapshot> Tutor::snapshot_for(const std::string& course_id) const {
  return retrieval_.snapshot(course_id);
}

std::string Tutor::render_transcript(const std::vector<TranscriptTurn>& transcript) const {
  if (transcript.empty() || config_.conversation_window == 0) return "(none)";
  const std::size_t start = transcript.size() > config_.conversation_window
                                ? transcript.size() - config_.conversation_window
                                : 0;
  std::string out;
  for (std::size_t i = start; i < transcript.size(); ++i) {
    out += transcript[i].role == Role::User ? "Student: " : "Tutor: ";
    out += transcript[i].text;
    if (i + 1 < transcript.size()) out += "\n";
  }
  return out;
}

CompletionResult Tutor::call(const std::string& stage, const std::string& tag,
                             const std::map<std::string, std::string>& values) {
  CompletionRequest req;
  req.messages = prompts_.get(stage).render(values);
  req.temperature = config_.temperature;
  req.max_tokens = config_.max_tokens;
  req.model_id = config_.chat_model;
  req.tag = tag;
  return gateway_.complete(req);
}

Intent Tutor::classify_intent(const std::string& question, const std::string& course_context,
                              const std::vector<TranscriptTurn>& transcript) {
  if (is_blank(question)) throw EmptyQuestion();
  std::string output;
  try {
    output = call("intent", "intent",
                  {{"course", course_context.empty() ? std::string("this course") : course_context},
                   {"transcript", render_transcript(transcript)},
                   {"question", question}})
                 .text;
  } catch (const ProviderError&) {
    return keyword_intent(question);
  }
  const auto label = label_text(output);
  if (auto exact = exact_label(label)) return Intent{*exact, 1.0, IntentSource::Model};

  std::set<IntentCategory> mentioned;
  const auto terms = tokenize_terms(output);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i] == "lecture") mentioned.insert(IntentCategory::Lecture);
    if (terms[i] == "assignment") mentioned.insert(IntentCategory::Assignment);
    if (terms[i] == "examprep" ||
        (terms[i] == "exam" && i + 1 < terms.size() &&
         (terms[i + 1] == "prep" || terms[i + 1] == "preparation"))) {
      mentioned.insert(IntentCategory::ExamPrep);
    }
  }
  if (mentioned.size() == 1) return Intent{*mentioned.begin(), 0.75, IntentSource::Model};
  return keyword_intent(question);
}

std::vector<SubQuestion> Tutor::decompose_question(const std::string& question,
                                                   const std::string& course_context,
                                                   const std::vector<TranscriptTurn>& transcript) {
  if (is_blank(question)) throw EmptyQuestion();
  std::vector<std::string> items;
  try {
    const auto out = call("decompose", "decompose",
                          {{"course", course_context.empty() ? std::string("this course")
                                                             : course_context},
                           {"max_items", std::to_string(config_.max_subquestions)},
                           {"transcript", render_transcript(transcript)},
                           {"question", question}});
    items = parse_numbered_list(out.text);
  } catch (const ProviderError&) {
    items.clear();
  }
  std::vector<SubQuestion> subs;
  if (items.empty()) {
    subs.push_back(SubQuestion{question, 0, std::nullopt});
    return subs;
  }
  if (items.size() > config_.max_subquestions) items.resize(config_.max_subquestions);
  for (std::size_t i = 0; i < items.size(); ++i) {
    subs.push_back(SubQuestion{std::move(items[i]), i, std::nullopt});
  }
  return subs;
}

RetrievalSet Tutor::retrieve(const std::string& text, const std::string& course_id,
                             const RetrievalPolicy& policy, TutorAnswer& answer) {
  RetrievalQuery q;
  q.text = text;
  q.course_id = course_id;
  q.k = policy.k;
  q.channels = policy.channels;
  q.material_filter = policy.material_filter;
  RetrievalSet set;
  set.query_echo = q;
  if (!policy.retrieve_at_all) return set;
  const auto snap = snapshot_for(course_id);
  try {
    set = hybrid_search(q, *snap, [this](const std::string& t) { return gateway_.embed_one(t); },
                        retrieval_.config());
  } catch (const EmptyQuery&) {
    return set;
  }
  if (set.query_echo.dense_degraded) add_degradation(answer, "dense_unavailable");
  return set;
}

Tutor::Context Tutor::build_context(const CourseSnapshot& snapshot,
                                    const std::vector<FusedHit>& hits) const {
  Context ctx;
  std::size_t n = 0;
  for (const auto& hit : hits) {
    auto it = snapshot.chunks.find(hit.chunk_id);
    if (it == snapshot.chunks.end()) continue;
    const auto& chunk = it->second;
    auto title_it = snapshot.doc_titles.find(chunk.doc_id);
    std::string title = title_it != snapshot.doc_titles.end() && !title_it->second.empty()
                            ? title_it->second
                            : chunk.doc_id;
    ++n;
    if (!ctx.rendered.empty()) ctx.rendered += "\n\n";
    ctx.rendered += "[" + std::to_string(n) + "] " + std::string(to_string(chunk.material_type)) +
                    ": " + title + " (part " + std::to_string(chunk.seq + 1) + ")\n" +
                    std::string(trim(chunk.text));
    ctx.chunk_ids.push_back(chunk.chunk_id);
    ctx.refs.push_back(Citation{chunk.chunk_id, chunk.doc_id, title, chunk.seq});
    if (chunk.material_type == MaterialType::Assignment) {
      if (!ctx.assignment_text.empty()) ctx.assignment_text += "\n\n";
      ctx.assignment_text += chunk.text;
    }
  }
  if (ctx.rendered.empty()) ctx.rendered = "(no course materials matched this question)";
  return ctx;
}

TutorAnswer Tutor::answer_lecture(const std::string& question, const std::string& course_id,
                                  const std::vector<TranscriptTurn>& transcript) {
  if (is_blank(question)) throw EmptyQuestion();
  const auto snap = snapshot_for(course_id);
  TutorAnswer a;
  a.intent = Intent{IntentCategory::Lecture, 1.0, IntentSource::Model};
  a.route = Route::LectureRAG;
  const auto set = retrieve(question, course_id, policy_for(IntentCategory::Lecture), a);
  const auto ctx = build_context(*snap, set.hits);
  std::string text;
  try {
    text = call("answer_lecture", "answer",
                {{"course", course_name(course_id)},
                 {"context", ctx.rendered},
                 {"transcript", render_transcript(transcript)},
                 {"question", question}})
               .text;
  } catch (const ProviderError& e) {
    throw AnswerUnavailable(e.code());
  }
  a.citations = ctx.chunk_ids;
  a.citation_refs = ctx.refs;
  if (ctx.chunk_ids.empty()) {
    add_degradation(a, "no_sources");
    text = std::string(kNoSourceNotice) + text;
  }
  a.text = std::move(text);
  return a;
}

TutorAnswer Tutor::answer_examprep(const std::string& question, const std::string& course_id,
                                   const std::vector<TranscriptTurn>& transcript) {
  if (is_blank(question)) throw EmptyQuestion();
  const auto snap = snapshot_for(course_id);
  TutorAnswer a;
  a.intent = Intent{IntentCategory::ExamPrep, 1.0, IntentSource::Model};
  a.route = Route::ExamPrepDecompose;

  auto subs = decompose_question(question, course_name(course_id), transcript);
  if (subs.size() == 1 && subs.front().text == question) add_degradation(a, "decomposition_degraded");

  const auto policy = policy_for(IntentCategory::ExamPrep);
  std::map<std::string, FusedHit> merged;
  for (auto& sub : subs) {
    sub.retrieval = retrieve(sub.text, course_id, policy, a);
    for (const auto& hit : sub.retrieval->hits) {
      auto [it, inserted] = merged.emplace(hit.chunk_id, hit);
      if (!inserted && hit.fused_score > it->second.fused_score) it->second = hit;
    }
  }
  std::vector<FusedHit> combined;
  for (auto& [id, hit] : merged) combined.push_back(hit);
  std::stable_sort(combined.begin(), combined.end(), [](const FusedHit& x, const FusedHit& y) {
    return x.fused_score > y.fused_score;
  });
  if (combined.size() > config_.context_chunk_cap) combined.resize(config_.context_chunk_cap);

  const auto ctx = build_context(*snap, combined);
  std::string listing;
  for (const auto& sub : subs) {
    if (!listing.empty()) listing += "\n";
    listing += std::to_string(sub.index + 1) + ". " + sub.text;
  }
  std::string text;
  try {
    text = call("answer_examprep", "answer",
                {{"course", course_name(course_id)},
                 {"subquestions", listing},
                 {"context", ctx.rendered},
                 {"transcript", render_transcript(transcript)},
                 {"question", question}})
               .text;
  } catch (const ProviderError& e) {
    throw AnswerUnavailable(e.code());
  }
  a.citations = ctx.chunk_ids;
  a.citation_refs = ctx.refs;
  if (ctx.chunk_ids.empty()) {
    add_degradation(a, "no_sources");
    text = std::string(kNoSourceNotice) + text;
  }
  a.text = std::move(text);
  a.sub_questions = std::move(subs);
  return a;
}

GuardVerdict Tutor::detect_solution(const std::string& answer_text,
                                    const std::string& assignment_context) {
  auto verdict = heuristic_solution_check(answer_text, assignment_context,
                                          config_.min_solution_lines,
                                          config_.code_overlap_threshold);
  if (verdict.contains_solution) return verdict;

  const Evidence whole{0, answer_text.size(), ""};
  GuardVerdict judged;
  judged.judge_source = JudgeSource::Model;
  std::string output;
  try {
    output = call("detect", "detect",
                  {{"assignment_context", assignment_context.empty()
                                              ? std::string("(no assignment description found)")
                                              : assignment_context},
                   {"answer", answer_text}})
                 .text;
  } catch (const ProviderError& e) {
    judged.contains_solution = true;
    judged.evidence.push_back(
        Evidence{whole.span_start, whole.span_end, "judge unavailable (" + e.code() + ")"});
    return judged;
  }
  const auto label = label_text(output);
  if (label.starts_with("no")) {
    return GuardVerdict{false, {}, JudgeSource::Both};
  }
  judged.contains_solution = true;
  judged.evidence.push_back(Evidence{whole.span_start, whole.span_end,
                                     label.starts_with("yes") ? "judge: answer gives away a solution"
                                                              : "judge output unparseable"});
  return judged;
}

std::string Tutor::rewrite_to_hints(const std::string& answer_text, const std::string& question,
                                    const GuardVerdict& verdict,
                                    const std::vector<TranscriptTurn>& transcript,
                                    const std::string& course_context) {
  if (!verdict.contains_solution) {
    throw ContractViolation("rewrite_to_hints requires a verdict that found a solution");
  }
  std::string evidence;
  for (const auto& e : verdict.evidence) {
    if (!evidence.empty()) evidence += "\n";
    evidence += "- " + e.reason;
  }
  return call("rewrite", "rewrite",
              {{"course", course_context.empty() ? std::string("this course") : course_context},
               {"transcript", render_transcript(transcript)},
               {"question", question},
               {"answer", answer_text},
               {"evidence", evidence}})
      .text;
}

TutorAnswer Tutor::answer_assignment(const std::string& question, const std::string& course_id,
                                     const std::vector<TranscriptTurn>& transcript) {
  if (is_blank(question)) throw EmptyQuestion();
  const auto snap = snapshot_for(course_id);
  TutorAnswer a;
  a.intent = Intent{IntentCategory::Assignment, 1.0, IntentSource::Model};
  a.route = Route::AssignmentGuarded;
  const auto set = retrieve(question, course_id, policy_for(IntentCategory::Assignment), a);
  const auto ctx = build_context(*snap, set.hits);
  a.citations = ctx.chunk_ids;
  a.citation_refs = ctx.refs;
  if (ctx.chunk_ids.empty()) add_degradation(a, "no_sources");

  std::string text;
  try {
    text = call("answer_assignment", "answer",
                {{"course", course_name(course_id)},
                 {"context", ctx.rendered},
                 {"transcript", render_transcript(transcript)},
                 {"question", question}})
               .text;
  } catch (const ProviderError& e) {
    throw AnswerUnavailable(e.code());
  }

  for (;;) {
    auto verdict = detect_solution(text, ctx.assignment_text);
    const bool flagged = verdict.contains_solution;
    a.guard_trail.push_back(verdict);
    if (!flagged) break;
    if (a.rewrites_applied >= config_.max_rewrites) {
      text = prompts_.refusal();
      a.fallback_used = true;
      a.guard_trail.push_back(refusal_verdict_);
      break;
    }
    try {
      text = rewrite_to_hints(text, question, a.guard_trail.back(), transcript,
                              course_name(course_id));
    } catch (const ProviderError&) {
      add_degradation(a, "rewrite_unavailable");
      text = prompts_.refusal();
      a.fallback_used = true;
      a.guard_trail.push_back(refusal_verdict_);
      break;
    }
    ++a.rewrites_applied;
  }
  a.text = std::move(text);
  return a;
}

TutorAnswer Tutor::answer_question(const std::string& question, Session& session) {
  if (is_blank(question)) throw EmptyQuestion();
  snapshot_for(session.course_id);
  const auto& transcript = session.transcript;
  const auto intent = classify_intent(question, course_name(session.course_id), transcript);

  TutorAnswer answer;
  switch (intent.category) {
    case IntentCategory::Lecture:
      answer = answer_lecture(question, session.course_id, transcript);
      break;
    case IntentCategory::ExamPrep:
      answer = answer_examprep(question, session.course_id, transcript);
      break;
    case IntentCategory::Assignment:
      answer = answer_assignment(question, session.course_id, transcript);
      break;
  }
  answer.intent = intent;
  answer.route = route_for(intent.category);

  session.transcript.push_back(TranscriptTurn{Role::User, question, std::nullopt});
  session.transcript.push_back(
      TranscriptTurn{Role::Assistant, answer.text, public_projection(answer)});
  return answer;
}

}  // namespace courseassist
