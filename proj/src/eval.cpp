#include "courseassist/eval.hpp"

#include "courseassist/corpus.hpp"
#include "courseassist/http_provider.hpp"
#include "courseassist/text.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace courseassist {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(QaCategory c) { return c == QaCategory::Homework ? "Homework" : "Conceptual"; }
std::string_view to_string(SystemKind s) { return s == SystemKind::Pipeline ? "Pipeline" : "Baseline"; }

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::Usefulness: return "Usefulness";
    case Criterion::Accuracy: return "Accuracy";
    case Criterion::Appropriateness: return "Appropriateness";
  }
  return "Usefulness";
}

SystemKind system_from_string(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "pipeline") return SystemKind::Pipeline;
  if (l == "baseline") return SystemKind::Baseline;
  throw InvalidArgument("unknown system: " + std::string(s));
}

Criterion criterion_from_string(std::string_view s) {
  const auto l = to_lower_ascii(s);
  if (l == "usefulness") return Criterion::Usefulness;
  if (l == "accuracy") return Criterion::Accuracy;
  if (l == "appropriateness") return Criterion::Appropriateness;
  throw InvalidArgument("unknown criterion: " + std::string(s));
}

// --- dataset ----------------------------------------------------------------

std::vector<EvalRecord> parse_dataset(const std::string& text, std::vector<std::string>* warnings) {
  std::vector<EvalRecord> records;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (auto line : split_lines(text)) {
    ++line_no;
    if (is_blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw ParseError(line_no, "invalid JSON");
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    EvalRecord r;
    auto field = [&](const char* name) {
      auto it = j.find(name);
      if (it == j.end() || !it->is_string() || is_blank(it->get<std::string>())) {
        throw ParseError(line_no, std::string("missing or empty field '") + name + "'");
      }
      return it->get<std::string>();
    };
    r.qa_id = field("qa_id");
    r.question = field("question");
    r.reference_answer = field("reference_answer");
    const auto category = to_lower_ascii(field("category"));
    if (category == "homework") r.category = QaCategory::Homework;
    else if (category == "conceptual") r.category = QaCategory::Conceptual;
    else throw ParseError(line_no, "bad category '" + j["category"].get<std::string>() + "'");
    if (!seen.insert(r.qa_id).second) throw DuplicateId(line_no, r.qa_id);
    records.push_back(std::move(r));
  }
  if (records.empty() && warnings) warnings->push_back("dataset is empty");
  return records;
}

std::vector<EvalRecord> load_dataset(const fs::path& path, std::vector<std::string>* warnings) {
  if (!fs::exists(path)) throw InvalidArgument("dataset not found: " + path.string());
  return parse_dataset(read_file(path), warnings);
}

void to_json(json& j, const GeneratedAnswer& a) {
  j = json{{"qa_id", a.qa_id},
           {"system", to_string(a.system)},
           {"run_index", a.run_index},
           {"text", a.text},
           {"route", a.route ? json(*a.route) : json(nullptr)},
           {"timing_ms", a.timing_ms},
           {"status", a.ok ? "ok" : "failed"}};
  if (!a.ok) j["error"] = a.error;
}

void from_json(const json& j, GeneratedAnswer& a) {
  a.qa_id = j.at("qa_id").get<std::string>();
  a.system = system_from_string(j.at("system").get<std::string>());
  a.run_index = j.at("run_index").get<int>();
  a.text = j.value("text", std::string{});
  a.route = j.contains("route") && j["route"].is_string() ? std::optional(j["route"].get<std::string>())
                                                          : std::nullopt;
  a.timing_ms = j.value("timing_ms", std::int64_t{0});
  a.ok = j.value("status", std::string("ok")) == "ok";
  a.error = j.value("error", std::string{});
}

// --- answer sources ----------------------------------------------------------

AnswerSource::Output TutorSource::answer(const EvalRecord& record, const std::string& course_id) {
  Session session;
  session.session_id = random_url_safe_id();
  session.course_id = course_id;
  auto a = tutor_.answer_question(record.question, session);
  return {a.text, std::string(to_string(a.route))};
}

ServiceSource::ServiceSource(std::string base_url, std::string token)
    : base_url_(std::move(base_url)), token_(std::move(token)) {}

AnswerSource::Output ServiceSource::answer(const EvalRecord& record, const std::string& course_id) {
  const auto url = BaseUrl::parse(base_url_);
  httplib::Client client(url.origin());
  client.set_read_timeout(std::chrono::seconds(120));
  const httplib::Headers headers{{"Authorization", "Bearer " + token_}};
  auto post = [&](const std::string& path, const json& body) {
    auto res = client.Post(url.prefix + path, headers, body.dump(), "application/json");
    if (!res) throw TransientProviderFailure("service unreachable: " + httplib::to_string(res.error()));
    if (res->status == 404) throw UnknownCourse(course_id);
    if (res->status / 100 != 2) {
      throw ProviderRejected("service returned " + std::to_string(res->status) + ": " + res->body);
    }
    return json::parse(res->body);
  };
  const auto session = post("/v1/sessions", {{"course_id", course_id}});
  const auto reply = post("/v1/sessions/" + session.at("session_id").get<std::string>() + "/questions",
                          {{"text", record.question}});
  const auto& answer = reply.at("answer");
  return {answer.at("text").get<std::string>(), answer.at("route").get<std::string>()};
}

ChatBaselineSource::ChatBaselineSource(Gateway& gateway, const PromptSet& prompts, double temperature,
                                       int max_tokens)
    : gateway_(gateway), prompt_(prompts.get("baseline")), temperature_(temperature), max_tokens_(max_tokens) {}

AnswerSource::Output ChatBaselineSource::answer(const EvalRecord& record, const std::string&) {
  CompletionRequest req;
  req.messages = prompt_.render({{"question", record.question}});
  req.temperature = temperature_;
  req.max_tokens = max_tokens_;
  req.model_id = gateway_.config().chat_model;
  req.tag = "baseline";
  return {gateway_.complete(req).text, std::nullopt};
}

// --- generation ----------------------------------------------------------------

namespace {

using Triple = std::tuple<std::string, SystemKind, int>;

Triple triple_of(const GeneratedAnswer& a) { return {a.qa_id, a.system, a.run_index}; }

}  // namespace

std::vector<GeneratedAnswer> load_answers(const fs::path& path) {
  std::vector<GeneratedAnswer> out;
  if (!fs::exists(path)) return out;
  std::map<Triple, std::size_t> index;
  std::size_t line_no = 0;
  const auto text = read_file(path);
  for (auto line : split_lines(text)) {
    ++line_no;
    if (is_blank(line)) continue;
    GeneratedAnswer a;
    try {
      a = json::parse(line).get<GeneratedAnswer>();
    } catch (const json::exception&) {
      // A torn final line from an interrupted run is expected; drop it.
      continue;
    }
    auto [it, fresh] = index.emplace(triple_of(a), out.size());
    if (fresh) out.push_back(std::move(a));
    else out[it->second] = std::move(a);
  }
  return out;
}

GenerateResult generate(const std::vector<EvalRecord>& records, AnswerSource& pipeline,
                        AnswerSource* baseline, const GenerateOptions& options) {
  if (options.runs < 1) throw InvalidArgument("runs must be at least 1");
  std::map<Triple, GeneratedAnswer> latest;
  if (options.answers_path) {
    for (auto& a : load_answers(*options.answers_path)) latest[triple_of(a)] = std::move(a);
  }

  struct Job {
    const EvalRecord* record;
    SystemKind system;
    int run;
  };
  std::vector<Job> jobs;
  for (const auto& r : records) {
    for (auto system : kSystems) {
      for (int run = 1; run <= options.runs; ++run) {
        auto it = latest.find({r.qa_id, system, run});
        if (it != latest.end() && it->second.ok) continue;
        jobs.push_back({&r, system, run});
      }
    }
  }

  std::ofstream log;
  if (options.answers_path) {
    if (options.answers_path->has_parent_path()) fs::create_directories(options.answers_path->parent_path());
    log.open(*options.answers_path, std::ios::app | std::ios::binary);
    if (!log) throw StorageError("cannot open " + options.answers_path->string());
    // Terminate a torn last line so the next row is not glued onto it.
    const auto existing = read_file(*options.answers_path);
    if (!existing.empty() && existing.back() != '\n') log << '\n';
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::size_t failed = 0;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const auto& job = jobs[i];
      GeneratedAnswer a;
      a.qa_id = job.record->qa_id;
      a.system = job.system;
      a.run_index = job.run;
      const auto& course = job.record->category == QaCategory::Conceptual && !options.conceptual_course.empty()
                               ? options.conceptual_course
                               : options.homework_course;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        AnswerSource* source = job.system == SystemKind::Pipeline ? &pipeline : baseline;
        if (source == nullptr) throw InvalidArgument("no baseline endpoint configured");
        auto out = source->answer(*job.record, course);
        a.text = std::move(out.text);
        a.route = std::move(out.route);
      } catch (const std::exception& e) {
        a.ok = false;
        a.error = e.what();
      }
      a.timing_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - t0)
                        .count();
      std::lock_guard lock(mu);
      if (!a.ok) ++failed;
      if (log.is_open()) {
        log << json(a).dump() << '\n';
        log.flush();
      }
      latest[triple_of(a)] = std::move(a);
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.concurrency, jobs.size()));
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(work);
  for (auto& t : threads) t.join();

  GenerateResult result;
  result.generated = jobs.size();
  result.failed = failed;
  for (const auto& r : records) {
    for (auto system : kSystems) {
      for (int run = 1; run <= options.runs; ++run) {
        auto it = latest.find({r.qa_id, system, run});
        if (it != latest.end()) result.answers.push_back(it->second);
      }
    }
  }
  return result;
}

// --- CSV ----------------------------------------------------------------------

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    const auto& f = fields[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out += f;
      continue;
    }
    out.push_back('"');
    for (char c : f) {
      if (c == '"') out.push_back('"');
      out.push_back(c);
    }
    out.push_back('"');
  }
  out += "\r\n";
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    row_started = true;
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      row_started = false;
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw InvalidArgument("unterminated quoted CSV field");
  if (row_started) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// --- blinding and sheets --------------------------------------------------------

std::string BlindingKey::blind(const std::string& qa_id, SystemKind system, int run_index) const {
  const std::string message = qa_id + '\x1f' + std::string(to_string(system)) + '\x1f' + std::to_string(run_index);
  return hmac_sha256_hex(secret, message).substr(0, 16);
}

void BlindingKey::save(const fs::path& path) const {
  json entries_json = json::object();
  for (const auto& [k, e] : entries) {
    entries_json[k] = {{"qa_id", e.qa_id}, {"system", to_string(e.system)}, {"run_index", e.run_index}};
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, json{{"version", 1}, {"secret", secret}, {"entries", entries_json}}.dump(2) + "\n");
}

BlindingKey BlindingKey::load(const fs::path& path) {
  if (!fs::exists(path)) throw InvalidArgument("blinding key not found: " + path.string());
  BlindingKey key;
  try {
    const auto j = json::parse(read_file(path));
    key.secret = j.at("secret").get<std::string>();
    for (const auto& [k, e] : j.at("entries").items()) {
      key.entries[k] = {e.at("qa_id").get<std::string>(), system_from_string(e.at("system").get<std::string>()),
                        e.at("run_index").get<int>()};
    }
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed blinding key " + path.string() + ": " + e.what());
  }
  return key;
}

SheetResult emit_rating_sheets(const std::vector<EvalRecord>& records,
                               const std::vector<GeneratedAnswer>& answers, const fs::path& out_dir,
                               const fs::path& key_path, std::string secret) {
  BlindingKey key;
  key.secret = secret.empty() ? random_hex(32) : std::move(secret);

  std::map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < records.size(); ++i) order[records[i].qa_id] = i;

  struct Row {
    std::size_t record;
    std::string blinded;
    const GeneratedAnswer* answer;
  };
  std::map<int, std::vector<Row>> by_run;
  for (const auto& a : answers) {
    if (!a.ok) continue;
    auto it = order.find(a.qa_id);
    if (it == order.end()) continue;
    auto blinded = key.blind(a.qa_id, a.system, a.run_index);
    if (!key.entries.emplace(blinded, BlindingEntry{a.qa_id, a.system, a.run_index}).second) {
      throw ContractViolation("blinded key collision");
    }
    by_run[a.run_index].push_back({it->second, std::move(blinded), &a});
  }

  fs::create_directories(out_dir);
  SheetResult result;
  for (auto& [run, rows] : by_run) {
    // Keyed shuffle: within a question, rows are ordered by their blinded
    // key, so position says nothing about which system answered.
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      return std::tie(a.record, a.blinded) < std::tie(b.record, b.blinded);
    });
    std::string csv = csv_row(kSheetColumns);
    for (const auto& row : rows) {
      const auto& rec = records[row.record];
      csv += csv_row({rec.qa_id, rec.question, rec.reference_answer, row.answer->text, row.blinded, "", "", "", ""});
    }
    const auto path = out_dir / ("sheet_run" + std::to_string(run) + ".csv");
    write_file_atomic(path, csv);
    result.sheets.push_back(path);
    result.rows += rows.size();
  }
  key.save(key_path);
  result.key_path = key_path;
  return result;
}

// --- scores -------------------------------------------------------------------

double validate_score(double value) {
  if (value == 0.0 || value == 0.5 || value == 1.0) return value;
  throw InvalidScore(std::to_string(value) + " (allowed: 0, 0.5, 1)");
}

double parse_score(std::string_view text) {
  const auto t = trim(text);
  static const std::map<std::string, double, std::less<>> allowed{
      {"0", 0.0}, {"0.0", 0.0}, {"0.00", 0.0}, {".5", 0.5}, {"0.5", 0.5}, {"0.50", 0.5},
      {"1", 1.0}, {"1.0", 1.0}, {"1.00", 1.0}};
  auto it = allowed.find(t);
  if (it == allowed.end()) throw InvalidScore("'" + std::string(t) + "' (allowed: 0, 0.5, 1)");
  return it->second;
}

std::vector<RubricScore> load_scored_sheets(const std::vector<fs::path>& sheets, const BlindingKey& key) {
  std::vector<RubricScore> scores;
  for (const auto& path : sheets) {
    const auto rows = parse_csv(read_file(path));
    if (rows.empty()) continue;
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < rows[0].size(); ++i) col[to_lower_ascii(trim(rows[0][i]))] = i;
    for (const char* needed : {"qa_id", "blinded_system_key", "usefulness", "accuracy", "appropriateness"}) {
      if (!col.count(needed)) throw InvalidArgument(path.string() + ": missing column " + needed);
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      auto cell = [&](const std::string& name) -> std::string {
        auto it = col.find(name);
        return it != col.end() && it->second < row.size() ? row[it->second] : std::string{};
      };
      if (row.size() == 1 && is_blank(row[0])) continue;
      const auto blinded = std::string(trim(cell("blinded_system_key")));
      auto entry = key.entries.find(blinded);
      if (entry == key.entries.end()) {
        throw InvalidArgument(path.string() + " row " + std::to_string(r + 1) + ": unknown blinded key");
      }
      if (entry->second.qa_id != cell("qa_id")) {
        throw InvalidArgument(path.string() + " row " + std::to_string(r + 1) + ": qa_id does not match key");
      }
      for (auto criterion : kCriteria) {
        const auto value = cell(to_lower_ascii(to_string(criterion)));
        if (is_blank(value)) continue;
        RubricScore s;
        s.qa_id = entry->second.qa_id;
        s.system = entry->second.system;
        s.run_index = entry->second.run_index;
        s.criterion = criterion;
        try {
          s.score = parse_score(value);
        } catch (const InvalidScore&) {
          throw InvalidScore(path.string() + " row " + std::to_string(r + 1) + ": '" + std::string(trim(value)) +
                             "'");
        }
        s.rater_id = cell("rater_id");
        scores.push_back(std::move(s));
      }
    }
  }
  return scores;
}

std::vector<RubricScore> load_scores_jsonl(const fs::path& path) {
  if (!fs::exists(path)) throw InvalidArgument("scores file not found: " + path.string());
  std::vector<RubricScore> scores;
  std::size_t line_no = 0;
  const auto text = read_file(path);
  for (auto line : split_lines(text)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      const auto j = json::parse(line);
      RubricScore s;
      s.qa_id = j.at("qa_id").get<std::string>();
      s.system = system_from_string(j.at("system").get<std::string>());
      s.criterion = criterion_from_string(j.at("criterion").get<std::string>());
      s.run_index = j.at("run_index").get<int>();
      const auto& v = j.at("score");
      s.score = v.is_string() ? parse_score(v.get<std::string>()) : validate_score(v.get<double>());
      s.rater_id = j.value("rater_id", std::string{});
      scores.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const InvalidScore& e) {
      throw InvalidScore("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return scores;
}

// --- aggregation ------------------------------------------------------------------

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // The epsilon absorbs binary representation error so that e.g. 0.125
  // stored as 0.12499999... still rounds up.
  return std::floor(value * scale + 0.5 + 1e-9) / scale;
}

std::string display_score(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", round_half_up(value, 2));
  return buf;
}

AggregateReport report_from_means(const std::map<SystemKind, std::map<Criterion, double>>& means) {
  AggregateReport report;
  report.means = means;
  for (const auto& [system, per] : means) {
    double sum = 0.0;
    for (auto c : kCriteria) {
      auto it = per.find(c);
      if (it == per.end()) {
        report.flags.push_back(std::string(to_string(system)) + ": no scores for " + std::string(to_string(c)));
        continue;
      }
      sum += it->second;
    }
    if (per.size() == kCriteria.size()) report.average[system] = sum / 3.0;
  }
  return report;
}

AggregateReport aggregate(const std::vector<RubricScore>& scores, int expected_runs) {
  // (system, criterion) -> (qa, run) -> rater scores
  std::map<std::pair<SystemKind, Criterion>, std::map<std::pair<std::string, int>, std::vector<double>>> cells;
  std::map<std::pair<SystemKind, std::string>, std::set<int>> runs_seen;
  for (const auto& s : scores) {
    validate_score(s.score);
    cells[{s.system, s.criterion}][{s.qa_id, s.run_index}].push_back(s.score);
    runs_seen[{s.system, s.qa_id}].insert(s.run_index);
  }
  std::map<SystemKind, std::map<Criterion, double>> means;
  std::map<SystemKind, std::map<Criterion, std::size_t>> pairs;
  for (const auto& [key, per_pair] : cells) {
    double sum = 0.0;
    for (const auto& [pair, values] : per_pair) {
      double v = 0.0;
      for (double x : values) v += x;
      sum += v / static_cast<double>(values.size());
    }
    means[key.first][key.second] = sum / static_cast<double>(per_pair.size());
    pairs[key.first][key.second] = per_pair.size();
  }
  auto report = report_from_means(means);
  report.pairs = pairs;
  for (const auto& [key, runs] : runs_seen) {
    if (static_cast<int>(runs.size()) < expected_runs) {
      report.flags.push_back(std::string(to_string(key.first)) + " " + key.second + ": only " +
                             std::to_string(runs.size()) + " of " + std::to_string(expected_runs) +
                             " runs scored");
    }
  }
  return report;
}

json report_json(const AggregateReport& report) {
  json systems = json::object();
  for (const auto& [system, per] : report.means) {
    json s = json::object();
    for (const auto& [c, mean] : per) {
      s[std::string(to_string(c))] = {{"mean", mean},
                                      {"display", display_score(mean)},
                                      {"pairs", report.pairs.count(system) && report.pairs.at(system).count(c)
                                                    ? report.pairs.at(system).at(c)
                                                    : 0}};
    }
    if (auto it = report.average.find(system); it != report.average.end()) {
      s["Average"] = {{"mean", it->second}, {"display", display_score(it->second)}};
    }
    systems[std::string(to_string(system))] = s;
  }
  return {{"systems", systems}, {"flags", report.flags}};
}

std::string report_markdown(const AggregateReport& report) {
  auto cell = [&](SystemKind s, std::optional<Criterion> c) -> std::string {
    if (!c) {
      auto it = report.average.find(s);
      return it == report.average.end() ? "–" : display_score(it->second);
    }
    auto it = report.means.find(s);
    if (it == report.means.end()) return "–";
    auto jt = it->second.find(*c);
    return jt == it->second.end() ? "–" : display_score(jt->second);
  };
  std::ostringstream os;
  os << "Human evaluation scores (0: poor; 0.5: fair; 1: good)\n\n";
  os << "| | Pipeline | Baseline |\n|---|---|---|\n";
  for (auto c : kCriteria) {
    os << "| " << to_string(c) << " | " << cell(SystemKind::Pipeline, c) << " | " << cell(SystemKind::Baseline, c)
       << " |\n";
  }
  os << "| Average | " << cell(SystemKind::Pipeline, std::nullopt) << " | "
     << cell(SystemKind::Baseline, std::nullopt) << " |\n";
  if (!report.flags.empty()) {
    os << "\nFlags:\n\n";
    for (const auto& f : report.flags) os << "- " << f << "\n";
  }
  return os.str();
}

}  // namespace courseassist
