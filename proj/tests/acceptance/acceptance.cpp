// Acceptance suite. Prints one PASS/FAIL line per criterion with its runtime
// and exits non-zero if any criterion fails. Everything runs offline against
// the scripted provider and the hashing embedder.

#include "courseassist/errors.hpp"
#include "courseassist/eval.hpp"
#include "courseassist/http_provider.hpp"
#include "courseassist/pipeline.hpp"
#include "courseassist/retrieval.hpp"
#include "courseassist/service.hpp"
#include "courseassist/text.hpp"

#include "fake_llm_server.hpp"
#include "service_client.hpp"
#include "support.hpp"
#include "tutor_fixture.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

using namespace courseassist;
using namespace testing_support;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// Thrown by check(); carries the first violated expectation.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw CheckFailed(what);
}

struct Check {
  int number;
  std::string name;
  double limit_s;
  std::function<std::string()> run;  // returns a short summary; throws on failure
};

// --- 1. Table 1 arithmetic ----------------------------------------------------

std::string table1_arithmetic() {
  const auto report = report_from_means({{SystemKind::Pipeline,
                                          {{courseassist::Criterion::Usefulness, 0.91},
                                           {courseassist::Criterion::Accuracy, 0.92},
                                           {courseassist::Criterion::Appropriateness, 1.00}}},
                                         {SystemKind::Baseline,
                                          {{courseassist::Criterion::Usefulness, 0.83},
                                           {courseassist::Criterion::Accuracy, 0.71},
                                           {courseassist::Criterion::Appropriateness, 0.82}}}});
  const auto pipeline = display_score(report.average.at(SystemKind::Pipeline));
  const auto baseline = display_score(report.average.at(SystemKind::Baseline));
  check(pipeline == "0.94", "pipeline average displayed as " + pipeline);
  check(baseline == "0.79", "baseline average displayed as " + baseline);
  const auto md = report_markdown(report);
  check(md.find("| Average | 0.94 | 0.79 |") != std::string::npos, "markdown table lacks the averages row");
  check(report.flags.empty(), "unexpected flags");
  return "Average 0.94 / 0.79";
}

// --- 2. guard fuzz -----------------------------------------------------------

const std::vector<std::string> kSpecIdentifiers{"merge_sort", "merge", "left", "right", "xs", "sorted"};

std::string random_code_line(std::mt19937_64& rng) {
  static const std::vector<std::string> kWords{"i", "j", "n", "total", "result", "mid", "xs", "left", "right",
                                               "merge", "merge_sort", "append", "len", "return", "for", "if"};
  std::uniform_int_distribution<std::size_t> word(0, kWords.size() - 1);
  std::uniform_int_distribution<int> count(1, 5);
  std::string line;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    if (i) line += (rng() % 3 == 0) ? " = " : (rng() % 2 ? "(" : " ");
    line += kWords[word(rng)];
  }
  return line;
}

std::string random_code_block(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> lines(1, 7);
  const int n = lines(rng);
  std::string body;
  for (int i = 0; i < n; ++i) body += random_code_line(rng) + "\n";
  switch (rng() % 4) {
    case 0: return "```python\n" + body + "```\n";
    case 1: return "~~~\n" + body + "~~~\n";
    case 2: {
      std::string indented;
      for (auto l : split_lines(body)) {
        if (!l.empty()) indented += "    " + std::string(l) + "\n";
      }
      return indented;
    }
    default: {
      // Short snippet made of assignment identifiers.
      std::string s = "```\n";
      for (int i = 0; i < 1 + static_cast<int>(rng() % 2); ++i) {
        s += kSpecIdentifiers[rng() % kSpecIdentifiers.size()] + "(" +
             kSpecIdentifiers[rng() % kSpecIdentifiers.size()] + ")\n";
      }
      return s + "```\n";
    }
  }
}

std::string random_answer(std::mt19937_64& rng) {
  static const std::vector<std::string> kProse{
      "Think about the base case first.", "What happens when the list has one element?",
      "Try splitting the problem in half.", "Recall how the merge step walks two lists.",
      "Consider what each recursive call returns."};
  std::string text = kProse[rng() % kProse.size()] + "\n\n";
  const int blocks = static_cast<int>(rng() % 3);  // 0, 1 or 2 code blocks
  for (int b = 0; b < blocks; ++b) text += random_code_block(rng) + "\n" + kProse[rng() % kProse.size()] + "\n\n";
  return text;
}

ojson random_judge_output(std::mt19937_64& rng) {
  switch (rng() % 7) {
    case 0: case 1: return "NO";
    case 2: return "no.";
    case 3: return "YES";
    case 4: return "It is hard to say.";
    case 5: return {{"error", "rejected"}};
    default: return {{"error", "timeout"}};
  }
}

std::string guard_fuzz() {
  TempDir dir;
  CorpusStore corpus(dir / "corpus");
  RetrievalEngine engine(corpus);
  ingest_default_course(corpus);
  engine.rebuild(
      kCourse,
      [](const std::vector<std::string>& texts) {
        std::vector<std::vector<float>> out;
        for (const auto& t : texts) out.push_back(hashing_embedding(t));
        return out;
      },
      "mock:hashing-64");
  const std::string refusal = PromptSet::builtin().refusal();

  std::size_t fallbacks = 0, rewritten = 0, clean_first = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    std::mt19937_64 rng(0xC0FFEEULL + static_cast<std::uint64_t>(iter));
    ojson rewrites = ojson::array();
    for (int i = 0; i < 3; ++i) {
      if (rng() % 10 == 0) rewrites.push_back({{"error", "rejected"}});
      else rewrites.push_back(random_answer(rng));
    }
    ojson detects = ojson::array();
    for (int i = 0; i < 4; ++i) detects.push_back(random_judge_output(rng));
    const ojson script{{"intent", {"Assignment"}},
                       {"answer", {random_answer(rng)}},
                       {"detect", detects},
                       {"rewrite", rewrites}};
    Gateway gateway(mock(script), fast_gateway(), std::make_shared<AuditLog>(), no_sleep());
    Tutor tutor(engine, gateway);
    Session s;
    s.course_id = kCourse;
    const auto a = tutor.answer_question("How do I write merge_sort for homework 3?", s);

    const std::string where = "script " + std::to_string(iter);
    check(a.route == Route::AssignmentGuarded, where + ": wrong route");
    check(!a.guard_trail.empty(), where + ": empty guard trail");
    check(!a.guard_trail.back().contains_solution, where + ": final verdict still contains a solution");
    check(a.rewrites_applied <= 2, where + ": more than two rewrites");
    // Independent re-check of the delivered text.
    check(!heuristic_solution_check(a.text, kAssignmentText).contains_solution,
          where + ": delivered text trips the heuristic");
    if (a.fallback_used) {
      check(a.text == refusal, where + ": fallback text differs from the refusal template");
      ++fallbacks;
    } else {
      // Without fallback the last verdict must come from a judge that said no.
      check(a.guard_trail.back().judge_source == JudgeSource::Both, where + ": unjudged answer delivered");
      if (a.rewrites_applied > 0) ++rewritten;
      else ++clean_first;
    }
  }
  return "1000 scripts: " + std::to_string(clean_first) + " clean, " + std::to_string(rewritten) +
         " rewritten, " + std::to_string(fallbacks) + " refused";
}

// --- 3. retrieval oracles ------------------------------------------------------

struct OracleChunk {
  std::string id;
  std::vector<std::string> words;
  MaterialType type;
};

std::vector<std::pair<std::string, double>> oracle_bm25(const std::vector<OracleChunk>& chunks,
                                                        const std::vector<std::string>& query,
                                                        const std::set<std::string>* allowed) {
  const double k1 = 1.2, b = 0.75;
  std::map<std::string, std::size_t> df;
  std::size_t total = 0;
  for (const auto& c : chunks) {
    total += c.words.size();
    for (const auto& w : std::set<std::string>(c.words.begin(), c.words.end())) ++df[w];
  }
  const double n = static_cast<double>(chunks.size());
  const double avgdl = static_cast<double>(total) / n;
  std::vector<std::pair<std::string, double>> out;
  for (const auto& c : chunks) {
    if (allowed && !allowed->count(c.id)) continue;
    double score = 0.0;
    bool matched = false;
    for (const auto& q : query) {
      const auto tf = static_cast<double>(std::count(c.words.begin(), c.words.end(), q));
      if (tf == 0) continue;
      matched = true;
      const double d = static_cast<double>(df[q]);
      const double idf = std::log(1.0 + (n - d + 0.5) / (d + 0.5));
      const double norm = 1.0 - b + b * static_cast<double>(c.words.size()) / avgdl;
      score += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
    }
    if (matched) out.emplace_back(c.id, score);
  }
  return out;
}

template <typename T>
void rank_desc(std::vector<std::pair<std::string, T>>& v, std::size_t k) {
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (v.size() > k) v.resize(k);
}

std::string retrieval_oracles() {
  std::size_t queries = 0, max_chunks = 0;
  for (int corpus_no = 0; corpus_no < 50; ++corpus_no) {
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(corpus_no));
    const std::size_t vocab = 10 + rng() % 90;
    const std::size_t n_chunks = 1 + rng() % 200;
    const std::size_t dim = 8 + rng() % 25;
    max_chunks = std::max(max_chunks, n_chunks);
    // Skewed word choice so that some terms are common and some rare.
    std::geometric_distribution<std::size_t> zipfish(0.08);
    std::normal_distribution<float> normal;

    std::vector<OracleChunk> chunks;
    std::vector<MaterialChunk> material;
    VectorStore store;
    std::map<std::string, std::vector<float>> raw_vectors;
    for (std::size_t i = 0; i < n_chunks; ++i) {
      OracleChunk c;
      c.id = sha256_hex("corpus" + std::to_string(corpus_no) + "/" + std::to_string(i)).substr(0, 32);
      const std::size_t len = 1 + rng() % 60;
      for (std::size_t w = 0; w < len; ++w) c.words.push_back("t" + std::to_string(zipfish(rng) % vocab));
      c.type = static_cast<MaterialType>(rng() % 4);
      MaterialChunk m;
      m.chunk_id = c.id;
      m.doc_id = "d" + std::to_string(i);
      m.course_id = "c";
      m.material_type = c.type;
      for (const auto& w : c.words) m.text += w + " ";
      material.push_back(m);
      std::vector<float> v(dim);
      for (auto& x : v) x = normal(rng);
      raw_vectors[c.id] = v;
      store.put(c.id, v);
      chunks.push_back(std::move(c));
    }
    // Stored vectors are the unit-normalized inputs.
    for (const auto& [id, raw] : raw_vectors) {
      double norm = 0.0;
      for (float x : raw) norm += double(x) * x;
      norm = std::sqrt(norm);
      const auto* stored = store.get(id);
      for (std::size_t d = 0; d < dim; ++d) {
        check(std::fabs((*stored)[d] - raw[d] / norm) < 1e-6, "stored vector is not the normalized input");
      }
    }

    CourseSnapshot snap;
    snap.course_id = "c";
    for (const auto& m : material) snap.chunks[m.chunk_id] = m;
    snap.lexical = build_lexical_index(material);
    snap.vectors = store;

    const std::size_t n_queries = 1 + rng() % 30;
    for (std::size_t qi = 0; qi < n_queries; ++qi, ++queries) {
      const std::string where = "corpus " + std::to_string(corpus_no) + " query " + std::to_string(qi);
      std::vector<std::string> qwords;
      const std::size_t qlen = 1 + rng() % 6;
      for (std::size_t w = 0; w < qlen; ++w) {
        // Occasionally a term no chunk contains.
        qwords.push_back(rng() % 8 == 0 ? "zz" + std::to_string(rng() % 5) : "t" + std::to_string(zipfish(rng) % vocab));
      }
      std::string qtext;
      for (const auto& w : qwords) qtext += w + " ";
      const std::size_t k = 1 + rng() % 12;

      std::optional<std::set<MaterialType>> filter;
      std::set<std::string> allowed;
      if (rng() % 3 == 0) {
        filter = std::set<MaterialType>{static_cast<MaterialType>(rng() % 4), static_cast<MaterialType>(rng() % 4)};
        for (const auto& c : chunks) {
          if (filter->count(c.type)) allowed.insert(c.id);
        }
      }
      const std::set<std::string>* allowed_ptr = filter ? &allowed : nullptr;

      // Lexical top-k.
      auto expected_lex = oracle_bm25(chunks, qwords, allowed_ptr);
      rank_desc(expected_lex, k);
      const auto got_lex = bm25_search(snap.lexical, qwords, k, allowed_ptr);
      check(got_lex.size() == expected_lex.size(), where + ": lexical result size differs");
      for (std::size_t i = 0; i < got_lex.size(); ++i) {
        check(got_lex[i].chunk_id == expected_lex[i].first, where + ": lexical order differs at rank " + std::to_string(i + 1));
        check(std::fabs(got_lex[i].score - expected_lex[i].second) <= 1e-12, where + ": lexical score differs");
      }

      // Dense top-k by exhaustive scan.
      std::vector<float> qvec(dim);
      for (auto& x : qvec) x = normal(rng);
      std::vector<std::pair<std::string, double>> expected_dense;
      for (const auto& [id, vec] : store.entries()) {
        if (allowed_ptr && !allowed.count(id)) continue;
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += double(vec[d]) * double(qvec[d]);
        expected_dense.emplace_back(id, dot);
      }
      rank_desc(expected_dense, k);
      const auto got_dense = dense_search(store, qvec, k, allowed_ptr);
      check(got_dense.size() == expected_dense.size(), where + ": dense result size differs");
      for (std::size_t i = 0; i < got_dense.size(); ++i) {
        check(got_dense[i].chunk_id == expected_dense[i].first, where + ": dense order differs at rank " + std::to_string(i + 1));
      }

      // Fused order against a direct RRF computation over the candidate lists.
      const std::size_t depth = std::max<std::size_t>(k, 50);
      auto lex_candidates = oracle_bm25(chunks, qwords, allowed_ptr);
      rank_desc(lex_candidates, depth);
      auto dense_candidates = expected_dense;
      {
        dense_candidates.clear();
        for (const auto& [id, vec] : store.entries()) {
          if (allowed_ptr && !allowed.count(id)) continue;
          double dot = 0.0;
          for (std::size_t d = 0; d < dim; ++d) dot += double(vec[d]) * double(qvec[d]);
          dense_candidates.emplace_back(id, dot);
        }
        rank_desc(dense_candidates, depth);
      }
      std::map<std::string, double> rrf;
      for (std::size_t r = 0; r < lex_candidates.size(); ++r) rrf[lex_candidates[r].first] += 1.0 / (60.0 + double(r + 1));
      for (std::size_t r = 0; r < dense_candidates.size(); ++r) rrf[dense_candidates[r].first] += 1.0 / (60.0 + double(r + 1));
      std::vector<std::pair<std::string, double>> expected_fused(rrf.begin(), rrf.end());
      rank_desc(expected_fused, k);

      RetrievalQuery q;
      q.text = qtext;
      q.course_id = "c";
      q.k = k;
      q.material_filter = filter;
      const auto fused = hybrid_search(q, snap, [&](const std::string&) { return qvec; });
      check(!fused.query_echo.dense_degraded, where + ": dense channel degraded");
      check(fused.hits.size() == expected_fused.size(), where + ": fused result size differs");
      for (std::size_t i = 0; i < fused.hits.size(); ++i) {
        check(fused.hits[i].chunk_id == expected_fused[i].first, where + ": fused order differs at rank " + std::to_string(i + 1));
        check(std::fabs(fused.hits[i].fused_score - expected_fused[i].second) <= 1e-15, where + ": fused score differs");
      }
    }
  }
  return "50 corpora (up to " + std::to_string(max_chunks) + " chunks), " + std::to_string(queries) + " queries";
}

// --- 4. routing totality and determinism -------------------------------------------

struct RoutingCase {
  std::string question;
  std::string course;
  ojson script;
  Route route;
  std::vector<std::string> degradations;
};

const std::string kEmptyCourse = "empty-course";

std::vector<RoutingCase> routing_cases() {
  const std::string hint = "Start from the base case and think about how the halves combine.";
  const std::string code = "```python\ndef merge_sort(xs):\n    mid = len(xs) // 2\n    return merge(xs[:mid], xs[mid:])\n```\n";
  const std::string plan = "1. What is recursion?\n2. How does merge sort work?\n3. What is on the midterm?";
  auto lecture = [](const std::string& intent) {
    return ojson{{"intent", {intent}}, {"answer", {"Merge sort splits, sorts and merges."}}};
  };
  auto exam = [&](const ojson& decompose) {
    return ojson{{"intent", {"ExamPrep"}}, {"decompose", {decompose}}, {"answer", {"Study recursion and sorting."}}};
  };
  auto assignment = [&](ojson answers, ojson detects, ojson rewrites) {
    return ojson{{"intent", {"Assignment"}}, {"answer", answers}, {"detect", detects}, {"rewrite", rewrites}};
  };
  auto with_intent = [](ojson s, const std::string& label) {
    s["intent"] = ojson::array({label});
    return s;
  };
  const ojson embed_down{{{"error", "rejected"}, {"repeat", true}}};

  std::vector<RoutingCase> cases;
  // Lecture, classified by the model.
  for (const char* q : {"How does merge sort split the list?", "What is a base case?", "Why is merge sort O(n log n)?",
                        "What does the call stack do during recursion?", "Explain the merge step."}) {
    cases.push_back({q, kCourse, lecture("Lecture"), Route::LectureRAG, {}});
  }
  // Exam preparation with a usable decomposition.
  for (const char* q : {"Help me study for the midterm", "What should I review for the final?", "How do I prepare for sorting questions?",
                        "Make me a study plan for recursion", "What topics does the midterm cover?"}) {
    cases.push_back({q, kCourse, exam(plan), Route::ExamPrepDecompose, {}});
  }
  // Assignment: clean, rewritten, refused.
  for (const char* q : {"How should I start homework 3?", "What does homework 3 ask for?", "Any hints for the merge helper?"}) {
    cases.push_back({q, kCourse, assignment({hint}, {"NO"}, ojson::array()), Route::AssignmentGuarded, {}});
  }
  for (const char* q : {"Can you write merge_sort for me?", "Show me the code for homework 3"}) {
    cases.push_back({q, kCourse, assignment({code}, {"NO"}, {hint}), Route::AssignmentGuarded, {}});
  }
  for (const char* q : {"Just give me the full solution", "Paste the working merge function"}) {
    cases.push_back({q, kCourse, assignment({code}, ojson::array(), {code, code}), Route::AssignmentGuarded, {}});
  }
  // Model intent unavailable or ambiguous: keyword routing.
  cases.push_back({"Explain recursion again", kCourse,
                   ojson{{"intent", {{{"error", "rejected"}}}}, {"answer", {"Recursion answer."}}}, Route::LectureRAG, {}});
  cases.push_back({"What is on the final exam?", kCourse,
                   ojson{{"intent", {{{"error", "timeout"}}}}, {"decompose", {plan}}, {"answer", {"Exam answer."}}},
                   Route::ExamPrepDecompose, {}});
  cases.push_back({"I am stuck on homework 3", kCourse,
                   with_intent(assignment({hint}, {"no"}, ojson::array()), "banana"),
                   Route::AssignmentGuarded, {}});
  cases.push_back({"Lecture or homework, what is merge?", kCourse,
                   with_intent(assignment({hint}, {"NO"}, ojson::array()), "Lecture or Assignment"),
                   Route::AssignmentGuarded, {}});
  // Embedder down: lexical only.
  {
    auto s = lecture("Lecture");
    s["embed"] = embed_down;
    cases.push_back({"How does merge sort split the list?", kCourse, s, Route::LectureRAG, {"dense_unavailable"}});
    s = exam(plan);
    s["embed"] = embed_down;
    cases.push_back({"Help me study sorting for the midterm", kCourse, s, Route::ExamPrepDecompose, {"dense_unavailable"}});
    s = assignment({hint}, {"NO"}, ojson::array());
    s["embed"] = embed_down;
    cases.push_back({"Hints for homework 3?", kCourse, s, Route::AssignmentGuarded, {"dense_unavailable"}});
  }
  // Decomposition parse failure.
  cases.push_back({"Review everything for the exam", kCourse, exam("I would rather not."), Route::ExamPrepDecompose,
                   {"decomposition_degraded"}});
  cases.push_back({"Midterm review please", kCourse, exam(ojson{{"error", "rejected"}}), Route::ExamPrepDecompose,
                   {"decomposition_degraded"}});
  cases.push_back({"What will the final test?", kCourse, exam("Sure! Sorting and recursion."), Route::ExamPrepDecompose,
                   {"decomposition_degraded"}});
  // Zero hits: a course without materials.
  cases.push_back({"What is a monad?", kEmptyCourse, lecture("Lecture"), Route::LectureRAG, {"no_sources"}});
  cases.push_back({"Help me study for the midterm", kEmptyCourse, exam(plan), Route::ExamPrepDecompose, {"no_sources"}});
  cases.push_back({"Hints for homework 1?", kEmptyCourse, assignment({hint}, {"NO"}, ojson::array()),
                   Route::AssignmentGuarded, {"no_sources"}});
  return cases;
}

std::string routing_run(const std::vector<RoutingCase>& cases, std::set<std::string>& degradations_seen,
                        std::set<Route>& routes_seen) {
  TempDir dir;
  CorpusStore corpus(dir / "corpus");
  RetrievalEngine engine(corpus);
  ingest_default_course(corpus);
  corpus.create_course(kEmptyCourse);
  const BatchEmbedder embedder = [](const std::vector<std::string>& texts) {
    std::vector<std::vector<float>> out;
    for (const auto& t : texts) out.push_back(hashing_embedding(t));
    return out;
  };
  engine.rebuild(kCourse, embedder, "mock:hashing-64");
  engine.rebuild(kEmptyCourse, embedder, "mock:hashing-64");

  std::string transcript;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const std::string where = "question " + std::to_string(i + 1);
    Gateway gateway(mock(c.script), fast_gateway(), std::make_shared<AuditLog>(), no_sleep());
    Tutor tutor(engine, gateway);
    Session s;
    s.session_id = "routing-" + std::to_string(i);
    s.course_id = c.course;
    TutorAnswer a;
    try {
      a = tutor.answer_question(c.question, s);
    } catch (const std::exception& e) {
      throw CheckFailed(where + ": no answer (" + e.what() + ")");
    }
    check(!a.text.empty(), where + ": empty answer text");
    check(a.route == c.route, where + ": routed to " + std::string(to_string(a.route)));
    for (const auto& d : c.degradations) {
      check(std::find(a.degradations.begin(), a.degradations.end(), d) != a.degradations.end(),
            where + ": missing degradation " + d);
    }
    if (c.degradations.empty()) check(a.degradations.empty(), where + ": unexpected degradation " + json(a.degradations).dump());
    for (const auto& d : a.degradations) degradations_seen.insert(d);
    routes_seen.insert(a.route);
    transcript += json(a).dump() + "\n" + json(s.transcript).dump() + "\n";
  }
  return transcript;
}

std::string routing_determinism() {
  const auto cases = routing_cases();
  check(cases.size() == 30, "fixture set has " + std::to_string(cases.size()) + " questions");
  std::set<std::string> degradations;
  std::set<Route> routes;
  const auto first = routing_run(cases, degradations, routes);
  const auto second = routing_run(cases, degradations, routes);
  check(routes.size() == 3, "not every route was exercised");
  for (const char* d : {"dense_unavailable", "decomposition_degraded", "no_sources"}) {
    check(degradations.count(d) != 0, std::string("degradation never exercised: ") + d);
  }
  check(first == second, "two identical runs differ");
  return "30 questions, 3 routes, runs byte-identical (" + std::to_string(first.size()) + " bytes)";
}

// --- 5. dataset protocol -----------------------------------------------------------

double synthetic_score(const std::string& qa, SystemKind s, courseassist::Criterion c, int run) {
  const auto h = sha256_hex(qa + "/" + std::string(to_string(s)) + "/" + std::string(to_string(c)) + "/" +
                            std::to_string(run));
  const int bucket = std::stoi(h.substr(0, 2), nullptr, 16) % 3;
  return bucket * 0.5;
}

std::string dataset_protocol() {
  TempDir work;
  std::string dataset;
  for (int i = 0; i < 50; ++i) {
    const bool homework = i < 33;
    json j{{"qa_id", "qa-" + std::to_string(100 + i)},
           {"question", homework ? "For homework " + std::to_string(i % 5 + 1) + ", how do I approach part " + std::to_string(i) + "?"
                                 : "What is the idea behind merge sort, variant " + std::to_string(i) + "?"},
           {"reference_answer", "Reference answer " + std::to_string(i)},
           {"category", homework ? "Homework" : "Conceptual"}};
    dataset += j.dump() + "\n";
  }
  write_file_atomic(work / "dataset.jsonl", dataset);
  const auto records = load_dataset(work / "dataset.jsonl");
  const auto homework = std::count_if(records.begin(), records.end(),
                                      [](const EvalRecord& r) { return r.category == QaCategory::Homework; });
  check(records.size() == 50 && homework == 33, "dataset split is not 33/17");

  // The pipeline under test: the in-process tutor with the model intent
  // unavailable, so routing comes from the keyword table.
  TutorFixture tutor(ojson{{"intent", {{{"error", "rejected"}, {"repeat", true}}}},
                           {"answer", {{{"text", "Start from the base case."}, {"repeat", true}}}},
                           {"detect", {{{"text", "NO"}, {"repeat", true}}}}});
  TutorSource pipeline(tutor.tutor);

  // The baseline: a plain chat endpoint over HTTP.
  FakeLlmServer server([](const json& body) {
    const auto& messages = body.at("messages");
    return std::make_pair(200, FakeLlmServer::completion_body("Baseline: " + messages.back().at("content").get<std::string>()));
  });
  Gateway baseline_gateway(std::make_shared<HttpProvider>(server.base_url(), ""), fast_gateway());
  ChatBaselineSource baseline(baseline_gateway, PromptSet::builtin());

  GenerateOptions opts;
  opts.homework_course = kCourse;
  opts.answers_path = work / "answers.jsonl";
  const auto gen = generate(records, pipeline, &baseline, opts);
  check(gen.generated == 200, "generated " + std::to_string(gen.generated) + " answers");
  check(gen.failed == 0, std::to_string(gen.failed) + " answers failed");
  check(gen.answers.size() == 200, "answer set has " + std::to_string(gen.answers.size()) + " rows");
  check(load_answers(*opts.answers_path).size() == 200, "answers.jsonl does not hold 200 rows");
  check(server.requests.load() == 100, "baseline endpoint saw " + std::to_string(server.requests.load()) + " requests");
  std::map<std::tuple<std::string, SystemKind, int>, const GeneratedAnswer*> by_triple;
  for (const auto& a : gen.answers) {
    by_triple[{a.qa_id, a.system, a.run_index}] = &a;
    if (a.system == SystemKind::Pipeline) {
      const bool hw = std::stoi(a.qa_id.substr(3)) - 100 < 33;
      check(a.route == std::string(hw ? "AssignmentGuarded" : "LectureRAG"), a.qa_id + ": unexpected route");
    }
  }
  check(by_triple.size() == 200, "answers do not cover 200 distinct triples");

  const auto sheets = emit_rating_sheets(records, gen.answers, work / "sheets", work / "blinding_key.json");
  check(sheets.rows == 200, "sheets hold " + std::to_string(sheets.rows) + " rows");
  const auto key = BlindingKey::load(sheets.key_path);
  check(key.entries.size() == 200, "blinding key has " + std::to_string(key.entries.size()) + " entries");

  // Unblind every row, check it maps to exactly one answer, and fill in scores.
  std::set<std::tuple<std::string, SystemKind, int>> unblinded;
  for (const auto& path : sheets.sheets) {
    auto rows = parse_csv(read_file(path));
    check(!rows.empty() && rows[0] == kSheetColumns, path.filename().string() + ": unexpected header");
    std::string filled = csv_row(rows[0]);
    for (std::size_t r = 1; r < rows.size(); ++r) {
      auto& row = rows[r];
      const auto it = key.entries.find(row[4]);
      check(it != key.entries.end(), "row with unknown blinded key");
      const auto& e = it->second;
      const std::tuple<std::string, SystemKind, int> t{e.qa_id, e.system, e.run_index};
      check(unblinded.insert(t).second, "two rows unblind to the same answer");
      check(by_triple.count(t) && by_triple.at(t)->text == row[3], "row text does not match its unblinded answer");
      check(row[0] == e.qa_id, "row qa_id does not match its key");
      row[5] = display_score(synthetic_score(e.qa_id, e.system, courseassist::Criterion::Usefulness, e.run_index));
      row[6] = display_score(synthetic_score(e.qa_id, e.system, courseassist::Criterion::Accuracy, e.run_index));
      row[7] = display_score(synthetic_score(e.qa_id, e.system, courseassist::Criterion::Appropriateness, e.run_index));
      row[8] = "rater-1";
      filled += csv_row(row);
    }
    write_file_atomic(path, filled);
  }
  check(unblinded.size() == 200, "unblinding is not a bijection");

  const auto report = aggregate(load_scored_sheets(sheets.sheets, key), 2);
  check(report.flags.empty(), "aggregation raised flags");
  for (auto system : kSystems) {
    double avg = 0.0;
    for (auto c : kCriteria) {
      double sum = 0.0;
      for (const auto& r : records) {
        for (int run = 1; run <= 2; ++run) sum += synthetic_score(r.qa_id, system, c, run);
      }
      const double expected = sum / 100.0;
      avg += expected / 3.0;
      check(std::fabs(report.means.at(system).at(c) - expected) < 1e-12, "criterion mean differs from direct computation");
      check(report.pairs.at(system).at(c) == 100, "criterion mean is not over 100 pairs");
    }
    check(display_score(report.average.at(system)) == display_score(avg), "average differs from direct computation");
  }
  const auto md = report_markdown(report);
  return "200 answers, 200 blinded rows, Average " + display_score(report.average.at(SystemKind::Pipeline)) + " / " +
         display_score(report.average.at(SystemKind::Baseline)) + " on synthetic scores";
}

// --- 6. service round trip ----------------------------------------------------------

std::string service_round_trip() {
  TempDir dir;
  ServiceConfig config;
  config.data_dir = dir / "data";
  const std::string token = "acceptance-token";
  const ojson script{{"intent", {"Lecture", "Assignment", "ExamPrep", "Lecture"}},
                     {"decompose", {{{"text", "1. What is recursion?\n2. How does merge sort work?"}, {"repeat", true}}}},
                     {"detect", {{{"text", "NO"}, {"repeat", true}}}},
                     {"answer", {{{"text", "Think about the base case."}, {"repeat", true}}}}};

  std::string session_id;
  json transcript_before;
  json courses_before;
  {
    TutorService service(config, mock(script), token);
    ApiClient api(service.start("127.0.0.1", 0), token);
    check(api.post("/v1/courses", {{"course_id", kCourse}, {"title", "Intro to CS"}}).status == 201, "course not created");
    const std::vector<json> docs{
        {{"doc_id", "lec-sorting"}, {"material_type", "Lecture"}, {"title", "Lecture 5: Sorting"},
         {"body", "Merge sort splits the list in half, sorts each half and merges them. It runs in O(n log n)."}},
        {{"doc_id", "hw3"}, {"material_type", "Assignment"}, {"title", "Homework 3"}, {"body", kAssignmentText}},
        {{"doc_id", "syllabus"}, {"material_type", "Syllabus"}, {"title", "Syllabus"},
         {"body", "The midterm exam covers recursion, sorting and complexity."}}};
    for (const auto& d : docs) {
      const auto r = api.post("/v1/courses/" + std::string(kCourse) + "/materials", {{"doc", d}});
      check(r.status == 202, "ingest returned " + std::to_string(r.status));
    }
    const auto s = api.post("/v1/sessions", {{"course_id", kCourse}});
    check(s.status == 201, "session not created");
    session_id = s.body.at("session_id");
    const std::vector<std::pair<std::string, std::string>> asks{
        {"How does merge sort split the list?", "LectureRAG"},
        {"How should I start homework 3?", "AssignmentGuarded"},
        {"What is on the midterm?", "ExamPrepDecompose"}};
    for (const auto& [q, route] : asks) {
      const auto r = api.post("/v1/sessions/" + session_id + "/questions", {{"text", q}});
      check(r.status == 200, "question returned " + std::to_string(r.status));
      check(r.body["answer"]["route"] == route, q + ": routed to " + r.body["answer"]["route"].dump());
      check(!r.body["answer"]["citations"].empty(), q + ": no citations");
    }
    transcript_before = api.get("/v1/sessions/" + session_id).body;
    courses_before = api.get("/v1/courses").body;
    check(transcript_before["turn_count"] == 6, "transcript does not hold 6 turns");
    service.stop();
  }
  TutorService service(config, mock(script), token);
  ApiClient api(service.start("127.0.0.1", 0), token);
  check(api.get("/v1/sessions/" + session_id).body == transcript_before, "transcript changed across restart");
  const auto courses_after = api.get("/v1/courses").body;
  check(courses_after == courses_before, "course list changed across restart");
  check(courses_after["courses"][0]["material_counts"] == json{{"Assignment", 1}, {"Lecture", 1}, {"Syllabus", 1}},
        "material counts changed");
  const auto r = api.post("/v1/sessions/" + session_id + "/questions", {{"text", "What does merge sort do?"}});
  check(r.status == 200 && !r.body["answer"]["citations"].empty(), "corpus not searchable after restart");
  check(api.get("/v1/sessions/" + session_id).body["turn_count"] == 8, "new turns not appended after restart");
  return "3 documents, 3 routes, transcript and corpus intact after restart";
}

}  // namespace

int main() {
  const std::vector<Check> criteria{
      {1, "Table 1 arithmetic reproduction", 1.0, table1_arithmetic},
      {2, "Pedagogical guard fuzz", 30.0, guard_fuzz},
      {3, "Retrieval oracle equivalence", 60.0, retrieval_oracles},
      {4, "Routing totality and determinism", 10.0, routing_determinism},
      {5, "Dataset protocol", 120.0, dataset_protocol},
      {6, "Service round-trip", 30.0, service_round_trip},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string summary;
    bool ok = true;
    try {
      summary = c.run();
    } catch (const std::exception& e) {
      ok = false;
      summary = e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (ok && secs >= c.limit_s) {
      ok = false;
      summary += " (over time limit)";
    }
    if (!ok) ++failures;
    std::printf("%s [%d] %s: %.2f s (limit %.0f s) - %s\n", ok ? "PASS" : "FAIL", c.number, c.name.c_str(), secs,
                c.limit_s, summary.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
