// tutor: operator entry point for ingest, ask, serve, eval and index.
// Exit codes: 0 ok, 1 user error, 2 infrastructure error.

#include "courseassist/config.hpp"
#include "courseassist/corpus.hpp"
#include "courseassist/errors.hpp"
#include "courseassist/eval.hpp"
#include "courseassist/http_provider.hpp"
#include "courseassist/service.hpp"
#include "courseassist/text.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <iostream>

namespace ca = courseassist;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::string data_dir;
  std::string mock_script;
  int verbosity = 0;
};

void info(const Globals& g, const std::string& msg) {
  if (g.verbosity > 0) std::cerr << "tutor: " << msg << "\n";
}

ca::ServiceConfig resolve_config(const Globals& g) {
  ca::ServiceConfig config = g.config_path.empty() ? ca::ServiceConfig{} : ca::load_config(g.config_path);
  ca::apply_env_overrides(config);
  if (!g.data_dir.empty()) config.data_dir = g.data_dir;
  if (!g.mock_script.empty()) {
    config.provider.kind = "mock";
    config.provider.mock_script = g.mock_script;
  }
  std::error_code ec;
  fs::create_directories(config.data_dir, ec);
  if (ec) throw ca::InvalidArgument("cannot create data dir " + config.data_dir.string() + ": " + ec.message());
  return config;
}

std::unique_ptr<ca::TutorRuntime> make_runtime(const Globals& g) {
  auto config = resolve_config(g);
  info(g, "data dir " + config.data_dir.string() + ", provider " + config.provider.kind);
  auto provider = ca::make_provider(config.provider);
  return std::make_unique<ca::TutorRuntime>(config, std::move(provider));
}

int serve(const Globals& g) {
  auto config = resolve_config(g);
  const auto token = config.service_token();
  if (token.empty()) throw ca::InvalidArgument("no service token: set " + config.service_token_env);
  const auto [host, port] = ca::split_listen_addr(config.listen_addr);

  // Block termination signals in every thread; the main thread waits for them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ca::TutorService service(config, ca::make_provider(config.provider), token);
  const int bound = service.start(host, port);
  std::cerr << "tutor: listening on " << host << ":" << bound << "\n";
  int sig = 0;
  sigwait(&signals, &sig);
  std::cerr << "tutor: signal " << sig << ", draining\n";
  service.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CourseAssist tutor"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "tutor.toml");
  app.add_option("--data-dir", g.data_dir, "Data directory (overrides config)");
  app.add_option("--mock-script", g.mock_script, "Use the scripted mock provider");
  app.add_flag("-v,--verbose", g.verbosity, "Verbose diagnostics on stderr");

  // course create
  auto* course = app.add_subcommand("course", "Manage courses");
  course->require_subcommand(1);
  auto* course_create = course->add_subcommand("create", "Create a course");
  std::string course_id, course_title;
  course_create->add_option("--id", course_id, "Course id [a-z0-9-]{1,64}")->required();
  course_create->add_option("--title", course_title, "Display title");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Ingest a document into a course");
  std::string ingest_course, ingest_file, ingest_type = "lecture", ingest_doc_id, ingest_title;
  ingest->add_option("--course", ingest_course)->required();
  ingest->add_option("--file", ingest_file)->required()->check(CLI::ExistingFile);
  ingest->add_option("--type", ingest_type, "lecture|assignment|syllabus|other");
  ingest->add_option("--doc-id", ingest_doc_id, "Defaults to the file stem");
  ingest->add_option("--title", ingest_title, "Defaults to the file stem");

  // ask
  auto* ask = app.add_subcommand("ask", "Ask one question in an ephemeral session");
  std::string ask_course, ask_question;
  bool ask_json = false;
  ask->add_option("--course", ask_course)->required();
  ask->add_option("--question", ask_question)->required();
  ask->add_flag("--json", ask_json, "Print the answer as JSON");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service until signaled");
  serve_cmd->add_option("--config", g.config_path, "tutor.toml");

  // index rebuild
  auto* index = app.add_subcommand("index", "Retrieval index maintenance");
  index->require_subcommand(1);
  auto* rebuild = index->add_subcommand("rebuild", "Re-embed and rebuild a course snapshot");
  std::string rebuild_course;
  rebuild->add_option("--course", rebuild_course)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluation harness");
  eval->require_subcommand(1);

  auto* gen = eval->add_subcommand("generate", "Generate pipeline and baseline answers");
  std::string gen_dataset, gen_answers = "answers.jsonl", gen_course, gen_conceptual_course;
  std::string gen_pipeline_url, gen_baseline_url, gen_baseline_mock;
  int gen_runs = 2;
  std::size_t gen_concurrency = 4;
  gen->add_option("--dataset", gen_dataset)->required()->check(CLI::ExistingFile);
  gen->add_option("--answers", gen_answers, "Resumable answers log");
  gen->add_option("--course", gen_course, "Course for Homework questions")->required();
  gen->add_option("--conceptual-course", gen_conceptual_course, "Course for Conceptual questions");
  gen->add_option("--runs", gen_runs)->check(CLI::PositiveNumber);
  gen->add_option("--concurrency", gen_concurrency)->check(CLI::PositiveNumber);
  gen->add_option("--pipeline-url", gen_pipeline_url, "Use a running service instead of in-process");
  gen->add_option("--baseline-url", gen_baseline_url, "Chat-completion base URL for the baseline");
  gen->add_option("--baseline-mock-script", gen_baseline_mock, "Scripted mock for the baseline");

  auto* sheets = eval->add_subcommand("sheets", "Emit blinded rating sheets");
  std::string sh_dataset, sh_answers = "answers.jsonl", sh_out = "sheets", sh_key = "blinding_key.json";
  sheets->add_option("--dataset", sh_dataset)->required()->check(CLI::ExistingFile);
  sheets->add_option("--answers", sh_answers)->check(CLI::ExistingFile);
  sheets->add_option("--out-dir", sh_out);
  sheets->add_option("--key", sh_key, "Blinding key output path");

  auto* agg = eval->add_subcommand("aggregate", "Aggregate rubric scores into a report");
  std::string ag_sheets, ag_key = "blinding_key.json", ag_scores, ag_out = ".";
  int ag_runs = 2;
  agg->add_option("--sheets", ag_sheets, "Directory of filled-in sheets");
  agg->add_option("--key", ag_key, "Blinding key");
  agg->add_option("--scores", ag_scores, "scores.jsonl instead of sheets");
  agg->add_option("--out-dir", ag_out, "Where report.json and report.md go");
  agg->add_option("--runs", ag_runs, "Expected runs per item")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (course_create->parsed()) {
      auto rt = make_runtime(g);
      if (!rt->create_course(course_id, course_title)) throw ca::InvalidArgument("course already exists: " + course_id);
      std::cout << rt->course_json(*rt->catalog().course(course_id)).dump(2) << "\n";
    } else if (ingest->parsed()) {
      auto rt = make_runtime(g);
      ca::SourceDocument doc;
      doc.course_id = ingest_course;
      doc.doc_id = ingest_doc_id.empty() ? fs::path(ingest_file).stem().string() : ingest_doc_id;
      doc.title = ingest_title.empty() ? fs::path(ingest_file).stem().string() : ingest_title;
      doc.material_type = ca::material_type_from_string(ingest_type);
      doc.body = ca::read_file(ingest_file);
      doc.origin_uri = fs::absolute(ingest_file).string();
      std::cout << json(rt->ingest(doc)).dump(2) << "\n";
    } else if (ask->parsed()) {
      auto rt = make_runtime(g);
      if (!rt->has_course(ask_course)) throw ca::UnknownCourse(ask_course);
      rt->ensure_loaded(ask_course);
      ca::Session session;
      session.session_id = ca::random_url_safe_id();
      session.course_id = ask_course;
      const auto answer = rt->tutor().answer_question(ask_question, session);
      if (ask_json) std::cout << json(answer).dump(2) << "\n";
      else std::cout << answer.text << "\n";
    } else if (serve_cmd->parsed()) {
      return serve(g);
    } else if (rebuild->parsed()) {
      auto rt = make_runtime(g);
      const auto embedded = rt->rebuild(rebuild_course);
      const auto snap = rt->engine().snapshot(rebuild_course);
      std::cout << json{{"course_id", rebuild_course},
                        {"chunks", snap->chunks.size()},
                        {"embedded", embedded},
                        {"embedder_id", snap->embedder_id}}
                       .dump(2)
                << "\n";
    } else if (gen->parsed()) {
      std::vector<std::string> warnings;
      const auto records = ca::load_dataset(gen_dataset, &warnings);
      for (const auto& w : warnings) std::cerr << "tutor: warning: " << w << "\n";
      auto rt = make_runtime(g);

      std::unique_ptr<ca::AnswerSource> pipeline;
      if (!gen_pipeline_url.empty()) {
        const auto token = rt->config().service_token();
        pipeline = std::make_unique<ca::ServiceSource>(gen_pipeline_url, token);
      } else {
        for (const auto& c : {gen_course, gen_conceptual_course}) {
          if (c.empty()) continue;
          if (!rt->has_course(c)) throw ca::UnknownCourse(c);
          rt->ensure_loaded(c);
        }
        pipeline = std::make_unique<ca::TutorSource>(rt->tutor());
      }

      // Baseline: the same model prompted with the question only, unless a
      // separate endpoint is given.
      std::unique_ptr<ca::Gateway> baseline_gateway;
      if (!gen_baseline_url.empty()) {
        const char* key = std::getenv("TUTOR_LLM_API_KEY");
        baseline_gateway = std::make_unique<ca::Gateway>(
            std::make_shared<ca::HttpProvider>(gen_baseline_url, key ? key : ""), rt->config().gateway_config());
      } else if (!gen_baseline_mock.empty()) {
        baseline_gateway = std::make_unique<ca::Gateway>(ca::MockProvider::from_file(gen_baseline_mock),
                                                         rt->config().gateway_config());
      }
      ca::ChatBaselineSource baseline(baseline_gateway ? *baseline_gateway : rt->gateway(), rt->tutor().prompts(),
                                      rt->config().pipeline.temperature, rt->config().pipeline.max_tokens);

      ca::GenerateOptions opts;
      opts.runs = gen_runs;
      opts.concurrency = gen_concurrency;
      opts.homework_course = gen_course;
      opts.conceptual_course = gen_conceptual_course;
      opts.answers_path = gen_answers;
      const auto result = ca::generate(records, *pipeline, &baseline, opts);
      std::cout << json{{"answers_path", gen_answers},
                        {"answers", result.answers.size()},
                        {"generated", result.generated},
                        {"failed", result.failed}}
                       .dump(2)
                << "\n";
      if (result.failed > 0) std::cerr << "tutor: " << result.failed << " generations failed; rerun to retry\n";
    } else if (sheets->parsed()) {
      const auto records = ca::load_dataset(sh_dataset);
      const auto answers = ca::load_answers(sh_answers);
      const auto result = ca::emit_rating_sheets(records, answers, sh_out, sh_key);
      json paths = json::array();
      for (const auto& p : result.sheets) paths.push_back(p.string());
      std::cout << json{{"sheets", paths}, {"rows", result.rows}, {"key", result.key_path.string()}}.dump(2) << "\n";
    } else if (agg->parsed()) {
      std::vector<ca::RubricScore> scores;
      if (!ag_scores.empty()) {
        scores = ca::load_scores_jsonl(ag_scores);
      } else if (!ag_sheets.empty()) {
        std::vector<fs::path> files;
        if (!fs::is_directory(ag_sheets)) throw ca::InvalidArgument("not a directory: " + ag_sheets);
        for (const auto& e : fs::directory_iterator(ag_sheets)) {
          if (e.path().extension() == ".csv") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        scores = ca::load_scored_sheets(files, ca::BlindingKey::load(ag_key));
      } else {
        throw ca::InvalidArgument("give --scores or --sheets");
      }
      const auto report = ca::aggregate(scores, ag_runs);
      fs::create_directories(ag_out);
      ca::write_file_atomic(fs::path(ag_out) / "report.json", ca::report_json(report).dump(2) + "\n");
      const auto md = ca::report_markdown(report);
      ca::write_file_atomic(fs::path(ag_out) / "report.md", md);
      std::cout << md;
      for (const auto& f : report.flags) std::cerr << "tutor: flag: " << f << "\n";
    }
    return 0;
  } catch (const ca::UserError& e) {
    std::cerr << "tutor: error: " << e.what() << "\n";
    return 1;
  } catch (const ca::InfraError& e) {
    std::cerr << "tutor: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "tutor: internal error: " << e.what() << "\n";
    return 2;
  }
}
