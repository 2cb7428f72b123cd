#include "courseassist/service.hpp"

#include "courseassist/errors.hpp"
#include "courseassist/text.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/crypto.h>

#include <iostream>
#include <thread>

namespace courseassist {

using json = nlohmann::json;

namespace {

PromptSet prompts_for(const ServiceConfig& c) {
  return c.prompts_dir ? PromptSet::load(*c.prompts_dir) : PromptSet::builtin();
}

}  // namespace

TutorRuntime::TutorRuntime(const ServiceConfig& config, std::shared_ptr<Provider> provider)
    : config_(config),
      corpus_(config.data_dir / "corpus"),
      catalog_(config.data_dir / "tutor.db"),
      engine_(corpus_),
      gateway_(std::move(provider), config.gateway_config(),
               std::make_shared<AuditLog>(config.data_dir / "llm_audit.jsonl")),
      tutor_(engine_, gateway_, prompts_for(config), config.pipeline,
             [this](const std::string& id) {
               auto c = catalog_.course(id);
               return c ? c->title : id;
             }) {
  // Courses created before a restart: load their snapshots from disk.
  for (const auto& c : catalog_.courses()) {
    corpus_.create_course(c.course_id);
    engine_.load(c.course_id, gateway_.embedder_id());
  }
}

bool TutorRuntime::create_course(const std::string& course_id, const std::string& title) {
  if (!CorpusStore::valid_course_id(course_id)) {
    throw InvalidArgument("course_id must match [a-z0-9-]{1,64}");
  }
  if (!catalog_.create_course({course_id, title.empty() ? course_id : title, now_rfc3339()})) {
    return false;
  }
  corpus_.create_course(course_id);
  engine_.load(course_id, gateway_.embedder_id());
  return true;
}

bool TutorRuntime::has_course(const std::string& course_id) const {
  return catalog_.course(course_id).has_value();
}

json TutorRuntime::course_json(const CourseRecord& course) const {
  json counts = json::object();
  for (const auto& [type, n] : corpus_.material_counts(course.course_id)) {
    counts[std::string(to_string(type))] = n;
  }
  return {{"course_id", course.course_id},
          {"title", course.title},
          {"created_at", course.created_at},
          {"material_counts", counts}};
}

IngestReport TutorRuntime::ingest(const SourceDocument& doc) {
  if (!has_course(doc.course_id)) throw UnknownCourse(doc.course_id);
  auto report = corpus_.ingest(doc);
  rebuild(doc.course_id);
  return report;
}

std::size_t TutorRuntime::rebuild(const std::string& course_id) {
  if (!has_course(course_id)) throw UnknownCourse(course_id);
  return engine_.rebuild(
      course_id, [this](const std::vector<std::string>& texts) { return gateway_.embed(texts); },
      gateway_.embedder_id());
}

void TutorRuntime::ensure_loaded(const std::string& course_id) {
  if (!engine_.loaded(course_id)) engine_.load(course_id, gateway_.embedder_id());
}

std::pair<std::string, int> split_listen_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw InvalidArgument("listen_addr must be host:port");
  std::string host = addr.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  try {
    std::size_t used = 0;
    const int port = std::stoi(addr.substr(colon + 1), &used);
    if (used == addr.size() - colon - 1 && port >= 0 && port <= 65535) return {host, port};
  } catch (const std::exception&) {
  }
  throw InvalidArgument("bad port in listen_addr: " + addr);
}

// --- HTTP ------------------------------------------------------------------

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", code}, {"message", message}}}});
}

int status_for(const UserError& e) {
  const auto& code = e.code();
  if (code == "unknown_course" || code == "unknown_session") return 404;
  return 422;
}

json parse_body(const httplib::Request& req) {
  if (req.body.size() > kMaxRequestBody) throw InvalidArgument("request body exceeds 32 KiB");
  if (!is_valid_utf8(req.body)) throw InvalidArgument("request body is not valid UTF-8");
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::parse_error&) {
    throw InvalidArgument("request body is not valid JSON");
  }
  if (!body.is_object()) throw InvalidArgument("request body must be a JSON object");
  return body;
}

std::string required_string(const json& body, const char* field) {
  auto it = body.find(field);
  if (it == body.end() || !it->is_string()) {
    throw InvalidArgument(std::string("field '") + field + "' must be a string");
  }
  return it->get<std::string>();
}

class UnknownSession : public UserError {
 public:
  explicit UnknownSession(const std::string& id) : UserError("unknown_session", "unknown session: " + id) {}
};

}  // namespace

struct TutorService::Impl {
  Impl(const ServiceConfig& config, std::shared_ptr<Provider> provider, std::string token)
      : runtime(config, std::move(provider)), token(std::move(token)) {}

  TutorRuntime runtime;
  std::string token;
  httplib::Server server;
  std::thread thread;

  std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<std::mutex>> session_locks;

  std::shared_ptr<std::mutex> session_lock(const std::string& id) {
    std::lock_guard lock(sessions_mu);
    auto& m = session_locks[id];
    if (!m) m = std::make_shared<std::mutex>();
    return m;
  }

  bool authorized(const httplib::Request& req) const {
    const auto header = req.get_header_value("Authorization");
    const std::string expected = "Bearer " + token;
    return header.size() == expected.size() &&
           CRYPTO_memcmp(header.data(), expected.data(), expected.size()) == 0;
  }

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  // Maps library errors onto status codes. Malformed input never yields 5xx.
  static httplib::Server::Handler guarded(Handler fn) {
    return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const UserError& e) {
        send_error(res, status_for(e), e.code(), e.what());
      } catch (const json::exception& e) {
        send_error(res, 422, "invalid_argument", e.what());
      } catch (const AnswerUnavailable& e) {
        res.set_header("Retry-After", "5");
        send_error(res, 503, e.code(), e.what());
      } catch (const ProviderError& e) {
        res.set_header("Retry-After", "5");
        send_error(res, 503, e.code(), e.what());
      } catch (const InfraError& e) {
        send_error(res, 500, e.code(), e.what());
      } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        send_error(res, 500, "internal", "internal error");
      }
    };
  }

  void routes() {
    server.set_payload_max_length(kMaxRequestBody);
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (req.path.starts_with("/v1/") && req.path != "/v1/healthz" && !authorized(req)) {
        send_error(res, 401, "unauthorized", "missing or invalid bearer token");
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });
    // Oversized bodies are rejected by the transport with 413; report them as
    // validation failures like every other bad request.
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.status == 413) {
        send_error(res, 422, "invalid_argument", "request body exceeds 32 KiB");
        return httplib::Server::HandlerResponse::Handled;
      }
      if (res.body.empty()) {
        send_error(res, res.status, "http_" + std::to_string(res.status), httplib::status_message(res.status));
        return httplib::Server::HandlerResponse::Handled;
      }
      return httplib::Server::HandlerResponse::Unhandled;
    });

    server.Get("/v1/healthz", guarded([this](const auto&, auto& res) {
      send_json(res, 200,
                {{"status", "ok"},
                 {"corpus_loaded", runtime.engine().any_loaded()},
                 {"provider", runtime.gateway().provider_id()}});
    }));

    server.Get("/v1/courses", guarded([this](const auto&, auto& res) {
      json list = json::array();
      for (const auto& c : runtime.catalog().courses()) list.push_back(runtime.course_json(c));
      send_json(res, 200, {{"courses", list}});
    }));

    server.Post("/v1/courses", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      const auto id = required_string(body, "course_id");
      const auto title = body.contains("title") ? required_string(body, "title") : id;
      if (!runtime.create_course(id, title)) {
        send_error(res, 409, "course_exists", "course already exists: " + id);
        return;
      }
      send_json(res, 201, runtime.course_json(*runtime.catalog().course(id)));
    }));

    server.Post(R"(/v1/courses/([^/]+)/materials)", guarded([this](const auto& req, auto& res) {
      const std::string course_id = req.matches[1];
      if (!runtime.has_course(course_id)) throw UnknownCourse(course_id);
      const auto body = parse_body(req);
      json fields = body.contains("doc") ? body.at("doc") : body;
      if (!fields.is_object()) throw InvalidArgument("'doc' must be an object");
      if (fields.contains("course_id") && fields["course_id"] != course_id) {
        throw InvalidArgument("doc.course_id does not match the course in the path");
      }
      fields["course_id"] = course_id;
      required_string(fields, "doc_id");
      required_string(fields, "body");
      auto doc = fields.get<SourceDocument>();
      send_json(res, 202, runtime.ingest(doc));
    }));

    server.Post("/v1/sessions", guarded([this](const auto& req, auto& res) {
      const auto body = parse_body(req);
      const auto course_id = required_string(body, "course_id");
      if (!runtime.has_course(course_id)) throw UnknownCourse(course_id);
      const auto s = runtime.catalog().create_session(course_id);
      send_json(res, 201,
                {{"session_id", s.session_id}, {"course_id", s.course_id}, {"created_at", s.created_at}});
    }));

    server.Post(R"(/v1/sessions/([^/]+)/questions)", guarded([this](const auto& req, auto& res) {
      const std::string session_id = req.matches[1];
      if (!runtime.catalog().session(session_id)) throw UnknownSession(session_id);
      const auto body = parse_body(req);
      const auto text = required_string(body, "text");
      if (is_blank(text)) throw EmptyQuestion();

      auto lock_ptr = session_lock(session_id);
      std::lock_guard lock(*lock_ptr);
      auto session = *runtime.catalog().session(session_id);
      const auto before = session.transcript.size();
      runtime.ensure_loaded(session.course_id);
      const auto answer = runtime.tutor().answer_question(text, session);
      runtime.catalog().append_turns(session_id, session.transcript, before);
      send_json(res, 200, {{"session_id", session_id}, {"answer", public_projection(answer)}});
    }));

    server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const auto& req, auto& res) {
      const std::string session_id = req.matches[1];
      auto s = runtime.catalog().session(session_id);
      if (!s) throw UnknownSession(session_id);
      const auto total = s->transcript.size();
      const auto first = total > kTranscriptReturnCap ? total - kTranscriptReturnCap : 0;
      json turns = json::array();
      for (std::size_t i = first; i < total; ++i) turns.push_back(s->transcript[i]);
      send_json(res, 200,
                {{"session_id", s->session_id},
                 {"course_id", s->course_id},
                 {"created_at", s->created_at},
                 {"turn_count", total},
                 {"transcript", turns}});
    }));

    const auto& static_dir = runtime.config().static_dir;
    if (static_dir && std::filesystem::is_directory(*static_dir)) {
      server.set_mount_point("/app", static_dir->string());
    }
  }
};

TutorService::TutorService(const ServiceConfig& config, std::shared_ptr<Provider> provider, std::string token)
    : impl_(std::make_unique<Impl>(config, std::move(provider), std::move(token))) {
  if (impl_->token.empty()) throw InvalidArgument("service token is empty; set " + config.service_token_env);
  impl_->routes();
}

TutorService::~TutorService() { stop(); }

int TutorService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw StorageError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void TutorService::stop() {
  if (!impl_) return;
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

TutorRuntime& TutorService::runtime() { return impl_->runtime; }

}  // namespace courseassist
