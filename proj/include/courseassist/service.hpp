#pragma once

#include "courseassist/config.hpp"
#include "courseassist/corpus.hpp"
#include "courseassist/llm.hpp"
#include "courseassist/pipeline.hpp"
#include "courseassist/retrieval.hpp"
#include "courseassist/store.hpp"

#include <memory>
#include <string>

namespace courseassist {

inline constexpr std::size_t kMaxRequestBody = 32 * 1024;
inline constexpr std::size_t kTranscriptReturnCap = 50;

// Everything a running tutor needs, wired from one config. Shared by the
// HTTP service and the one-shot CLI commands.
class TutorRuntime {
 public:
  TutorRuntime(const ServiceConfig& config, std::shared_ptr<Provider> provider);

  const ServiceConfig& config() const { return config_; }
  CorpusStore& corpus() { return corpus_; }
  Catalog& catalog() { return catalog_; }
  RetrievalEngine& engine() { return engine_; }
  Gateway& gateway() { return gateway_; }
  Tutor& tutor() { return tutor_; }

  // Creates the course in the catalog and on disk. False if it exists.
  bool create_course(const std::string& course_id, const std::string& title);
  bool has_course(const std::string& course_id) const;
  nlohmann::json course_json(const CourseRecord& course) const;

  // Stores the document and swaps in a rebuilt snapshot.
  IngestReport ingest(const SourceDocument& doc);
  // Re-embeds missing chunks; returns the number of embedded chunks.
  std::size_t rebuild(const std::string& course_id);
  // Makes sure a snapshot of the course is loaded.
  void ensure_loaded(const std::string& course_id);

 private:
  ServiceConfig config_;
  CorpusStore corpus_;
  Catalog catalog_;
  RetrievalEngine engine_;
  Gateway gateway_;
  Tutor tutor_;
};

// JSON-over-HTTP front end. All /v1 routes except /v1/healthz require
// "Authorization: Bearer <token>".
class TutorService {
 public:
  TutorService(const ServiceConfig& config, std::shared_ptr<Provider> provider, std::string token);
  ~TutorService();
  TutorService(const TutorService&) = delete;
  TutorService& operator=(const TutorService&) = delete;

  // Binds (port 0 picks a free port), starts serving on a background thread
  // and returns the bound port.
  int start(const std::string& host, int port);
  // Stops accepting, lets in-flight requests finish, joins the thread.
  void stop();

  TutorRuntime& runtime();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// "host:port" -> (host, port).
std::pair<std::string, int> split_listen_addr(const std::string& addr);

}  // namespace courseassist
