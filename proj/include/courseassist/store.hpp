#pragma once

#include "courseassist/pipeline.hpp"

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

struct sqlite3;

namespace courseassist {

struct CourseRecord {
  std::string course_id;
  std::string title;
  std::string created_at;
};

// Courses, sessions and transcripts in a single SQLite file.
class Catalog {
 public:
  explicit Catalog(const std::filesystem::path& db_path);
  ~Catalog();
  Catalog(const Catalog&) = delete;
  Catalog& operator=(const Catalog&) = delete;

  // False when the course already exists.
  bool create_course(const CourseRecord& course);
  std::optional<CourseRecord> course(const std::string& course_id) const;
  std::vector<CourseRecord> courses() const;

  Session create_session(const std::string& course_id);
  // Loads the full transcript.
  std::optional<Session> session(const std::string& session_id) const;
  // Appends turns[from..] with indices from, from+1, ...
  void append_turns(const std::string& session_id, const std::vector<TranscriptTurn>& turns,
                    std::size_t from);

 private:
  void exec(const char* sql);

  sqlite3* db_ = nullptr;
  mutable std::mutex mutex_;
};

}  // namespace courseassist
