#include "courseassist/store.hpp"

#include "courseassist/errors.hpp"
#include "courseassist/text.hpp"

#include <sqlite3.h>

namespace courseassist {

namespace {

// RAII prepared statement.
class Stmt {
 public:
  Stmt(sqlite3* db, const char* sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK) fail("prepare");
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int idx, const std::string& s) {
    if (sqlite3_bind_text(stmt_, idx, s.data(), static_cast<int>(s.size()), SQLITE_TRANSIENT) != SQLITE_OK) {
      fail("bind");
    }
    return *this;
  }
  Stmt& bind(int idx, std::int64_t v) {
    if (sqlite3_bind_int64(stmt_, idx, v) != SQLITE_OK) fail("bind");
    return *this;
  }
  Stmt& bind_null(int idx) {
    if (sqlite3_bind_null(stmt_, idx) != SQLITE_OK) fail("bind");
    return *this;
  }
  // True while rows remain.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    if (rc == SQLITE_CONSTRAINT) throw std::runtime_error("constraint");
    fail("step");
  }
  std::string text(int col) const {
    const auto* p = sqlite3_column_text(stmt_, col);
    return p == nullptr ? std::string{} : std::string(reinterpret_cast<const char*>(p),
                                                      static_cast<std::size_t>(sqlite3_column_bytes(stmt_, col)));
  }
  bool is_null(int col) const { return sqlite3_column_type(stmt_, col) == SQLITE_NULL; }

 private:
  [[noreturn]] void fail(const char* what) const {
    throw StorageError(std::string("sqlite ") + what + ": " + sqlite3_errmsg(db_));
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

}  // namespace

Catalog::Catalog(const std::filesystem::path& db_path) {
  std::error_code ec;
  if (db_path.has_parent_path()) std::filesystem::create_directories(db_path.parent_path(), ec);
  const int flags = SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX;
  if (sqlite3_open_v2(db_path.c_str(), &db_, flags, nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw StorageError("cannot open " + db_path.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  exec("PRAGMA journal_mode=WAL");
  exec("PRAGMA foreign_keys=ON");
  exec(
      "CREATE TABLE IF NOT EXISTS courses ("
      " course_id TEXT PRIMARY KEY, title TEXT NOT NULL, created_at TEXT NOT NULL)");
  exec(
      "CREATE TABLE IF NOT EXISTS sessions ("
      " session_id TEXT PRIMARY KEY,"
      " course_id TEXT NOT NULL REFERENCES courses(course_id),"
      " created_at TEXT NOT NULL)");
  exec(
      "CREATE TABLE IF NOT EXISTS turns ("
      " session_id TEXT NOT NULL REFERENCES sessions(session_id),"
      " idx INTEGER NOT NULL, role TEXT NOT NULL, text TEXT NOT NULL, answer_meta TEXT,"
      " PRIMARY KEY (session_id, idx))");
}

Catalog::~Catalog() { sqlite3_close(db_); }

void Catalog::exec(const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw StorageError("sqlite: " + msg);
  }
}

bool Catalog::create_course(const CourseRecord& course) {
  std::lock_guard lock(mutex_);
  Stmt st(db_, "INSERT OR IGNORE INTO courses (course_id, title, created_at) VALUES (?, ?, ?)");
  st.bind(1, course.course_id).bind(2, course.title).bind(3, course.created_at);
  st.step();
  return sqlite3_changes(db_) == 1;
}

std::optional<CourseRecord> Catalog::course(const std::string& course_id) const {
  std::lock_guard lock(mutex_);
  Stmt st(db_, "SELECT course_id, title, created_at FROM courses WHERE course_id = ?");
  st.bind(1, course_id);
  if (!st.step()) return std::nullopt;
  return CourseRecord{st.text(0), st.text(1), st.text(2)};
}

std::vector<CourseRecord> Catalog::courses() const {
  std::lock_guard lock(mutex_);
  Stmt st(db_, "SELECT course_id, title, created_at FROM courses ORDER BY course_id");
  std::vector<CourseRecord> out;
  while (st.step()) out.push_back({st.text(0), st.text(1), st.text(2)});
  return out;
}

Session Catalog::create_session(const std::string& course_id) {
  std::lock_guard lock(mutex_);
  Session s;
  s.session_id = random_url_safe_id();
  s.course_id = course_id;
  s.created_at = now_rfc3339();
  Stmt st(db_, "INSERT INTO sessions (session_id, course_id, created_at) VALUES (?, ?, ?)");
  st.bind(1, s.session_id).bind(2, s.course_id).bind(3, s.created_at);
  try {
    st.step();
  } catch (const std::runtime_error&) {
    throw UnknownCourse(course_id);
  }
  return s;
}

std::optional<Session> Catalog::session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  Session s;
  {
    Stmt st(db_, "SELECT session_id, course_id, created_at FROM sessions WHERE session_id = ?");
    st.bind(1, session_id);
    if (!st.step()) return std::nullopt;
    s.session_id = st.text(0);
    s.course_id = st.text(1);
    s.created_at = st.text(2);
  }
  Stmt st(db_, "SELECT role, text, answer_meta FROM turns WHERE session_id = ? ORDER BY idx");
  st.bind(1, session_id);
  while (st.step()) {
    nlohmann::json j = {{"role", st.text(0)}, {"text", st.text(1)}};
    if (!st.is_null(2)) j["answer_meta"] = nlohmann::json::parse(st.text(2));
    s.transcript.push_back(j.get<TranscriptTurn>());
  }
  return s;
}

void Catalog::append_turns(const std::string& session_id, const std::vector<TranscriptTurn>& turns,
                           std::size_t from) {
  std::lock_guard lock(mutex_);
  exec("BEGIN IMMEDIATE");
  try {
    for (std::size_t i = from; i < turns.size(); ++i) {
      const auto& t = turns[i];
      Stmt st(db_, "INSERT INTO turns (session_id, idx, role, text, answer_meta) VALUES (?, ?, ?, ?, ?)");
      st.bind(1, session_id).bind(2, static_cast<std::int64_t>(i));
      st.bind(3, std::string(to_string(t.role))).bind(4, t.text);
      if (t.answer_meta) st.bind(5, t.answer_meta->dump());
      else st.bind_null(5);
      st.step();
    }
    exec("COMMIT");
  } catch (...) {
    exec("ROLLBACK");
    throw;
  }
}

}  // namespace courseassist
