#pragma once

#include "courseassist/corpus.hpp"
#include "courseassist/llm.hpp"
#include "courseassist/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "courseassist-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::shared_ptr<courseassist::MockProvider> mock(const nlohmann::ordered_json& script) {
  return std::shared_ptr<courseassist::MockProvider>(courseassist::MockProvider::from_json(script));
}

// Gateway config that never sleeps between retries.
inline courseassist::GatewayConfig fast_gateway() {
  courseassist::GatewayConfig g;
  g.backoff_base = std::chrono::milliseconds(0);
  return g;
}

inline courseassist::Sleeper no_sleep() {
  return [](std::chrono::milliseconds) {};
}

inline courseassist::SourceDocument doc(const std::string& course, const std::string& id,
                                        courseassist::MaterialType type, const std::string& title,
                                        const std::string& body) {
  courseassist::SourceDocument d;
  d.course_id = course;
  d.doc_id = id;
  d.material_type = type;
  d.title = title;
  d.body = body;
  return d;
}

}  // namespace testing_support
