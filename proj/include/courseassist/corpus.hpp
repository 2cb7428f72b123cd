#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace courseassist {

enum class MaterialType { Lecture, Assignment, Syllabus, Other };

std::string_view to_string(MaterialType t);
MaterialType material_type_from_string(std::string_view s);  // case-insensitive

struct SourceDocument {
  std::string doc_id;
  std::string course_id;
  MaterialType material_type = MaterialType::Lecture;
  std::string title;
  std::string body;
  std::optional<std::string> origin_uri;
};

struct MaterialChunk {
  std::string chunk_id;
  std::string doc_id;
  std::string course_id;
  MaterialType material_type = MaterialType::Lecture;
  std::size_t seq = 0;
  std::string text;
  std::size_t token_count = 0;
  // Byte offset of `text` inside the normalized document body. Lets overlap
  // regions be removed exactly when reassembling a document.
  std::size_t byte_offset = 0;
  std::optional<std::vector<float>> embedding;
};

enum class SplitBoundary { Paragraph, Sentence, Token };

struct ChunkingPolicy {
  std::size_t max_chunk_tokens = 512;
  std::size_t overlap_tokens = 64;
  std::vector<SplitBoundary> split_boundaries{SplitBoundary::Paragraph, SplitBoundary::Sentence,
                                              SplitBoundary::Token};

  void validate() const;
};

// Content hash over (course_id, doc_id, seq, text).
std::string make_chunk_id(std::string_view course_id, std::string_view doc_id, std::size_t seq,
                          std::string_view text);

// `doc.body` is normalized here as well, so callers may pass raw text.
std::vector<MaterialChunk> chunk_document(const SourceDocument& doc, const ChunkingPolicy& policy);

// Joins chunk texts in seq order, dropping the overlap each chunk shares with
// its predecessor.
std::string reassemble(const std::vector<MaterialChunk>& chunks);

void to_json(nlohmann::json& j, const SourceDocument& d);
void from_json(const nlohmann::json& j, SourceDocument& d);
void to_json(nlohmann::json& j, const MaterialChunk& c);
void from_json(const nlohmann::json& j, MaterialChunk& c);

struct IngestReport {
  std::size_t chunks_created = 0;
  std::vector<std::string> chunk_ids;
};
void to_json(nlohmann::json& j, const IngestReport& r);

// File-backed corpus: <root>/<course_id>/{documents.jsonl, chunks.jsonl}.
// Writes go through a temp file and rename, so readers never see a partial
// file. All mutations of one course are serialized.
class CorpusStore {
 public:
  explicit CorpusStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path course_dir(const std::string& course_id) const;

  static bool valid_course_id(std::string_view course_id);

  // Returns false when the course already exists.
  bool create_course(const std::string& course_id);
  bool has_course(const std::string& course_id) const;
  std::vector<std::string> courses() const;

  IngestReport ingest(const SourceDocument& doc,
                      const ChunkingPolicy& policy = ChunkingPolicy{});

  std::vector<SourceDocument> documents(const std::string& course_id) const;
  // Sorted by (doc_id, seq).
  std::vector<MaterialChunk> chunks(const std::string& course_id) const;
  std::map<MaterialType, std::size_t> material_counts(const std::string& course_id) const;

 private:
  struct CourseState {
    std::mutex mu;
    std::map<std::string, SourceDocument> documents;
    std::map<std::string, std::vector<MaterialChunk>> chunks;  // by doc_id
  };

  std::shared_ptr<CourseState> state_for(const std::string& course_id) const;
  std::shared_ptr<CourseState> load_course(const std::string& course_id) const;
  void persist(const std::string& course_id, const CourseState& state) const;

  std::filesystem::path root_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::shared_ptr<CourseState>> loaded_;
};

// Writes `contents` to `path` atomically (temp file + rename).
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace courseassist
