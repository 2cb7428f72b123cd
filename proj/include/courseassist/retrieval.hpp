#pragma once

#include "courseassist/corpus.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace courseassist {

enum class IntentCategory { Lecture, Assignment, ExamPrep };
std::string_view to_string(IntentCategory c);

enum class Channel { Lexical, Dense };

struct RetrievalConfig {
  double bm25_k1 = 1.2;
  double bm25_b = 0.75;
  double rrf_k = 60.0;
  // Per-channel candidate list depth fed into fusion (never below k).
  std::size_t candidate_depth = 50;
};

struct Posting {
  std::string chunk_id;
  std::size_t term_frequency = 0;
};

struct LexicalIndex {
  std::unordered_map<std::string, std::vector<Posting>> postings;  // postings sorted by chunk_id
  std::map<std::string, std::size_t> doc_lengths;
  double avg_doc_length = 0.0;
  std::size_t corpus_size = 0;
};

LexicalIndex build_lexical_index(const std::vector<MaterialChunk>& chunks);

double bm25_score(const LexicalIndex& index, const std::vector<std::string>& query_terms,
                  const std::string& chunk_id, const RetrievalConfig& config = {});

struct ScoredChunk {
  std::string chunk_id;
  double score = 0.0;
};

// Term-at-a-time scoring over postings. Only chunks matching at least one
// query term are returned; `allowed` (when set) restricts the candidates.
std::vector<ScoredChunk> bm25_search(const LexicalIndex& index,
                                     const std::vector<std::string>& query_terms, std::size_t k,
                                     const std::set<std::string>* allowed = nullptr,
                                     const RetrievalConfig& config = {});

class VectorStore {
 public:
  VectorStore() = default;
  explicit VectorStore(std::size_t dimension) : dimension_(dimension) {}

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& chunk_id) const { return entries_.count(chunk_id) != 0; }
  const std::map<std::string, std::vector<float>>& entries() const { return entries_; }

  // Normalizes `vec` to unit length. Throws DimensionMismatch or
  // InvalidArgument for a zero vector.
  void put(const std::string& chunk_id, std::vector<float> vec);
  const std::vector<float>* get(const std::string& chunk_id) const;
  // Drops every entry whose id fails `keep`.
  void retain(const std::function<bool(const std::string&)>& keep);

  void save(const std::filesystem::path& path) const;
  static VectorStore load(const std::filesystem::path& path);

 private:
  std::size_t dimension_ = 0;
  std::map<std::string, std::vector<float>> entries_;
};

// Exhaustive scan; ties by chunk_id ascending. `allowed` null means all.
std::vector<ScoredChunk> dense_search(const VectorStore& store, std::span<const float> query_vec,
                                      std::size_t k,
                                      const std::set<std::string>* allowed = nullptr);

struct FusedHit {
  std::string chunk_id;
  double fused_score = 0.0;
  std::optional<std::size_t> lexical_rank;  // 1-based
  std::optional<std::size_t> dense_rank;
};

// Reciprocal rank fusion. Inputs are ranked, duplicate-free chunk id lists.
std::vector<FusedHit> fuse(const std::vector<std::string>& lexical,
                           const std::vector<std::string>& dense, std::size_t k,
                           double rrf_k = 60.0);

struct RetrievalQuery {
  std::string text;
  std::string course_id;
  std::optional<std::set<MaterialType>> material_filter;
  std::size_t k = 6;
  std::set<Channel> channels{Channel::Lexical, Channel::Dense};
  // Set by hybrid_search when the dense channel was requested but the
  // embedder failed.
  bool dense_degraded = false;
};

struct RetrievalSet {
  std::vector<FusedHit> hits;
  RetrievalQuery query_echo;
};

void to_json(nlohmann::json& j, const FusedHit& h);
void to_json(nlohmann::json& j, const RetrievalQuery& q);
void to_json(nlohmann::json& j, const RetrievalSet& s);

struct RetrievalPolicy {
  IntentCategory intent = IntentCategory::Lecture;
  std::set<Channel> channels{Channel::Lexical, Channel::Dense};
  std::size_t k = 6;
  std::set<MaterialType> material_filter;
  bool retrieve_at_all = true;
  bool decompose = false;  // retrieve once per sub-question
};

RetrievalPolicy policy_for(IntentCategory intent);

// Embeds a single query text; throws on failure.
using QueryEmbedder = std::function<std::vector<float>(const std::string&)>;

// Immutable per-course retrieval state.
struct CourseSnapshot {
  std::string course_id;
  std::map<std::string, MaterialChunk> chunks;
  std::map<std::string, std::string> doc_titles;
  LexicalIndex lexical;
  VectorStore vectors;
  std::string embedder_id;
};

RetrievalSet hybrid_search(const RetrievalQuery& query, const CourseSnapshot& snapshot,
                           const QueryEmbedder& embedder, const RetrievalConfig& config = {});

// Embeds a list of texts; throws on failure. Used for (re)indexing.
using BatchEmbedder = std::function<std::vector<std::vector<float>>(const std::vector<std::string>&)>;

// Holds the current snapshot of each course and swaps them atomically on
// rebuild. Readers keep whatever snapshot they grabbed.
class RetrievalEngine {
 public:
  RetrievalEngine(const CorpusStore& corpus, RetrievalConfig config = {});

  // Re-reads chunks, rebuilds the lexical index, and embeds chunks missing
  // from the persisted vector cache. Embedding failures leave those chunks
  // lexical-only. Returns the number of chunks that are embedded.
  std::size_t rebuild(const std::string& course_id, const BatchEmbedder& embedder,
                      const std::string& embedder_id, std::size_t batch_size = 32);

  // Loads a snapshot from disk without calling the embedder.
  void load(const std::string& course_id, const std::string& embedder_id);

  std::shared_ptr<const CourseSnapshot> snapshot(const std::string& course_id) const;
  bool loaded(const std::string& course_id) const;
  bool any_loaded() const;

  RetrievalSet search(const RetrievalQuery& query, const QueryEmbedder& embedder) const;

  const RetrievalConfig& config() const { return config_; }

 private:
  std::shared_ptr<CourseSnapshot> assemble(const std::string& course_id,
                                           const std::string& embedder_id) const;

  const CorpusStore& corpus_;
  RetrievalConfig config_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const CourseSnapshot>> snapshots_;
  std::mutex rebuild_mu_;
};

}  // namespace courseassist
