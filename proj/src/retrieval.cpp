#include "courseassist/retrieval.hpp"

#include "courseassist/errors.hpp"
#include "courseassist/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace courseassist {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(IntentCategory c) {
  switch (c) {
    case IntentCategory::Lecture: return "Lecture";
    case IntentCategory::Assignment: return "Assignment";
    case IntentCategory::ExamPrep: return "ExamPrep";
  }
  return "Lecture";
}

LexicalIndex build_lexical_index(const std::vector<MaterialChunk>& chunks) {
  if (chunks.empty()) throw EmptyCorpus();
  LexicalIndex index;
  std::map<std::string, std::map<std::string, std::size_t>> tf;  // term -> chunk -> count
  std::size_t total = 0;
  for (const auto& c : chunks) {
    auto terms = tokenize_terms(c.text);
    for (const auto& t : terms) ++tf[t][c.chunk_id];
    index.doc_lengths[c.chunk_id] = terms.size();
    total += terms.size();
  }
  for (auto& [term, per_chunk] : tf) {
    auto& list = index.postings[term];
    for (const auto& [chunk, count] : per_chunk) list.push_back(Posting{chunk, count});
  }
  index.corpus_size = index.doc_lengths.size();
  index.avg_doc_length = static_cast<double>(total) / static_cast<double>(index.corpus_size);
  return index;
}

namespace {

double idf(const LexicalIndex& index, std::size_t df) {
  const double n = static_cast<double>(index.corpus_size);
  const double d = static_cast<double>(df);
  return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double term_weight(const LexicalIndex& index, double term_idf, std::size_t tf, std::size_t len,
                   const RetrievalConfig& cfg) {
  const double f = static_cast<double>(tf);
  const double norm = 1.0 - cfg.bm25_b +
                      cfg.bm25_b * static_cast<double>(len) / index.avg_doc_length;
  return term_idf * f * (cfg.bm25_k1 + 1.0) / (f + cfg.bm25_k1 * norm);
}

const Posting* find_posting(const std::vector<Posting>& list, const std::string& chunk_id) {
  auto it = std::lower_bound(list.begin(), list.end(), chunk_id,
                             [](const Posting& p, const std::string& id) { return p.chunk_id < id; });
  if (it == list.end() || it->chunk_id != chunk_id) return nullptr;
  return &*it;
}

void sort_and_truncate(std::vector<ScoredChunk>& v, std::size_t k) {
  std::sort(v.begin(), v.end(), [](const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk_id < b.chunk_id;
  });
  if (v.size() > k) v.resize(k);
}

}  // namespace

double bm25_score(const LexicalIndex& index, const std::vector<std::string>& query_terms,
                  const std::string& chunk_id, const RetrievalConfig& config) {
  auto len_it = index.doc_lengths.find(chunk_id);
  if (len_it == index.doc_lengths.end()) throw UnknownChunk(chunk_id);
  double score = 0.0;
  for (const auto& term : query_terms) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const Posting* p = find_posting(it->second, chunk_id);
    if (p == nullptr) continue;
    score += term_weight(index, idf(index, it->second.size()), p->term_frequency, len_it->second,
                         config);
  }
  return score;
}

std::vector<ScoredChunk> bm25_search(const LexicalIndex& index,
                                     const std::vector<std::string>& query_terms, std::size_t k,
                                     const std::set<std::string>* allowed,
                                     const RetrievalConfig& config) {
  std::unordered_map<std::string, double> acc;
  for (const auto& term : query_terms) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const double term_idf = idf(index, it->second.size());
    for (const auto& p : it->second) {
      if (allowed != nullptr && allowed->count(p.chunk_id) == 0) continue;
      acc[p.chunk_id] +=
          term_weight(index, term_idf, p.term_frequency, index.doc_lengths.at(p.chunk_id), config);
    }
  }
  std::vector<ScoredChunk> out;
  out.reserve(acc.size());
  for (auto& [id, score] : acc) out.push_back(ScoredChunk{id, score});
  sort_and_truncate(out, k);
  return out;
}

void VectorStore::put(const std::string& chunk_id, std::vector<float> vec) {
  if (dimension_ == 0) dimension_ = vec.size();
  if (vec.size() != dimension_) throw DimensionMismatch(dimension_, vec.size());
  double norm = 0.0;
  for (float x : vec) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw InvalidArgument("cannot store a zero or non-finite vector");
  }
  for (auto& x : vec) x = static_cast<float>(x / norm);
  entries_[chunk_id] = std::move(vec);
}

const std::vector<float>* VectorStore::get(const std::string& chunk_id) const {
  auto it = entries_.find(chunk_id);
  return it == entries_.end() ? nullptr : &it->second;
}

void VectorStore::retain(const std::function<bool(const std::string&)>& keep) {
  std::erase_if(entries_, [&](const auto& entry) { return !keep(entry.first); });
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw StorageError("vectors.bin truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(T);
  return static_cast<T>(v);
}

constexpr std::uint32_t kVectorFileVersion = 1;

}  // namespace

void VectorStore::save(const fs::path& path) const {
  std::string out = "CAVS";
  put_le<std::uint32_t>(out, kVectorFileVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dimension_));
  put_le<std::uint64_t>(out, entries_.size());
  for (const auto& [id, vec] : entries_) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out += id;
    for (float x : vec) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
  }
  write_file_atomic(path, out);
}

VectorStore VectorStore::load(const fs::path& path) {
  const std::string in = read_file(path);
  if (in.size() < 20 || in.compare(0, 4, "CAVS") != 0) throw StorageError("bad vectors.bin magic");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(in, pos);
  if (version != kVectorFileVersion) {
    throw StorageError("unsupported vectors.bin version " + std::to_string(version));
  }
  const auto dim = get_le<std::uint32_t>(in, pos);
  const auto count = get_le<std::uint64_t>(in, pos);
  VectorStore store(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id_len = get_le<std::uint16_t>(in, pos);
    if (pos + id_len > in.size()) throw StorageError("vectors.bin truncated");
    std::string id = in.substr(pos, id_len);
    pos += id_len;
    std::vector<float> vec(dim);
    for (auto& x : vec) x = std::bit_cast<float>(get_le<std::uint32_t>(in, pos));
    store.entries_[std::move(id)] = std::move(vec);
  }
  return store;
}

std::vector<ScoredChunk> dense_search(const VectorStore& store, std::span<const float> query_vec,
                                      std::size_t k, const std::set<std::string>* allowed) {
  if (query_vec.size() != store.dimension()) {
    throw DimensionMismatch(store.dimension(), query_vec.size());
  }
  std::vector<ScoredChunk> out;
  out.reserve(store.size());
  for (const auto& [id, vec] : store.entries()) {
    if (allowed != nullptr && allowed->count(id) == 0) continue;
    double dot = 0.0;
    for (std::size_t i = 0; i < vec.size(); ++i) {
      dot += static_cast<double>(vec[i]) * static_cast<double>(query_vec[i]);
    }
    out.push_back(ScoredChunk{id, dot});
  }
  sort_and_truncate(out, k);
  return out;
}

std::vector<FusedHit> fuse(const std::vector<std::string>& lexical,
                           const std::vector<std::string>& dense, std::size_t k, double rrf_k) {
  std::map<std::string, FusedHit> by_id;
  for (std::size_t i = 0; i < lexical.size(); ++i) {
    auto& hit = by_id[lexical[i]];
    hit.chunk_id = lexical[i];
    hit.lexical_rank = i + 1;
    hit.fused_score += 1.0 / (rrf_k + static_cast<double>(i + 1));
  }
  for (std::size_t i = 0; i < dense.size(); ++i) {
    auto& hit = by_id[dense[i]];
    hit.chunk_id = dense[i];
    hit.dense_rank = i + 1;
    hit.fused_score += 1.0 / (rrf_k + static_cast<double>(i + 1));
  }
  std::vector<FusedHit> hits;
  hits.reserve(by_id.size());
  for (auto& [id, hit] : by_id) hits.push_back(std::move(hit));
  std::stable_sort(hits.begin(), hits.end(), [](const FusedHit& a, const FusedHit& b) {
    return a.fused_score > b.fused_score;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

void to_json(json& j, const FusedHit& h) {
  j = json{{"chunk_id", h.chunk_id}, {"fused_score", h.fused_score}};
  j["lexical_rank"] = h.lexical_rank ? json(*h.lexical_rank) : json(nullptr);
  j["dense_rank"] = h.dense_rank ? json(*h.dense_rank) : json(nullptr);
}

void to_json(json& j, const RetrievalQuery& q) {
  j = json{{"text", q.text}, {"course_id", q.course_id}, {"k", q.k}};
  if (q.material_filter) {
    json filter = json::array();
    for (auto t : *q.material_filter) filter.push_back(to_string(t));
    j["material_filter"] = filter;
  } else {
    j["material_filter"] = nullptr;
  }
  json channels = json::array();
  for (auto c : q.channels) channels.push_back(c == Channel::Lexical ? "lexical" : "dense");
  j["channels"] = channels;
  j["dense_degraded"] = q.dense_degraded;
}

void to_json(json& j, const RetrievalSet& s) {
  j = json{{"hits", s.hits}, {"query_echo", s.query_echo}};
}

RetrievalPolicy policy_for(IntentCategory intent) {
  RetrievalPolicy p;
  p.intent = intent;
  switch (intent) {
    case IntentCategory::Lecture:
      p.k = 6;
      p.material_filter = {MaterialType::Lecture};
      break;
    case IntentCategory::ExamPrep:
      p.k = 4;
      p.material_filter = {MaterialType::Lecture, MaterialType::Syllabus};
      p.decompose = true;
      break;
    case IntentCategory::Assignment:
      p.k = 4;
      p.material_filter = {MaterialType::Assignment, MaterialType::Lecture};
      break;
  }
  return p;
}

RetrievalSet hybrid_search(const RetrievalQuery& query, const CourseSnapshot& snapshot,
                           const QueryEmbedder& embedder, const RetrievalConfig& config) {
  if (query.k == 0) throw InvalidArgument("k must be at least 1");
  if (query.channels.empty()) throw InvalidArgument("at least one channel is required");
  if (query.course_id != snapshot.course_id) throw UnknownCourse(query.course_id);
  if (is_blank(query.text)) throw EmptyQuery();

  RetrievalSet result;
  result.query_echo = query;
  result.query_echo.dense_degraded = false;

  std::set<std::string> allowed;
  if (query.material_filter) {
    for (const auto& [id, chunk] : snapshot.chunks) {
      if (query.material_filter->count(chunk.material_type)) allowed.insert(id);
    }
  }
  const std::set<std::string>* allowed_ptr = query.material_filter ? &allowed : nullptr;
  const std::size_t depth = std::max(query.k, config.candidate_depth);

  const auto terms = tokenize_terms(query.text);
  const bool want_lexical = query.channels.count(Channel::Lexical) != 0;
  const bool want_dense = query.channels.count(Channel::Dense) != 0;
  if (terms.empty() && !want_dense) throw EmptyQuery();

  std::vector<std::string> lexical_ids;
  if (want_lexical && !terms.empty() && snapshot.lexical.corpus_size > 0) {
    for (auto& s : bm25_search(snapshot.lexical, terms, depth, allowed_ptr, config)) {
      lexical_ids.push_back(std::move(s.chunk_id));
    }
  }

  std::vector<std::string> dense_ids;
  if (want_dense && snapshot.vectors.size() > 0) {
    try {
      if (!embedder) throw InvalidArgument("no embedder configured");
      const auto qvec = embedder(query.text);
      for (auto& s : dense_search(snapshot.vectors, qvec, depth, allowed_ptr)) {
        dense_ids.push_back(std::move(s.chunk_id));
      }
    } catch (const std::exception&) {
      result.query_echo.dense_degraded = true;
      dense_ids.clear();
    }
  }

  result.hits = fuse(lexical_ids, dense_ids, query.k, config.rrf_k);
  return result;
}

RetrievalEngine::RetrievalEngine(const CorpusStore& corpus, RetrievalConfig config)
    : corpus_(corpus), config_(config) {}

std::shared_ptr<CourseSnapshot> RetrievalEngine::assemble(const std::string& course_id,
                                                          const std::string& embedder_id) const {
  auto snap = std::make_shared<CourseSnapshot>();
  snap->course_id = course_id;
  snap->embedder_id = embedder_id;
  const auto chunks = corpus_.chunks(course_id);
  for (const auto& d : corpus_.documents(course_id)) snap->doc_titles[d.doc_id] = d.title;
  for (const auto& c : chunks) snap->chunks[c.chunk_id] = c;
  if (!chunks.empty()) snap->lexical = build_lexical_index(chunks);

  const auto dir = corpus_.course_dir(course_id);
  const auto meta_path = dir / "vectors.meta.json";
  const auto bin_path = dir / "vectors.bin";
  if (fs::exists(meta_path) && fs::exists(bin_path)) {
    const auto meta = json::parse(read_file(meta_path));
    if (meta.value("embedder_id", std::string{}) == embedder_id) {
      snap->vectors = VectorStore::load(bin_path);
      snap->vectors.retain([&](const std::string& id) { return snap->chunks.count(id) != 0; });
    }
  }
  return snap;
}

std::size_t RetrievalEngine::rebuild(const std::string& course_id, const BatchEmbedder& embedder,
                                     const std::string& embedder_id, std::size_t batch_size) {
  std::lock_guard rebuild_lock(rebuild_mu_);
  auto snap = assemble(course_id, embedder_id);

  std::vector<const MaterialChunk*> missing;
  for (const auto& [id, c] : snap->chunks) {
    if (!snap->vectors.contains(id)) missing.push_back(&c);
  }
  if (embedder) {
    for (std::size_t start = 0; start < missing.size(); start += batch_size) {
      const std::size_t end = std::min(start + batch_size, missing.size());
      std::vector<std::string> texts;
      for (std::size_t i = start; i < end; ++i) texts.push_back(missing[i]->text);
      try {
        auto vecs = embedder(texts);
        if (vecs.size() != texts.size()) continue;
        for (std::size_t i = start; i < end; ++i) {
          snap->vectors.put(missing[i]->chunk_id, std::move(vecs[i - start]));
        }
      } catch (const std::exception&) {
        // chunks in this batch stay lexical-only
      }
    }
  }

  const auto dir = corpus_.course_dir(course_id);
  snap->vectors.save(dir / "vectors.bin");
  write_file_atomic(dir / "vectors.meta.json",
                    json{{"embedder_id", embedder_id}, {"dimension", snap->vectors.dimension()}}
                        .dump());
  const std::size_t embedded = snap->vectors.size();
  std::lock_guard lock(mu_);
  snapshots_[course_id] = std::move(snap);
  return embedded;
}

void RetrievalEngine::load(const std::string& course_id, const std::string& embedder_id) {
  auto snap = assemble(course_id, embedder_id);
  std::lock_guard lock(mu_);
  snapshots_[course_id] = std::move(snap);
}

std::shared_ptr<const CourseSnapshot> RetrievalEngine::snapshot(const std::string& course_id) const {
  std::lock_guard lock(mu_);
  auto it = snapshots_.find(course_id);
  if (it == snapshots_.end()) throw UnknownCourse(course_id);
  return it->second;
}

bool RetrievalEngine::loaded(const std::string& course_id) const {
  std::lock_guard lock(mu_);
  return snapshots_.count(course_id) != 0;
}

bool RetrievalEngine::any_loaded() const {
  std::lock_guard lock(mu_);
  return !snapshots_.empty();
}

RetrievalSet RetrievalEngine::search(const RetrievalQuery& query,
                                     const QueryEmbedder& embedder) const {
  auto snap = snapshot(query.course_id);
  return hybrid_search(query, *snap, embedder, config_);
}

}  // namespace courseassist
