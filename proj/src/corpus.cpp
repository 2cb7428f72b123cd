#include "courseassist/corpus.hpp"

#include "courseassist/errors.hpp"
#include "courseassist/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <system_error>

namespace courseassist {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(MaterialType t) {
  switch (t) {
    case MaterialType::Lecture: return "Lecture";
    case MaterialType::Assignment: return "Assignment";
    case MaterialType::Syllabus: return "Syllabus";
    case MaterialType::Other: return "Other";
  }
  return "Other";
}

MaterialType material_type_from_string(std::string_view s) {
  const auto lower = to_lower_ascii(trim(s));
  if (lower == "lecture") return MaterialType::Lecture;
  if (lower == "assignment") return MaterialType::Assignment;
  if (lower == "syllabus") return MaterialType::Syllabus;
  if (lower == "other") return MaterialType::Other;
  throw InvalidArgument("unknown material type: " + std::string(s));
}

void ChunkingPolicy::validate() const {
  if (max_chunk_tokens == 0) throw InvalidArgument("max_chunk_tokens must be positive");
  if (overlap_tokens >= max_chunk_tokens) {
    throw InvalidArgument("overlap_tokens must be smaller than max_chunk_tokens");
  }
}

std::string make_chunk_id(std::string_view course_id, std::string_view doc_id, std::size_t seq,
                          std::string_view text) {
  std::string material;
  material.reserve(course_id.size() + doc_id.size() + text.size() + 24);
  material.append(course_id).push_back('\x1f');
  material.append(doc_id).push_back('\x1f');
  material.append(std::to_string(seq)).push_back('\x1f');
  material.append(text);
  return sha256_hex(material).substr(0, 32);
}

namespace {

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool code = false;  // fenced code block: never split on sentences
};

bool is_fence_line(std::string_view line) {
  std::size_t indent = 0;
  while (indent < line.size() && indent < 3 && line[indent] == ' ') ++indent;
  return line.substr(indent).starts_with("```") || line.substr(indent).starts_with("~~~");
}

std::vector<Span> paragraph_spans(std::string_view body) {
  std::vector<std::size_t> starts{0};
  std::vector<bool> code_unit{false};
  bool in_fence = false;
  bool pending_break = false;
  std::size_t pos = 0;
  for (auto line : split_lines(body)) {
    const std::size_t line_start = pos;
    pos += line.size() + 1;
    if (in_fence) {
      if (is_fence_line(line)) {
        in_fence = false;
        pending_break = true;
      }
      continue;
    }
    if (is_fence_line(line)) {
      if (line_start != starts.back()) {
        starts.push_back(line_start);
        code_unit.push_back(true);
      } else {
        code_unit.back() = true;
      }
      in_fence = true;
      pending_break = false;
      continue;
    }
    if (is_blank(line)) {
      pending_break = true;
      continue;
    }
    if (pending_break && line_start != starts.back()) {
      starts.push_back(line_start);
      code_unit.push_back(false);
    }
    pending_break = false;
  }
  std::vector<Span> spans;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const std::size_t end = i + 1 < starts.size() ? starts[i + 1] : body.size();
    spans.push_back(Span{starts[i], end, code_unit[i]});
  }
  return spans;
}

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n'; }

std::vector<Span> sentence_spans(std::string_view body, const Span& para) {
  std::vector<Span> spans;
  std::size_t start = para.begin;
  std::size_t i = para.begin;
  while (i < para.end) {
    const char c = body[i];
    if ((c == '.' || c == '!' || c == '?') && i + 1 < para.end && is_ws(body[i + 1])) {
      std::size_t next = i + 1;
      while (next < para.end && is_ws(body[next])) ++next;
      if (next < para.end) {
        spans.push_back(Span{start, next, false});
        start = next;
      }
      i = next;
      continue;
    }
    ++i;
  }
  spans.push_back(Span{start, para.end, false});
  return spans;
}

class Chunker {
 public:
  Chunker(std::string_view body, const ChunkingPolicy& policy)
      : body_(body), policy_(policy), tokens_(tokenize(body)) {
    for (auto b : policy.split_boundaries) {
      if (b == SplitBoundary::Paragraph) use_paragraph_ = true;
      if (b == SplitBoundary::Sentence) use_sentence_ = true;
    }
  }

  std::vector<Span> run() {
    if (use_paragraph_) {
      for (const auto& p : paragraph_spans(body_)) add_paragraph(p);
    } else {
      add_paragraph(Span{0, body_.size(), false});
    }
    flush();
    if (has_current_) {
      // Trailing region without tokens belongs to the last chunk.
      if (out_.empty()) throw RejectedDocument("body contains no lexical tokens");
      out_.back().end = current_.end;
    }
    return std::move(out_);
  }

 private:
  std::size_t tokens_in(const Span& s) const {
    return first_token_at_or_after(s.end) - first_token_at_or_after(s.begin);
  }

  std::size_t first_token_at_or_after(std::size_t offset) const {
    auto it = std::lower_bound(tokens_.begin(), tokens_.end(), offset,
                               [](const Token& t, std::size_t off) { return t.begin < off; });
    return static_cast<std::size_t>(it - tokens_.begin());
  }

  void add_paragraph(const Span& p) {
    const std::size_t n = tokens_in(p);
    if (n <= policy_.max_chunk_tokens) return add_fitting(p, n);
    flush();
    if (use_sentence_ && !p.code) {
      for (const auto& s : sentence_spans(body_, p)) add_sentence(s);
      flush();
    } else {
      hard_cut(p);
    }
  }

  void add_sentence(const Span& s) {
    const std::size_t n = tokens_in(s);
    if (n <= policy_.max_chunk_tokens) return add_fitting(s, n);
    flush();
    hard_cut(s);
  }

  void add_fitting(const Span& s, std::size_t n) {
    if (current_tokens_ + n > policy_.max_chunk_tokens) flush();
    if (!has_current_) {
      current_ = Span{s.begin, s.end, false};
      has_current_ = true;
    } else {
      current_.end = s.end;
    }
    current_tokens_ += n;
  }

  // Emits the current chunk. A region without tokens is kept and becomes the
  // prefix of whatever comes next.
  void flush() {
    if (!has_current_ || current_tokens_ == 0) return;
    out_.push_back(current_);
    has_current_ = false;
    current_tokens_ = 0;
  }

  void hard_cut(const Span& s) {
    const std::size_t first = first_token_at_or_after(s.begin);
    const std::size_t n = tokens_in(s);
    const std::size_t max = policy_.max_chunk_tokens;
    const std::size_t stride = max - policy_.overlap_tokens;
    std::size_t piece_start = 0;
    for (std::size_t k = 0;; ++k) {
      const std::size_t piece_end = std::min(piece_start + max, n);
      Span piece;
      if (k == 0) {
        piece.begin = has_current_ ? current_.begin : s.begin;
      } else {
        piece.begin = tokens_[first + piece_start].begin;
      }
      piece.end = piece_end == n ? s.end : tokens_[first + piece_end].begin;
      out_.push_back(piece);
      if (piece_end == n) break;
      piece_start += stride;
    }
    has_current_ = false;
    current_tokens_ = 0;
  }

  std::string_view body_;
  const ChunkingPolicy& policy_;
  std::vector<Token> tokens_;
  bool use_paragraph_ = false;
  bool use_sentence_ = false;
  std::vector<Span> out_;
  Span current_;
  bool has_current_ = false;
  std::size_t current_tokens_ = 0;
};

}  // namespace

std::vector<MaterialChunk> chunk_document(const SourceDocument& doc, const ChunkingPolicy& policy) {
  policy.validate();
  const std::string body = normalize_text(doc.body);
  if (is_blank(body)) throw RejectedDocument("body is empty after normalization");

  std::vector<MaterialChunk> chunks;
  for (const auto& span : Chunker(body, policy).run()) {
    MaterialChunk c;
    c.doc_id = doc.doc_id;
    c.course_id = doc.course_id;
    c.material_type = doc.material_type;
    c.seq = chunks.size();
    c.text = body.substr(span.begin, span.end - span.begin);
    c.token_count = count_tokens(c.text);
    c.byte_offset = span.begin;
    c.chunk_id = make_chunk_id(c.course_id, c.doc_id, c.seq, c.text);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

std::string reassemble(const std::vector<MaterialChunk>& chunks) {
  std::vector<const MaterialChunk*> ordered;
  for (const auto& c : chunks) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->seq < b->seq; });
  std::string out;
  std::size_t covered = 0;
  for (const auto* c : ordered) {
    const std::size_t end = c->byte_offset + c->text.size();
    if (end <= covered) continue;
    const std::size_t skip = covered > c->byte_offset ? covered - c->byte_offset : 0;
    out.append(c->text, skip);
    covered = end;
  }
  return out;
}

void to_json(json& j, const SourceDocument& d) {
  j = json{{"doc_id", d.doc_id},
           {"course_id", d.course_id},
           {"material_type", to_string(d.material_type)},
           {"title", d.title},
           {"body", d.body}};
  if (d.origin_uri) j["origin_uri"] = *d.origin_uri;
}

void from_json(const json& j, SourceDocument& d) {
  d.doc_id = j.at("doc_id").get<std::string>();
  d.course_id = j.value("course_id", std::string{});
  d.material_type = material_type_from_string(j.value("material_type", std::string("Lecture")));
  d.title = j.value("title", std::string{});
  d.body = j.at("body").get<std::string>();
  if (j.contains("origin_uri") && !j["origin_uri"].is_null()) {
    d.origin_uri = j["origin_uri"].get<std::string>();
  }
}

void to_json(json& j, const MaterialChunk& c) {
  j = json{{"chunk_id", c.chunk_id},       {"doc_id", c.doc_id},
           {"course_id", c.course_id},     {"material_type", to_string(c.material_type)},
           {"seq", c.seq},                 {"text", c.text},
           {"token_count", c.token_count}, {"byte_offset", c.byte_offset}};
}

void from_json(const json& j, MaterialChunk& c) {
  c.chunk_id = j.at("chunk_id").get<std::string>();
  c.doc_id = j.at("doc_id").get<std::string>();
  c.course_id = j.at("course_id").get<std::string>();
  c.material_type = material_type_from_string(j.at("material_type").get<std::string>());
  c.seq = j.at("seq").get<std::size_t>();
  c.text = j.at("text").get<std::string>();
  c.token_count = j.at("token_count").get<std::size_t>();
  c.byte_offset = j.value("byte_offset", std::size_t{0});
}

void to_json(json& j, const IngestReport& r) {
  j = json{{"chunks_created", r.chunks_created}, {"chunk_ids", r.chunk_ids}};
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + random_hex(4);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw StorageError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw StorageError("cannot replace " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CorpusStore::CorpusStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
}

fs::path CorpusStore::course_dir(const std::string& course_id) const { return root_ / course_id; }

bool CorpusStore::valid_course_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-';
  });
}

bool CorpusStore::create_course(const std::string& course_id) {
  if (!valid_course_id(course_id)) throw InvalidArgument("invalid course id: " + course_id);
  std::lock_guard lock(mu_);
  const auto dir = course_dir(course_id);
  if (fs::exists(dir)) return false;
  fs::create_directories(dir);
  write_file_atomic(dir / "documents.jsonl", "");
  write_file_atomic(dir / "chunks.jsonl", "");
  return true;
}

bool CorpusStore::has_course(const std::string& course_id) const {
  return valid_course_id(course_id) && fs::is_directory(course_dir(course_id));
}

std::vector<std::string> CorpusStore::courses() const {
  std::vector<std::string> out;
  for (const auto& entry : fs::directory_iterator(root_)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && valid_course_id(name)) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::shared_ptr<CorpusStore::CourseState> CorpusStore::load_course(
    const std::string& course_id) const {
  auto state = std::make_shared<CourseState>();
  const auto dir = course_dir(course_id);
  auto each_line = [](const fs::path& p, auto&& fn) {
    if (!fs::exists(p)) return;
    std::istringstream in(read_file(p));
    std::string line;
    while (std::getline(in, line)) {
      if (!is_blank(line)) fn(json::parse(line));
    }
  };
  each_line(dir / "documents.jsonl", [&](const json& j) {
    auto d = j.get<SourceDocument>();
    state->documents[d.doc_id] = std::move(d);
  });
  each_line(dir / "chunks.jsonl", [&](const json& j) {
    auto c = j.get<MaterialChunk>();
    state->chunks[c.doc_id].push_back(std::move(c));
  });
  for (auto& [doc, list] : state->chunks) {
    std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  }
  return state;
}

std::shared_ptr<CorpusStore::CourseState> CorpusStore::state_for(
    const std::string& course_id) const {
  if (!has_course(course_id)) throw UnknownCourse(course_id);
  std::lock_guard lock(mu_);
  auto it = loaded_.find(course_id);
  if (it != loaded_.end()) return it->second;
  auto state = load_course(course_id);
  loaded_[course_id] = state;
  return state;
}

void CorpusStore::persist(const std::string& course_id, const CourseState& state) const {
  std::string docs;
  for (const auto& [id, d] : state.documents) docs += json(d).dump() + "\n";
  std::string chunks;
  for (const auto& [id, list] : state.chunks) {
    for (const auto& c : list) chunks += json(c).dump() + "\n";
  }
  const auto dir = course_dir(course_id);
  // chunks first: a crash between the two renames leaves chunks that the
  // next ingest of the same doc overwrites.
  write_file_atomic(dir / "chunks.jsonl", chunks);
  write_file_atomic(dir / "documents.jsonl", docs);
}

IngestReport CorpusStore::ingest(const SourceDocument& doc, const ChunkingPolicy& policy) {
  if (trim(doc.doc_id).empty()) throw InvalidArgument("doc_id must not be empty");
  auto state = state_for(doc.course_id);

  SourceDocument normalized = doc;
  normalized.body = normalize_text(doc.body);
  if (is_blank(normalized.body)) throw RejectedDocument("body is empty after normalization");
  auto new_chunks = chunk_document(normalized, policy);

  IngestReport report;
  report.chunks_created = new_chunks.size();
  for (const auto& c : new_chunks) report.chunk_ids.push_back(c.chunk_id);

  std::lock_guard lock(state->mu);
  auto next_docs = state->documents;
  auto next_chunks = state->chunks;
  next_docs[normalized.doc_id] = normalized;
  next_chunks[normalized.doc_id] = std::move(new_chunks);
  CourseState staged;
  staged.documents = std::move(next_docs);
  staged.chunks = std::move(next_chunks);
  persist(doc.course_id, staged);
  state->documents = std::move(staged.documents);
  state->chunks = std::move(staged.chunks);
  return report;
}

std::vector<SourceDocument> CorpusStore::documents(const std::string& course_id) const {
  auto state = state_for(course_id);
  std::lock_guard lock(state->mu);
  std::vector<SourceDocument> out;
  for (const auto& [id, d] : state->documents) out.push_back(d);
  return out;
}

std::vector<MaterialChunk> CorpusStore::chunks(const std::string& course_id) const {
  auto state = state_for(course_id);
  std::lock_guard lock(state->mu);
  std::vector<MaterialChunk> out;
  for (const auto& [id, list] : state->chunks) out.insert(out.end(), list.begin(), list.end());
  return out;
}

std::map<MaterialType, std::size_t> CorpusStore::material_counts(
    const std::string& course_id) const {
  std::map<MaterialType, std::size_t> counts;
  for (const auto& d : documents(course_id)) ++counts[d.material_type];
  return counts;
}

}  // namespace courseassist
