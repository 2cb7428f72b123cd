#include "courseassist/llm.hpp"

#include "courseassist/errors.hpp"
#include "courseassist/text.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

namespace courseassist {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role role_from_string(std::string_view s) {
  const auto lower = to_lower_ascii(s);
  if (lower == "system") return Role::System;
  if (lower == "user") return Role::User;
  if (lower == "assistant") return Role::Assistant;
  throw InvalidArgument("unknown role: " + std::string(s));
}

std::string_view to_string(FinishReason f) {
  switch (f) {
    case FinishReason::Stop: return "Stop";
    case FinishReason::Length: return "Length";
    case FinishReason::Error: return "Error";
  }
  return "Error";
}

void CompletionRequest::validate() const {
  if (messages.empty()) throw InvalidArgument("completion request has no messages");
  if (messages.front().role != Role::System) {
    throw InvalidArgument("first message must have the system role");
  }
  for (const auto& m : messages) {
    if (m.role != Role::Assistant && m.content.empty()) {
      throw InvalidArgument("system and user messages must not be empty");
    }
  }
  if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
  if (max_tokens <= 0) throw InvalidArgument("max_tokens must be positive");
}

json to_wire_json(const CompletionRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) {
    messages.push_back(json{{"role", to_string(m.role)}, {"content", m.content}});
  }
  return json{{"model", req.model_id},
              {"messages", messages},
              {"temperature", req.temperature},
              {"max_tokens", req.max_tokens}};
}

std::vector<float> hashing_embedding(std::string_view text, std::size_t dimension) {
  std::vector<float> vec(dimension, 0.0f);
  auto add_feature = [&](std::string_view feature) {
    // FNV-1a, 64 bit
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : feature) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    const std::size_t bucket = static_cast<std::size_t>(h % dimension);
    const float sign = (h >> 63) != 0 ? -1.0f : 1.0f;
    vec[bucket] += sign;
  };
  const auto terms = tokenize_terms(text);
  if (terms.empty()) {
    add_feature(trim(text));
  } else {
    for (const auto& t : terms) add_feature(t);
  }
  double norm = 0.0;
  for (float x : vec) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    // All features cancelled out; fall back to a fixed direction.
    vec[0] = 1.0f;
    return vec;
  }
  for (auto& x : vec) x = static_cast<float>(x / norm);
  return vec;
}

bool MockProvider::Matcher::matches(const CompletionRequest& req) const {
  switch (kind) {
    case Kind::Any: return true;
    case Kind::Tag: return req.tag == value;
    case Kind::Contains:
      for (const auto& m : req.messages) {
        if (m.content.find(value) != std::string::npos) return true;
      }
      return false;
  }
  return false;
}

std::string MockProvider::Matcher::describe() const {
  switch (kind) {
    case Kind::Any: return "*";
    case Kind::Tag: return value;
    case Kind::Contains: return "contains:" + value;
  }
  return value;
}

MockProvider::MockProvider(std::vector<Entry> script, std::size_t embedding_dimension)
    : script_(std::move(script)), embedding_dimension_(embedding_dimension) {
  if (script_.empty()) throw InvalidArgument("mock provider script must not be empty");
}

namespace {

MockProvider::Response parse_response(const ordered_json& j) {
  MockProvider::Response r;
  if (j.is_string()) {
    r.text = j.get<std::string>();
    return r;
  }
  if (!j.is_object()) throw InvalidArgument("mock response must be a string or an object");
  if (j.contains("error")) {
    const auto kind = to_lower_ascii(j.at("error").get<std::string>());
    if (kind == "transient") {
      r.kind = MockProvider::Response::Kind::Transient;
    } else if (kind == "rejected") {
      r.kind = MockProvider::Response::Kind::Rejected;
    } else if (kind == "timeout") {
      r.kind = MockProvider::Response::Kind::Timeout;
    } else {
      throw InvalidArgument("unknown mock error kind: " + kind);
    }
  } else {
    r.text = j.value("text", std::string{});
  }
  if (to_lower_ascii(j.value("finish", std::string("stop"))) == "length") {
    r.finish_reason = FinishReason::Length;
  }
  r.repeat = j.value("repeat", false);
  return r;
}

}  // namespace

std::unique_ptr<MockProvider> MockProvider::from_json(const ordered_json& script) {
  if (!script.is_object()) throw InvalidArgument("mock script must be a JSON object");
  std::vector<Entry> entries;
  for (const auto& [key, value] : script.items()) {
    Entry e;
    if (key == "*") {
      e.matcher = Matcher{Matcher::Kind::Any, ""};
    } else if (key.starts_with("contains:")) {
      e.matcher = Matcher{Matcher::Kind::Contains, key.substr(9)};
    } else {
      e.matcher = Matcher{Matcher::Kind::Tag, key};
    }
    if (!value.is_array()) throw InvalidArgument("mock responses for '" + key + "' must be an array");
    for (const auto& r : value) e.responses.push_back(parse_response(r));
    entries.push_back(std::move(e));
  }
  return std::make_unique<MockProvider>(std::move(entries));
}

std::unique_ptr<MockProvider> MockProvider::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read mock script " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    throw InvalidArgument("mock script " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

MockProvider::Response MockProvider::next(const CompletionRequest& req) {
  std::lock_guard lock(mu_);
  ++calls_;
  const Entry* exhausted = nullptr;
  for (auto& e : script_) {
    if (!e.matcher.matches(req)) continue;
    if (e.responses.empty()) {
      if (exhausted == nullptr) exhausted = &e;
      continue;
    }
    Response r = e.responses.front();
    if (!r.repeat) e.responses.pop_front();
    return r;
  }
  if (exhausted != nullptr) throw MockScriptExhausted(exhausted->matcher.describe());
  throw ProviderRejected("mock script has no entry matching tag '" + req.tag + "'");
}

CompletionResult MockProvider::complete(const CompletionRequest& req,
                                        std::chrono::milliseconds /*timeout*/) {
  Response r = next(req);
  switch (r.kind) {
    case Response::Kind::Transient: throw TransientProviderFailure("scripted transient failure");
    case Response::Kind::Rejected: throw ProviderRejected("scripted rejection");
    case Response::Kind::Timeout: throw ProviderTimeout("scripted timeout");
    case Response::Kind::Text: break;
  }
  CompletionResult out;
  out.text = r.text;
  out.finish_reason = r.finish_reason;
  out.provider_id = id();
  std::size_t prompt_tokens = 0;
  for (const auto& m : req.messages) prompt_tokens += count_tokens(m.content);
  out.usage = Usage{prompt_tokens, count_tokens(r.text)};
  return out;
}

std::vector<std::vector<float>> MockProvider::embed(const std::vector<std::string>& texts,
                                                    const std::string& /*model_id*/,
                                                    std::chrono::milliseconds /*timeout*/) {
  {
    std::lock_guard lock(mu_);
    ++calls_;
    for (auto& e : script_) {
      if (e.matcher.kind != Matcher::Kind::Tag || e.matcher.value != "embed") continue;
      if (e.responses.empty()) break;
      Response r = e.responses.front();
      if (!r.repeat) e.responses.pop_front();
      switch (r.kind) {
        case Response::Kind::Transient: throw TransientProviderFailure("scripted embed failure");
        case Response::Kind::Rejected: throw ProviderRejected("scripted embed rejection");
        case Response::Kind::Timeout: throw ProviderTimeout("scripted embed timeout");
        case Response::Kind::Text: break;
      }
      break;
    }
  }
  std::vector<std::vector<float>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(hashing_embedding(t, embedding_dimension_));
  return out;
}

std::size_t MockProvider::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

void to_json(json& j, const AuditEntry& e) {
  j = json{{"ts", e.ts},
           {"tag", e.tag},
           {"model_id", e.model_id},
           {"request_sha256", e.request_sha256},
           {"response_sha256", e.response_sha256 ? json(*e.response_sha256) : json(nullptr)},
           {"finish_reason", to_string(e.finish_reason)},
           {"latency_ms", e.latency_ms}};
}

AuditLog::AuditLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
}

void AuditLog::record(const AuditEntry& entry) {
  std::lock_guard lock(mu_);
  entries_.push_back(entry);
  if (path_) {
    std::ofstream out(*path_, std::ios::app | std::ios::binary);
    if (!out) throw StorageError("cannot append to audit log " + path_->string());
    out << json(entry).dump() << '\n';
  }
}

std::vector<AuditEntry> AuditLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t AuditLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

Gateway::Gateway(std::shared_ptr<Provider> provider, GatewayConfig config,
                 std::shared_ptr<AuditLog> audit, Sleeper sleeper)
    : provider_(std::move(provider)),
      config_(std::move(config)),
      audit_(audit ? std::move(audit) : std::make_shared<AuditLog>()),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(config_.max_concurrency, 1, 4096))),
      rng_(config_.jitter_seed) {
  if (!provider_) throw InvalidArgument("gateway requires a provider");
}

std::chrono::milliseconds Gateway::backoff_delay(int retry) {
  const double cap =
      static_cast<double>(config_.backoff_base.count()) * std::pow(config_.backoff_factor, retry);
  std::lock_guard lock(rng_mu_);
  std::uniform_real_distribution<double> dist(0.0, cap);
  return std::chrono::milliseconds(static_cast<std::int64_t>(dist(rng_)));
}

namespace {

class SlotGuard {
 public:
  explicit SlotGuard(std::counting_semaphore<4096>& s) : s_(s) { s_.acquire(); }
  ~SlotGuard() { s_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<4096>& s_;
};

std::int64_t elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                               start)
      .count();
}

}  // namespace

template <typename Fn>
auto Gateway::with_retries(const std::string& what, Fn&& attempt) {
  for (int retry = 0;; ++retry) {
    try {
      SlotGuard slot(slots_);
      return attempt();
    } catch (const TransientProviderFailure& e) {
      if (retry >= config_.max_retries) {
        throw RetriesExhausted(what + " failed after " + std::to_string(retry + 1) +
                               " attempts: " + e.what());
      }
    }
    sleeper_(backoff_delay(retry));
  }
}

CompletionResult Gateway::complete(const CompletionRequest& req) {
  req.validate();
  const std::string request_hash = sha256_hex(to_wire_json(req).dump());
  const std::size_t max_chars = static_cast<std::size_t>(req.max_tokens) * 8;

  return with_retries("completion '" + req.tag + "'", [&]() -> CompletionResult {
    AuditEntry entry;
    entry.ts = now_rfc3339();
    entry.tag = req.tag;
    entry.model_id = req.model_id;
    entry.request_sha256 = request_hash;
    const auto start = std::chrono::steady_clock::now();
    CompletionResult result;
    try {
      result = provider_->complete(req, config_.timeout);
      if (result.text.empty() && result.finish_reason == FinishReason::Stop) {
        throw ProviderRejected("provider returned an empty completion");
      }
    } catch (const std::exception&) {
      entry.finish_reason = FinishReason::Error;
      entry.latency_ms = elapsed_ms(start);
      audit_->record(entry);
      throw;
    }
    if (result.text.size() > max_chars) {
      result.text = std::string(utf8_prefix(result.text, max_chars));
      result.finish_reason = FinishReason::Length;
    }
    result.latency_ms = elapsed_ms(start);
    if (result.provider_id.empty()) result.provider_id = provider_->id();
    entry.response_sha256 = sha256_hex(result.text);
    entry.finish_reason = result.finish_reason;
    entry.latency_ms = result.latency_ms;
    audit_->record(entry);
    return result;
  });
}

std::vector<std::vector<float>> Gateway::embed(const std::vector<std::string>& texts,
                                               const std::string& model_id) {
  if (texts.empty()) throw InvalidArgument("embed requires at least one text");
  for (const auto& t : texts) {
    if (t.empty()) throw InvalidArgument("embed texts must not be empty");
  }
  const std::string model = model_id.empty() ? config_.embed_model : model_id;
  json body{{"model", model}, {"input", texts}};
  const std::string request_hash = sha256_hex(body.dump());

  return with_retries("embedding", [&]() -> std::vector<std::vector<float>> {
    AuditEntry entry;
    entry.ts = now_rfc3339();
    entry.tag = "embed";
    entry.model_id = model;
    entry.request_sha256 = request_hash;
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::vector<float>> vecs;
    try {
      vecs = provider_->embed(texts, model, config_.timeout);
      if (vecs.size() != texts.size()) {
        throw ProviderRejected("provider returned " + std::to_string(vecs.size()) +
                               " embeddings for " + std::to_string(texts.size()) + " inputs");
      }
      for (auto& v : vecs) {
        double norm = 0.0;
        for (float x : v) norm += static_cast<double>(x) * x;
        norm = std::sqrt(norm);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
          throw ProviderRejected("provider returned a zero or non-finite embedding");
        }
        for (auto& x : v) x = static_cast<float>(x / norm);
      }
    } catch (const std::exception&) {
      entry.finish_reason = FinishReason::Error;
      entry.latency_ms = elapsed_ms(start);
      audit_->record(entry);
      throw;
    }
    std::string digest_input;
    for (const auto& v : vecs) {
      digest_input.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
    }
    entry.response_sha256 = sha256_hex(digest_input);
    entry.latency_ms = elapsed_ms(start);
    audit_->record(entry);
    return vecs;
  });
}

std::vector<float> Gateway::embed_one(const std::string& text) {
  return std::move(embed({text}).front());
}

}  // namespace courseassist
