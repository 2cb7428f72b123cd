#pragma once

#include <nlohmann/json_fwd.hpp>

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

namespace courseassist {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct ChatMessage {
  Role role = Role::User;
  std::string content;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string model_id;
  std::string tag;  // pipeline stage: intent, decompose, answer, detect, rewrite, ...

  void validate() const;
};

// Wire body {model, messages:[{role, content}], temperature, max_tokens}.
nlohmann::json to_wire_json(const CompletionRequest& req);

enum class FinishReason { Stop, Length, Error };
std::string_view to_string(FinishReason f);

struct Usage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct CompletionResult {
  std::string text;
  FinishReason finish_reason = FinishReason::Stop;
  Usage usage;
  std::string provider_id;
  std::int64_t latency_ms = 0;
};

// A chat-completion and embedding backend. Implementations report retryable
// failures with TransientProviderFailure, permanent ones with
// ProviderRejected, and deadline overruns with ProviderTimeout. Must be safe
// to call concurrently.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual std::string id() const = 0;
  virtual CompletionResult complete(const CompletionRequest& req,
                                    std::chrono::milliseconds timeout) = 0;
  virtual std::vector<std::vector<float>> embed(const std::vector<std::string>& texts,
                                                const std::string& model_id,
                                                std::chrono::milliseconds timeout) = 0;
};

// Signed feature hashing of lexical tokens into `dimension` buckets, then
// L2-normalized. Text without tokens hashes its trimmed bytes as a single
// feature.
std::vector<float> hashing_embedding(std::string_view text, std::size_t dimension = 64);

// Scripted provider. Each entry pairs a matcher with an ordered list of
// responses; a call consumes the next response of the first matching entry
// that still has one.
class MockProvider final : public Provider {
 public:
  struct Response {
    enum class Kind { Text, Transient, Rejected, Timeout };
    Kind kind = Kind::Text;
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    bool repeat = false;  // never consumed
  };

  struct Matcher {
    enum class Kind { Tag, Contains, Any };
    Kind kind = Kind::Tag;
    std::string value;

    bool matches(const CompletionRequest& req) const;
    std::string describe() const;
  };

  struct Entry {
    Matcher matcher;
    std::deque<Response> responses;
  };

  // Throws InvalidArgument for an empty script.
  explicit MockProvider(std::vector<Entry> script, std::size_t embedding_dimension = 64);

  // JSON object: keys are tags, "contains:<text>" substring matchers, or "*";
  // values are arrays of responses, each either a string or
  // {"text"|"error": transient|rejected|timeout, "finish": "length", "repeat": bool}.
  // Key order is preserved.
  static std::unique_ptr<MockProvider> from_json(const nlohmann::ordered_json& script);
  static std::unique_ptr<MockProvider> from_file(const std::filesystem::path& path);

  std::string id() const override { return "mock"; }
  CompletionResult complete(const CompletionRequest& req,
                            std::chrono::milliseconds timeout) override;
  // Uses hashing_embedding. An entry tagged "embed" is consulted first so
  // scripts can make the embedder fail.
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts,
                                        const std::string& model_id,
                                        std::chrono::milliseconds timeout) override;

  std::size_t calls() const;

 private:
  Response next(const CompletionRequest& req);

  mutable std::mutex mu_;
  std::vector<Entry> script_;
  std::size_t embedding_dimension_;
  std::size_t calls_ = 0;
};

struct AuditEntry {
  std::string ts;
  std::string tag;
  std::string model_id;
  std::string request_sha256;
  std::optional<std::string> response_sha256;
  FinishReason finish_reason = FinishReason::Stop;
  std::int64_t latency_ms = 0;
};
void to_json(nlohmann::json& j, const AuditEntry& e);

// Append-only record of outbound provider requests. Kept in memory and, when
// a path is given, appended to llm_audit.jsonl.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(std::filesystem::path path);

  void record(const AuditEntry& entry);
  std::vector<AuditEntry> entries() const;
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
  std::vector<AuditEntry> entries_;
};

struct GatewayConfig {
  std::chrono::milliseconds timeout{30000};
  int max_retries = 2;
  std::chrono::milliseconds backoff_base{500};
  double backoff_factor = 2.0;
  std::size_t max_concurrency = 8;
  std::uint64_t jitter_seed = 0x5eed;
  std::string chat_model = "mock-chat";
  std::string embed_model = "hashing-64";
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// Retries, audit logging, concurrency cap and output guards around a Provider.
class Gateway {
 public:
  Gateway(std::shared_ptr<Provider> provider, GatewayConfig config = {},
          std::shared_ptr<AuditLog> audit = std::make_shared<AuditLog>(), Sleeper sleeper = {});

  // Transient failures are retried up to max_retries times with full-jitter
  // exponential backoff; ProviderRejected and ProviderTimeout are not retried.
  CompletionResult complete(const CompletionRequest& req);

  // One unit-norm vector per input, same order.
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts,
                                        const std::string& model_id = {});
  std::vector<float> embed_one(const std::string& text);

  std::string provider_id() const { return provider_->id(); }
  // Identity of the vectors this gateway produces, used as a cache key.
  std::string embedder_id() const { return provider_->id() + ":" + config_.embed_model; }
  const GatewayConfig& config() const { return config_; }
  AuditLog& audit() { return *audit_; }

 private:
  template <typename Fn>
  auto with_retries(const std::string& what, Fn&& attempt);
  std::chrono::milliseconds backoff_delay(int retry);

  std::shared_ptr<Provider> provider_;
  GatewayConfig config_;
  std::shared_ptr<AuditLog> audit_;
  Sleeper sleeper_;
  std::counting_semaphore<4096> slots_;
  std::mutex rng_mu_;
  std::mt19937_64 rng_;
};

}  // namespace courseassist
