#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace courseassist {

// Base for every error the library raises on purpose. `code()` is a stable
// machine-readable identifier used by the HTTP layer and the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Caller-side mistakes: bad input, unknown ids. Map to 4xx / exit code 1.
class UserError : public Error {
 public:
  using Error::Error;
};

// Infrastructure failures: provider, storage. Map to 5xx / exit code 2.
class InfraError : public Error {
 public:
  using Error::Error;
};

class RejectedDocument : public UserError {
 public:
  explicit RejectedDocument(const std::string& why)
      : UserError("rejected_document", "document rejected: " + why) {}
};

class UnknownCourse : public UserError {
 public:
  explicit UnknownCourse(const std::string& course_id)
      : UserError("unknown_course", "unknown course: " + course_id) {}
};

class InvalidArgument : public UserError {
 public:
  explicit InvalidArgument(const std::string& message)
      : UserError("invalid_argument", message) {}
};

class EmptyCorpus : public UserError {
 public:
  EmptyCorpus() : UserError("empty_corpus", "cannot index an empty corpus") {}
};

class UnknownChunk : public UserError {
 public:
  explicit UnknownChunk(const std::string& chunk_id)
      : UserError("unknown_chunk", "unknown chunk: " + chunk_id) {}
};

class DimensionMismatch : public UserError {
 public:
  DimensionMismatch(std::size_t expected, std::size_t got)
      : UserError("dimension_mismatch", "vector dimension " + std::to_string(got) +
                                            " does not match store dimension " +
                                            std::to_string(expected)) {}
};

class EmptyQuery : public UserError {
 public:
  EmptyQuery() : UserError("empty_query", "query has no searchable content") {}
};

class EmptyQuestion : public UserError {
 public:
  EmptyQuestion() : UserError("empty_question", "question text is empty") {}
};

// Violated operation precondition that indicates a programming error.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Provider family. All are infrastructure errors.
class ProviderError : public InfraError {
 public:
  using InfraError::InfraError;
};

class ProviderTimeout : public ProviderError {
 public:
  explicit ProviderTimeout(const std::string& detail)
      : ProviderError("provider_timeout", "provider timed out: " + detail) {}
};

class ProviderRejected : public ProviderError {
 public:
  explicit ProviderRejected(const std::string& detail)
      : ProviderError("provider_rejected", "provider rejected request: " + detail) {}
};

class RetriesExhausted : public ProviderError {
 public:
  explicit RetriesExhausted(const std::string& detail)
      : ProviderError("retries_exhausted", "retries exhausted: " + detail) {}
};

// Thrown by a provider implementation for a retryable failure. The gateway
// converts it into a retry or RetriesExhausted; it never escapes the gateway.
class TransientProviderFailure : public ProviderError {
 public:
  explicit TransientProviderFailure(const std::string& detail)
      : ProviderError("provider_transient", "transient provider failure: " + detail) {}
};

class MockScriptExhausted : public ProviderRejected {
 public:
  explicit MockScriptExhausted(const std::string& matcher)
      : ProviderRejected("mock script exhausted for matcher '" + matcher + "'") {}
};

class AnswerUnavailable : public InfraError {
 public:
  explicit AnswerUnavailable(const std::string& detail)
      : InfraError("answer_unavailable",
                   "the tutor could not produce an answer right now, please retry (" + detail +
                       ")") {}
};

class StorageError : public InfraError {
 public:
  explicit StorageError(const std::string& detail) : InfraError("storage_error", detail) {}
};

}  // namespace courseassist
