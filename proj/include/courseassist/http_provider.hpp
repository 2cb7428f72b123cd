#pragma once

#include "courseassist/llm.hpp"

#include <string>

namespace courseassist {

// Parsed "scheme://host[:port][/prefix]".
struct BaseUrl {
  std::string scheme;
  std::string host;
  int port = 0;
  std::string prefix;  // no trailing slash

  static BaseUrl parse(const std::string& url);
  std::string origin() const;
};

// Chat-completion provider speaking the common JSON wire format:
// POST {base}/chat/completions and POST {base}/embeddings with bearer auth.
class HttpProvider final : public Provider {
 public:
  HttpProvider(std::string base_url, std::string api_key);

  // Reads TUTOR_LLM_BASE_URL and TUTOR_LLM_API_KEY.
  static std::unique_ptr<HttpProvider> from_env();

  std::string id() const override { return "http:" + base_url_; }
  CompletionResult complete(const CompletionRequest& req,
                            std::chrono::milliseconds timeout) override;
  std::vector<std::vector<float>> embed(const std::vector<std::string>& texts,
                                        const std::string& model_id,
                                        std::chrono::milliseconds timeout) override;

 private:
  std::string post(const std::string& path, const std::string& body,
                   std::chrono::milliseconds timeout);

  std::string base_url_;
  BaseUrl parsed_;
  std::string api_key_;
};

}  // namespace courseassist
