#include "courseassist/http_provider.hpp"

#include "courseassist/errors.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdlib>

namespace courseassist {

using json = nlohmann::json;

BaseUrl BaseUrl::parse(const std::string& url) {
  BaseUrl out;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("base URL needs a scheme: " + url);
  out.scheme = url.substr(0, scheme_end);
  if (out.scheme != "http" && out.scheme != "https") {
    throw InvalidArgument("unsupported URL scheme: " + out.scheme);
  }
  std::string rest = url.substr(scheme_end + 3);
  const auto slash = rest.find('/');
  std::string authority = rest.substr(0, slash);
  out.prefix = slash == std::string::npos ? "" : rest.substr(slash);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  const auto colon = authority.rfind(':');
  if (colon != std::string::npos && authority.find(']') == std::string::npos) {
    out.host = authority.substr(0, colon);
    try {
      out.port = std::stoi(authority.substr(colon + 1));
    } catch (const std::exception&) {
      throw InvalidArgument("bad port in URL: " + url);
    }
  } else {
    out.host = authority;
    out.port = out.scheme == "https" ? 443 : 80;
  }
  if (out.host.empty()) throw InvalidArgument("base URL has no host: " + url);
  return out;
}

std::string BaseUrl::origin() const {
  return scheme + "://" + host + ":" + std::to_string(port);
}

HttpProvider::HttpProvider(std::string base_url, std::string api_key)
    : base_url_(std::move(base_url)), parsed_(BaseUrl::parse(base_url_)), api_key_(std::move(api_key)) {}

std::unique_ptr<HttpProvider> HttpProvider::from_env() {
  const char* base = std::getenv("TUTOR_LLM_BASE_URL");
  if (base == nullptr || *base == '\0') {
    throw InvalidArgument("TUTOR_LLM_BASE_URL is not set");
  }
  const char* key = std::getenv("TUTOR_LLM_API_KEY");
  return std::make_unique<HttpProvider>(base, key == nullptr ? "" : key);
}

std::string HttpProvider::post(const std::string& path, const std::string& body,
                               std::chrono::milliseconds timeout) {
  httplib::Client client(parsed_.origin());
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const auto start = std::chrono::steady_clock::now();
  auto res = client.Post(parsed_.prefix + path, headers, body, "application/json");
  if (!res) {
    const auto err = res.error();
    // httplib reports an expired read deadline as a plain read error.
    const bool deadline = std::chrono::steady_clock::now() - start >= timeout * 9 / 10;
    if (err == httplib::Error::ConnectionTimeout ||
        ((err == httplib::Error::Read || err == httplib::Error::Write) && deadline)) {
      throw ProviderTimeout(httplib::to_string(err));
    }
    throw TransientProviderFailure(httplib::to_string(err));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransientProviderFailure("HTTP " + std::to_string(res->status));
  }
  if (res->status >= 400) {
    throw ProviderRejected("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  return res->body;
}

CompletionResult HttpProvider::complete(const CompletionRequest& req,
                                        std::chrono::milliseconds timeout) {
  const std::string body = post("/chat/completions", to_wire_json(req).dump(), timeout);
  CompletionResult out;
  out.provider_id = id();
  try {
    const auto j = json::parse(body);
    const auto& choice = j.at("choices").at(0);
    out.text = choice.at("message").at("content").get<std::string>();
    const auto finish = choice.value("finish_reason", std::string("stop"));
    out.finish_reason = finish == "length" ? FinishReason::Length : FinishReason::Stop;
    if (j.contains("usage")) {
      out.usage.prompt_tokens = j["usage"].value("prompt_tokens", std::size_t{0});
      out.usage.completion_tokens = j["usage"].value("completion_tokens", std::size_t{0});
    }
  } catch (const json::exception& e) {
    throw ProviderRejected(std::string("malformed completion response: ") + e.what());
  }
  return out;
}

std::vector<std::vector<float>> HttpProvider::embed(const std::vector<std::string>& texts,
                                                    const std::string& model_id,
                                                    std::chrono::milliseconds timeout) {
  const json request{{"model", model_id}, {"input", texts}};
  const std::string body = post("/embeddings", request.dump(), timeout);
  std::vector<std::vector<float>> out;
  try {
    const auto j = json::parse(body);
    for (const auto& item : j.at("data")) {
      out.push_back(item.at("embedding").get<std::vector<float>>());
    }
  } catch (const json::exception& e) {
    throw ProviderRejected(std::string("malformed embedding response: ") + e.what());
  }
  return out;
}

}  // namespace courseassist
