#pragma once

// Thin JSON client for the tutor HTTP API.

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <string>

namespace testing_support {

struct ApiResponse {
  int status = 0;
  nlohmann::json body;
  httplib::Headers headers;
};

class ApiClient {
 public:
  ApiClient(int port, std::string token) : client_("127.0.0.1", port), token_(std::move(token)) {
    client_.set_read_timeout(std::chrono::seconds(30));
  }

  ApiResponse get(const std::string& path) { return wrap(client_.Get(path, headers())); }

  ApiResponse post(const std::string& path, const nlohmann::json& body) {
    return post_raw(path, body.dump());
  }

  ApiResponse post_raw(const std::string& path, const std::string& body) {
    return wrap(client_.Post(path, headers(), body, "application/json"));
  }

  void set_token(std::string token) { token_ = std::move(token); }

 private:
  httplib::Headers headers() const {
    if (token_.empty()) return {};
    return {{"Authorization", "Bearer " + token_}};
  }

  static ApiResponse wrap(const httplib::Result& r) {
    ApiResponse out;
    if (!r) return out;
    out.status = r->status;
    out.headers = r->headers;
    if (!r->body.empty()) out.body = nlohmann::json::parse(r->body, nullptr, false);
    return out;
  }

  httplib::Client client_;
  std::string token_;
};

}  // namespace testing_support
