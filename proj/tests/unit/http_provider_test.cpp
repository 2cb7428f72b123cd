#include "courseassist/errors.hpp"
#include "courseassist/http_provider.hpp"

#include "fake_llm_server.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace courseassist;
using testing_support::FakeLlmServer;

namespace {

CompletionRequest request(const std::string& content) {
  CompletionRequest r;
  r.messages = {ChatMessage{Role::System, "be brief"}, ChatMessage{Role::User, content}};
  r.model_id = "test-model";
  r.tag = "answer";
  return r;
}

}  // namespace

TEST(BaseUrl, Parses) {
  const auto u = BaseUrl::parse("http://localhost:8080/v1/");
  EXPECT_EQ(u.host, "localhost");
  EXPECT_EQ(u.port, 8080);
  EXPECT_EQ(u.prefix, "/v1");
  EXPECT_EQ(BaseUrl::parse("https://api.example.com").port, 443);
  EXPECT_THROW(BaseUrl::parse("localhost:80"), InvalidArgument);
  EXPECT_THROW(BaseUrl::parse("ftp://x"), InvalidArgument);
}

TEST(HttpProvider, SendsWireFormatAndParsesCompletion) {
  nlohmann::json seen;
  FakeLlmServer server([&](const nlohmann::json& body) {
    seen = body;
    return std::make_pair(200, FakeLlmServer::completion_body("Hi there", "length"));
  });
  HttpProvider provider(server.base_url(), "sk-test");
  const auto r = provider.complete(request("hello"), std::chrono::seconds(5));
  EXPECT_EQ(r.text, "Hi there");
  EXPECT_EQ(r.finish_reason, FinishReason::Length);
  EXPECT_EQ(r.usage.prompt_tokens, 3u);
  EXPECT_EQ(seen["model"], "test-model");
  EXPECT_EQ(seen["messages"][1]["content"], "hello");
  EXPECT_EQ(seen["temperature"], 0.0);
  EXPECT_EQ(server.last_auth, "Bearer sk-test");
}

TEST(HttpProvider, MapsStatusCodes) {
  int status = 429;
  FakeLlmServer server([&](const nlohmann::json&) { return std::make_pair(status, std::string("{}")); });
  HttpProvider provider(server.base_url(), "");
  EXPECT_THROW(provider.complete(request("x"), std::chrono::seconds(5)), TransientProviderFailure);
  status = 503;
  EXPECT_THROW(provider.complete(request("x"), std::chrono::seconds(5)), TransientProviderFailure);
  status = 400;
  EXPECT_THROW(provider.complete(request("x"), std::chrono::seconds(5)), ProviderRejected);
  status = 200;  // but no choices
  EXPECT_THROW(provider.complete(request("x"), std::chrono::seconds(5)), ProviderRejected);
}

TEST(HttpProvider, GatewayRetriesServerErrorsThenSucceeds) {
  int calls = 0;
  FakeLlmServer server([&](const nlohmann::json&) {
    ++calls;
    if (calls < 3) return std::make_pair(500, std::string("{}"));
    return std::make_pair(200, FakeLlmServer::completion_body("finally"));
  });
  Gateway gw(std::make_shared<HttpProvider>(server.base_url(), ""), testing_support::fast_gateway(),
             std::make_shared<AuditLog>(), testing_support::no_sleep());
  EXPECT_EQ(gw.complete(request("x")).text, "finally");
  EXPECT_EQ(calls, 3);
  EXPECT_EQ(gw.audit().size(), 3u);
}

TEST(HttpProvider, SlowServerIsATimeoutAndNotRetried) {
  FakeLlmServer server([&](const nlohmann::json&) {
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    return std::make_pair(200, FakeLlmServer::completion_body("late"));
  });
  GatewayConfig cfg = testing_support::fast_gateway();
  cfg.timeout = std::chrono::milliseconds(200);
  Gateway gw(std::make_shared<HttpProvider>(server.base_url(), ""), cfg, std::make_shared<AuditLog>(),
             testing_support::no_sleep());
  EXPECT_THROW(gw.complete(request("x")), ProviderTimeout);
  EXPECT_EQ(server.requests.load(), 1);
}

TEST(HttpProvider, UnreachableEndpointIsTransient) {
  HttpProvider provider("http://127.0.0.1:1/v1", "");
  EXPECT_THROW(provider.complete(request("x"), std::chrono::seconds(2)), ProviderError);
}

TEST(HttpProvider, Embeddings) {
  FakeLlmServer server([](const nlohmann::json&) { return std::make_pair(200, std::string("{}")); });
  HttpProvider provider(server.base_url(), "");
  const auto v = provider.embed({"ab", "abcd"}, "emb", std::chrono::seconds(5));
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[1][0], 4.0f);
}
