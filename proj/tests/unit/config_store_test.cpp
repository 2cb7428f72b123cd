#include "courseassist/config.hpp"
#include "courseassist/errors.hpp"
#include "courseassist/store.hpp"
#include "courseassist/text.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

using namespace courseassist;
using testing_support::TempDir;

namespace {

// Sets an environment variable for the lifetime of the guard.
class EnvGuard {
 public:
  EnvGuard(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    setenv(name, value, 1);
  }
  ~EnvGuard() {
    if (old_) setenv(name_, old_->c_str(), 1);
    else unsetenv(name_);
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST(Toml, ParsesTheSupportedSubset) {
  const auto t = parse_toml(
      "# service\nlisten_addr = \"0.0.0.0:9000\"  # trailing\n"
      "[provider]\nkind = \"http\"\ntimeout_ms = 1_500\n\"quoted\" = \"a#b \\\"q\\\"\"\n"
      "[pipeline]\ntemperature = 0.25\nflag = true\n");
  EXPECT_EQ(std::get<std::string>(t.at("listen_addr")), "0.0.0.0:9000");
  EXPECT_EQ(std::get<std::int64_t>(t.at("provider.timeout_ms")), 1500);
  EXPECT_EQ(std::get<std::string>(t.at("provider.quoted")), "a#b \"q\"");
  EXPECT_EQ(std::get<double>(t.at("pipeline.temperature")), 0.25);
  EXPECT_TRUE(std::get<bool>(t.at("pipeline.flag")));
}

TEST(Toml, RejectsMalformedInput) {
  EXPECT_THROW(parse_toml("a = \"open"), InvalidArgument);
  EXPECT_THROW(parse_toml("just words"), InvalidArgument);
  EXPECT_THROW(parse_toml("a = 1\na = 2"), InvalidArgument);
  EXPECT_THROW(parse_toml("[[array]]"), InvalidArgument);
  EXPECT_THROW(parse_toml("a = [1, 2]"), InvalidArgument);
  EXPECT_THROW(parse_toml("bad key = 1"), InvalidArgument);
}

TEST(Config, MapsKeysAndRejectsUnknownOnes) {
  const auto c = config_from_toml(parse_toml(
      "data_dir = \"/srv/tutor\"\n[provider]\nkind = \"http\"\nbase_url = \"http://llm:8000/v1\"\n"
      "chat_model = \"big\"\nmax_retries = 1\n[pipeline]\nmax_rewrites = 3\n"));
  EXPECT_EQ(c.data_dir, "/srv/tutor");
  EXPECT_EQ(c.provider.base_url, "http://llm:8000/v1");
  EXPECT_EQ(c.pipeline.max_rewrites, 3u);
  EXPECT_EQ(c.pipeline.chat_model, "big");
  EXPECT_EQ(c.gateway_config().max_retries, 1);
  EXPECT_EQ(c.listen_addr, "127.0.0.1:8080");
  EXPECT_THROW(config_from_toml(parse_toml("[pipeline]\nmax_rewrite = 1\n")), InvalidArgument);
  EXPECT_THROW(config_from_toml(parse_toml("[pipeline]\nmax_rewrites = -1\n")), InvalidArgument);
  EXPECT_THROW(config_from_toml(parse_toml("listen_addr = 5\n")), InvalidArgument);
  // Secrets never come from the file.
  EXPECT_THROW(config_from_toml(parse_toml("[provider]\napi_key = \"sk-x\"\n")), InvalidArgument);
}

TEST(Config, RelativePathsResolveAgainstTheFile) {
  TempDir dir;
  write_file_atomic(dir / "tutor.toml", "data_dir = \"data\"\n[provider]\nmock_script = \"mock.json\"\n");
  const auto c = load_config(dir / "tutor.toml");
  EXPECT_EQ(c.data_dir, dir / "data");
  EXPECT_EQ(*c.provider.mock_script, dir / "mock.json");
  EXPECT_THROW(load_config(dir / "missing.toml"), InvalidArgument);
}

TEST(Config, EnvironmentOverridesTheFile) {
  ServiceConfig c;
  EnvGuard a("TUTOR_DATA_DIR", "/tmp/elsewhere");
  EnvGuard b("TUTOR_LLM_BASE_URL", "http://127.0.0.1:1/v1");
  EnvGuard d("TUTOR_CHAT_MODEL", "env-model");
  apply_env_overrides(c);
  EXPECT_EQ(c.data_dir, "/tmp/elsewhere");
  EXPECT_EQ(c.provider.kind, "http");
  EXPECT_EQ(c.pipeline.chat_model, "env-model");
  EnvGuard e("TUTOR_TEST_TOKEN", "t0ken");
  c.service_token_env = "TUTOR_TEST_TOKEN";
  EXPECT_EQ(c.service_token(), "t0ken");
}

TEST(Config, MakesProviders) {
  ProviderSettings s;
  EXPECT_EQ(make_provider(s)->id(), "mock");
  s.kind = "http";
  EXPECT_THROW(make_provider(s), InvalidArgument);
  s.base_url = "http://127.0.0.1:1/v1";
  EXPECT_TRUE(make_provider(s)->id().starts_with("http"));
  s.kind = "carrier-pigeon";
  EXPECT_THROW(make_provider(s), InvalidArgument);
}

TEST(Catalog, CoursesRoundTrip) {
  TempDir dir;
  Catalog cat(dir / "tutor.db");
  EXPECT_TRUE(cat.create_course({"cs101", "Intro", now_rfc3339()}));
  EXPECT_FALSE(cat.create_course({"cs101", "Again", now_rfc3339()}));
  EXPECT_TRUE(cat.create_course({"algo", "Algorithms", now_rfc3339()}));
  const auto all = cat.courses();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].course_id, "algo");
  EXPECT_EQ(cat.course("cs101")->title, "Intro");
  EXPECT_FALSE(cat.course("nope").has_value());
}

TEST(Catalog, SessionsAndTranscriptsPersist) {
  TempDir dir;
  std::string sid;
  {
    Catalog cat(dir / "tutor.db");
    cat.create_course({"cs101", "Intro", now_rfc3339()});
    EXPECT_THROW(cat.create_session("ghost"), UnknownCourse);
    auto s = cat.create_session("cs101");
    sid = s.session_id;
    s.transcript.push_back({Role::User, "hi", std::nullopt});
    s.transcript.push_back({Role::Assistant, "hello", nlohmann::json{{"route", "LectureRAG"}}});
    cat.append_turns(sid, s.transcript, 0);
    s.transcript.push_back({Role::User, "more", std::nullopt});
    cat.append_turns(sid, s.transcript, 2);
  }
  Catalog reopened(dir / "tutor.db");
  const auto s = reopened.session(sid);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(s->course_id, "cs101");
  ASSERT_EQ(s->transcript.size(), 3u);
  EXPECT_EQ(s->transcript[1].text, "hello");
  EXPECT_EQ((*s->transcript[1].answer_meta)["route"], "LectureRAG");
  EXPECT_FALSE(s->transcript[2].answer_meta.has_value());
  EXPECT_FALSE(reopened.session("missing").has_value());
}

TEST(Catalog, ConcurrentSessionCreation) {
  TempDir dir;
  Catalog cat(dir / "tutor.db");
  cat.create_course({"cs101", "Intro", now_rfc3339()});
  std::vector<std::thread> threads;
  std::mutex mu;
  std::set<std::string> ids;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      for (int j = 0; j < 10; ++j) {
        auto s = cat.create_session("cs101");
        s.transcript.push_back({Role::User, "q", std::nullopt});
        cat.append_turns(s.session_id, s.transcript, 0);
        std::lock_guard lock(mu);
        ids.insert(s.session_id);
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ids.size(), 80u);
}
