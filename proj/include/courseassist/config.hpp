#pragma once

#include "courseassist/llm.hpp"
#include "courseassist/pipeline.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>

namespace courseassist {

// The subset of TOML used by tutor.toml: [table] headers, bare or quoted
// keys, basic strings, integers, floats, booleans and # comments. Keys are
// flattened to "table.key".
using TomlValue = std::variant<std::string, std::int64_t, double, bool>;
using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(const std::string& text);

struct ProviderSettings {
  std::string kind = "mock";  // mock | http
  std::string base_url;
  std::string chat_model = "mock-chat";
  std::string embed_model = "hashing-64";
  std::optional<std::filesystem::path> mock_script;
  std::int64_t timeout_ms = 30000;
  int max_retries = 2;
  std::size_t max_concurrency = 8;
};

struct ServiceConfig {
  std::string listen_addr = "127.0.0.1:8080";
  std::filesystem::path data_dir = "tutor-data";
  std::string service_token_env = "TUTOR_SERVICE_TOKEN";
  ProviderSettings provider;
  PipelineConfig pipeline;
  std::optional<std::filesystem::path> prompts_dir;
  std::optional<std::filesystem::path> static_dir;  // served under /app

  // Resolved from service_token_env.
  std::string service_token() const;
  GatewayConfig gateway_config() const;
};

// Reads a tutor.toml file. Unknown keys are rejected.
ServiceConfig load_config(const std::filesystem::path& path);
ServiceConfig config_from_toml(const TomlTable& table);

// TUTOR_DATA_DIR, TUTOR_LISTEN_ADDR, TUTOR_PROVIDER, TUTOR_LLM_BASE_URL,
// TUTOR_CHAT_MODEL, TUTOR_EMBED_MODEL and TUTOR_MOCK_SCRIPT win over the file.
void apply_env_overrides(ServiceConfig& config);

std::shared_ptr<Provider> make_provider(const ProviderSettings& settings);

}  // namespace courseassist
