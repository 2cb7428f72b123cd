#include "courseassist/config.hpp"

#include "courseassist/corpus.hpp"
#include "courseassist/errors.hpp"
#include "courseassist/http_provider.hpp"
#include "courseassist/text.hpp"

#include <cstdlib>
#include <set>

namespace courseassist {

namespace {

[[noreturn]] void toml_error(std::size_t line_no, const std::string& what) {
  throw InvalidArgument("tutor.toml line " + std::to_string(line_no) + ": " + what);
}

std::string parse_key(std::string_view raw, std::size_t line_no) {
  auto key = trim(raw);
  if (key.size() >= 2 && key.front() == '"' && key.back() == '"') {
    return std::string(key.substr(1, key.size() - 2));
  }
  if (key.empty()) toml_error(line_no, "empty key");
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '_' || c == '-' || c == '.';
    if (!ok) toml_error(line_no, "invalid key '" + std::string(key) + "'");
  }
  return std::string(key);
}

// Strips a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_string) {
      ++i;
      continue;
    }
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

TomlValue parse_value(std::string_view raw, std::size_t line_no) {
  auto v = trim(raw);
  if (v.empty()) toml_error(line_no, "missing value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') toml_error(line_no, "unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
      if (v[i] != '\\') {
        out.push_back(v[i]);
        continue;
      }
      if (i + 2 >= v.size()) toml_error(line_no, "dangling escape");
      switch (v[++i]) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default: toml_error(line_no, "unsupported escape");
      }
    }
    return out;
  }
  if (v == "true") return true;
  if (v == "false") return false;
  std::string digits;
  for (char c : v) {
    if (c != '_') digits.push_back(c);
  }
  try {
    std::size_t used = 0;
    if (digits.find_first_of(".eE") == std::string::npos) {
      const auto n = std::stoll(digits, &used);
      if (used == digits.size()) return static_cast<std::int64_t>(n);
    } else {
      const auto d = std::stod(digits, &used);
      if (used == digits.size()) return d;
    }
  } catch (const std::exception&) {
  }
  toml_error(line_no, "unsupported value '" + std::string(v) + "'");
}

const std::string& as_string(const TomlTable& t, const std::string& key, const TomlValue& v) {
  if (auto s = std::get_if<std::string>(&v)) return *s;
  (void)t;
  throw InvalidArgument("tutor.toml: '" + key + "' must be a string");
}

std::int64_t as_int(const std::string& key, const TomlValue& v) {
  if (auto n = std::get_if<std::int64_t>(&v)) return *n;
  throw InvalidArgument("tutor.toml: '" + key + "' must be an integer");
}

std::size_t as_count(const std::string& key, const TomlValue& v) {
  const auto n = as_int(key, v);
  if (n < 0) throw InvalidArgument("tutor.toml: '" + key + "' must not be negative");
  return static_cast<std::size_t>(n);
}

double as_double(const std::string& key, const TomlValue& v) {
  if (auto d = std::get_if<double>(&v)) return *d;
  if (auto n = std::get_if<std::int64_t>(&v)) return static_cast<double>(*n);
  throw InvalidArgument("tutor.toml: '" + key + "' must be a number");
}

const char* env(const char* name) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? v : nullptr;
}

}  // namespace

TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::string prefix;
  std::size_t line_no = 0;
  for (auto raw : split_lines(text)) {
    ++line_no;
    auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.starts_with("[[")) toml_error(line_no, "bad table header");
      prefix = parse_key(line.substr(1, line.size() - 2), line_no) + ".";
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) toml_error(line_no, "expected key = value");
    const auto key = prefix + parse_key(line.substr(0, eq), line_no);
    if (table.count(key)) toml_error(line_no, "duplicate key '" + key + "'");
    table[key] = parse_value(line.substr(eq + 1), line_no);
  }
  return table;
}

ServiceConfig config_from_toml(const TomlTable& table) {
  ServiceConfig c;
  for (const auto& [key, value] : table) {
    if (key == "listen_addr") c.listen_addr = as_string(table, key, value);
    else if (key == "data_dir") c.data_dir = as_string(table, key, value);
    else if (key == "service_token_env") c.service_token_env = as_string(table, key, value);
    else if (key == "prompts_dir") c.prompts_dir = as_string(table, key, value);
    else if (key == "static_dir") c.static_dir = as_string(table, key, value);
    else if (key == "provider.kind") c.provider.kind = as_string(table, key, value);
    else if (key == "provider.base_url") c.provider.base_url = as_string(table, key, value);
    else if (key == "provider.chat_model") c.provider.chat_model = as_string(table, key, value);
    else if (key == "provider.embed_model") c.provider.embed_model = as_string(table, key, value);
    else if (key == "provider.mock_script") c.provider.mock_script = as_string(table, key, value);
    else if (key == "provider.timeout_ms") c.provider.timeout_ms = as_int(key, value);
    else if (key == "provider.max_retries") c.provider.max_retries = static_cast<int>(as_count(key, value));
    else if (key == "provider.max_concurrency") c.provider.max_concurrency = as_count(key, value);
    else if (key == "pipeline.max_subquestions") c.pipeline.max_subquestions = as_count(key, value);
    else if (key == "pipeline.context_chunk_cap") c.pipeline.context_chunk_cap = as_count(key, value);
    else if (key == "pipeline.max_rewrites") c.pipeline.max_rewrites = as_count(key, value);
    else if (key == "pipeline.conversation_window") c.pipeline.conversation_window = as_count(key, value);
    else if (key == "pipeline.min_solution_lines") c.pipeline.min_solution_lines = as_count(key, value);
    else if (key == "pipeline.code_overlap_threshold") c.pipeline.code_overlap_threshold = as_double(key, value);
    else if (key == "pipeline.temperature") c.pipeline.temperature = as_double(key, value);
    else if (key == "pipeline.max_tokens") c.pipeline.max_tokens = static_cast<int>(as_count(key, value));
    else throw InvalidArgument("tutor.toml: unknown key '" + key + "'");
  }
  c.pipeline.chat_model = c.provider.chat_model;
  return c;
}

ServiceConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InvalidArgument("config file not found: " + path.string());
  auto config = config_from_toml(parse_toml(read_file(path)));
  // Relative paths in the file are relative to the file.
  const auto base = path.parent_path();
  auto rebase = [&](std::filesystem::path& p) {
    if (p.is_relative() && !base.empty()) p = base / p;
  };
  rebase(config.data_dir);
  if (config.prompts_dir) rebase(*config.prompts_dir);
  if (config.static_dir) rebase(*config.static_dir);
  if (config.provider.mock_script) rebase(*config.provider.mock_script);
  return config;
}

void apply_env_overrides(ServiceConfig& c) {
  if (auto v = env("TUTOR_DATA_DIR")) c.data_dir = v;
  if (auto v = env("TUTOR_LISTEN_ADDR")) c.listen_addr = v;
  if (auto v = env("TUTOR_LLM_BASE_URL")) {
    c.provider.base_url = v;
    c.provider.kind = "http";
  }
  if (auto v = env("TUTOR_MOCK_SCRIPT")) {
    c.provider.mock_script = v;
    c.provider.kind = "mock";
  }
  if (auto v = env("TUTOR_PROVIDER")) c.provider.kind = v;
  if (auto v = env("TUTOR_CHAT_MODEL")) c.provider.chat_model = v;
  if (auto v = env("TUTOR_EMBED_MODEL")) c.provider.embed_model = v;
  c.pipeline.chat_model = c.provider.chat_model;
}

std::string ServiceConfig::service_token() const {
  const char* v = std::getenv(service_token_env.c_str());
  return v == nullptr ? std::string{} : std::string(v);
}

GatewayConfig ServiceConfig::gateway_config() const {
  GatewayConfig g;
  g.timeout = std::chrono::milliseconds(provider.timeout_ms);
  g.max_retries = provider.max_retries;
  g.max_concurrency = provider.max_concurrency;
  g.chat_model = provider.chat_model;
  g.embed_model = provider.embed_model;
  return g;
}

std::shared_ptr<Provider> make_provider(const ProviderSettings& s) {
  if (s.kind == "mock") {
    // Without a script the mock still embeds (hashing embedder); chat calls
    // fail as exhausted.
    if (!s.mock_script) return MockProvider::from_json({{"*", nlohmann::ordered_json::array()}});
    return MockProvider::from_file(*s.mock_script);
  }
  if (s.kind == "http") {
    if (s.base_url.empty()) throw InvalidArgument("the http provider needs provider.base_url");
    const char* key = std::getenv("TUTOR_LLM_API_KEY");
    return std::make_shared<HttpProvider>(s.base_url, key == nullptr ? "" : key);
  }
  throw InvalidArgument("unknown provider kind: " + s.kind);
}

}  // namespace courseassist
