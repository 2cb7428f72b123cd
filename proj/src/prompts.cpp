#include "courseassist/prompts.hpp"

#include "courseassist/corpus.hpp"
#include "courseassist/errors.hpp"
#include "courseassist/text.hpp"

namespace courseassist {

namespace {

bool placeholder_char(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }

template <typename Fn>
void scan_placeholders(const std::string& text, Fn&& on_placeholder) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && placeholder_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}' && j > i + 1) {
        on_placeholder(i, j + 1, text.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    ++i;
  }
}

}  // namespace

std::string substitute(const std::string& text, const std::map<std::string, std::string>& values,
                       const std::string& stage) {
  std::string out;
  std::size_t copied = 0;
  scan_placeholders(text, [&](std::size_t begin, std::size_t end, const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) {
      throw ContractViolation("prompt '" + stage + "' needs a value for {" + name + "}");
    }
    out.append(text, copied, begin - copied);
    out += it->second;
    copied = end;
  });
  out.append(text, copied);
  return out;
}

PromptTemplate PromptTemplate::parse(const std::string& stage, const std::string& source) {
  PromptTemplate t;
  t.stage_ = stage;
  enum class Section { None, System, User } section = Section::None;
  std::string system;
  std::string user;
  bool header = true;
  for (auto line : split_lines(source)) {
    if (header && line.starts_with("#")) continue;
    header = false;
    if (line == "[system]") {
      section = Section::System;
      continue;
    }
    if (line == "[user]") {
      section = Section::User;
      continue;
    }
    if (section == Section::System) {
      system.append(line).push_back('\n');
    } else if (section == Section::User) {
      user.append(line).push_back('\n');
    } else if (!is_blank(line)) {
      throw InvalidArgument("prompt '" + stage + "': text before the [system] section");
    }
  }
  t.system_ = std::string(trim(system));
  t.user_ = std::string(trim(user));
  if (t.system_.empty() || t.user_.empty()) {
    throw InvalidArgument("prompt '" + stage + "' needs non-empty [system] and [user] sections");
  }
  auto collect = [&](std::size_t, std::size_t, const std::string& name) {
    t.placeholders_.insert(name);
  };
  scan_placeholders(t.system_, collect);
  scan_placeholders(t.user_, collect);
  return t;
}

std::vector<ChatMessage> PromptTemplate::render(
    const std::map<std::string, std::string>& values) const {
  return {ChatMessage{Role::System, substitute(system_, values, stage_)},
          ChatMessage{Role::User, substitute(user_, values, stage_)}};
}

const std::vector<std::string>& PromptSet::stages() {
  static const std::vector<std::string> kStages{"intent",         "decompose",
                                                "answer_lecture", "answer_examprep",
                                                "answer_assignment", "detect",
                                                "rewrite",        "baseline"};
  return kStages;
}

PromptSet PromptSet::builtin() {
  PromptSet set;
  const auto& files = builtin_prompt_files();
  for (const auto& stage : stages()) {
    auto it = files.find(stage + ".txt");
    if (it == files.end()) throw InfraError("prompts", "missing built-in prompt " + stage);
    set.templates_[stage] = PromptTemplate::parse(stage, it->second);
  }
  auto it = files.find("refusal.txt");
  if (it == files.end()) throw InfraError("prompts", "missing built-in refusal template");
  set.refusal_ = std::string(trim(it->second));
  return set;
}

PromptSet PromptSet::load(const std::filesystem::path& dir) {
  PromptSet set = builtin();
  for (const auto& stage : stages()) {
    const auto path = dir / (stage + ".txt");
    if (std::filesystem::exists(path)) {
      set.templates_[stage] = PromptTemplate::parse(stage, read_file(path));
    }
  }
  const auto refusal = dir / "refusal.txt";
  if (std::filesystem::exists(refusal)) set.refusal_ = std::string(trim(read_file(refusal)));
  if (set.refusal_.empty()) throw InvalidArgument("refusal template must not be empty");
  return set;
}

const PromptTemplate& PromptSet::get(const std::string& stage) const {
  auto it = templates_.find(stage);
  if (it == templates_.end()) throw InvalidArgument("unknown prompt stage: " + stage);
  return it->second;
}

}  // namespace courseassist
