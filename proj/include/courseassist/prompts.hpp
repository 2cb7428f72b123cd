#pragma once

#include "courseassist/llm.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace courseassist {

// A chat prompt template with a [system] and a [user] section. Placeholders
// are {name} with name in [a-z_]; leading '#' lines are header comments.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  static PromptTemplate parse(const std::string& stage, const std::string& source);

  const std::string& stage() const { return stage_; }
  const std::set<std::string>& placeholders() const { return placeholders_; }

  // Every placeholder must be bound; extra bindings are ignored.
  std::vector<ChatMessage> render(const std::map<std::string, std::string>& values) const;

 private:
  std::string stage_;
  std::string system_;
  std::string user_;
  std::set<std::string> placeholders_;
};

std::string substitute(const std::string& text, const std::map<std::string, std::string>& values,
                       const std::string& stage);

class PromptSet {
 public:
  // The templates shipped in prompts/ and compiled into the library.
  static PromptSet builtin();
  // Built-in set with any <dir>/<stage>.txt files taking precedence.
  static PromptSet load(const std::filesystem::path& dir);

  const PromptTemplate& get(const std::string& stage) const;
  const std::string& refusal() const { return refusal_; }

  static const std::vector<std::string>& stages();

 private:
  std::map<std::string, PromptTemplate> templates_;
  std::string refusal_;
};

// Raw file contents keyed by file name, generated at build time.
const std::map<std::string, std::string>& builtin_prompt_files();

}  // namespace courseassist
