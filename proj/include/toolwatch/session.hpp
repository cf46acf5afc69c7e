#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace toolwatch {

enum class Label { benign, attack };

std::string_view to_string(Label label);
Label label_from_string(std::string_view s);

// Which channel an attack manipulated. `other` carries a free-form category
// for datasets whose labels do not map onto the three vectors.
struct AttackMode {
  enum class Kind { tool_input, tool_output, both, other };

  Kind kind = Kind::other;
  std::string category;  // only meaningful for Kind::other

  static AttackMode input() { return {Kind::tool_input, {}}; }
  static AttackMode output() { return {Kind::tool_output, {}}; }
  static AttackMode combined() { return {Kind::both, {}}; }
  static AttackMode other(std::string category) { return {Kind::other, std::move(category)}; }

  // "tool_input", "tool_output", "both"; anything else becomes other(s).
  static AttackMode parse(std::string_view s);
  std::string to_string() const;

  bool operator==(const AttackMode&) const = default;
};

struct ToolCall {
  std::size_t index = 0;
  std::string tool_name;
  std::string args_text;  // canonical serialized arguments
  std::string response_text;
  std::size_t response_length = 0;  // characters in response_text

  bool operator==(const ToolCall&) const = default;
};

ToolCall make_tool_call(std::size_t index, std::string tool_name, std::string args_text,
                        std::string response_text);

struct Session {
  std::string session_id;
  std::string source;
  std::optional<std::string> task_id;
  Label label = Label::benign;
  std::optional<AttackMode> attack_mode;
  std::vector<ToolCall> calls;

  bool operator==(const Session&) const = default;
};

// Throws ValidationError when a Session invariant is broken.
void validate(const Session& session);

// Sorted keys, no insignificant whitespace, UTF-8.
std::string canonical_json(const nlohmann::json& value);

Session parse_session_line(std::string_view line);
std::string serialize_session(const Session& session);

std::vector<Session> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const Session> sessions);

class ToolVocab {
 public:
  ToolVocab() = default;
  // Names must be distinct; order is preserved.
  explicit ToolVocab(std::vector<std::string> names);

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t n_tools() const noexcept { return names_.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;

  bool operator==(const ToolVocab& other) const { return names_ == other.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

ToolVocab build_tool_vocabulary(std::span<const Session> sessions);

struct CorpusStats {
  std::size_t sessions = 0;
  std::map<std::string, std::size_t> by_label;
  std::map<std::string, std::size_t> by_source;
  std::map<std::string, std::size_t> by_attack_mode;
  std::size_t distinct_tasks = 0;
  std::size_t distinct_tools = 0;

  bool operator==(const CorpusStats&) const = default;
};

CorpusStats corpus_stats(std::span<const Session> sessions);
std::string format_stats(const CorpusStats& stats);

void to_json(nlohmann::json& j, const ToolVocab& vocab);
void from_json(const nlohmann::json& j, ToolVocab& vocab);
void to_json(nlohmann::json& j, const CorpusStats& stats);

}  // namespace toolwatch
