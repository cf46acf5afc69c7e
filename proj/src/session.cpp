#include "toolwatch/session.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/text.hpp"

namespace toolwatch {

using nlohmann::json;

std::string_view to_string(Label label) { return label == Label::attack ? "attack" : "benign"; }

Label label_from_string(std::string_view s) {
  if (s == "benign") return Label::benign;
  if (s == "attack") return Label::attack;
  throw ParseError("label", "expected \"benign\" or \"attack\", got \"" + std::string(s) + "\"");
}

AttackMode AttackMode::parse(std::string_view s) {
  if (s == "tool_input") return input();
  if (s == "tool_output") return output();
  if (s == "both") return combined();
  return other(std::string(s));
}

std::string AttackMode::to_string() const {
  switch (kind) {
    case Kind::tool_input: return "tool_input";
    case Kind::tool_output: return "tool_output";
    case Kind::both: return "both";
    case Kind::other: return category;
  }
  return category;
}

ToolCall make_tool_call(std::size_t index, std::string tool_name, std::string args_text,
                        std::string response_text) {
  ToolCall call;
  call.index = index;
  call.tool_name = std::move(tool_name);
  call.args_text = std::move(args_text);
  call.response_length = text::char_count(response_text);
  call.response_text = std::move(response_text);
  return call;
}

void validate(const Session& s) {
  if (s.session_id.empty()) throw ValidationError("session_id must be non-empty");
  if (s.calls.empty()) throw ValidationError("session " + s.session_id + " has no tool calls");
  if (s.attack_mode && s.label != Label::attack)
    throw ValidationError("session " + s.session_id + ": attack_mode present on a benign session");
  for (std::size_t i = 0; i < s.calls.size(); ++i) {
    const ToolCall& c = s.calls[i];
    if (c.index != i)
      throw ValidationError("session " + s.session_id + ": call indices must be contiguous from 0");
    if (c.response_length != text::char_count(c.response_text))
      throw ValidationError("session " + s.session_id + ": response_length mismatch at call " +
                            std::to_string(i));
  }
}

std::string canonical_json(const json& value) {
  // nlohmann's default object type is an ordered std::map, so dump() already
  // emits lexicographically sorted keys with no whitespace.
  return value.dump(-1, ' ', false, json::error_handler_t::replace);
}

namespace {

const json& require(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(key, "missing");
  return *it;
}

std::string require_string(const json& obj, const char* key) {
  const json& v = require(obj, key);
  if (!v.is_string()) throw ParseError(key, "expected string");
  return v.get<std::string>();
}

// Arguments encoded as objects in the output whenever the text is already
// the canonical dump of an object; otherwise the raw string is kept.
json arguments_value(const std::string& args_text) {
  json parsed = json::parse(args_text, nullptr, false);
  if (!parsed.is_discarded() && parsed.is_object() && canonical_json(parsed) == args_text)
    return parsed;
  return args_text;
}

}  // namespace

Session parse_session_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("record", e.what());
  }
  if (!j.is_object()) throw ParseError("record", "expected a JSON object");

  Session s;
  s.session_id = require_string(j, "session_id");
  s.source = require_string(j, "source");
  if (auto it = j.find("task_id"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError("task_id", "expected string or null");
    s.task_id = it->get<std::string>();
  }
  {
    const json& label = require(j, "label");
    if (!label.is_string()) throw ParseError("label", "expected string");
    s.label = label_from_string(label.get<std::string>());
  }
  if (auto it = j.find("attack_mode"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ParseError("attack_mode", "expected string or null");
    s.attack_mode = AttackMode::parse(it->get<std::string>());
  }
  const json& calls = require(j, "calls");
  if (!calls.is_array()) throw ParseError("calls", "expected array");
  for (std::size_t i = 0; i < calls.size(); ++i) {
    const json& c = calls[i];
    const std::string where = "calls[" + std::to_string(i) + "]";
    if (!c.is_object()) throw ParseError(where, "expected object");
    auto field = [&](const char* key) -> const json& {
      auto it = c.find(key);
      if (it == c.end()) throw ParseError(where + "." + key, "missing");
      return *it;
    };
    const json& tool = field("tool");
    if (!tool.is_string()) throw ParseError(where + ".tool", "expected string");
    const json& args = field("arguments");
    std::string args_text;
    if (args.is_object()) {
      args_text = canonical_json(args);
    } else if (args.is_string()) {
      args_text = args.get<std::string>();
    } else {
      throw ParseError(where + ".arguments", "expected object or string");
    }
    const json& response = field("response");
    if (!response.is_string()) throw ParseError(where + ".response", "expected string");
    s.calls.push_back(make_tool_call(i, tool.get<std::string>(), std::move(args_text),
                                     response.get<std::string>()));
  }
  validate(s);
  return s;
}

std::string serialize_session(const Session& s) {
  json j = json::object();
  j["session_id"] = s.session_id;
  j["source"] = s.source;
  j["task_id"] = s.task_id ? json(*s.task_id) : json(nullptr);
  j["label"] = std::string(to_string(s.label));
  j["attack_mode"] = s.attack_mode ? json(s.attack_mode->to_string()) : json(nullptr);
  json calls = json::array();
  for (const ToolCall& c : s.calls) {
    calls.push_back({{"tool", c.tool_name},
                     {"arguments", arguments_value(c.args_text)},
                     {"response", c.response_text}});
  }
  j["calls"] = std::move(calls);
  return canonical_json(j);
}

std::vector<Session> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file " + path.string());
  std::vector<Session> sessions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::is_blank(line)) continue;
    try {
      sessions.push_back(parse_session_line(line));
    } catch (const ParseError& e) {
      throw ParseError(e.field(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return sessions;
}

void write_corpus(const std::filesystem::path& path, std::span<const Session> sessions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write corpus file " + path.string());
  for (const Session& s : sessions) out << serialize_session(s) << '\n';
}

ToolVocab::ToolVocab(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!lookup_.emplace(names_[i], i).second)
      throw ValidationError("duplicate tool name in vocabulary: " + names_[i]);
  }
}

std::optional<std::size_t> ToolVocab::index_of(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

ToolVocab build_tool_vocabulary(std::span<const Session> sessions) {
  if (sessions.empty()) throw ValidationError("cannot build a tool vocabulary from no sessions");
  std::set<std::string> names;
  for (const Session& s : sessions)
    for (const ToolCall& c : s.calls) names.insert(c.tool_name);
  return ToolVocab(std::vector<std::string>(names.begin(), names.end()));
}

CorpusStats corpus_stats(std::span<const Session> sessions) {
  CorpusStats st;
  std::set<std::string> tasks, tools;
  for (const Session& s : sessions) {
    ++st.sessions;
    ++st.by_label[std::string(to_string(s.label))];
    ++st.by_source[s.source];
    if (s.label == Label::attack)
      ++st.by_attack_mode[s.attack_mode ? s.attack_mode->to_string() : "unspecified"];
    if (s.task_id) tasks.insert(*s.task_id);
    for (const ToolCall& c : s.calls) tools.insert(c.tool_name);
  }
  st.distinct_tasks = tasks.size();
  st.distinct_tools = tools.size();
  return st;
}

std::string format_stats(const CorpusStats& st) {
  std::ostringstream os;
  os << "sessions  " << st.sessions << '\n';
  for (const auto& [k, v] : st.by_label) os << "label     " << k << " " << v << '\n';
  for (const auto& [k, v] : st.by_source) os << "source    " << k << " " << v << '\n';
  for (const auto& [k, v] : st.by_attack_mode) os << "mode      " << k << " " << v << '\n';
  os << "tasks     " << st.distinct_tasks << '\n';
  os << "tools     " << st.distinct_tools << '\n';
  return os.str();
}

void to_json(json& j, const ToolVocab& vocab) { j = vocab.names(); }

void from_json(const json& j, ToolVocab& vocab) {
  vocab = ToolVocab(j.get<std::vector<std::string>>());
}

void to_json(json& j, const CorpusStats& st) {
  j = json{{"sessions", st.sessions},         {"by_label", st.by_label},
           {"by_source", st.by_source},       {"by_attack_mode", st.by_attack_mode},
           {"distinct_tasks", st.distinct_tasks}, {"distinct_tools", st.distinct_tools}};
}

}  // namespace toolwatch
