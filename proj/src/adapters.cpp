#include "toolwatch/adapters.hpp"

#include <algorithm>
#include <cctype>

#include "toolwatch/digest.hpp"
#include "toolwatch/error.hpp"

namespace toolwatch {

using nlohmann::json;

const std::vector<std::string>& registered_sources() {
  static const std::vector<std::string> kSources{"normalized", "ras_eval", "atbench"};
  return kSources;
}

bool is_registered_source(std::string_view source) {
  const auto& s = registered_sources();
  return std::find(s.begin(), s.end(), source) != s.end();
}

AttackMode map_attack_tag(std::string_view tag) {
  std::string t;
  for (char c : tag) {
    if (c == '-' || c == ' ') c = '_';
    t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (t == "tool_input" || t == "input" || t == "tool_input_manipulation" || t == "input_manipulation")
    return AttackMode::input();
  if (t == "tool_output" || t == "output" || t == "tool_output_manipulation" ||
      t == "output_manipulation")
    return AttackMode::output();
  if (t == "both" || t == "combined" || t == "tool_input+tool_output" ||
      t == "tool_input_and_tool_output" || t == "input+output" || t == "combined_manipulation")
    return AttackMode::combined();
  return AttackMode::other(std::string(tag));
}

namespace {

const json* find_any(const json& obj, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) return nullptr;
  for (const char* k : keys) {
    auto it = obj.find(k);
    if (it != obj.end() && !it->is_null()) return &*it;
  }
  return nullptr;
}

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Message content may be a string, a list of {type,text} parts, or anything else.
std::string content_text(const json& v) {
  if (v.is_null()) return {};
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const json& part : v) {
      if (part.is_object() && part.contains("text") && part["text"].is_string()) {
        if (!out.empty()) out.push_back('\n');
        out += part["text"].get<std::string>();
      } else if (part.is_string()) {
        if (!out.empty()) out.push_back('\n');
        out += part.get<std::string>();
      }
    }
    return out;
  }
  return canonical_json(v);
}

// Objects and JSON-object strings are canonicalized; other strings kept verbatim.
std::string arguments_text(const json* v) {
  if (!v) return "{}";
  if (v->is_object()) return canonical_json(*v);
  if (v->is_string()) {
    const std::string s = v->get<std::string>();
    json parsed = json::parse(s, nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) return canonical_json(parsed);
    return s;
  }
  return canonical_json(*v);
}

struct RawCall {
  std::string tool;
  std::string args;
  std::string response;
};

std::optional<RawCall> call_from_flat(const json& c) {
  const json* fn = find_any(c, {"function"});
  const json* name = find_any(c, {"name", "tool", "tool_name"});
  if (!name && fn) name = find_any(*fn, {"name"});
  if (!name || !name->is_string()) return std::nullopt;
  const json* args = find_any(c, {"arguments", "args", "parameters", "input", "params"});
  if (!args && fn) args = find_any(*fn, {"arguments"});
  const json* resp = find_any(c, {"response", "result", "output", "observation"});
  return RawCall{name->get<std::string>(), arguments_text(args), resp ? content_text(*resp) : ""};
}

// Chat-style transcripts: assistant/agent messages carry tool_calls (or a single
// action), tool/environment messages carry the response. Responses are matched
// by tool_call_id when present, otherwise to the oldest call still waiting.
std::vector<RawCall> calls_from_messages(const json& messages) {
  std::vector<RawCall> calls;
  std::vector<std::pair<std::string, std::size_t>> pending;  // (id, call index)
  for (const json& m : messages) {
    if (!m.is_object()) continue;
    const json* role = find_any(m, {"role"});
    const std::string r = role && role->is_string() ? role->get<std::string>() : "";
    if (const json* tcs = find_any(m, {"tool_calls"}); tcs && tcs->is_array()) {
      for (const json& tc : *tcs) {
        if (auto call = call_from_flat(tc)) {
          const json* id = find_any(tc, {"id", "tool_call_id"});
          pending.emplace_back(id ? scalar_text(*id) : "", calls.size());
          calls.push_back(std::move(*call));
        }
      }
      continue;
    }
    if (const json* action = find_any(m, {"action", "tool_call"}); action && action->is_object()) {
      if (auto call = call_from_flat(*action)) {
        pending.emplace_back("", calls.size());
        calls.push_back(std::move(*call));
      }
      continue;
    }
    if (r == "tool" || r == "environment" || r == "function" || r == "observation") {
      if (pending.empty()) continue;
      std::size_t slot = 0;
      if (const json* id = find_any(m, {"tool_call_id"})) {
        const std::string want = scalar_text(*id);
        for (std::size_t k = 0; k < pending.size(); ++k)
          if (pending[k].first == want) slot = k;
      }
      const json* content = find_any(m, {"content", "observation", "output"});
      calls[pending[slot].second].response = content ? content_text(*content) : "";
      pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(slot));
    }
  }
  return calls;
}

std::vector<RawCall> extract_calls(const json& raw) {
  if (const json* flat = find_any(raw, {"tool_calls", "calls"}); flat && flat->is_array()) {
    std::vector<RawCall> calls;
    for (const json& c : *flat)
      if (auto call = call_from_flat(c)) calls.push_back(std::move(*call));
    return calls;
  }
  if (const json* msgs = find_any(raw, {"messages", "trajectory", "contents", "conversation"});
      msgs && msgs->is_array())
    return calls_from_messages(*msgs);
  return {};
}

std::optional<Label> label_of(const json& raw) {
  if (const json* v = find_any(raw, {"is_attack", "attack", "unsafe"}); v && v->is_boolean())
    return v->get<bool>() ? Label::attack : Label::benign;
  if (const json* v = find_any(raw, {"is_safe", "safe"}); v && v->is_boolean())
    return v->get<bool>() ? Label::benign : Label::attack;
  if (const json* v = find_any(raw, {"label"})) {
    if (v->is_number_integer()) return v->get<int>() != 0 ? Label::attack : Label::benign;
    if (v->is_boolean()) return v->get<bool>() ? Label::attack : Label::benign;
    if (v->is_string()) {
      std::string s = v->get<std::string>();
      std::transform(s.begin(), s.end(), s.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (s == "attack" || s == "unsafe" || s == "malicious" || s == "1") return Label::attack;
      if (s == "benign" || s == "safe" || s == "normal" || s == "0") return Label::benign;
      throw ParseError("label", "unrecognized label \"" + v->get<std::string>() + "\"");
    }
  }
  return std::nullopt;
}

std::string session_id_of(const json& raw, std::string_view source) {
  if (const json* v = find_any(raw, {"session_id", "id", "trajectory_id", "uid"}))
    return std::string(source) + ":" + scalar_text(*v);
  return std::string(source) + ":" + sha256_hex(canonical_json(raw)).substr(0, 16);
}

Session finish(const json& raw, std::string_view source, std::vector<RawCall> calls, Label label,
               std::optional<std::string> task_id, std::optional<AttackMode> mode) {
  Session s;
  s.session_id = session_id_of(raw, source);
  s.source = std::string(source);
  s.task_id = std::move(task_id);
  s.label = label;
  if (label == Label::attack) s.attack_mode = std::move(mode);
  for (std::size_t i = 0; i < calls.size(); ++i)
    s.calls.push_back(
        make_tool_call(i, std::move(calls[i].tool), std::move(calls[i].args), std::move(calls[i].response)));
  validate(s);
  return s;
}

AdaptResult adapt_ras_eval(const json& raw) {
  std::vector<RawCall> calls = extract_calls(raw);
  if (calls.empty()) return SkipRecord{"no extractable tool calls"};

  std::optional<AttackMode> mode;
  if (const json* tag = find_any(raw, {"attack_mode", "attack_type", "mode", "attack_method"})) {
    if (tag->is_array()) {
      bool in = false, out = false;
      for (const json& t : *tag) {
        const AttackMode m = map_attack_tag(scalar_text(t));
        in |= m.kind == AttackMode::Kind::tool_input || m.kind == AttackMode::Kind::both;
        out |= m.kind == AttackMode::Kind::tool_output || m.kind == AttackMode::Kind::both;
      }
      if (in && out) mode = AttackMode::combined();
      else if (in) mode = AttackMode::input();
      else if (out) mode = AttackMode::output();
    } else {
      mode = map_attack_tag(scalar_text(*tag));
    }
  }
  Label label = label_of(raw).value_or(mode ? Label::attack : Label::benign);

  std::optional<std::string> task;
  if (const json* t = find_any(raw, {"task_id", "task"})) task = scalar_text(*t);
  return finish(raw, "ras_eval", std::move(calls), label, std::move(task), std::move(mode));
}

AdaptResult adapt_atbench(const json& raw) {
  std::vector<RawCall> calls = extract_calls(raw);
  if (calls.empty()) return SkipRecord{"no extractable tool calls"};
  const auto label = label_of(raw);
  if (!label) throw ParseError("label", "missing");
  std::optional<AttackMode> mode;
  if (const json* cat = find_any(raw, {"risk_source", "category", "attack_category", "risk_type"}))
    mode = AttackMode::other(scalar_text(*cat));
  // No shared task structure: task_id stays empty.
  return finish(raw, "atbench", std::move(calls), *label, std::nullopt, std::move(mode));
}

}  // namespace

AdaptResult adapt_record(const json& raw, std::string_view source) {
  if (!is_registered_source(source))
    throw ConfigError("unknown source tag \"" + std::string(source) + "\"");
  if (!raw.is_object()) throw ParseError("record", "expected a JSON object");
  if (source == "normalized") {
    const json* calls = find_any(raw, {"calls"});
    if (calls && calls->is_array() && calls->empty()) return SkipRecord{"no extractable tool calls"};
    return parse_session_line(raw.dump());
  }
  if (source == "ras_eval") return adapt_ras_eval(raw);
  return adapt_atbench(raw);
}

}  // namespace toolwatch
