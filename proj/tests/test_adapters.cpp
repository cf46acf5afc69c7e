#include <doctest.h>

#include <nlohmann/json.hpp>

#include "toolwatch/adapters.hpp"
#include "toolwatch/error.hpp"

using namespace toolwatch;
using nlohmann::json;

TEST_CASE("ras_eval attack record keeps its input mode") {
  const json raw = json::parse(R"({
    "id": 17, "task_id": "transfer_funds", "label": "attack", "attack_mode": "tool_input",
    "tool_calls": [{"name": "get_balance", "arguments": {"account": "A"}, "response": "100"},
                   {"name": "transfer", "arguments": "{\"to\":\"B\",\"amount\":100}", "response": "done"}]
  })");
  const auto r = adapt_record(raw, "ras_eval");
  REQUIRE(std::holds_alternative<Session>(r));
  const Session& s = std::get<Session>(r);
  CHECK(s.session_id == "ras_eval:17");
  CHECK(s.task_id == "transfer_funds");
  CHECK(s.label == Label::attack);
  CHECK(s.attack_mode == AttackMode::input());
  REQUIRE(s.calls.size() == 2);
  CHECK(s.calls[1].args_text == R"({"amount":100,"to":"B"})");
}

TEST_CASE("trajectory without tool calls is skipped") {
  const json raw = json::parse(R"({"id": 1, "label": "benign", "messages": [{"role": "user", "content": "hi"}]})");
  CHECK(std::holds_alternative<SkipRecord>(adapt_record(raw, "ras_eval")));
  CHECK(std::holds_alternative<SkipRecord>(adapt_record(json::parse(R"({"id":2,"is_safe":true,"tool_calls":[]})"), "atbench")));
}

TEST_CASE("atbench category becomes an other mode") {
  const json raw = json::parse(R"({
    "id": "x9", "is_safe": false, "risk_source": "jailbreak",
    "messages": [
      {"role": "assistant", "tool_calls": [{"id": "c1", "function": {"name": "search", "arguments": "{\"q\":\"a\"}"}}]},
      {"role": "tool", "tool_call_id": "c1", "content": [{"type": "text", "text": "result"}]}
    ]
  })");
  const auto r = adapt_record(raw, "atbench");
  REQUIRE(std::holds_alternative<Session>(r));
  const Session& s = std::get<Session>(r);
  CHECK(s.label == Label::attack);
  CHECK(s.attack_mode == AttackMode::other("jailbreak"));
  CHECK(!s.task_id);
  REQUIRE(s.calls.size() == 1);
  CHECK(s.calls[0].tool_name == "search");
  CHECK(s.calls[0].response_text == "result");
}

TEST_CASE("attack tag mapping") {
  CHECK(map_attack_tag("Tool-Output") == AttackMode::output());
  CHECK(map_attack_tag("input manipulation") == AttackMode::input());
  CHECK(map_attack_tag("combined") == AttackMode::combined());
  CHECK(map_attack_tag("prompt_leak") == AttackMode::other("prompt_leak"));

  const json raw = json::parse(R"({"id": 3, "attack_mode": ["tool_input", "tool_output"],
                                   "calls": [{"tool": "t", "args": {}, "output": "o"}]})");
  const Session s = std::get<Session>(adapt_record(raw, "ras_eval"));
  CHECK(s.label == Label::attack);
  CHECK(s.attack_mode == AttackMode::combined());
}

TEST_CASE("benign ras_eval records drop any mode tag") {
  const json raw = json::parse(R"({"id": 4, "label": "benign", "attack_mode": "tool_input",
                                   "calls": [{"tool": "t", "args": {}, "output": "o"}]})");
  const Session s = std::get<Session>(adapt_record(raw, "ras_eval"));
  CHECK(s.label == Label::benign);
  CHECK(!s.attack_mode);
}

TEST_CASE("normalized records pass through") {
  const json raw = json::parse(R"({"session_id":"n1","source":"normalized","label":"benign",
                                   "calls":[{"tool":"t","arguments":{},"response":"r"}]})");
  CHECK(std::get<Session>(adapt_record(raw, "normalized")).session_id == "n1");
}

TEST_CASE("unknown sources and bad labels") {
  CHECK_THROWS_AS(adapt_record(json::object(), "nope"), ConfigError);
  CHECK_THROWS_AS(adapt_record(json::parse(R"({"id":1,"label":"??","calls":[{"tool":"t"}]})"), "ras_eval"), ParseError);
  CHECK_THROWS_AS(adapt_record(json::parse(R"({"id":1,"calls":[{"tool":"t"}]})"), "atbench"), ParseError);
  CHECK(is_registered_source("ras_eval"));
  CHECK(!is_registered_source("RAS"));
}

TEST_CASE("adapted count equals raw records minus skips") {
  std::vector<json> raw;
  for (int i = 0; i < 10; ++i) {
    json r{{"id", i}, {"label", i % 2 ? "attack" : "benign"}};
    r["tool_calls"] = i % 4 == 3 ? json::array() : json::array({json{{"name", "t"}, {"arguments", json::object()}}});
    raw.push_back(r);
  }
  int sessions = 0, skips = 0;
  for (const auto& r : raw) (std::holds_alternative<Session>(adapt_record(r, "ras_eval")) ? sessions : skips)++;
  CHECK(skips == 2);
  CHECK(sessions == 8);
}
