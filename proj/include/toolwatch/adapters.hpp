#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolwatch/session.hpp"

namespace toolwatch {

// Returned instead of a Session when a trajectory holds no extractable tool
// calls. Distinct from a hard error: callers count and move on.
struct SkipRecord {
  std::string reason;
};

using AdaptResult = std::variant<Session, SkipRecord>;

// Registered sources:
//   "normalized"  the native line format (see README)
//   "ras_eval"    RAS-Eval-style MCP trajectories with task ids and attack-mode tags
//   "atbench"     ATBench-style curated trajectories with risk categories
// Unknown sources raise ConfigError.
AdaptResult adapt_record(const nlohmann::json& raw, std::string_view source);

const std::vector<std::string>& registered_sources();
bool is_registered_source(std::string_view source);

// Maps a raw attack-mode tag onto the three-vector enum:
//   tool_input | input | tool_input_manipulation | input_manipulation      -> tool_input
//   tool_output | output | tool_output_manipulation | output_manipulation  -> tool_output
//   both | combined | tool_input+tool_output | tool_input_and_tool_output  -> both
// Matching is case-insensitive with '-' and ' ' treated as '_'. Any other tag
// is kept as other(tag).
AttackMode map_attack_tag(std::string_view tag);

}  // namespace toolwatch
