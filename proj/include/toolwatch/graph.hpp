#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "toolwatch/session.hpp"

namespace toolwatch {

enum class EdgeKind { sequential, data_flow, self_loop };

std::string_view to_string(EdgeKind kind);

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeKind kind = EdgeKind::sequential;

  auto operator<=>(const Edge&) const = default;
};

// Textual data-flow rule. A later call j depends on call i when i's response
// (non-blank, at most `max_response_chars` characters) feeds j's arguments via
//   - its first `prefix_window` characters appearing as a substring, or
//   - one of its first `max_tokens` whitespace tokens, longer than
//     `min_token_chars_exclusive` characters, appearing as a substring.
struct DataFlowRule {
  std::size_t prefix_window = 50;
  std::size_t max_tokens = 5;
  std::size_t min_token_chars_exclusive = 4;
  std::size_t max_response_chars = 1000;
};

std::vector<Edge> sequential_edges(std::size_t n);

// Ordered (i, j) pairs with i < j, before bidirectional storage.
std::vector<std::pair<std::size_t, std::size_t>> data_flow_pairs(std::span<const ToolCall> calls,
                                                                 const DataFlowRule& rule = {});
std::vector<Edge> data_flow_edges(std::span<const ToolCall> calls, const DataFlowRule& rule = {});

struct SessionGraph {
  std::string session_id;
  std::size_t n_nodes = 0;
  std::vector<Edge> edges;  // sorted, unique per (src, dst, kind)
  Eigen::MatrixXd node_features;  // n_nodes x d once featurized
  Label label = Label::benign;
  std::optional<AttackMode> attack_mode;
  std::optional<std::string> task_id;

  // Distinct neighbor indices per node, edge kinds merged.
  std::vector<std::vector<std::size_t>> neighbor_sets() const;
};

SessionGraph build_graph(const Session& session, const DataFlowRule& rule = {});

// Throws ValidationError on out-of-range endpoints, duplicates, asymmetric
// sequential/data-flow entries, or nodes without any incident edge.
void check_graph(const SessionGraph& graph);

// Debug dump: {"session_id", "n_nodes", "label", "edges": [[src, dst, kind], ...]}.
nlohmann::json graph_to_json(const SessionGraph& graph);

}  // namespace toolwatch
