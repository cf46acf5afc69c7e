#include "toolwatch/graph.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "toolwatch/error.hpp"
#include "toolwatch/text.hpp"

namespace toolwatch {

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::sequential: return "sequential";
    case EdgeKind::data_flow: return "data_flow";
    case EdgeKind::self_loop: return "self_loop";
  }
  return "unknown";
}

std::vector<Edge> sequential_edges(std::size_t n) {
  if (n == 0) throw ValidationError("sequential_edges: node count must be positive");
  std::vector<Edge> edges;
  edges.reserve(2 * (n - 1));
  for (std::size_t i = 0; i + 1 < n; ++i) {
    edges.push_back({i, i + 1, EdgeKind::sequential});
    edges.push_back({i + 1, i, EdgeKind::sequential});
  }
  return edges;
}

std::vector<std::pair<std::size_t, std::size_t>> data_flow_pairs(std::span<const ToolCall> calls,
                                                                 const DataFlowRule& rule) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < calls.size(); ++i) {
    const ToolCall& src = calls[i];
    if (src.response_text.empty() || src.response_length > rule.max_response_chars ||
        text::is_blank(src.response_text))
      continue;
    const std::string prefix = text::truncate_chars(src.response_text, rule.prefix_window);
    // Tokens are selected first, then filtered by length.
    std::vector<std::string> tokens;
    for (std::string& t : text::split_whitespace(src.response_text, rule.max_tokens))
      if (text::char_count(t) > rule.min_token_chars_exclusive) tokens.push_back(std::move(t));

    for (std::size_t j = i + 1; j < calls.size(); ++j) {
      const std::string& args = calls[j].args_text;
      bool linked = args.find(prefix) != std::string::npos;
      for (std::size_t k = 0; !linked && k < tokens.size(); ++k)
        linked = args.find(tokens[k]) != std::string::npos;
      if (linked) pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

std::vector<Edge> data_flow_edges(std::span<const ToolCall> calls, const DataFlowRule& rule) {
  std::vector<Edge> edges;
  for (auto [i, j] : data_flow_pairs(calls, rule)) {
    edges.push_back({i, j, EdgeKind::data_flow});
    edges.push_back({j, i, EdgeKind::data_flow});
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

std::vector<std::vector<std::size_t>> SessionGraph::neighbor_sets() const {
  std::vector<std::vector<std::size_t>> nbrs(n_nodes);
  for (const Edge& e : edges) nbrs[e.dst].push_back(e.src);
  for (auto& v : nbrs) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return nbrs;
}

SessionGraph build_graph(const Session& session, const DataFlowRule& rule) {
  SessionGraph g;
  g.session_id = session.session_id;
  g.n_nodes = session.calls.size();
  g.label = session.label;
  g.attack_mode = session.attack_mode;
  g.task_id = session.task_id;
  if (g.n_nodes == 1) {
    g.edges = {{0, 0, EdgeKind::self_loop}};
    return g;
  }
  std::set<Edge> unique;
  for (const Edge& e : sequential_edges(g.n_nodes)) unique.insert(e);
  for (const Edge& e : data_flow_edges(session.calls, rule)) unique.insert(e);
  g.edges.assign(unique.begin(), unique.end());
  return g;
}

void check_graph(const SessionGraph& g) {
  std::set<Edge> seen;
  std::vector<std::size_t> degree(g.n_nodes, 0);
  for (const Edge& e : g.edges) {
    if (e.src >= g.n_nodes || e.dst >= g.n_nodes)
      throw ValidationError(g.session_id + ": edge endpoint out of range");
    if (!seen.insert(e).second) throw ValidationError(g.session_id + ": duplicate edge");
    if (e.kind == EdgeKind::self_loop && e.src != e.dst)
      throw ValidationError(g.session_id + ": self_loop edge joins distinct nodes");
    ++degree[e.dst];
  }
  for (const Edge& e : g.edges) {
    if (e.kind != EdgeKind::self_loop && !seen.count({e.dst, e.src, e.kind}))
      throw ValidationError(g.session_id + ": edge stored in one direction only");
  }
  for (std::size_t i = 0; i < g.n_nodes; ++i)
    if (degree[i] == 0) throw ValidationError(g.session_id + ": isolated node " + std::to_string(i));
}

nlohmann::json graph_to_json(const SessionGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : g.edges) edges.push_back({e.src, e.dst, std::string(to_string(e.kind))});
  return {{"session_id", g.session_id},
          {"n_nodes", g.n_nodes},
          {"label", std::string(to_string(g.label))},
          {"edges", std::move(edges)}};
}

}  // namespace toolwatch
