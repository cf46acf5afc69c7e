#include <doctest.h>

#include <set>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "toolwatch/error.hpp"
#include "toolwatch/graph.hpp"
#include "toolwatch/synthetic.hpp"

using namespace toolwatch;
using twtest::make_session;

namespace {

std::set<std::pair<std::size_t, std::size_t>> pairs_of(const std::vector<Edge>& edges, EdgeKind kind) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (const Edge& e : edges)
    if (e.kind == kind) out.insert({e.src, e.dst});
  return out;
}

using PairSet = std::set<std::pair<std::size_t, std::size_t>>;

}  // namespace

TEST_CASE("sequential edges") {
  CHECK(pairs_of(sequential_edges(3), EdgeKind::sequential) == PairSet{{0, 1}, {1, 0}, {1, 2}, {2, 1}});
  CHECK(sequential_edges(1).empty());
  CHECK(pairs_of(sequential_edges(2), EdgeKind::sequential) == PairSet{{0, 1}, {1, 0}});
}

TEST_CASE("data-flow via a long token") {
  const Session s = make_session("s", Label::benign,
                                 {{"write", "{}", "file_12345 written ok"}, {"read", R"({"f":"file_12345"})", ""}});
  CHECK(pairs_of(data_flow_edges(s.calls), EdgeKind::data_flow) == PairSet{{0, 1}, {1, 0}});
}

TEST_CASE("short tokens never link") {
  const Session s = make_session("s", Label::benign,
                                 {{"a", "{}", "abcd ok no yes it"}, {"b", R"({"x":"abcd ok no"})", ""}});
  CHECK(data_flow_edges(s.calls).empty());
}

TEST_CASE("responses over 1000 characters are skipped") {
  const std::string resp(1001, 'r');
  const Session s = make_session("s", Label::benign, {{"a", "{}", resp}, {"b", "{\"x\":\"" + resp + "\"}", ""}});
  CHECK(data_flow_edges(s.calls).empty());
  const std::string ok(1000, 'r');
  const Session t = make_session("t", Label::benign, {{"a", "{}", ok}, {"b", "{\"x\":\"" + ok + "\"}", ""}});
  CHECK(data_flow_edges(t.calls).size() == 2);
}

TEST_CASE("prefix rule links on the first 50 characters") {
  const std::string resp = "ab cd ef gh ij kl mn op qr st uv wx yz ab cd ef gh ij and more";
  const Session s = make_session("s", Label::benign,
                                 {{"a", "{}", resp}, {"b", "{\"x\":\"" + resp.substr(0, 50) + "\"}", ""}});
  CHECK(data_flow_edges(s.calls).size() == 2);
  const Session t = make_session("t", Label::benign,
                                 {{"a", "{}", resp}, {"b", "{\"x\":\"" + resp.substr(0, 49) + "\"}", ""}});
  CHECK(data_flow_edges(t.calls).empty());
}

TEST_CASE("blank responses never link") {
  const Session s = make_session("s", Label::benign, {{"a", "{}", "  \n"}, {"b", "{\"x\":\"  \n\"}", ""}});
  CHECK(data_flow_edges(s.calls).empty());
}

TEST_CASE("session graphs") {
  SUBCASE("single call gets a self-loop") {
    const SessionGraph g = build_graph(make_session("s", Label::benign, {{"a", "{}", ""}}));
    CHECK(g.n_nodes == 1);
    REQUIRE(g.edges.size() == 1);
    CHECK(g.edges[0] == Edge{0, 0, EdgeKind::self_loop});
    check_graph(g);
  }
  SUBCASE("three calls without data flow") {
    const SessionGraph g =
        build_graph(make_session("s", Label::benign, {{"a", "{}", "x"}, {"b", "{}", "y"}, {"c", "{}", "z"}}));
    CHECK(g.edges.size() == 4);
    CHECK(pairs_of(g.edges, EdgeKind::sequential).size() == 4);
  }
  SUBCASE("sequential plus data-flow") {
    const SessionGraph g = build_graph(
        make_session("s", Label::benign, {{"write", "{}", "file_12345 written"}, {"read", R"({"f":"file_12345"})", ""}}));
    CHECK(pairs_of(g.edges, EdgeKind::sequential) == PairSet{{0, 1}, {1, 0}});
    CHECK(pairs_of(g.edges, EdgeKind::data_flow) == PairSet{{0, 1}, {1, 0}});
    // kinds merge in the neighbor view
    const auto nb = g.neighbor_sets();
    CHECK(nb[0] == std::vector<std::size_t>{1});
    CHECK(nb[1] == std::vector<std::size_t>{0});
    check_graph(g);
  }
}

TEST_CASE("graph checks reject broken structures") {
  SessionGraph g;
  g.session_id = "g";
  g.n_nodes = 2;
  g.edges = {{0, 1, EdgeKind::sequential}};
  CHECK_THROWS_AS(check_graph(g), ValidationError);
  g.edges = {{0, 1, EdgeKind::sequential}, {1, 0, EdgeKind::sequential}, {0, 5, EdgeKind::data_flow}};
  CHECK_THROWS_AS(check_graph(g), ValidationError);
  g.n_nodes = 3;
  g.edges = {{0, 1, EdgeKind::sequential}, {1, 0, EdgeKind::sequential}};
  CHECK_THROWS_AS(check_graph(g), ValidationError);
}

TEST_CASE("data-flow edges match the naive scan on random sessions") {
  Rng rng(99);
  int with_flow = 0;
  for (std::size_t k = 0; k < 300; ++k) {
    const Session s = twtest::random_session(rng, k);
    const auto got = pairs_of(data_flow_edges(s.calls), EdgeKind::data_flow);
    CHECK(got == twtest::naive_data_flow(s.calls));
    with_flow += !got.empty();
  }
  CHECK(with_flow > 30);
}

TEST_CASE("wider prefix window leaves synthetic edges unchanged") {
  synth::SyntheticSpec spec;
  spec.n_tasks = 20;
  spec.data_flow_rate = 0.5;
  DataFlowRule wide;
  wide.prefix_window = 500;
  std::size_t total = 0;
  for (const Session& s : synth::generate_synthetic_corpus(spec)) {
    const auto narrow_edges = data_flow_edges(s.calls);
    CHECK(narrow_edges == data_flow_edges(s.calls, wide));
    total += narrow_edges.size();
  }
  CHECK(total > 0);
}

TEST_CASE("graph dump") {
  const SessionGraph g = build_graph(make_session("s", Label::attack, {{"a", "{}", ""}, {"b", "{}", ""}}));
  const auto j = graph_to_json(g);
  CHECK(j.at("n_nodes") == 2);
  CHECK(j.at("label") == "attack");
  CHECK(j.at("edges").size() == 2);
}
