#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <map>
#include <random>

#include "dta/network.hpp"

using namespace dta;
using nlohmann::json;

namespace {

const char* kScenarioDir = DTA_SCENARIO_DIR;

json two_node_doc() {
    return json::parse(R"({
      "nodes": ["s", "t"],
      "edges": [{"from": "s", "to": "t", "capacity": 1, "free_flow_time": 1}],
      "commodities": [{"sink": "t", "inflows": [{"node": "s", "pieces": [[0, 1, 1]]}]}],
      "horizon": 2
    })");
}

template <typename Fn>
errc caught_code(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return errc::invalid_input;
}

// Independent simple-path counter: bitmask DP over visited sets.
std::uint64_t count_simple_paths(const Network& net, int v, int sink, std::uint64_t visited,
                                 std::map<std::pair<std::uint64_t, int>, std::uint64_t>& memo) {
    if (v == sink) return 1;
    auto key = std::make_pair(visited, v);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    std::uint64_t n = 0;
    for (int e : net.out_edges(v)) {
        int w = net.edge(e).to;
        if (visited & (std::uint64_t{1} << w)) continue;
        n += count_simple_paths(net, w, sink, visited | (std::uint64_t{1} << w), memo);
    }
    memo[key] = n;
    return n;
}

} // namespace

TEST_CASE("the four-edge reference network loads with its labels") {
    Network net = load_network_file(std::string(kScenarioDir) + "/golden_ide.json");
    REQUIRE(net.edge_count() == 4);
    REQUIRE(net.node_count() == 4);
    CHECK(net.edge(0).capacity == 4.0);
    for (int e = 0; e < 4; ++e) CHECK(net.edge(e).free_flow_time == 1.0);
    CHECK(net.horizon() == 3.0);
    REQUIRE(net.commodity_count() == 1);
    CHECK(net.commodity(0).sink == net.node_index("t"));
    const RateFunction* u = net.commodity(0).inflow_at(net.node_index("s"));
    REQUIRE(u != nullptr);
    CHECK((*u)(0.5) == 6.0);
}

TEST_CASE("a single edge scenario is valid") {
    Network net = load_network(two_node_doc());
    CHECK(net.edge_count() == 1);
    CHECK(net.paths(net.node_index("s"), 0).size() == 1);
}

TEST_CASE("validation diagnostics are distinct") {
    json doc = two_node_doc();
    doc["edges"][0]["capacity"] = 0;
    try {
        load_network(doc);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == errc::validation);
        CHECK(std::string(e.what()).find("capacity") != std::string::npos);
    }

    json unreachable = json::parse(R"({
      "nodes": ["s", "t"],
      "edges": [],
      "commodities": [{"sink": "t", "inflows": [{"node": "s", "pieces": [[0, 1, 1]]}]}],
      "horizon": 2
    })");
    try {
        load_network(unreachable);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == errc::validation);
        CHECK(std::string(e.what()).find("unreachable") != std::string::npos);
    }

    json bad = two_node_doc();
    bad.erase("edges");
    CHECK(caught_code([&] { load_network(bad); }) == errc::schema);
}

TEST_CASE("malformed JSON reports line and column") {
    try {
        parse_json_text("{\n  \"nodes\": [,]\n}");
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == errc::schema);
        std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("column") != std::string::npos);
    }
}

TEST_CASE("path enumeration on the reference network finds both routes") {
    Network net = load_network_file(std::string(kScenarioDir) + "/golden_ide.json");
    int s = net.node_index("s");
    std::vector<Path> ps = enumerate_paths(net, s, 0);
    REQUIRE(ps.size() == 2);
    CHECK(ps[0].edges == std::vector<int>{0, 1}); // s->v->t comes first lexicographically
    CHECK(ps[1].edges == std::vector<int>{2, 3});
    CHECK(ps[0].mask == 0b0011u);
    CHECK(ps[1].mask == 0b1100u);
    CHECK(net.paths(s, 0).size() == 2);
    CHECK(enumerate_paths(net, net.node_index("v"), 0).size() == 1);
}

TEST_CASE("diamond graph has two paths") {
    json doc = json::parse(R"({
      "nodes": ["s", "a", "b", "t"],
      "edges": [
        {"from": "s", "to": "a", "capacity": 1, "free_flow_time": 1},
        {"from": "s", "to": "b", "capacity": 1, "free_flow_time": 1},
        {"from": "a", "to": "t", "capacity": 1, "free_flow_time": 1},
        {"from": "b", "to": "t", "capacity": 1, "free_flow_time": 1}
      ],
      "commodities": [{"sink": "t", "inflows": [{"node": "s", "pieces": [[0, 1, 1]]}]}],
      "horizon": 2
    })");
    Network net = load_network(doc);
    CHECK(enumerate_paths(net, net.node_index("s"), 0).size() == 2);
}

TEST_CASE("path counts match an independent oracle on random graphs") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        int n = 3 + static_cast<int>(rng() % 6); // 3..8 nodes
        json doc;
        doc["horizon"] = 1.0;
        for (int v = 0; v < n; ++v) doc["nodes"].push_back("n" + std::to_string(v));
        doc["edges"] = json::array();
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) {
                if (a == b || rng() % 100 >= 45) continue;
                doc["edges"].push_back({{"from", "n" + std::to_string(a)},
                                        {"to", "n" + std::to_string(b)},
                                        {"capacity", 1.0},
                                        {"free_flow_time", 1.0}});
            }
        // sink-only commodity so validation cannot fail on reachability
        doc["commodities"] = json::array();
        doc["commodities"].push_back({{"sink", "n" + std::to_string(n - 1)}, {"inflows", json::array()}});
        Network net;
        try {
            net = load_network(doc, 100000);
        } catch (const Error&) {
            continue; // e.g. no nodes/edges combination rejected
        }
        std::map<std::pair<std::uint64_t, int>, std::uint64_t> memo;
        for (int v = 0; v + 1 < n; ++v) {
            std::vector<Path> ps = enumerate_paths(net, v, 0, 100000);
            std::uint64_t expect =
                count_simple_paths(net, v, n - 1, std::uint64_t{1} << v, memo);
            memo.clear();
            CHECK(ps.size() == expect);
            for (const Path& p : ps) {
                REQUIRE(!p.edges.empty());
                CHECK(net.edge(p.edges.front()).from == v);
                CHECK(net.edge(p.edges.back()).to == n - 1);
                std::uint64_t nodes_seen = std::uint64_t{1} << v;
                for (int e : p.edges) {
                    std::uint64_t bit = std::uint64_t{1} << net.edge(e).to;
                    CHECK((nodes_seen & bit) == 0); // simple
                    nodes_seen |= bit;
                }
            }
            // lexicographic order by edge sequence
            for (std::size_t k = 1; k < ps.size(); ++k)
                CHECK(std::lexicographical_compare(ps[k - 1].edges.begin(), ps[k - 1].edges.end(),
                                                   ps[k].edges.begin(), ps[k].edges.end()));
        }
    }
}

TEST_CASE("path explosion guard advises a larger bound") {
    // layered graph with 2^5 = 32 paths
    json doc;
    doc["horizon"] = 1.0;
    int layers = 5;
    doc["nodes"].push_back("s");
    for (int l = 0; l < layers; ++l) {
        doc["nodes"].push_back("a" + std::to_string(l));
        doc["nodes"].push_back("b" + std::to_string(l));
    }
    doc["nodes"].push_back("t");
    auto add_edge = [&](const std::string& f, const std::string& t) {
        doc["edges"].push_back(
            {{"from", f}, {"to", t}, {"capacity", 1.0}, {"free_flow_time", 1.0}});
    };
    std::string prev_a = "s", prev_b = "s";
    for (int l = 0; l < layers; ++l) {
        std::string a = "a" + std::to_string(l), b = "b" + std::to_string(l);
        add_edge(prev_a, a);
        add_edge(prev_a, b);
        if (l > 0) {
            add_edge(prev_b, a);
            add_edge(prev_b, b);
        }
        prev_a = a;
        prev_b = b;
    }
    add_edge(prev_a, "t");
    add_edge(prev_b, "t");
    doc["commodities"] = json::array();
    doc["commodities"].push_back({{"sink", "t"}, {"inflows", json::array()}});
    Network net = load_network(doc, 100000);
    try {
        enumerate_paths(net, net.node_index("s"), 0, 3);
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == errc::path_explosion);
        CHECK(std::string(e.what()).find("larger") != std::string::npos);
    }
}

TEST_CASE("scenario serialization round-trips losslessly") {
    Network net = load_network_file(std::string(kScenarioDir) + "/golden_ide.json");
    json doc = to_scenario_json(net);
    Network again = load_network(doc);
    CHECK(again.node_names() == net.node_names());
    REQUIRE(again.edge_count() == net.edge_count());
    for (int e = 0; e < net.edge_count(); ++e) {
        CHECK(again.edge(e).from == net.edge(e).from);
        CHECK(again.edge(e).to == net.edge(e).to);
        CHECK(again.edge(e).capacity == net.edge(e).capacity);
        CHECK(again.edge(e).free_flow_time == net.edge(e).free_flow_time);
    }
    REQUIRE(again.commodity_count() == net.commodity_count());
    for (int i = 0; i < net.commodity_count(); ++i) {
        CHECK(again.commodity(i).sink == net.commodity(i).sink);
        REQUIRE(again.commodity(i).inflows.size() == net.commodity(i).inflows.size());
        for (std::size_t k = 0; k < net.commodity(i).inflows.size(); ++k) {
            CHECK(again.commodity(i).inflows[k].first == net.commodity(i).inflows[k].first);
            CHECK(again.commodity(i).inflows[k].second == net.commodity(i).inflows[k].second);
        }
    }
    CHECK(again.horizon() == net.horizon());
    CHECK(to_scenario_json(again) == doc);
}

TEST_CASE("inflow support must fit the horizon") {
    json doc = two_node_doc();
    doc["commodities"][0]["inflows"][0]["pieces"] = json::array({json::array({0.0, 5.0, 1.0})});
    CHECK(caught_code([&] { load_network(doc); }) == errc::validation);
}
