#ifndef DTA_NETWORK_HPP
#define DTA_NETWORK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dta/ratefn.hpp"

namespace dta {

struct Edge {
    int from = -1;
    int to = -1;
    double capacity = 0.0;       // nu_e, flow units per second, > 0
    double free_flow_time = 0.0; // c0_e, seconds, >= 0
};

struct Commodity {
    int sink = -1;
    // (node, inflow rate) pairs, sorted by node id, nonzero functions only.
    std::vector<std::pair<int, RateFunction>> inflows;

    const RateFunction* inflow_at(int node) const {
        for (const auto& [v, u] : inflows)
            if (v == node) return &u;
        return nullptr;
    }
};

/// A simple path: edge indices in walk order, plus an edge-incidence bitmask
/// (valid for networks with at most 64 edges, which covers every scenario the
/// engine targets; enumerate_paths rejects larger networks).
struct Path {
    std::vector<int> edges;
    std::uint64_t mask = 0;
};

class Network {
public:
    Network() = default;

    int node_count() const { return static_cast<int>(node_names_.size()); }
    int edge_count() const { return static_cast<int>(edges_.size()); }
    int commodity_count() const { return static_cast<int>(commodities_.size()); }

    const std::vector<std::string>& node_names() const { return node_names_; }
    const std::string& node_name(int v) const { return node_names_[static_cast<std::size_t>(v)]; }
    int node_index(const std::string& name) const; // -1 if unknown
    const std::vector<Edge>& edges() const { return edges_; }
    const Edge& edge(int e) const { return edges_[static_cast<std::size_t>(e)]; }
    const std::vector<Commodity>& commodities() const { return commodities_; }
    const Commodity& commodity(int i) const { return commodities_[static_cast<std::size_t>(i)]; }
    double horizon() const { return horizon_; }

    /// Outgoing / incoming edge indices, ascending.
    const std::vector<int>& out_edges(int v) const { return out_edges_[static_cast<std::size_t>(v)]; }
    const std::vector<int>& in_edges(int v) const { return in_edges_[static_cast<std::size_t>(v)]; }

    /// Cached simple paths from v to commodity i's sink (lexicographic by
    /// edge index). Empty when none exist or v is the sink.
    const std::vector<Path>& paths(int v, int i) const {
        return paths_[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)];
    }

    /// Nodes that can carry commodity i's flow (reachable from its inflow nodes).
    bool carries_flow(int v, int i) const {
        return flow_nodes_[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)];
    }

    double min_free_flow_time() const;
    double max_capacity() const;

    friend Network load_network(const nlohmann::json& doc, std::size_t max_paths);

private:
    std::vector<std::string> node_names_;
    std::vector<Edge> edges_;
    std::vector<Commodity> commodities_;
    double horizon_ = 0.0;
    std::vector<std::vector<int>> out_edges_, in_edges_;
    std::vector<std::vector<std::vector<Path>>> paths_;  // [commodity][node]
    std::vector<std::vector<char>> flow_nodes_;          // [commodity][node]
};

/// Parse JSON text into a document; malformed input raises errc::schema with
/// a "line L, column C" diagnostic.
nlohmann::json parse_json_text(const std::string& text);

/// Build and fully validate a Network from a scenario document.
/// Distinct diagnostics: schema violation (errc::schema), nonpositive
/// capacity and unreachable sink (errc::validation).
Network load_network(const nlohmann::json& doc, std::size_t max_paths = 10000);
Network load_network_file(const std::string& path, std::size_t max_paths = 10000);

/// Scenario re-serialization (lossless round trip of canonical forms).
nlohmann::json to_scenario_json(const Network& net);

/// All simple v -> sink(i) paths in lexicographic edge-index order.
/// Throws errc::path_explosion (advising a larger bound) past max_paths.
std::vector<Path> enumerate_paths(const Network& net, int v, int i, std::size_t max_paths = 10000);

/// RateFunction <-> JSON array of [t0, t1, value] triples.
nlohmann::json rate_to_json(const RateFunction& f);
RateFunction rate_from_json(const nlohmann::json& arr);

} // namespace dta

#endif
