#include "dta/network.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

namespace dta {

namespace {

using nlohmann::json;

[[noreturn]] void schema_fail(const std::string& msg) {
    throw Error(errc::schema, "schema violation: " + msg);
}

double require_number(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_number())
        schema_fail(where + " needs numeric field '" + key + "'");
    return obj[key].get<double>();
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_string())
        schema_fail(where + " needs string field '" + key + "'");
    return obj[key].get<std::string>();
}

// Forward reachability over edges from a seed set.
std::vector<char> reach_forward(const Network& net, const std::vector<char>& seed) {
    std::vector<char> seen = seed;
    std::deque<int> queue;
    for (int v = 0; v < net.node_count(); ++v)
        if (seen[static_cast<std::size_t>(v)]) queue.push_back(v);
    while (!queue.empty()) {
        int v = queue.front();
        queue.pop_front();
        for (int e : net.out_edges(v)) {
            int w = net.edge(e).to;
            if (!seen[static_cast<std::size_t>(w)]) {
                seen[static_cast<std::size_t>(w)] = 1;
                queue.push_back(w);
            }
        }
    }
    return seen;
}

void dfs_paths(const Network& net, int v, int sink, std::vector<char>& visited,
               std::vector<int>& stack, std::vector<Path>& out, std::size_t max_paths) {
    if (v == sink) {
        if (out.size() >= max_paths)
            throw Error(errc::path_explosion,
                        "more than " + std::to_string(max_paths) +
                            " simple paths; rerun with a larger max_paths bound");
        Path p;
        p.edges = stack;
        for (int e : stack) p.mask |= std::uint64_t{1} << e;
        out.push_back(std::move(p));
        return;
    }
    visited[static_cast<std::size_t>(v)] = 1;
    for (int e : net.out_edges(v)) { // ascending edge index = lexicographic order
        int w = net.edge(e).to;
        if (visited[static_cast<std::size_t>(w)]) continue;
        stack.push_back(e);
        dfs_paths(net, w, sink, visited, stack, out, max_paths);
        stack.pop_back();
    }
    visited[static_cast<std::size_t>(v)] = 0;
}

} // namespace

int Network::node_index(const std::string& name) const {
    for (int v = 0; v < node_count(); ++v)
        if (node_names_[static_cast<std::size_t>(v)] == name) return v;
    return -1;
}

double Network::min_free_flow_time() const {
    double m = std::numeric_limits<double>::infinity();
    for (const Edge& e : edges_) m = std::min(m, e.free_flow_time);
    return edges_.empty() ? 0.0 : m;
}

double Network::max_capacity() const {
    double m = 0.0;
    for (const Edge& e : edges_) m = std::max(m, e.capacity);
    return m;
}

nlohmann::json parse_json_text(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t pos = e.byte > 0 ? e.byte - 1 : 0;
        pos = std::min(pos, text.size());
        std::size_t line = 1, col = 1;
        for (std::size_t k = 0; k < pos; ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::ostringstream msg;
        msg << "malformed JSON at line " << line << ", column " << col;
        throw Error(errc::schema, msg.str());
    }
}

std::vector<Path> enumerate_paths(const Network& net, int v, int i, std::size_t max_paths) {
    if (net.edge_count() > 64)
        throw Error(errc::invalid_input, "path enumeration supports at most 64 edges");
    int sink = net.commodity(i).sink;
    if (v == sink) return {};
    std::vector<char> visited(static_cast<std::size_t>(net.node_count()), 0);
    std::vector<int> stack;
    std::vector<Path> out;
    dfs_paths(net, v, sink, visited, stack, out, max_paths);
    return out;
}

nlohmann::json rate_to_json(const RateFunction& f) {
    json arr = json::array();
    for (const auto& p : f.pieces()) arr.push_back(json::array({p.begin, p.end, p.value}));
    return arr;
}

RateFunction rate_from_json(const nlohmann::json& arr) {
    if (!arr.is_array()) schema_fail("rate function must be an array of [t0,t1,value] triples");
    std::vector<RateFunction::Piece> pieces;
    for (const auto& t : arr) {
        if (!t.is_array() || t.size() != 3 || !t[0].is_number() || !t[1].is_number() || !t[2].is_number())
            schema_fail("rate function piece must be a numeric [t0,t1,value] triple");
        pieces.push_back({t[0].get<double>(), t[1].get<double>(), t[2].get<double>()});
    }
    return RateFunction::from_pieces(pieces);
}

Network load_network(const nlohmann::json& doc, std::size_t max_paths) {
    if (!doc.is_object()) schema_fail("scenario must be a JSON object");
    for (const char* key : {"nodes", "edges", "commodities"})
        if (!doc.contains(key) || !doc[key].is_array())
            schema_fail(std::string("scenario needs array field '") + key + "'");
    if (!doc.contains("horizon") || !doc["horizon"].is_number())
        schema_fail("scenario needs numeric field 'horizon'");

    Network net;
    net.horizon_ = doc["horizon"].get<double>();
    if (!std::isfinite(net.horizon_) || net.horizon_ <= 0.0)
        throw Error(errc::validation, "horizon must be positive and finite");

    for (const auto& n : doc["nodes"]) {
        if (!n.is_string()) schema_fail("node names must be strings");
        if (net.node_index(n.get<std::string>()) >= 0)
            throw Error(errc::validation, "duplicate node name '" + n.get<std::string>() + "'");
        net.node_names_.push_back(n.get<std::string>());
    }
    if (net.node_names_.empty()) throw Error(errc::validation, "scenario has no nodes");

    for (const auto& e : doc["edges"]) {
        if (!e.is_object()) schema_fail("edges must be objects");
        Edge edge;
        std::string from = require_string(e, "from", "edge");
        std::string to = require_string(e, "to", "edge");
        edge.from = net.node_index(from);
        edge.to = net.node_index(to);
        if (edge.from < 0) throw Error(errc::validation, "edge references unknown node '" + from + "'");
        if (edge.to < 0) throw Error(errc::validation, "edge references unknown node '" + to + "'");
        edge.capacity = require_number(e, "capacity", "edge");
        edge.free_flow_time = require_number(e, "free_flow_time", "edge");
        if (!std::isfinite(edge.capacity) || edge.capacity <= 0.0)
            throw Error(errc::validation, "nonpositive capacity on edge " + from + "->" + to);
        if (!std::isfinite(edge.free_flow_time) || edge.free_flow_time < 0.0)
            throw Error(errc::validation, "negative free-flow time on edge " + from + "->" + to);
        net.edges_.push_back(edge);
    }

    net.out_edges_.assign(static_cast<std::size_t>(net.node_count()), {});
    net.in_edges_.assign(static_cast<std::size_t>(net.node_count()), {});
    for (int e = 0; e < net.edge_count(); ++e) {
        net.out_edges_[static_cast<std::size_t>(net.edges_[static_cast<std::size_t>(e)].from)].push_back(e);
        net.in_edges_[static_cast<std::size_t>(net.edges_[static_cast<std::size_t>(e)].to)].push_back(e);
    }

    for (const auto& c : doc["commodities"]) {
        if (!c.is_object()) schema_fail("commodities must be objects");
        Commodity com;
        std::string sink = require_string(c, "sink", "commodity");
        com.sink = net.node_index(sink);
        if (com.sink < 0) throw Error(errc::validation, "commodity sink '" + sink + "' is not a node");
        if (!c.contains("inflows") || !c["inflows"].is_array())
            schema_fail("commodity needs array field 'inflows'");
        for (const auto& inflow : c["inflows"]) {
            if (!inflow.is_object() || !inflow.contains("pieces"))
                schema_fail("inflow needs fields 'node' and 'pieces'");
            std::string node = require_string(inflow, "node", "inflow");
            int v = net.node_index(node);
            if (v < 0) throw Error(errc::validation, "inflow references unknown node '" + node + "'");
            RateFunction u;
            try {
                u = rate_from_json(inflow["pieces"]);
            } catch (const Error& e) {
                if (e.code() == errc::schema) throw;
                throw Error(errc::validation, std::string("invalid inflow at node ") + node + ": " + e.what());
            }
            if (u.is_zero()) continue;
            if (u.support_begin() < -kCanonicalTol || u.support_end() > net.horizon_ + kCanonicalTol)
                throw Error(errc::validation,
                            "inflow at node " + node + " has support outside [0, horizon]");
            if (com.inflow_at(v) != nullptr)
                throw Error(errc::validation, "duplicate inflow entry for node " + node);
            com.inflows.emplace_back(v, std::move(u));
        }
        std::sort(com.inflows.begin(), com.inflows.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        net.commodities_.push_back(std::move(com));
    }
    if (net.commodities_.empty()) throw Error(errc::validation, "scenario has no commodities");

    // Flow-carrying nodes and path-set validation per commodity: every node
    // the commodity's flow can touch must offer at least one route to the sink.
    net.flow_nodes_.assign(net.commodities_.size(), {});
    net.paths_.assign(net.commodities_.size(),
                      std::vector<std::vector<Path>>(static_cast<std::size_t>(net.node_count())));
    for (int i = 0; i < net.commodity_count(); ++i) {
        const Commodity& com = net.commodity(i);
        std::vector<char> seed(static_cast<std::size_t>(net.node_count()), 0);
        for (const auto& [v, u] : com.inflows) seed[static_cast<std::size_t>(v)] = 1;
        std::vector<char> reach = reach_forward(net, seed);
        net.flow_nodes_[static_cast<std::size_t>(i)] = reach;
        for (int v = 0; v < net.node_count(); ++v) {
            if (!reach[static_cast<std::size_t>(v)] || v == com.sink) continue;
            std::vector<Path> ps = enumerate_paths(net, v, i, max_paths);
            if (ps.empty())
                throw Error(errc::validation,
                            "unreachable sink: commodity " + std::to_string(i) + " flow can reach node '" +
                                net.node_name(v) + "' but no path leads on to '" +
                                net.node_name(com.sink) + "'");
            net.paths_[static_cast<std::size_t>(i)][static_cast<std::size_t>(v)] = std::move(ps);
        }
    }
    return net;
}

Network load_network_file(const std::string& path, std::size_t max_paths) {
    std::ifstream in(path);
    if (!in) throw Error(errc::invalid_input, "cannot open scenario file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_network(parse_json_text(buf.str()), max_paths);
}

nlohmann::json to_scenario_json(const Network& net) {
    json doc;
    doc["nodes"] = net.node_names();
    doc["edges"] = json::array();
    for (const Edge& e : net.edges()) {
        doc["edges"].push_back({{"from", net.node_name(e.from)},
                                {"to", net.node_name(e.to)},
                                {"capacity", e.capacity},
                                {"free_flow_time", e.free_flow_time}});
    }
    doc["commodities"] = json::array();
    for (const Commodity& c : net.commodities()) {
        json jc;
        jc["sink"] = net.node_name(c.sink);
        jc["inflows"] = json::array();
        for (const auto& [v, u] : c.inflows)
            jc["inflows"].push_back({{"node", net.node_name(v)}, {"pieces", rate_to_json(u)}});
        doc["commodities"].push_back(std::move(jc));
    }
    doc["horizon"] = net.horizon();
    return doc;
}

} // namespace dta
