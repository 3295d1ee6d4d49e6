#pragma once

// Important information-flow subgraph.
//
// Nodes are residual-stream states: EMBED (input to layer 0), MID (after the
// attention block of layer l) and POST (after the FFN of layer l). Extraction
// starts from POST nodes of the top layer and walks down:
//
//   POST(l, i):  RESIDUAL  MID(l, i) -> POST(l, i), always, weight = residual score
//                FFN       MID(l, i) -> POST(l, i), if block importance >= threshold
//   MID(l, i):   RESIDUAL  below(i) -> MID(l, i), always
//                ATTN      below(j) -> MID(l, i) for every j whose edge importance >= threshold
//
// where below(j) is POST(l-1, j), or EMBED(j) for l = 0.

#include <compare>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmtrace/attribution.hpp"

namespace lmtrace {

enum class Point { Embed, Mid, Post };
enum class EdgeKind { Attn, Ffn, Residual };

std::string point_name(Point p);
Point parse_point(const std::string& s);  // throws IndexError on unknown names
std::string edge_kind_name(EdgeKind k);

struct NodeId {
    std::size_t layer = 0;  // EMBED nodes use 0
    Point point = Point::Embed;
    std::size_t position = 0;

    static NodeId embed(std::size_t i) { return {0, Point::Embed, i}; }
    static NodeId mid(std::size_t l, std::size_t i) { return {l, Point::Mid, i}; }
    static NodeId post(std::size_t l, std::size_t i) { return {l, Point::Post, i}; }

    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

struct FlowEdge {
    NodeId src;
    NodeId dst;
    EdgeKind kind = EdgeKind::Residual;
    double weight = 0.0;

    friend bool operator==(const FlowEdge&, const FlowEdge&) = default;
};

// Sort key (dst, kind, src).
bool edge_order(const FlowEdge& a, const FlowEdge& b);

struct FlowGraph {
    std::vector<NodeId> nodes;    // sorted, unique
    std::vector<FlowEdge> edges;  // sorted by edge_order
    double threshold = 0.0;
    std::vector<std::size_t> targets;  // sorted, unique
};

inline constexpr double kDefaultThreshold = 0.04;

FlowGraph build_graph(const Attributor& attributor, double threshold, const std::set<std::size_t>& targets);
FlowGraph build_graph(const RunCapture& capture, const ModelParams& params, double threshold,
                      const std::set<std::size_t>& targets);

FlowGraph densify(const FlowGraph& graph, const Attributor& attributor, double threshold);
FlowGraph densify(const FlowGraph& graph, const RunCapture& capture, const ModelParams& params, double threshold);

nlohmann::ordered_json serialize_graph(const FlowGraph& graph, const std::vector<std::string>& token_strings);
FlowGraph parse_graph(const nlohmann::ordered_json& doc);
std::string graph_to_dot(const FlowGraph& graph, const std::vector<std::string>& token_strings);

}  // namespace lmtrace
