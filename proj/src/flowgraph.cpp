#include "lmtrace/flowgraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>
#include <tuple>

#include "lmtrace/errors.hpp"
#include "lmtrace/json_util.hpp"

namespace lmtrace {

std::string point_name(Point p) {
    switch (p) {
        case Point::Embed: return "embed";
        case Point::Mid: return "mid";
        case Point::Post: return "post";
    }
    return "?";
}

Point parse_point(const std::string& s) {
    if (s == "embed") return Point::Embed;
    if (s == "mid") return Point::Mid;
    if (s == "post") return Point::Post;
    throw IndexError("unknown residual point '" + s + "' (expected embed, mid or post)");
}

std::string edge_kind_name(EdgeKind k) {
    switch (k) {
        case EdgeKind::Attn: return "attn";
        case EdgeKind::Ffn: return "ffn";
        case EdgeKind::Residual: return "residual";
    }
    return "?";
}

namespace {

EdgeKind parse_edge_kind(const std::string& s) {
    if (s == "attn") return EdgeKind::Attn;
    if (s == "ffn") return EdgeKind::Ffn;
    if (s == "residual") return EdgeKind::Residual;
    throw Error("unknown edge kind '" + s + "'");
}

void check_request(const RunCapture& capture, double threshold, const std::set<std::size_t>& targets) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw InvalidThreshold("threshold must lie in [0, 1], got " + std::to_string(threshold));
    }
    if (targets.empty()) throw EmptyTargets("graph extraction needs at least one target position");
    if (*targets.rbegin() >= capture.n_tokens()) {
        throw IndexError("target position " + std::to_string(*targets.rbegin()) + " out of range (T = " +
                         std::to_string(capture.n_tokens()) + ")");
    }
}

NodeId below(std::size_t layer, std::size_t position) {
    return layer == 0 ? NodeId::embed(position) : NodeId::post(layer - 1, position);
}

double clamp01(double w) { return std::clamp(w, 0.0, 1.0); }

std::shared_ptr<const ModelParams> borrow(const ModelParams& p) { return {std::shared_ptr<void>(), &p}; }
std::shared_ptr<const RunCapture> borrow(const RunCapture& c) { return {std::shared_ptr<void>(), &c}; }

ojson node_json(const NodeId& n) {
    return ojson{{"layer", n.layer}, {"point", point_name(n.point)}, {"position", n.position}};
}

NodeId node_from_json(const ojson& j) {
    return {j.at("layer").get<std::size_t>(), parse_point(j.at("point").get<std::string>()),
            j.at("position").get<std::size_t>()};
}

std::string dot_id(const NodeId& n) {
    if (n.point == Point::Embed) return "embed_" + std::to_string(n.position);
    return point_name(n.point) + "_" + std::to_string(n.layer) + "_" + std::to_string(n.position);
}

std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out.push_back(c);
    }
    return out;
}

}  // namespace

bool edge_order(const FlowEdge& a, const FlowEdge& b) {
    return std::tie(a.dst, a.kind, a.src) < std::tie(b.dst, b.kind, b.src);
}

FlowGraph build_graph(const Attributor& attributor, double threshold, const std::set<std::size_t>& targets) {
    const RunCapture& cap = attributor.capture();
    check_request(cap, threshold, targets);
    const std::size_t L = cap.config.n_layer;

    FlowGraph g;
    g.threshold = threshold;
    g.targets.assign(targets.begin(), targets.end());

    std::set<NodeId> visited;
    std::deque<NodeId> work;
    for (std::size_t t : targets) work.push_back(NodeId::post(L - 1, t));

    std::vector<double> per_source;
    while (!work.empty()) {
        const NodeId node = work.front();
        work.pop_front();
        if (!visited.insert(node).second) continue;

        if (node.point == Point::Post) {
            const StepAttribution& step = attributor.ffn_step(node.layer, node.position);
            const NodeId src = NodeId::mid(node.layer, node.position);
            g.edges.push_back({src, node, EdgeKind::Residual, clamp01(step.residual())});
            const double w = clamp01(block_importance(step));
            if (w >= threshold) g.edges.push_back({src, node, EdgeKind::Ffn, w});
            work.push_back(src);
        } else if (node.point == Point::Mid) {
            const StepAttribution& step = attributor.attention_step(node.layer, node.position);
            g.edges.push_back({below(node.layer, node.position), node, EdgeKind::Residual, clamp01(step.residual())});
            work.push_back(below(node.layer, node.position));

            per_source.assign(node.position + 1, 0.0);
            for (std::size_t k = 0; k < step.labels.size(); ++k) {
                if (step.labels[k].kind == TermKind::AttnToken) per_source[step.labels[k].index] += step.scores[k];
            }
            for (std::size_t j = 0; j <= node.position; ++j) {
                const double w = clamp01(per_source[j]);
                if (w >= threshold) {
                    g.edges.push_back({below(node.layer, j), node, EdgeKind::Attn, w});
                    work.push_back(below(node.layer, j));
                }
            }
        }
    }

    g.nodes.assign(visited.begin(), visited.end());
    std::sort(g.edges.begin(), g.edges.end(), edge_order);
    return g;
}

FlowGraph build_graph(const RunCapture& capture, const ModelParams& params, double threshold,
                      const std::set<std::size_t>& targets) {
    return build_graph(Attributor(borrow(params), borrow(capture)), threshold, targets);
}

FlowGraph densify(const FlowGraph& graph, const Attributor& attributor, double threshold) {
    return build_graph(attributor, threshold, std::set<std::size_t>(graph.targets.begin(), graph.targets.end()));
}

FlowGraph densify(const FlowGraph& graph, const RunCapture& capture, const ModelParams& params, double threshold) {
    return build_graph(capture, params, threshold, std::set<std::size_t>(graph.targets.begin(), graph.targets.end()));
}

ojson serialize_graph(const FlowGraph& graph, const std::vector<std::string>& token_strings) {
    ojson nodes = ojson::array();
    for (const NodeId& n : graph.nodes) {
        ojson jn = node_json(n);
        jn["token"] = n.position < token_strings.size() ? token_strings[n.position] : std::string();
        nodes.push_back(std::move(jn));
    }
    ojson edges = ojson::array();
    for (const FlowEdge& e : graph.edges) {
        edges.push_back(ojson{{"src", node_json(e.src)},
                              {"dst", node_json(e.dst)},
                              {"kind", edge_kind_name(e.kind)},
                              {"weight", round6(e.weight)}});
    }
    return ojson{{"threshold", round6(graph.threshold)},
                 {"targets", graph.targets},
                 {"nodes", std::move(nodes)},
                 {"edges", std::move(edges)}};
}

FlowGraph parse_graph(const ojson& doc) {
    FlowGraph g;
    g.threshold = doc.at("threshold").get<double>();
    g.targets = doc.at("targets").get<std::vector<std::size_t>>();
    for (const auto& jn : doc.at("nodes")) g.nodes.push_back(node_from_json(jn));
    for (const auto& je : doc.at("edges")) {
        g.edges.push_back({node_from_json(je.at("src")), node_from_json(je.at("dst")),
                           parse_edge_kind(je.at("kind").get<std::string>()), je.at("weight").get<double>()});
    }
    return g;
}

std::string graph_to_dot(const FlowGraph& graph, const std::vector<std::string>& token_strings) {
    std::ostringstream os;
    os.precision(12);
    os << "digraph flow {\n";
    os << "  graph [rankdir=BT, threshold=\"" << round6(graph.threshold) << "\"];\n";
    for (const NodeId& n : graph.nodes) {
        const std::string tok = n.position < token_strings.size() ? token_strings[n.position] : "";
        os << "  " << dot_id(n) << " [label=\"" << point_name(n.point);
        if (n.point != Point::Embed) os << " L" << n.layer;
        os << " @" << n.position << " " << dot_escape(tok) << "\"";
        os << "];\n";
    }
    for (const FlowEdge& e : graph.edges) {
        os << "  " << dot_id(e.src) << " -> " << dot_id(e.dst) << " [kind=" << edge_kind_name(e.kind)
           << ", weight=" << round6(e.weight) << "];\n";
    }
    os << "}\n";
    return os.str();
}

}  // namespace lmtrace
