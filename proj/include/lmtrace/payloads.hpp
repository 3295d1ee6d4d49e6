#pragma once

// Documents served over HTTP and written by the CLI. Both go through these
// functions, so equal parameters give byte-equal bodies.

#include <chrono>
#include <initializer_list>
#include <memory>
#include <set>
#include <string>
#include <string_view>

#include "lmtrace/attribution.hpp"
#include "lmtrace/flowgraph.hpp"
#include "lmtrace/json_util.hpp"
#include "lmtrace/lens.hpp"
#include "lmtrace/model_bundle.hpp"

namespace lmtrace {

// One analysed prompt: the capture of its single forward pass plus the
// attribution caches built on top of it.
struct Analysis {
    std::string run_id;
    std::string model;
    std::string text;
    std::shared_ptr<const ModelBundle> bundle;
    std::shared_ptr<const RunCapture> capture;
    std::shared_ptr<const Attributor> attributor;
    std::chrono::system_clock::time_point created;
};

// Tokenizes and runs. Throws EmptyInput for text with no tokens and
// ContextOverflow when it exceeds n_ctx.
std::shared_ptr<const Analysis> analyze_text(std::shared_ptr<const ModelBundle> bundle, const std::string& text,
                                             std::string run_id = {});

constexpr std::size_t kTopPredictions = 10;
constexpr std::size_t kDefaultK = 10;

ojson run_payload(const Analysis& a);
ojson graph_payload(const Analysis& a, double threshold, const std::set<std::size_t>& targets);
ojson heads_payload(const Analysis& a, std::size_t layer, std::size_t position);
ojson attention_map_payload(const Analysis& a, std::size_t layer, std::size_t head);
ojson contribution_map_payload(const Analysis& a, std::size_t layer, std::size_t head);
ojson neurons_payload(const Analysis& a, std::size_t layer, std::size_t position, std::size_t k);
ojson lens_payload(const Analysis& a, const NodeId& node, std::size_t k, bool apply_ln);
ojson projection_payload(const Analysis& a, const Component& component, std::size_t k);

// Request parameter parsing; all throw IndexError on malformed input.
std::set<std::size_t> parse_targets(const std::string& spec, std::size_t n_tokens);  // last | all | CSV
std::size_t parse_count(const std::string& s, const std::string& name);
double parse_real(const std::string& s, const std::string& name);
bool parse_bool(const std::string& s, const std::string& name);

// Code points in UTF-8 text: bytes that are not continuation bytes.
std::size_t text_length(const std::string& text);

// 16 hex digits of FNV-1a over the parts, separated by NUL bytes.
std::string content_hash(std::initializer_list<std::string_view> parts);

}  // namespace lmtrace
