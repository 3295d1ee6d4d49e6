#pragma once

#include <string>
#include <vector>

#include "lmtrace/attribution.hpp"
#include "lmtrace/flowgraph.hpp"

namespace lmtrace {

struct LensEntry {
    TokenId token = 0;
    std::string text;
    double score = 0.0;  // raw logit
};

struct LensTable {
    std::vector<LensEntry> entries;
    std::size_t k = 0;
    bool applied_ln = false;
};

// Projects the residual state at `node` onto the vocabulary (through the
// final LayerNorm when apply_ln) and keeps the k best tokens,
// ordered by (score desc, token id asc).
LensTable logit_lens(const RunCapture& capture, const ModelParams& params, const NodeId& node, std::size_t k,
                     bool apply_ln, const Tokenizer* tokenizer = nullptr);

struct Component {
    enum class Kind { Block, Head, Neuron };
    Kind kind = Kind::Block;
    std::size_t layer = 0;
    Point point = Point::Mid;  // Block: Mid = attention output, Post = FFN output
    std::size_t head = 0;
    std::size_t neuron = 0;
    std::size_t position = 0;

    static Component block(std::size_t l, Point p, std::size_t i) { return {Kind::Block, l, p, 0, 0, i}; }
    static Component attention_head(std::size_t l, std::size_t h, std::size_t i) {
        return {Kind::Head, l, Point::Mid, h, 0, i};
    }
    static Component ffn_neuron(std::size_t l, std::size_t n, std::size_t i) {
        return {Kind::Neuron, l, Point::Post, 0, n, i};
    }
};

// "block:L:mid|post:I", "head:L:H:I" or "neuron:L:N:I". Throws IndexError when malformed.
Component parse_component(const std::string& spec);
std::string component_name(const Component& c);

// The vector a component added to the residual stream at its position.
std::vector<float> component_update(const Attributor& attributor, const Component& component);

struct Projection {
    LensTable promoted;    // top-k of update * U, score desc
    LensTable suppressed;  // bottom-k of update * U, score asc
};

Projection project_update(const ModelParams& params, std::span<const float> update, std::size_t k,
                          const Tokenizer* tokenizer = nullptr);
Projection update_projection(const Attributor& attributor, const Component& component, std::size_t k,
                             const Tokenizer* tokenizer = nullptr);
Projection update_projection(const RunCapture& capture, const ModelParams& params, const Component& component,
                             std::size_t k, const Tokenizer* tokenizer = nullptr);

// Scores of every vocabulary token for a vector: v * E^T.
std::vector<float> vocab_scores(const ModelParams& params, std::span<const float> v);

}  // namespace lmtrace
