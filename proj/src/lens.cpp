#include "lmtrace/lens.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "lmtrace/errors.hpp"
#include "lmtrace/simd.hpp"

namespace lmtrace {
namespace {

std::shared_ptr<const ModelParams> borrow(const ModelParams& p) { return {std::shared_ptr<void>(), &p}; }
std::shared_ptr<const RunCapture> borrow(const RunCapture& c) { return {std::shared_ptr<void>(), &c}; }

// k entries ordered by `before`, which must be a strict total order on token ids.
template <typename Before>
LensTable select(std::span<const float> scores, std::size_t k, Before before, const Tokenizer* tokenizer) {
    std::vector<TokenId> ids(scores.size());
    std::iota(ids.begin(), ids.end(), TokenId{0});
    k = std::min(k, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), before);
    LensTable table;
    table.k = k;
    table.entries.reserve(k);
    for (std::size_t r = 0; r < k; ++r) {
        const TokenId id = ids[r];
        table.entries.push_back({id, tokenizer && id < tokenizer->vocab_size() ? tokenizer->token_bytes(id) : "",
                                 static_cast<double>(scores[id])});
    }
    return table;
}

std::span<const float> residual_at(const RunCapture& capture, const NodeId& node) {
    if (node.position >= capture.n_tokens()) {
        throw IndexError("position " + std::to_string(node.position) + " out of range");
    }
    switch (node.point) {
        case Point::Embed:
            if (node.layer != 0) throw IndexError("embed nodes live at layer 0");
            return capture.residual_pre(0, node.position);
        case Point::Mid:
            if (node.layer >= capture.config.n_layer) throw IndexError("layer out of range");
            return capture.residual_mid(node.layer, node.position);
        case Point::Post:
            if (node.layer >= capture.config.n_layer) throw IndexError("layer out of range");
            return capture.residual_post(node.layer, node.position);
    }
    throw IndexError("invalid node");
}

std::size_t parse_index(const std::string& s, const std::string& spec) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 9) {
        throw IndexError("malformed component '" + spec + "'");
    }
    return std::stoul(s);
}

}  // namespace

std::vector<float> vocab_scores(const ModelParams& params, std::span<const float> v) {
    const std::size_t V = params.config.n_vocab, d = params.config.d_model;
    std::vector<float> out(V);
    simd::kernels().gemm_nt(1, V, d, v.data(), d, params.token_embedding.data(), d, out.data(), V);
    return out;
}

LensTable logit_lens(const RunCapture& capture, const ModelParams& params, const NodeId& node, std::size_t k,
                     bool apply_ln, const Tokenizer* tokenizer) {
    auto r = residual_at(capture, node);
    std::vector<float> v(r.begin(), r.end());
    if (apply_ln) layer_norm(r, params.lnf_gain.flat(), params.lnf_bias.flat(), params.config.ln_eps, v);
    const auto scores = vocab_scores(params, v);
    LensTable t = select(
        scores, k, [&](TokenId a, TokenId b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; },
        tokenizer);
    t.applied_ln = apply_ln;
    return t;
}

Component parse_component(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string item; std::getline(ss, item, ':');) parts.push_back(item);
    if (parts.size() != 4) throw IndexError("malformed component '" + spec + "'");
    if (parts[0] == "block") {
        const Point p = parse_point(parts[2]);
        if (p == Point::Embed) throw IndexError("block components are mid (attention) or post (ffn)");
        return Component::block(parse_index(parts[1], spec), p, parse_index(parts[3], spec));
    }
    if (parts[0] == "head") {
        return Component::attention_head(parse_index(parts[1], spec), parse_index(parts[2], spec),
                                         parse_index(parts[3], spec));
    }
    if (parts[0] == "neuron") {
        return Component::ffn_neuron(parse_index(parts[1], spec), parse_index(parts[2], spec),
                                     parse_index(parts[3], spec));
    }
    throw IndexError("unknown component kind in '" + spec + "'");
}

std::string component_name(const Component& c) {
    const std::string l = std::to_string(c.layer), i = std::to_string(c.position);
    switch (c.kind) {
        case Component::Kind::Block: return "block:" + l + ":" + point_name(c.point) + ":" + i;
        case Component::Kind::Head: return "head:" + l + ":" + std::to_string(c.head) + ":" + i;
        case Component::Kind::Neuron: return "neuron:" + l + ":" + std::to_string(c.neuron) + ":" + i;
    }
    return "?";
}

std::vector<float> component_update(const Attributor& attributor, const Component& c) {
    const RunCapture& cap = attributor.capture();
    check_layer_position(cap, c.layer, c.position);
    const std::size_t d = cap.config.d_model;
    switch (c.kind) {
        case Component::Kind::Block: {
            if (c.point == Point::Embed) throw IndexError("embed is not a block");
            auto row = c.point == Point::Mid ? cap.attn_out.row(c.layer, c.position)
                                             : cap.ffn_out.row(c.layer, c.position);
            return {row.begin(), row.end()};
        }
        case Component::Kind::Head: {
            if (c.head >= cap.config.n_head) throw IndexError("head " + std::to_string(c.head) + " out of range");
            const Tensor& z = attributor.head_projection(c.layer);
            auto arow = cap.attention_row(c.layer, c.head, c.position);
            std::vector<double> acc(d, 0.0);
            for (std::size_t j = 0; j <= c.position; ++j) {
                auto zr = z.row(c.head, j);
                for (std::size_t e = 0; e < d; ++e) acc[e] += static_cast<double>(arow[j]) * zr[e];
            }
            return {acc.begin(), acc.end()};
        }
        case Component::Kind::Neuron: {
            if (c.neuron >= cap.config.d_ff) throw IndexError("neuron " + std::to_string(c.neuron) + " out of range");
            const float act = cap.ffn_post.at(c.layer, c.position, c.neuron);
            auto w = attributor.params().layers[c.layer].w_out.row(c.neuron);
            std::vector<float> out(d);
            for (std::size_t e = 0; e < d; ++e) out[e] = act * w[e];
            return out;
        }
    }
    throw IndexError("invalid component");
}

Projection project_update(const ModelParams& params, std::span<const float> update, std::size_t k,
                          const Tokenizer* tokenizer) {
    const auto scores = vocab_scores(params, update);
    Projection p;
    p.promoted = select(
        scores, k, [&](TokenId a, TokenId b) { return scores[a] != scores[b] ? scores[a] > scores[b] : a < b; },
        tokenizer);
    p.suppressed = select(
        scores, k, [&](TokenId a, TokenId b) { return scores[a] != scores[b] ? scores[a] < scores[b] : a < b; },
        tokenizer);
    return p;
}

Projection update_projection(const Attributor& attributor, const Component& component, std::size_t k,
                             const Tokenizer* tokenizer) {
    return project_update(attributor.params(), component_update(attributor, component), k, tokenizer);
}

Projection update_projection(const RunCapture& capture, const ModelParams& params, const Component& component,
                             std::size_t k, const Tokenizer* tokenizer) {
    return update_projection(Attributor(borrow(params), borrow(capture)), component, k, tokenizer);
}

}  // namespace lmtrace
