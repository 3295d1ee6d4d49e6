#include "lmtrace/payloads.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "lmtrace/errors.hpp"

namespace lmtrace {
namespace {

ojson matrix_json(const Tensor& m) {
    ojson rows = ojson::array();
    const std::size_t n = m.shape()[0];
    for (std::size_t i = 0; i < n; ++i) {
        ojson row = ojson::array();
        for (float v : m.row(i)) row.push_back(round6(v));
        rows.push_back(std::move(row));
    }
    return rows;
}

ojson entries_json(const LensTable& t) {
    ojson out = ojson::array();
    for (const LensEntry& e : t.entries) {
        out.push_back(ojson{{"token_id", e.token}, {"token", e.text}, {"score", round6(e.score)}});
    }
    return out;
}

void check_head(const Analysis& a, std::size_t layer, std::size_t head) {
    const ModelConfig& c = a.capture->config;
    if (layer >= c.n_layer) throw IndexError("layer " + std::to_string(layer) + " out of range");
    if (head >= c.n_head) throw IndexError("head " + std::to_string(head) + " out of range");
}

ojson map_payload(const Analysis& a, std::size_t layer, std::size_t head, const Tensor& m) {
    return ojson{{"layer", layer}, {"head", head}, {"tokens", a.capture->token_strings}, {"matrix", matrix_json(m)}};
}

}  // namespace

std::shared_ptr<const Analysis> analyze_text(std::shared_ptr<const ModelBundle> bundle, const std::string& text,
                                             std::string run_id) {
    auto ids = bundle->tokenizer->encode(text);
    if (ids.empty()) throw EmptyInput("text produced no tokens");
    if (ids.size() > bundle->params->config.n_ctx) {
        throw ContextOverflow(std::to_string(ids.size()) + " tokens exceed the context of " +
                              std::to_string(bundle->params->config.n_ctx));
    }
    auto a = std::make_shared<Analysis>();
    a->run_id = std::move(run_id);
    a->model = bundle->name;
    a->text = text;
    a->capture = std::make_shared<const RunCapture>(run(*bundle->params, ids, bundle->tokenizer.get()));
    a->attributor = std::make_shared<const Attributor>(bundle->params, a->capture);
    a->bundle = std::move(bundle);
    a->created = std::chrono::system_clock::now();
    return a;
}

ojson run_payload(const Analysis& a) {
    const RunCapture& cap = *a.capture;
    ojson tokens = ojson::array();
    for (std::size_t t = 0; t < cap.n_tokens(); ++t) {
        tokens.push_back(ojson{{"id", cap.tokens[t]}, {"text", cap.token_strings[t]}});
    }

    auto logits = cap.final_logits(cap.n_tokens() - 1);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (float v : logits) z += std::exp(static_cast<double>(v) - mx);
    std::vector<TokenId> ids(logits.size());
    std::iota(ids.begin(), ids.end(), TokenId{0});
    const std::size_t k = std::min(kTopPredictions, ids.size());
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](TokenId x, TokenId y) {
        return logits[x] != logits[y] ? logits[x] > logits[y] : x < y;
    });
    ojson top = ojson::array();
    for (std::size_t r = 0; r < k; ++r) {
        const TokenId id = ids[r];
        top.push_back(ojson{{"token_id", id},
                            {"token", a.bundle->tokenizer->token_bytes(id)},
                            {"logit", round6(logits[id])},
                            {"probability", round6(std::exp(static_cast<double>(logits[id]) - mx) / z)}});
    }
    return ojson{{"run_id", a.run_id},
                 {"model", a.model},
                 {"text", a.text},
                 {"tokens", std::move(tokens)},
                 {"top_predictions", std::move(top)}};
}

ojson graph_payload(const Analysis& a, double threshold, const std::set<std::size_t>& targets) {
    return serialize_graph(build_graph(*a.attributor, threshold, targets), a.capture->token_strings);
}

ojson heads_payload(const Analysis& a, std::size_t layer, std::size_t position) {
    const StepAttribution& step = a.attributor->attention_step(layer, position);
    ojson heads = ojson::array();
    for (std::size_t h = 0; h < a.capture->config.n_head; ++h) {
        heads.push_back(ojson{{"head", h}, {"importance", round6(head_importance(step, h))}});
    }
    return ojson{{"layer", layer},
                 {"position", position},
                 {"heads", std::move(heads)},
                 {"residual", round6(step.residual())},
                 {"bias", round6(step.bias())},
                 {"block", round6(block_importance(step))},
                 {"fallback_uniform", step.fallback_uniform}};
}

ojson attention_map_payload(const Analysis& a, std::size_t layer, std::size_t head) {
    check_head(a, layer, head);
    const std::size_t T = a.capture->n_tokens();
    Tensor m({T, T});
    for (std::size_t i = 0; i < T; ++i) {
        auto row = a.capture->attention_row(layer, head, i);
        std::copy(row.begin(), row.end(), m.row(i).begin());
    }
    return map_payload(a, layer, head, m);
}

ojson contribution_map_payload(const Analysis& a, std::size_t layer, std::size_t head) {
    check_head(a, layer, head);
    return map_payload(a, layer, head, a.attributor->contribution_map(layer, head));
}

ojson neurons_payload(const Analysis& a, std::size_t layer, std::size_t position, std::size_t k) {
    ojson neurons = ojson::array();
    for (const NeuronScore& s : a.attributor->top_neurons(layer, position, k)) {
        neurons.push_back(ojson{{"neuron", s.neuron}, {"score", round6(s.score)}});
    }
    return ojson{{"layer", layer}, {"position", position}, {"k", k}, {"neurons", std::move(neurons)}};
}

ojson lens_payload(const Analysis& a, const NodeId& node, std::size_t k, bool apply_ln) {
    const LensTable t = logit_lens(*a.capture, *a.bundle->params, node, k, apply_ln, a.bundle->tokenizer.get());
    return ojson{{"layer", node.layer},
                 {"point", point_name(node.point)},
                 {"position", node.position},
                 {"k", t.k},
                 {"apply_ln", t.applied_ln},
                 {"entries", entries_json(t)}};
}

ojson projection_payload(const Analysis& a, const Component& component, std::size_t k) {
    const Projection p = update_projection(*a.attributor, component, k, a.bundle->tokenizer.get());
    return ojson{{"component", component_name(component)},
                 {"k", p.promoted.k},
                 {"promoted", entries_json(p.promoted)},
                 {"suppressed", entries_json(p.suppressed)}};
}

std::size_t parse_count(const std::string& s, const std::string& name) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw IndexError("parameter '" + name + "' must be a non-negative integer, got '" + s + "'");
    }
    return v;
}

double parse_real(const std::string& s, const std::string& name) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw IndexError("parameter '" + name + "' must be a number, got '" + s + "'");
    }
    return v;
}

bool parse_bool(const std::string& s, const std::string& name) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw IndexError("parameter '" + name + "' must be true or false, got '" + s + "'");
}

std::set<std::size_t> parse_targets(const std::string& spec, std::size_t n_tokens) {
    std::set<std::size_t> out;
    if (spec == "last") {
        if (n_tokens > 0) out.insert(n_tokens - 1);
        return out;
    }
    if (spec == "all") {
        for (std::size_t t = 0; t < n_tokens; ++t) out.insert(t);
        return out;
    }
    std::stringstream ss(spec);
    for (std::string item; std::getline(ss, item, ',');) {
        const std::size_t t = parse_count(item, "targets");
        if (t >= n_tokens) {
            throw IndexError("target position " + std::to_string(t) + " out of range (T = " +
                             std::to_string(n_tokens) + ")");
        }
        out.insert(t);
    }
    if (out.empty()) throw EmptyTargets("no target positions given");
    return out;
}

std::size_t text_length(const std::string& text) {
    std::size_t n = 0;
    for (unsigned char c : text) {
        if ((c & 0xC0) != 0x80) ++n;
    }
    return n;
}

std::string content_hash(std::initializer_list<std::string_view> parts) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    bool first = true;
    for (std::string_view part : parts) {
        if (!first) h = (h ^ 0u) * 0x100000001b3ULL;
        first = false;
        for (unsigned char c : part) h = (h ^ c) * 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace lmtrace
