// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// "GPT-2 small" checks run on the checkpoint in the reference directory
// (LMTRACE_REFERENCE_DIR, generated by tools/reference/make_reference.py).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "lmtrace/errors.hpp"
#include "lmtrace/service.hpp"
#include "lmtrace/simd.hpp"

using namespace lmtrace;
using namespace lmtrace::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
}

struct Case {
    std::shared_ptr<const ModelParams> params;
    std::shared_ptr<const RunCapture> capture;
    std::shared_ptr<const Attributor> attributor;
    std::string label;
};

// 50 toy models drawn from L in {1..3}, H in {1,2,4}, d in {8,16}, T in {1..8}.
const std::vector<Case>& toy_cases() {
    static const std::vector<Case> cases = [] {
        std::vector<Case> out;
        std::mt19937_64 rng(2024);
        for (int m = 0; m < 50; ++m) {
            const std::size_t L = 1 + rng() % 3, H = std::array<std::size_t, 3>{1, 2, 4}[rng() % 3];
            const std::size_t d = rng() % 2 ? 16 : 8, T = 1 + rng() % 8;
            Case c;
            c.params = std::make_shared<const ModelParams>(random_params(toy_config(L, H, d), rng()));
            c.capture = std::make_shared<const RunCapture>(run(*c.params, random_tokens(T, c.params->config.n_vocab, rng())));
            c.attributor = std::make_shared<const Attributor>(c.params, c.capture);
            c.label = "toy#" + std::to_string(m);
            out.push_back(std::move(c));
        }
        return out;
    }();
    return cases;
}

struct Reference {
    std::shared_ptr<const ModelBundle> bundle;
    nlohmann::json prompts;
    std::vector<float> logits;  // [n_prompts, V]
};

const Reference* reference() {
    static const std::optional<Reference> ref = []() -> std::optional<Reference> {
        const fs::path dir = reference_dir();
        if (dir.empty()) return std::nullopt;
        Reference r;
        r.bundle = std::make_shared<const ModelBundle>(load_model_dir("gpt2", dir));
        std::ifstream in(dir / "reference.json");
        r.prompts = nlohmann::json::parse(in)["prompts"];
        const std::size_t V = r.bundle->params->config.n_vocab;
        r.logits.resize(r.prompts.size() * V);
        std::ifstream raw(dir / "reference_logits.f32", std::ios::binary);
        raw.read(reinterpret_cast<char*>(r.logits.data()), static_cast<std::streamsize>(r.logits.size() * 4));
        if (!raw) throw std::runtime_error("reference_logits.f32 is truncated");
        return r;
    }();
    return ref ? &*ref : nullptr;
}

const std::vector<Case>& gpt2_cases(std::size_t n) {
    static std::vector<Case> cases;
    const Reference* ref = reference();
    if (ref == nullptr) throw std::runtime_error("reference checkpoint not generated (set LMTRACE_REFERENCE_DIR)");
    while (cases.size() < std::min(n, ref->prompts.size())) {
        const std::string text = ref->prompts[cases.size()]["text"];
        Case c;
        c.params = ref->bundle->params;
        c.capture = std::make_shared<const RunCapture>(
            run(*c.params, ref->bundle->tokenizer->encode(text), ref->bundle->tokenizer.get()));
        c.attributor = std::make_shared<const Attributor>(c.params, c.capture);
        c.label = "gpt2: " + text;
        cases.push_back(std::move(c));
    }
    return cases;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// Max-abs residual of the term sets and of layer-by-layer telescoping for one run.
double reconstruction_error(const Case& c) {
    const RunCapture& cap = *c.capture;
    const ModelParams& p = *c.params;
    const std::size_t L = cap.config.n_layer, T = cap.n_tokens(), d = cap.config.d_model;
    double worst = 0;
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < T; ++i) {
            const AttnTermSet a = attn_terms(cap, p, l, i);
            const FfnTermSet f = ffn_terms(cap, p, l, i);
            for (std::size_t e = 0; e < d; ++e) {
                double s = static_cast<double>(cap.residual_pre(l, i)[e]) + a.bias.flat()[e];
                for (std::size_t h = 0; h < cap.config.n_head; ++h) {
                    for (std::size_t j = 0; j <= i; ++j) s += a.terms.at(h, j, e);
                }
                worst = std::max(worst, std::abs(s - cap.residual_mid(l, i)[e]));
                double u = static_cast<double>(cap.residual_mid(l, i)[e]) + f.bias.flat()[e];
                for (std::size_t n = 0; n < cap.config.d_ff; ++n) u += f.terms.at(n, e);
                worst = std::max(worst, std::abs(u - cap.residual_post(l, i)[e]));
            }
        }
    }
    // Telescoping: embedding + every block output = final residual.
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t e = 0; e < d; ++e) {
            double x = cap.residual_pre(0, i)[e];
            for (std::size_t l = 0; l < L; ++l) x += static_cast<double>(cap.attn_out.at(l, i, e)) + cap.ffn_out.at(l, i, e);
            worst = std::max(worst, std::abs(x - cap.residual_post(L - 1, i)[e]));
        }
    }
    return worst;
}

Outcome attribution_checks(const Case& c) {
    const RunCapture& cap = *c.capture;
    const std::size_t L = cap.config.n_layer, T = cap.n_tokens(), H = cap.config.n_head;
    double sum_err = 0, agg_err = 0, map_err = 0, scale_err = 0;
    bool in_range = true;
    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t i = 0; i < T; ++i) {
            for (const StepAttribution* s : {&c.attributor->attention_step(l, i), &c.attributor->ffn_step(l, i)}) {
                double total = 0;
                for (double v : s->scores) {
                    in_range &= v >= 0.0 && v <= 1.0;
                    total += v;
                }
                sum_err = std::max(sum_err, std::abs(total - 1.0));
            }
            const StepAttribution& a = c.attributor->attention_step(l, i);
            double heads = 0, tokens = 0;
            for (std::size_t h = 0; h < H; ++h) heads += head_importance(a, h);
            for (std::size_t j = 0; j <= i; ++j) tokens += edge_importance(a, j);
            agg_err = std::max({agg_err, std::abs(block_importance(a) - heads), std::abs(block_importance(a) - tokens)});

            // x10 scaling of the whole decomposition.
            const AttnTermSet ts = attn_terms(cap, *c.params, l, i);
            TermDecomposition dec, big;
            auto y = cap.residual_mid(l, i);
            dec.target.assign(y.begin(), y.end());
            dec.labels = a.labels;
            dec.terms = Tensor({a.labels.size(), cap.config.d_model});
            auto pre = cap.residual_pre(l, i);
            std::copy(pre.begin(), pre.end(), dec.terms.row(0).begin());
            for (std::size_t k = 1; k + 1 < a.labels.size(); ++k) {
                auto t = ts.terms.row(a.labels[k].head, a.labels[k].index);
                std::copy(t.begin(), t.end(), dec.terms.row(k).begin());
            }
            std::copy(ts.bias.flat().begin(), ts.bias.flat().end(), dec.terms.row(a.labels.size() - 1).begin());
            big = dec;
            for (float& v : big.target) v *= 10.0f;
            for (float& v : big.terms.flat()) v *= 10.0f;
            const StepAttribution s1 = contributions(dec), s10 = contributions(big);
            for (std::size_t k = 0; k < s1.scores.size(); ++k) {
                scale_err = std::max(scale_err, std::abs(s1.scores[k] - s10.scores[k]));
            }
        }
        for (std::size_t h = 0; h < H; ++h) {
            const Tensor m = c.attributor->contribution_map(l, h);
            for (std::size_t i = 0; i < T; ++i) {
                double row = 0;
                for (std::size_t j = 0; j < T; ++j) row += m.at(i, j);
                map_err = std::max(map_err, std::abs(row - head_importance(c.attributor->attention_step(l, i), h)));
            }
        }
    }
    const bool pass = in_range && sum_err <= 1e-6 && agg_err <= 1e-6 && map_err <= 1e-6 && scale_err <= 1e-6;
    return {pass, c.label + " sum " + fmt("%.2e", sum_err) + " agg " + fmt("%.2e", agg_err) + " map " +
                      fmt("%.2e", map_err) + " scale " + fmt("%.2e", scale_err) + (in_range ? "" : " out-of-range")};
}

Outcome graph_checks(const Case& c) {
    const std::size_t L = c.capture->config.n_layer, T = c.capture->n_tokens(), t = T - 1;
    const FlowGraph full = build_graph(*c.attributor, 0.0, {t});
    if (full.edges.size() != full_cone_edges(L, t)) {
        return {false, c.label + ": tau=0 has " + std::to_string(full.edges.size()) + " edges, expected " +
                           std::to_string(full_cone_edges(L, t))};
    }
    std::set<EdgeKey> prev;
    for (int q = 0; q < 10; ++q) {
        const double tau = q / 9.0;
        const FlowGraph g = build_graph(*c.attributor, tau, {t});
        const auto cur = edge_keys(g);
        if (q > 0 && !std::includes(prev.begin(), prev.end(), cur.begin(), cur.end())) {
            return {false, c.label + ": edges grew at tau " + fmt("%.3f", tau)};
        }
        if (cur != filter_graph(full, tau)) return {false, c.label + ": filter oracle differs at tau " + fmt("%.3f", tau)};
        prev = cur;
    }
    return {true, ""};
}

double kl_final_lens(const Case& c, std::size_t t) {
    const std::size_t V = c.capture->config.n_vocab, L = c.capture->config.n_layer;
    const LensTable lens = logit_lens(*c.capture, *c.params, NodeId::post(L - 1, t), V, true);
    std::vector<double> q(V);
    for (const LensEntry& e : lens.entries) q[e.token] = e.score;
    auto p_logits = c.capture->final_logits(t);
    auto normalize = [](std::vector<double> x) {
        const double mx = *std::max_element(x.begin(), x.end());
        double z = 0;
        for (double& v : x) z += (v = std::exp(v - mx));
        for (double& v : x) v /= z;
        return x;
    };
    const auto P = normalize({p_logits.begin(), p_logits.end()});
    const auto Q = normalize(q);
    double kl = 0;
    for (std::size_t w = 0; w < V; ++w) {
        if (P[w] > 0) kl += P[w] * std::log(P[w] / Q[w]);
    }
    return kl;
}

bool antisymmetric(const Case& c, const Component& comp) {
    auto delta = component_update(*c.attributor, comp);
    const Projection a = project_update(*c.params, delta, 10);
    for (float& v : delta) v = -v;
    const Projection b = project_update(*c.params, delta, 10);
    for (std::size_t k = 0; k < a.promoted.entries.size(); ++k) {
        if (a.promoted.entries[k].token != b.suppressed.entries[k].token) return false;
        if (a.suppressed.entries[k].token != b.promoted.entries[k].token) return false;
        if (a.promoted.entries[k].score != -b.suppressed.entries[k].score) return false;
    }
    return true;
}

}  // namespace

int main() {
    report("reconstruction", [] {
        double toy = 0, gpt = 0;
        for (const Case& c : toy_cases()) toy = std::max(toy, reconstruction_error(c));
        for (const Case& c : gpt2_cases(10)) gpt = std::max(gpt, reconstruction_error(c));
        return Outcome{toy <= 1e-4 && gpt <= 1e-4, "max-abs toy(50) " + fmt("%.2e", toy) + ", gpt2(10 prompts) " +
                                                        fmt("%.2e", gpt) + " (tol 1e-4)"};
    });

    report("attribution", [] {
        for (const Case& c : toy_cases()) {
            if (Outcome o = attribution_checks(c); !o.pass) return o;
        }
        Outcome o = attribution_checks(gpt2_cases(1)[0]);
        if (o.pass) o.detail = "50 toy models + gpt2 within 1e-6; last: " + o.detail;
        return o;
    });

    report("oracle_parity", [] {
        const Reference* ref = reference();
        if (ref == nullptr) throw std::runtime_error("reference checkpoint not generated");
        const std::size_t V = ref->bundle->params->config.n_vocab;
        std::size_t agree = 0;
        double min_cos = 1.0;
        const auto& cases = gpt2_cases(ref->prompts.size());
        for (std::size_t q = 0; q < cases.size(); ++q) {
            const auto& cap = *cases[q].capture;
            if (cap.tokens != ref->prompts[q]["ids"].get<std::vector<TokenId>>()) {
                return Outcome{false, "token ids differ for prompt " + std::to_string(q)};
            }
            auto ours = cap.final_logits(cap.n_tokens() - 1);
            const float* theirs = ref->logits.data() + q * V;
            const auto best = static_cast<std::size_t>(std::max_element(ours.begin(), ours.end()) - ours.begin());
            agree += best == ref->prompts[q]["argmax"].get<std::size_t>();
            double dot = 0, na = 0, nb = 0;
            for (std::size_t w = 0; w < V; ++w) {
                dot += static_cast<double>(ours[w]) * theirs[w];
                na += static_cast<double>(ours[w]) * ours[w];
                nb += static_cast<double>(theirs[w]) * theirs[w];
            }
            min_cos = std::min(min_cos, dot / std::sqrt(na * nb));
        }
        return Outcome{agree == cases.size() && cases.size() == 20 && min_cos >= 0.9999,
                       std::to_string(agree) + "/" + std::to_string(cases.size()) + " argmax, min cosine " +
                           fmt("%.8f", min_cos)};
    });

    report("graph", [] {
        std::size_t n = 0;
        for (const Case& c : toy_cases()) {
            if (Outcome o = graph_checks(c); !o.pass) return o;
            ++n;
        }
        if (Outcome o = graph_checks(gpt2_cases(1)[0]); !o.pass) return o;
        return Outcome{true, "full-cone count, 10-point monotonicity, filter oracle on " + std::to_string(n) +
                                 " toy models + gpt2"};
    });

    report("lens", [] {
        double worst = 0;
        bool anti = true;
        for (const Case& c : toy_cases()) {
            for (std::size_t t = 0; t < c.capture->n_tokens(); ++t) worst = std::max(worst, kl_final_lens(c, t));
            const std::size_t i = c.capture->n_tokens() - 1;
            anti &= antisymmetric(c, Component::block(0, Point::Mid, i));
            anti &= antisymmetric(c, Component::block(0, Point::Post, i));
            anti &= antisymmetric(c, Component::attention_head(0, 0, i));
            anti &= antisymmetric(c, Component::ffn_neuron(0, 3, i));
        }
        const Case& g = gpt2_cases(1)[0];
        worst = std::max(worst, kl_final_lens(g, g.capture->n_tokens() - 1));
        anti &= antisymmetric(g, Component::attention_head(5, 3, g.capture->n_tokens() - 1));
        anti &= antisymmetric(g, Component::ffn_neuron(11, 100, g.capture->n_tokens() - 1));
        return Outcome{worst <= 1e-6 && anti,
                       "max KL " + fmt("%.2e", worst) + " (tol 1e-6), antisymmetry " + (anti ? "holds" : "broken")};
    });

    report("single_pass", [] {
        TempDir dir;
        write_model_dir(dir.path() / "toy", random_params(toy_config(2, 2, 16, toy_vocab_size()), 3));
        Service s(parse_service_config(R"({"max_user_string_length": 100, "models": {"toy": "toy"}})", dir.path()));
        std::string detail;
        for (const char* text : {"the cat in the hat", "in the beginning"}) {
            const auto before = forward_pass_count();
            const auto r = s.handle("POST", "/runs", {}, ojson{{"model", "toy"}, {"text", text}}.dump());
            const std::string id = ojson::parse(r.body)["run_id"];
            const std::size_t T = ojson::parse(r.body)["tokens"].size();
            std::size_t requests = 1;
            auto get = [&](const std::string& what, Service::Query q) {
                ++requests;
                if (s.handle("GET", "/runs/" + id + "/" + what, q, "").status != 200) throw std::runtime_error(what);
            };
            for (const char* tau : {"0", "0.04", "0.3", "1"}) get("graph", {{"threshold", tau}, {"targets", "all"}});
            for (std::size_t l = 0; l < 2; ++l) {
                for (std::size_t i = 0; i < T; ++i) {
                    const std::string L = std::to_string(l), I = std::to_string(i);
                    get("heads", {{"layer", L}, {"position", I}});
                    get("neurons", {{"layer", L}, {"position", I}});
                    get("lens", {{"layer", L}, {"point", "mid"}, {"position", I}});
                    get("projection", {{"component", "head:" + L + ":1:" + I}});
                }
                for (const char* h : {"0", "1"}) {
                    get("attention_map", {{"layer", std::to_string(l)}, {"head", h}});
                    get("contribution_map", {{"layer", std::to_string(l)}, {"head", h}});
                }
            }
            s.handle("POST", "/runs", {}, ojson{{"model", "toy"}, {"text", text}}.dump());
            ++requests;
            const auto passes = forward_pass_count() - before;
            if (!detail.empty()) detail += ", ";
            detail += std::to_string(passes) + " pass(es) for " + std::to_string(requests) + " requests";
            if (passes != 1) return Outcome{false, detail};
        }
        return Outcome{true, detail};
    });

    report("performance", [] {
        const Reference* ref = reference();
        if (ref == nullptr) throw std::runtime_error("reference checkpoint not generated");
        std::vector<TokenId> tokens = ref->bundle->tokenizer->encode(
            "The quick brown fox jumps over the lazy dog while the capital of France is Paris and the river "
            "Seine flows through it toward");
        tokens.resize(32, tokens.back());
        const auto t0 = std::chrono::steady_clock::now();
        auto cap = std::make_shared<const RunCapture>(run(*ref->bundle->params, tokens, ref->bundle->tokenizer.get()));
        Attributor attr(ref->bundle->params, cap);
        const FlowGraph g = build_graph(attr, kDefaultThreshold, {31});
        double sink = 0;
        for (std::size_t l = 0; l < cap->config.n_layer; ++l) {
            const StepAttribution& s = attr.attention_step(l, 31);
            for (std::size_t h = 0; h < cap->config.n_head; ++h) sink += head_importance(s, h);
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return Outcome{secs <= 5.0, fmt("%.2f s", secs) + " for 32-token forward + graph (" +
                                        std::to_string(g.edges.size()) + " edges) + 12 layers of head importances " +
                                        "on " + std::string(simd::isa_name(simd::kernels().isa)) + " (limit 5 s)" +
                                        (sink >= 0 ? "" : "?")};
    });

    report("tokenizer", [] {
        const Tokenizer tok =
            Tokenizer::load(source_dir() / "data/gpt2/vocab.json", source_dir() / "data/gpt2/merges.txt");
        std::ifstream in(source_dir() / "tests/data/tokenizer_corpus.jsonl");
        std::size_t total = 0, agree = 0;
        for (std::string line; std::getline(in, line);) {
            const auto j = nlohmann::json::parse(line);
            ++total;
            agree += tok.encode(j["text"].get<std::string>()) == j["ids"].get<std::vector<TokenId>>();
        }
        return Outcome{total == 1000 && agree == total, std::to_string(agree) + "/" + std::to_string(total) +
                                                            " sentences match the reference tokenizer"};
    });

    return failures == 0 ? 0 : 1;
}
