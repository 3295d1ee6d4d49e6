#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>
#include <unistd.h>

#include "lmtrace/model_bundle.hpp"

namespace lmtrace::testing {

namespace fs = std::filesystem;

TempDir::TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "lmtrace-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

ModelConfig toy_config(std::size_t n_layer, std::size_t n_head, std::size_t d_model, std::size_t n_vocab,
                       std::size_t n_ctx) {
    ModelConfig c;
    c.n_layer = n_layer;
    c.n_head = n_head;
    c.d_model = d_model;
    c.d_ff = 4 * d_model;
    c.n_vocab = n_vocab;
    c.n_ctx = n_ctx;
    return c;
}

ModelParams random_params(const ModelConfig& config, std::uint64_t seed, float scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    auto matrix = [&](Shape shape, float s) {
        Tensor t(shape);
        for (float& v : t.flat()) v = s * normal(rng);
        return t;
    };
    auto gain = [&](std::size_t n) {
        Tensor t({n});
        for (float& v : t.flat()) v = 1.0f + 0.1f * normal(rng);
        return t;
    };
    const std::size_t d = config.d_model, f = config.d_ff;
    ModelParams p;
    p.config = config;
    p.token_embedding = matrix({config.n_vocab, d}, 1.0f);
    p.position_embedding = matrix({config.n_ctx, d}, 0.5f);
    p.lnf_gain = gain(d);
    p.lnf_bias = matrix({d}, 0.1f);
    for (std::size_t l = 0; l < config.n_layer; ++l) {
        LayerParams lp;
        lp.ln1_gain = gain(d);
        lp.ln1_bias = matrix({d}, 0.1f);
        lp.w_q = matrix({d, d}, scale);
        lp.w_k = matrix({d, d}, scale);
        lp.w_v = matrix({d, d}, scale);
        lp.b_q = matrix({d}, 0.1f);
        lp.b_k = matrix({d}, 0.1f);
        lp.b_v = matrix({d}, 0.1f);
        lp.w_o = matrix({d, d}, scale);
        lp.b_o = matrix({d}, 0.1f);
        lp.ln2_gain = gain(d);
        lp.ln2_bias = matrix({d}, 0.1f);
        lp.w_in = matrix({d, f}, scale);
        lp.b_in = matrix({f}, 0.1f);
        lp.w_out = matrix({f, d}, scale);
        lp.b_out = matrix({d}, 0.1f);
        p.layers.push_back(std::move(lp));
    }
    return p;
}

std::vector<TokenId> random_tokens(std::size_t n, std::size_t n_vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<TokenId> pick(0, static_cast<TokenId>(n_vocab - 1));
    std::vector<TokenId> out(n);
    for (auto& t : out) t = pick(rng);
    return out;
}

namespace {

std::string utf8(char32_t cp) {
    std::string s;
    if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
    return s;
}

}  // namespace

std::vector<std::string> byte_symbols() {
    std::vector<std::string> table(256);
    std::vector<bool> printable(256, false);
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) table[b] = utf8(printable[b] ? static_cast<char32_t>(b) : next++);
    return table;
}

std::vector<std::pair<std::string, std::string>> toy_merges() {
    // Symbols: "Ġ" is the mapped space.
    return {{"Ġ", "t"}, {"h", "e"}, {"Ġt", "he"}, {"i", "n"}};
}

std::size_t toy_vocab_size() { return 256 + toy_merges().size(); }

std::string toy_vocab_json() {
    nlohmann::ordered_json v = nlohmann::ordered_json::object();
    const auto symbols = byte_symbols();
    for (int b = 0; b < 256; ++b) v[symbols[b]] = b;
    int id = 256;
    for (const auto& [a, b] : toy_merges()) v[a + b] = id++;
    return v.dump();
}

std::string toy_merges_txt() {
    std::string s = "#version: 0.2\n";
    for (const auto& [a, b] : toy_merges()) s += a + " " + b + "\n";
    return s;
}

Tokenizer toy_tokenizer() { return Tokenizer::from_text(toy_vocab_json(), toy_merges_txt()); }

void write_model_dir(const fs::path& dir, const ModelParams& params, DType dtype) {
    fs::create_directories(dir);
    write_archive(dir / "model.safetensors", export_model(params, dtype));
    std::ofstream(dir / "config.json") << sidecar_json(params.config).dump(2);
    std::ofstream(dir / "vocab.json") << toy_vocab_json();
    std::ofstream(dir / "merges.txt") << toy_merges_txt();
}

NaiveRun naive_forward(const ModelParams& p, const std::vector<TokenId>& tokens) {
    using Vec = std::vector<double>;
    const auto& c = p.config;
    const std::size_t T = tokens.size(), d = c.d_model, H = c.n_head, dh = d / H, f = c.d_ff;

    auto ln = [&](const Vec& x, const Tensor& g, const Tensor& b) {
        double mean = 0, var = 0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(d);
        for (double v : x) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(c.ln_eps));
        Vec y(d);
        for (std::size_t e = 0; e < d; ++e) y[e] = (x[e] - mean) * inv * g.flat()[e] + b.flat()[e];
        return y;
    };
    auto affine = [](const Vec& x, const Tensor& w, const Tensor& b) {
        const std::size_t n_in = w.shape()[0], n_out = w.shape()[1];
        Vec y(n_out);
        for (std::size_t o = 0; o < n_out; ++o) {
            double s = b.flat()[o];
            for (std::size_t i = 0; i < n_in; ++i) s += x[i] * w.flat()[i * n_out + o];
            y[o] = s;
        }
        return y;
    };

    NaiveRun r;
    std::vector<Vec> x(T, Vec(d));
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t e = 0; e < d; ++e) {
            x[t][e] = static_cast<double>(p.token_embedding.flat()[tokens[t] * d + e]) +
                      p.position_embedding.flat()[t * d + e];
        }
    }
    r.stream.push_back(x);
    for (const LayerParams& lp : p.layers) {
        std::vector<Vec> q(T), k(T), v(T);
        for (std::size_t t = 0; t < T; ++t) {
            const Vec h = ln(x[t], lp.ln1_gain, lp.ln1_bias);
            q[t] = affine(h, lp.w_q, lp.b_q);
            k[t] = affine(h, lp.w_k, lp.b_k);
            v[t] = affine(h, lp.w_v, lp.b_v);
        }
        std::vector<Vec> mid = x;
        for (std::size_t i = 0; i < T; ++i) {
            Vec heads(d, 0.0);
            for (std::size_t h = 0; h < H; ++h) {
                Vec s(i + 1);
                double mx = -1e300;
                for (std::size_t j = 0; j <= i; ++j) {
                    double dotp = 0;
                    for (std::size_t e = 0; e < dh; ++e) dotp += q[i][h * dh + e] * k[j][h * dh + e];
                    s[j] = dotp / std::sqrt(static_cast<double>(dh));
                    mx = std::max(mx, s[j]);
                }
                double z = 0;
                for (double& sj : s) z += (sj = std::exp(sj - mx));
                for (std::size_t j = 0; j <= i; ++j) {
                    for (std::size_t e = 0; e < dh; ++e) heads[h * dh + e] += s[j] / z * v[j][h * dh + e];
                }
            }
            const Vec out = affine(heads, lp.w_o, lp.b_o);
            for (std::size_t e = 0; e < d; ++e) mid[i][e] += out[e];
        }
        r.mid.push_back(mid);
        for (std::size_t t = 0; t < T; ++t) {
            Vec a = affine(ln(mid[t], lp.ln2_gain, lp.ln2_bias), lp.w_in, lp.b_in);
            for (std::size_t n = 0; n < f; ++n) {
                const double u = a[n];
                a[n] = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
            }
            const Vec out = affine(a, lp.w_out, lp.b_out);
            for (std::size_t e = 0; e < d; ++e) x[t][e] = mid[t][e] + out[e];
        }
        r.stream.push_back(x);
    }
    for (std::size_t t = 0; t < T; ++t) {
        const Vec h = ln(x[t], p.lnf_gain, p.lnf_bias);
        Vec lg(c.n_vocab);
        for (std::size_t w = 0; w < c.n_vocab; ++w) {
            double s = 0;
            for (std::size_t e = 0; e < d; ++e) s += h[e] * p.token_embedding.flat()[w * d + e];
            lg[w] = s;
        }
        r.logits.push_back(std::move(lg));
    }
    return r;
}

fs::path reference_dir() {
    const char* env = std::getenv("LMTRACE_REFERENCE_DIR");
    if (env != nullptr && fs::exists(fs::path(env) / "reference.json")) return env;
#ifdef LMTRACE_DEFAULT_REFERENCE_DIR
    if (fs::exists(fs::path(LMTRACE_DEFAULT_REFERENCE_DIR) / "reference.json")) return LMTRACE_DEFAULT_REFERENCE_DIR;
#endif
    return {};
}

fs::path source_dir() { return LMTRACE_SOURCE_DIR; }

std::size_t full_cone_edges(std::size_t L, std::size_t t) { return (t + 4) + (L - 1) * (t + 1) * (t + 8) / 2; }
std::size_t full_cone_nodes(std::size_t L, std::size_t t) { return 2 + 2 * (L - 1) * (t + 1) + (t + 1); }

std::set<EdgeKey> edge_keys(const FlowGraph& g) {
    std::set<EdgeKey> out;
    for (const FlowEdge& e : g.edges) out.insert({e.src, e.dst, e.kind});
    return out;
}

std::set<EdgeKey> filter_graph(const FlowGraph& full, double tau) {
    std::map<NodeId, std::vector<const FlowEdge*>> into;
    for (const FlowEdge& e : full.edges) {
        if (e.kind == EdgeKind::Residual || e.weight >= tau) into[e.dst].push_back(&e);
    }
    std::set<EdgeKey> out;
    std::set<NodeId> seen;
    std::vector<NodeId> stack;
    const std::size_t top = full.nodes.back().layer;
    for (std::size_t t : full.targets) stack.push_back(NodeId::post(top, t));
    while (!stack.empty()) {
        const NodeId n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        for (const FlowEdge* e : into[n]) {
            out.insert({e->src, e->dst, e->kind});
            stack.push_back(e->src);
        }
    }
    return out;
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
    double m = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
    }
    return a.size() == b.size() ? m : INFINITY;
}

}  // namespace lmtrace::testing
