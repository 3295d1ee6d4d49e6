#include "lmtrace/transformer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>

#include "lmtrace/errors.hpp"
#include "lmtrace/simd.hpp"

namespace lmtrace {
namespace {

std::atomic<std::uint64_t> g_forward_passes{0};

void add_bias_rows(float* m, std::size_t rows, std::span<const float> bias) {
    const std::size_t cols = bias.size();
    for (std::size_t r = 0; r < rows; ++r) {
        float* row = m + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += bias[c];
    }
}

}  // namespace

std::uint64_t forward_pass_count() { return g_forward_passes.load(std::memory_order_relaxed); }

void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias, float eps,
                std::span<float> out) {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (float v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float v : x) {
        const double c = v - mean;
        var += c * c;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    for (std::size_t k = 0; k < n; ++k) {
        out[k] = static_cast<float>((x[k] - mean) * inv) * gain[k] + bias[k];
    }
}

float gelu_tanh(float x) {
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

void check_layer_position(const RunCapture& capture, std::size_t layer, std::size_t position) {
    if (layer >= capture.config.n_layer) {
        throw IndexError("layer " + std::to_string(layer) + " out of range (n_layer = " +
                         std::to_string(capture.config.n_layer) + ")");
    }
    if (position >= capture.n_tokens()) {
        throw IndexError("position " + std::to_string(position) + " out of range (T = " +
                         std::to_string(capture.n_tokens()) + ")");
    }
}

RunCapture run(const ModelParams& params, std::span<const TokenId> tokens, const Tokenizer* tokenizer) {
    const ModelConfig& cfg = params.config;
    const std::size_t T = tokens.size();
    if (T == 0) throw EmptyInput("cannot run the model on an empty token sequence");
    if (T > cfg.n_ctx) {
        throw ContextOverflow(std::to_string(T) + " tokens exceed the context of " + std::to_string(cfg.n_ctx));
    }
    for (TokenId id : tokens) {
        if (id >= cfg.n_vocab) throw UnknownTokenId("token id " + std::to_string(id) + " outside vocabulary");
    }
    g_forward_passes.fetch_add(1, std::memory_order_relaxed);

    const simd::Kernels& k = simd::kernels();
    const std::size_t L = cfg.n_layer, H = cfg.n_head, d = cfg.d_model, f = cfg.d_ff, dh = cfg.d_head();

    RunCapture cap;
    cap.config = cfg;
    cap.tokens.assign(tokens.begin(), tokens.end());
    cap.token_strings.reserve(T);
    for (TokenId id : tokens) {
        cap.token_strings.push_back(tokenizer ? tokenizer->token_bytes(id) : std::to_string(id));
    }
    cap.stream = Tensor({L + 1, T, d});
    cap.mid = Tensor({L, T, d});
    cap.attn = Tensor({L, H, T, T});
    cap.values = Tensor({L, T, d});
    cap.attn_out = Tensor({L, T, d});
    cap.ffn_pre = Tensor({L, T, f});
    cap.ffn_post = Tensor({L, T, f});
    cap.ffn_out = Tensor({L, T, d});
    cap.logits = Tensor({T, cfg.n_vocab});

    for (std::size_t t = 0; t < T; ++t) {
        auto x = cap.stream.row(0, t);
        auto te = params.token_embedding.row(tokens[t]);
        auto pe = params.position_embedding.row(t);
        for (std::size_t c = 0; c < d; ++c) x[c] = te[c] + pe[c];
    }

    std::vector<float> normed(T * d), q(T * d), kmat(T * d), v(T * d), z(T * d), normed2(T * d);
    std::vector<float> scores(T);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    for (std::size_t l = 0; l < L; ++l) {
        const LayerParams& lp = params.layers[l];
        const float* x = cap.stream.row(l, 0).data();

        for (std::size_t t = 0; t < T; ++t) {
            layer_norm({x + t * d, d}, lp.ln1_gain.flat(), lp.ln1_bias.flat(), cfg.ln_eps, {normed.data() + t * d, d});
        }
        k.gemm_nn(T, d, d, normed.data(), d, lp.w_q.data(), d, q.data(), d);
        k.gemm_nn(T, d, d, normed.data(), d, lp.w_k.data(), d, kmat.data(), d);
        float* vals = cap.values.row(l, 0).data();
        k.gemm_nn(T, d, d, normed.data(), d, lp.w_v.data(), d, vals, d);
        add_bias_rows(q.data(), T, lp.b_q.flat());
        add_bias_rows(kmat.data(), T, lp.b_k.flat());
        std::memcpy(v.data(), vals, T * d * sizeof(float));
        add_bias_rows(v.data(), T, lp.b_v.flat());

        std::fill(z.begin(), z.end(), 0.0f);
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * dh;
            for (std::size_t i = 0; i < T; ++i) {
                float mx = -std::numeric_limits<float>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    scores[j] = k.dot(q.data() + i * d + off, kmat.data() + j * d + off, dh) * scale;
                    mx = std::max(mx, scores[j]);
                }
                double sum = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    scores[j] = std::exp(scores[j] - mx);
                    sum += scores[j];
                }
                auto arow = cap.attn.row(l, h, i);
                const float inv = static_cast<float>(1.0 / sum);
                for (std::size_t j = 0; j <= i; ++j) arow[j] = scores[j] * inv;
                float* zi = z.data() + i * d + off;
                for (std::size_t j = 0; j <= i; ++j) k.axpy(zi, arow[j], v.data() + j * d + off, dh);
            }
        }

        float* aout = cap.attn_out.row(l, 0).data();
        k.gemm_nn(T, d, d, z.data(), d, lp.w_o.data(), d, aout, d);
        add_bias_rows(aout, T, lp.b_o.flat());

        float* xm = cap.mid.row(l, 0).data();
        for (std::size_t e = 0; e < T * d; ++e) xm[e] = x[e] + aout[e];

        for (std::size_t t = 0; t < T; ++t) {
            layer_norm({xm + t * d, d}, lp.ln2_gain.flat(), lp.ln2_bias.flat(), cfg.ln_eps,
                       {normed2.data() + t * d, d});
        }
        float* pre = cap.ffn_pre.row(l, 0).data();
        float* post = cap.ffn_post.row(l, 0).data();
        k.gemm_nn(T, f, d, normed2.data(), d, lp.w_in.data(), f, pre, f);
        add_bias_rows(pre, T, lp.b_in.flat());
        for (std::size_t e = 0; e < T * f; ++e) post[e] = gelu_tanh(pre[e]);

        float* fout = cap.ffn_out.row(l, 0).data();
        k.gemm_nn(T, d, f, post, f, lp.w_out.data(), d, fout, d);
        add_bias_rows(fout, T, lp.b_out.flat());

        float* xp = cap.stream.row(l + 1, 0).data();
        for (std::size_t e = 0; e < T * d; ++e) xp[e] = xm[e] + fout[e];
    }

    const float* top = cap.stream.row(L, 0).data();
    for (std::size_t t = 0; t < T; ++t) {
        layer_norm({top + t * d, d}, params.lnf_gain.flat(), params.lnf_bias.flat(), cfg.ln_eps,
                   {normed.data() + t * d, d});
    }
    k.gemm_nt(T, cfg.n_vocab, d, normed.data(), d, params.token_embedding.data(), d, cap.logits.data(),
              cfg.n_vocab);
    return cap;
}

Tensor head_value_projection(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                             std::size_t n_sources) {
    const std::size_t H = capture.config.n_head, d = capture.config.d_model, dh = capture.config.d_head();
    if (layer >= capture.config.n_layer || n_sources > capture.n_tokens()) {
        throw IndexError("head projection request outside the capture");
    }
    Tensor z({H, n_sources, d});
    if (n_sources == 0) return z;
    const simd::Kernels& k = simd::kernels();
    const float* vals = capture.values.row(layer, 0).data();
    const float* w_o = params.layers[layer].w_o.data();
    for (std::size_t h = 0; h < H; ++h) {
        k.gemm_nn(n_sources, d, dh, vals + h * dh, d, w_o + h * dh * d, d, z.row(h, 0).data(), d);
    }
    return z;
}

std::vector<float> attention_bias(const ModelParams& params, std::size_t layer) {
    const LayerParams& lp = params.layers.at(layer);
    const std::size_t d = params.config.d_model;
    std::vector<float> b(d);
    simd::kernels().gemm_nn(1, d, d, lp.b_v.data(), d, lp.w_o.data(), d, b.data(), d);
    for (std::size_t c = 0; c < d; ++c) b[c] += lp.b_o.data()[c];
    return b;
}

AttnTermSet attn_terms(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                       std::size_t position) {
    check_layer_position(capture, layer, position);
    const std::size_t H = capture.config.n_head, d = capture.config.d_model;
    const std::size_t n_src = position + 1;

    AttnTermSet out;
    out.layer = layer;
    out.position = position;
    out.terms = head_value_projection(capture, params, layer, n_src);
    for (std::size_t h = 0; h < H; ++h) {
        auto arow = capture.attention_row(layer, h, position);
        for (std::size_t j = 0; j < n_src; ++j) {
            auto t = out.terms.row(h, j);
            for (std::size_t c = 0; c < d; ++c) t[c] *= arow[j];
        }
    }
    out.bias = Tensor({d}, attention_bias(params, layer));
    return out;
}

FfnTermSet ffn_terms(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                     std::size_t position) {
    check_layer_position(capture, layer, position);
    const std::size_t f = capture.config.d_ff, d = capture.config.d_model;
    const LayerParams& lp = params.layers[layer];
    auto act = capture.ffn_post.row(layer, position);

    FfnTermSet out;
    out.layer = layer;
    out.position = position;
    out.terms = Tensor({f, d});
    for (std::size_t n = 0; n < f; ++n) {
        auto w = lp.w_out.row(n);
        auto t = out.terms.row(n);
        for (std::size_t c = 0; c < d; ++c) t[c] = act[n] * w[c];
    }
    out.bias = lp.b_out;
    return out;
}

}  // namespace lmtrace
