#pragma once

// Instrumented forward pass of a pre-LN GPT-2 style decoder:
//
//   x_mid  = x_pre + Attn(LN1(x_pre))
//   x_post = x_mid + FFN(LN2(x_mid))
//   logits = LN_f(x_post[L-1]) * E^T
//
// One call to run() records every tensor that attribution, graph extraction
// and vocabulary projection need; nothing downstream re-runs the model.
// Other architectures plug in by producing the same RunCapture and term sets.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lmtrace/tensor.hpp"
#include "lmtrace/tensor_store.hpp"
#include "lmtrace/tokenizer.hpp"

namespace lmtrace {

struct RunCapture {
    ModelConfig config;
    std::vector<TokenId> tokens;
    std::vector<std::string> token_strings;

    Tensor stream;    // [L+1, T, d]  stream[l] = input of layer l, stream[l+1] = its output
    Tensor mid;       // [L, T, d]    after the attention block
    Tensor attn;      // [L, H, T, T] softmax weights, zero above the diagonal
    Tensor values;    // [L, T, d]    LN1(x) * W_V without bias; head h owns columns of its slice
    Tensor attn_out;  // [L, T, d]    attention block output
    Tensor ffn_pre;   // [L, T, d_ff] before the activation
    Tensor ffn_post;  // [L, T, d_ff] after the activation
    Tensor ffn_out;   // [L, T, d]    FFN block output
    Tensor logits;    // [T, n_vocab]

    std::size_t n_tokens() const noexcept { return tokens.size(); }

    std::span<const float> residual_pre(std::size_t l, std::size_t t) const { return stream.row(l, t); }
    std::span<const float> residual_mid(std::size_t l, std::size_t t) const { return mid.row(l, t); }
    std::span<const float> residual_post(std::size_t l, std::size_t t) const { return stream.row(l + 1, t); }
    std::span<const float> attention_row(std::size_t l, std::size_t h, std::size_t i) const {
        return attn.row(l, h, i);
    }
    std::span<const float> final_logits(std::size_t t) const { return logits.row(t); }
};

// Runs the model once. token_strings come from `tokenizer` when given,
// otherwise they are the decimal ids.
RunCapture run(const ModelParams& params, std::span<const TokenId> tokens, const Tokenizer* tokenizer = nullptr);

// Number of run() calls made by this process.
std::uint64_t forward_pass_count();

// Per-source, per-head decomposition of the attention update at (layer, position i).
struct AttnTermSet {
    std::size_t layer = 0;
    std::size_t position = 0;
    Tensor terms;  // [H, i+1, d]  attn[l][h][i][j] * (values_j slice h) * W_O rows of h
    Tensor bias;   // [d]          b_V * W_O + b_O
};

// Per-neuron decomposition of the FFN update at (layer, position i).
struct FfnTermSet {
    std::size_t layer = 0;
    std::size_t position = 0;
    Tensor terms;  // [d_ff, d]  ffn_post[l][i][n] * W_out row n
    Tensor bias;   // [d]        b_out
};

AttnTermSet attn_terms(const RunCapture& capture, const ModelParams& params, std::size_t layer, std::size_t position);
FfnTermSet ffn_terms(const RunCapture& capture, const ModelParams& params, std::size_t layer, std::size_t position);

// z[h][j] = values[l][j] slice h * W_O rows of h, for j < n_sources. Shape [H, n_sources, d].
// Rows are bitwise independent of n_sources.
Tensor head_value_projection(const RunCapture& capture, const ModelParams& params, std::size_t layer,
                             std::size_t n_sources);

// b_V * W_O + b_O: the attention bias routed through the output projection.
std::vector<float> attention_bias(const ModelParams& params, std::size_t layer);

// Building blocks, exposed for tests.
void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias, float eps,
                std::span<float> out);
float gelu_tanh(float x);

void check_layer_position(const RunCapture& capture, std::size_t layer, std::size_t position);

}  // namespace lmtrace
