#pragma once

// Tensor archive I/O and GPT-2 parameter loading.
//
// Archive layout (little-endian):
//   u64 N | N bytes of UTF-8 JSON header | raw data region
// The header maps each tensor name to {"dtype", "shape", "data_offsets"}, where
// data_offsets = [begin, end) relative to the start of the data region. An
// optional "__metadata__" entry holds string pairs and is ignored on read.
// Supported dtypes: "F32", "F16" (widened to f32 on load).
//
// Parameter names (an optional "transformer." prefix is accepted):
//
//   wte.weight               [n_vocab, d_model]   token embedding, also unembedding^T
//   wpe.weight               [n_ctx, d_model]     learned positions
//   h.{l}.ln_1.weight/bias   [d_model]
//   h.{l}.attn.c_attn.weight [d_model, 3*d_model] fused q|k|v, input-major (x*W)
//   h.{l}.attn.c_attn.bias   [3*d_model]
//   h.{l}.attn.c_proj.weight [d_model, d_model]
//   h.{l}.attn.c_proj.bias   [d_model]
//   h.{l}.ln_2.weight/bias   [d_model]
//   h.{l}.mlp.c_fc.weight    [d_model, d_ff]
//   h.{l}.mlp.c_fc.bias      [d_ff]
//   h.{l}.mlp.c_proj.weight  [d_ff, d_model]
//   h.{l}.mlp.c_proj.bias    [d_model]
//   ln_f.weight/bias         [d_model]
//
// All weights are kept input-major. Extra tensors (e.g. cached causal masks)
// are ignored.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lmtrace/tensor.hpp"

namespace lmtrace {

enum class DType { F32, F16 };

std::string dtype_tag(DType dtype);
std::size_t dtype_size(DType dtype);

struct TensorRecord {
    std::string name;
    DType stored_dtype = DType::F32;
    Tensor value;  // always f32
};

using TensorMap = std::map<std::string, TensorRecord>;

TensorMap open_archive(const std::filesystem::path& path);
TensorMap parse_archive(const std::vector<std::uint8_t>& bytes);

// Serializes every record with its stored_dtype; names are written in sorted order.
std::vector<std::uint8_t> serialize_archive(const TensorMap& tensors);
void write_archive(const std::filesystem::path& path, const TensorMap& tensors);

float half_to_float(std::uint16_t h);
std::uint16_t float_to_half(float f);  // round to nearest even

enum class Activation { GeluTanh };
enum class Positional { LearnedAbsolute };

struct ModelConfig {
    std::size_t n_layer = 0;
    std::size_t n_head = 0;
    std::size_t d_model = 0;
    std::size_t d_ff = 0;
    std::size_t n_vocab = 0;
    std::size_t n_ctx = 0;
    float ln_eps = 1e-5f;
    Activation activation = Activation::GeluTanh;
    Positional positional = Positional::LearnedAbsolute;

    std::size_t d_head() const { return d_model / n_head; }

    // Throws ModelLoadError on a violated invariant.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
    Tensor ln1_gain, ln1_bias;  // [d_model]
    Tensor w_q, w_k, w_v;       // [d_model, d_model]; head h owns columns [h*d_head, (h+1)*d_head)
    Tensor b_q, b_k, b_v;       // [d_model]
    Tensor w_o;                 // [d_model, d_model]; head h owns rows [h*d_head, (h+1)*d_head)
    Tensor b_o;                 // [d_model]
    Tensor ln2_gain, ln2_bias;  // [d_model]
    Tensor w_in;                // [d_model, d_ff]
    Tensor b_in;                // [d_ff]
    Tensor w_out;               // [d_ff, d_model]; row n is neuron n's output direction
    Tensor b_out;               // [d_model]

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
    ModelConfig config;
    Tensor token_embedding;     // [n_vocab, d_model]; unembedding is its transpose
    Tensor position_embedding;  // [n_ctx, d_model]
    Tensor lnf_gain, lnf_bias;  // [d_model]
    std::vector<LayerParams> layers;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

ModelParams load_model(const TensorMap& archive, const ModelConfig& config);

// Inverse of load_model: canonical archive names, fused qkv. Used for fixtures and export.
TensorMap export_model(const ModelParams& params, DType dtype = DType::F32);

}  // namespace lmtrace
