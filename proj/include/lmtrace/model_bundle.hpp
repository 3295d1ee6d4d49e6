#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "lmtrace/tensor_store.hpp"
#include "lmtrace/tokenizer.hpp"

namespace lmtrace {

// A model directory holds config.json (the sidecar), the tensor archive and
// the vocabulary pair. Sidecar keys (Hugging Face GPT-2 aliases in brackets):
//
//   n_layer, n_head, d_model [n_embd], d_ff [n_inner, default 4*d_model],
//   n_vocab [vocab_size], n_ctx [n_positions], ln_eps [layer_norm_epsilon, default 1e-5],
//   activation ["gelu_tanh" | "gelu_new"], positional ["learned_absolute"],
//   archive [default model.safetensors], vocab_file [vocab.json], merges_file [merges.txt]
//
// Relative file paths resolve against the sidecar's directory.
struct ModelSidecar {
    ModelConfig config;
    std::filesystem::path archive;
    std::filesystem::path vocab_file;
    std::filesystem::path merges_file;
};

ModelConfig parse_model_config(const nlohmann::json& doc);
ModelSidecar read_sidecar(const std::filesystem::path& dir_or_file);
nlohmann::json sidecar_json(const ModelConfig& config);

struct ModelBundle {
    std::string name;
    std::shared_ptr<const ModelParams> params;
    std::shared_ptr<const Tokenizer> tokenizer;
};

// Throws ModelLoadError (wrapping the underlying cause) on any failure.
ModelBundle load_model_dir(const std::string& name, const std::filesystem::path& dir_or_file);

}  // namespace lmtrace
