#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <set>
#include <tuple>

#include "lmtrace/flowgraph.hpp"
#include "lmtrace/tensor_store.hpp"
#include "lmtrace/tokenizer.hpp"

namespace lmtrace::testing {

// Unique directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

ModelConfig toy_config(std::size_t n_layer, std::size_t n_head, std::size_t d_model, std::size_t n_vocab = 260,
                       std::size_t n_ctx = 64);

// Gaussian weights; `scale` multiplies matrix entries, gains sit near 1.
ModelParams random_params(const ModelConfig& config, std::uint64_t seed, float scale = 0.3f);

std::vector<TokenId> random_tokens(std::size_t n, std::size_t n_vocab, std::uint64_t seed);

// GPT-2 byte <-> printable symbol table, written out independently of the library.
std::vector<std::string> byte_symbols();

// Byte-level vocabulary: 256 single-byte tokens followed by these merges.
// toy_vocab_size() == 256 + toy_merges().size().
std::vector<std::pair<std::string, std::string>> toy_merges();
std::size_t toy_vocab_size();
std::string toy_vocab_json();
std::string toy_merges_txt();
Tokenizer toy_tokenizer();

// config.json + model.safetensors + vocab.json + merges.txt
void write_model_dir(const std::filesystem::path& dir, const ModelParams& params, DType dtype = DType::F32);

// Naive double-precision forward pass, written without the library's kernels.
struct NaiveRun {
    std::vector<std::vector<std::vector<double>>> stream;  // [L+1][T][d]
    std::vector<std::vector<std::vector<double>>> mid;     // [L][T][d]
    std::vector<std::vector<double>> logits;               // [T][V]
};
NaiveRun naive_forward(const ModelParams& params, const std::vector<TokenId>& tokens);

// Directory written by tools/reference/make_reference.py, or empty when the
// fixture was not generated.
std::filesystem::path reference_dir();
std::filesystem::path source_dir();

// Graph oracles. The full (tau = 0) cone of a single target t: the top layer
// holds only position t, every lower layer holds positions 0..t.
std::size_t full_cone_edges(std::size_t n_layer, std::size_t t);
std::size_t full_cone_nodes(std::size_t n_layer, std::size_t t);

using EdgeKey = std::tuple<NodeId, NodeId, EdgeKind>;
std::set<EdgeKey> edge_keys(const FlowGraph& g);
// Weight-filter the tau = 0 graph, then keep what is still reachable from the targets.
std::set<EdgeKey> filter_graph(const FlowGraph& full, double tau);

double max_abs_diff(std::span<const float> a, std::span<const float> b);

}  // namespace lmtrace::testing
