#include "lmtrace/model_bundle.hpp"

#include <cstdint>
#include <fstream>

#include "lmtrace/errors.hpp"

namespace lmtrace {
namespace {

using json = nlohmann::json;

const json* field(const json& doc, const char* key, const char* alias = nullptr) {
    if (auto it = doc.find(key); it != doc.end() && !it->is_null()) return &*it;
    if (alias != nullptr) {
        if (auto it = doc.find(alias); it != doc.end() && !it->is_null()) return &*it;
    }
    return nullptr;
}

std::size_t required_count(const json& doc, const char* key, const char* alias = nullptr) {
    const json* v = field(doc, key, alias);
    if (v == nullptr) throw ModelLoadError(std::string("model config lacks '") + key + "'");
    if (!v->is_number_integer() || v->get<std::int64_t>() < 0) throw ModelLoadError(std::string("model config '") + key + "' must be a count");
    return v->get<std::size_t>();
}

}  // namespace

ModelConfig parse_model_config(const json& doc) {
    if (!doc.is_object()) throw ModelLoadError("model config must be an object");
    ModelConfig c;
    c.n_layer = required_count(doc, "n_layer");
    c.n_head = required_count(doc, "n_head");
    c.d_model = required_count(doc, "d_model", "n_embd");
    c.d_ff = field(doc, "d_ff", "n_inner") ? required_count(doc, "d_ff", "n_inner") : 4 * c.d_model;
    c.n_vocab = required_count(doc, "n_vocab", "vocab_size");
    c.n_ctx = required_count(doc, "n_ctx", "n_positions");
    if (const json* eps = field(doc, "ln_eps", "layer_norm_epsilon")) {
        if (!eps->is_number()) throw ModelLoadError("model config 'ln_eps' must be a number");
        c.ln_eps = eps->get<float>();
    }
    if (const json* act = field(doc, "activation", "activation_function")) {
        const auto s = act->get<std::string>();
        if (s != "gelu_tanh" && s != "gelu_new") throw ModelLoadError("unsupported activation '" + s + "'");
    }
    if (const json* pos = field(doc, "positional")) {
        if (pos->get<std::string>() != "learned_absolute") {
            throw ModelLoadError("unsupported positional encoding '" + pos->get<std::string>() + "'");
        }
    }
    c.validate();
    return c;
}

json sidecar_json(const ModelConfig& c) {
    return json{{"n_layer", c.n_layer},   {"n_head", c.n_head},   {"d_model", c.d_model},
                {"d_ff", c.d_ff},         {"n_vocab", c.n_vocab}, {"n_ctx", c.n_ctx},
                {"ln_eps", c.ln_eps},     {"activation", "gelu_tanh"},
                {"positional", "learned_absolute"}};
}

ModelSidecar read_sidecar(const std::filesystem::path& dir_or_file) {
    namespace fs = std::filesystem;
    const fs::path file = fs::is_directory(dir_or_file) ? dir_or_file / "config.json" : dir_or_file;
    std::ifstream in(file);
    if (!in) throw ModelLoadError("cannot open model config " + file.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ModelLoadError("model config " + file.string() + ": " + e.what());
    }
    const fs::path base = file.parent_path();
    auto path_of = [&](const char* key, const char* fallback) {
        fs::path p = doc.contains(key) ? fs::path(doc[key].get<std::string>()) : fs::path(fallback);
        return p.is_absolute() ? p : base / p;
    };
    ModelSidecar s;
    try {
        s.config = parse_model_config(doc);
        s.archive = path_of("archive", "model.safetensors");
        s.vocab_file = path_of("vocab_file", "vocab.json");
        s.merges_file = path_of("merges_file", "merges.txt");
    } catch (const json::exception& e) {
        throw ModelLoadError("model config " + file.string() + ": " + e.what());
    }
    return s;
}

ModelBundle load_model_dir(const std::string& name, const std::filesystem::path& dir_or_file) {
    try {
        const ModelSidecar sidecar = read_sidecar(dir_or_file);
        auto tokenizer = std::make_shared<const Tokenizer>(Tokenizer::load(sidecar.vocab_file, sidecar.merges_file));
        if (tokenizer->vocab_size() != sidecar.config.n_vocab) {
            throw ModelLoadError("vocabulary has " + std::to_string(tokenizer->vocab_size()) +
                                 " tokens, model expects " + std::to_string(sidecar.config.n_vocab));
        }
        auto params = std::make_shared<const ModelParams>(load_model(open_archive(sidecar.archive), sidecar.config));
        return ModelBundle{name, std::move(params), std::move(tokenizer)};
    } catch (const ModelLoadError&) {
        throw;
    } catch (const std::exception& e) {
        throw ModelLoadError("loading model '" + name + "': " + e.what());
    }
}

}  // namespace lmtrace
