// lmtrace analyze: batch analysis of prompts into graph / lens / importance documents.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "lmtrace/errors.hpp"
#include "lmtrace/service.hpp"

namespace fs = std::filesystem;
using namespace lmtrace;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kLoad = 3, kOversize = 4 };

struct Options {
    std::string config;
    std::string model;
    std::string text;
    std::string file;
    std::string threshold;
    std::string targets = "last";
    std::string out;
    std::vector<std::string> formats;
    std::size_t k = kDefaultK;
    std::string apply_ln = "true";
};

struct UsageError : Error {
    using Error::Error;
};

std::vector<std::string> read_prompts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read prompt file " + path);
    std::vector<std::string> prompts;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) prompts.push_back(line);
    }
    return prompts;
}

std::string document(const Analysis& a, const std::string& format, double tau, const std::set<std::size_t>& targets,
                     std::size_t k, bool apply_ln) {
    const ModelConfig& cfg = a.capture->config;
    if (format == "graph") return dump_document(graph_payload(a, tau, targets));
    if (format == "dot") return graph_to_dot(build_graph(*a.attributor, tau, targets), a.capture->token_strings);

    ojson docs = ojson::array();
    if (format == "lens") {
        for (std::size_t t : targets) {
            docs.push_back(lens_payload(a, NodeId::embed(t), k, apply_ln));
            for (std::size_t l = 0; l < cfg.n_layer; ++l) {
                docs.push_back(lens_payload(a, NodeId::mid(l, t), k, apply_ln));
                docs.push_back(lens_payload(a, NodeId::post(l, t), k, apply_ln));
            }
        }
    } else {
        for (std::size_t l = 0; l < cfg.n_layer; ++l) {
            for (std::size_t t : targets) {
                docs.push_back(format == "heads" ? heads_payload(a, l, t) : neurons_payload(a, l, t, k));
            }
        }
    }
    return dump_document(docs);
}

int analyze(const Options& opt) {
    ServiceConfig config;
    try {
        config = load_service_config(opt.config);
    } catch (const ConfigError& e) {
        std::cerr << "lmtrace: " << e.what() << "\n";
        return kUsage;
    }
    if (opt.text.empty() == opt.file.empty()) {
        std::cerr << "lmtrace: give exactly one of --text or --file\n";
        return kUsage;
    }
    std::string model = opt.model;
    if (model.empty()) {
        if (config.models.size() != 1) {
            std::cerr << "lmtrace: --model is required when the configuration lists several models\n";
            return kUsage;
        }
        model = config.models.front().first;
    }

    double tau = config.default_threshold;
    bool apply_ln = true;
    std::vector<std::string> prompts;
    try {
        if (!opt.threshold.empty()) tau = parse_real(opt.threshold, "threshold");
        if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("--threshold must lie in [0, 1]");
        apply_ln = parse_bool(opt.apply_ln, "apply-ln");
        prompts = opt.file.empty() ? std::vector<std::string>{opt.text} : read_prompts(opt.file);
    } catch (const Error& e) {
        std::cerr << "lmtrace: " << e.what() << "\n";
        return kUsage;
    }

    Service service(config);
    for (const std::string& p : prompts) {
        if (text_length(p) > config.max_user_string_length) {
            std::cerr << "lmtrace: prompt of " << text_length(p) << " characters exceeds max_user_string_length "
                      << config.max_user_string_length << "\n";
            return kOversize;
        }
    }

    std::shared_ptr<const ModelBundle> bundle;
    try {
        bundle = service.model(model);
    } catch (const UnknownModel& e) {
        std::cerr << "lmtrace: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "lmtrace: " << e.what() << "\n";
        return kLoad;
    }

    std::error_code ec;
    fs::create_directories(opt.out, ec);
    if (ec) {
        std::cerr << "lmtrace: cannot create " << opt.out << ": " << ec.message() << "\n";
        return kFailure;
    }

    char tau_text[32];
    std::snprintf(tau_text, sizeof tau_text, "%.6f", tau);
    for (std::size_t idx = 0; idx < prompts.size(); ++idx) {
        std::shared_ptr<const Analysis> a;
        std::set<std::size_t> targets;
        try {
            a = analyze_text(bundle, prompts[idx]);
            targets = parse_targets(opt.targets, a->capture->n_tokens());
        } catch (const ContextOverflow& e) {
            std::cerr << "lmtrace: prompt " << idx << ": " << e.what() << "\n";
            return kOversize;
        } catch (const EmptyInput& e) {
            std::cerr << "lmtrace: prompt " << idx << ": " << e.what() << "\n";
            return kFailure;
        } catch (const Error& e) {
            std::cerr << "lmtrace: prompt " << idx << ": " << e.what() << "\n";
            return kUsage;
        }

        char prefix[16];
        std::snprintf(prefix, sizeof prefix, "%03zu_", idx);
        const std::string stem = prefix + content_hash({model, prompts[idx], tau_text});
        for (const std::string& format : opt.formats) {
            const fs::path path = fs::path(opt.out) / (stem + (format == "dot" ? ".dot" : "." + format + ".json"));
            std::ofstream os(path, std::ios::binary);
            os << document(*a, format, tau, targets, opt.k, apply_ln);
            if (!os) {
                std::cerr << "lmtrace: cannot write " << path << "\n";
                return kFailure;
            }
        }
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lmtrace: interpretability analysis of transformer language models"};
    app.require_subcommand(1);

    Options opt;
    CLI::App* cmd = app.add_subcommand("analyze", "analyze prompts and write documents");
    cmd->add_option("--config", opt.config, "service configuration document")->required()->check(CLI::ExistingFile);
    cmd->add_option("--model", opt.model, "model name from the configuration");
    cmd->add_option("--text", opt.text, "prompt text");
    cmd->add_option("--file", opt.file, "newline-delimited prompts")->check(CLI::ExistingFile);
    cmd->add_option("--threshold", opt.threshold, "graph threshold in [0, 1] (default from config)");
    cmd->add_option("--targets", opt.targets, "last | all | comma-separated positions");
    cmd->add_option("--out", opt.out, "output directory")->required();
    cmd->add_option("--format", opt.formats, "graph | dot | lens | heads | neurons (repeatable)")
        ->required()
        ->check(CLI::IsMember({"graph", "dot", "lens", "heads", "neurons"}));
    cmd->add_option("--k", opt.k, "entries per lens / neuron table");
    cmd->add_option("--apply-ln", opt.apply_ln, "apply the final LayerNorm in the lens (true | false)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    std::sort(opt.formats.begin(), opt.formats.end());
    opt.formats.erase(std::unique(opt.formats.begin(), opt.formats.end()), opt.formats.end());
    try {
        return analyze(opt);
    } catch (const std::exception& e) {
        std::cerr << "lmtrace: " << e.what() << "\n";
        return kFailure;
    }
}
