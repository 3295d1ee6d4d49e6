#include "lmtrace/service.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lmtrace/errors.hpp"

namespace lmtrace {
namespace {

namespace fs = std::filesystem;

const std::set<std::string> kConfigFields = {"max_user_string_length", "preloaded_dataset_filename",
                                             "debug",                  "models",
                                             "default_threshold",      "run_cache_size"};

Service::Response json_response(int status, const ojson& doc) { return {status, dump_document(doc)}; }

Service::Response error_response(int status, const std::string& message) {
    return json_response(status, ojson{{"error", message}});
}

std::vector<std::string> split_path(const std::string& path) {
    std::vector<std::string> parts;
    std::stringstream ss(path);
    for (std::string item; std::getline(ss, item, '/');) {
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

const std::string& required(const Service::Query& q, const std::string& name) {
    auto it = q.find(name);
    if (it == q.end()) throw IndexError("missing query parameter '" + name + "'");
    return it->second;
}

std::string optional_param(const Service::Query& q, const std::string& name, const std::string& fallback) {
    auto it = q.find(name);
    return it == q.end() ? fallback : it->second;
}

}  // namespace

ServiceConfig parse_service_config(const std::string& text, const fs::path& base_dir) {
    ojson doc;
    try {
        doc = ojson::parse(text);
    } catch (const ojson::exception& e) {
        throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("configuration must be an object");

    ServiceConfig c;
    c.base_dir = base_dir;
    try {
        if (doc.contains("debug")) c.debug = doc["debug"].get<bool>();
        if (!c.debug) {
            for (const auto& [key, _] : doc.items()) {
                if (!kConfigFields.count(key)) throw ConfigError("unknown configuration field '" + key + "'");
            }
        }
        if (!doc.contains("max_user_string_length")) throw ConfigError("'max_user_string_length' is required");
        const auto& max_len = doc["max_user_string_length"];
        if (!max_len.is_number_integer() || max_len.get<long long>() < 1) {
            throw ConfigError("'max_user_string_length' must be an integer >= 1");
        }
        c.max_user_string_length = max_len.get<std::size_t>();

        if (doc.contains("preloaded_dataset_filename")) {
            c.preloaded_dataset_filename = doc["preloaded_dataset_filename"].get<std::string>();
        }
        if (!doc.contains("models") || !doc["models"].is_object() || doc["models"].empty()) {
            throw ConfigError("'models' must be a non-empty map of name to model location");
        }
        for (const auto& [name, loc] : doc["models"].items()) c.models.emplace_back(name, loc.get<std::string>());

        if (doc.contains("default_threshold")) {
            c.default_threshold = doc["default_threshold"].get<double>();
            if (!(c.default_threshold >= 0.0 && c.default_threshold <= 1.0)) {
                throw ConfigError("'default_threshold' must lie in [0, 1]");
            }
        }
        if (doc.contains("run_cache_size")) {
            const auto& n = doc["run_cache_size"];
            if (!n.is_number_integer() || n.get<long long>() < 1) throw ConfigError("'run_cache_size' must be >= 1");
            c.run_cache_size = n.get<std::size_t>();
        }
    } catch (const ojson::exception& e) {
        throw ConfigError(std::string("configuration field has the wrong type: ") + e.what());
    }
    return c;
}

ServiceConfig load_service_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_service_config(ss.str(), path.parent_path());
}

fs::path resolve_model_location(const ServiceConfig& config, const std::string& id) {
    fs::path p(id);
    if (p.is_absolute()) return p;
    if (fs::exists(config.base_dir / p)) return config.base_dir / p;
    const char* home = std::getenv("LMTRACE_MODEL_HOME");
    if (home != nullptr && *home != '\0') return fs::path(home) / p;
    return config.base_dir / p;
}

// ---- RunCache

RunCache::RunCache(std::size_t capacity) : capacity_(capacity == 0 ? 1 : capacity) {}

std::size_t RunCache::size() const {
    std::lock_guard lock(mutex_);
    return lru_.size();
}

void RunCache::insert_locked(std::shared_ptr<const Analysis> analysis, const Key& key) {
    lru_.push_front({key, analysis});
    by_key_[key] = lru_.begin();
    by_id_[analysis->run_id] = lru_.begin();
    while (lru_.size() > capacity_) {
        const Entry& victim = lru_.back();
        evicted_.insert(victim.analysis->run_id);
        by_id_.erase(victim.analysis->run_id);
        by_key_.erase(victim.key);
        lru_.pop_back();
    }
}

std::shared_ptr<const Analysis> RunCache::get_or_compute(const std::string& model, const std::string& text,
                                                         const Compute& compute) {
    const Key key{model, text};
    std::unique_lock lock(mutex_);
    if (auto it = by_key_.find(key); it != by_key_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        return it->second->analysis;
    }
    if (auto it = in_flight_.find(key); it != in_flight_.end()) {
        auto pending = it->second;
        lock.unlock();
        return pending.get();
    }
    std::promise<std::shared_ptr<const Analysis>> promise;
    in_flight_[key] = promise.get_future().share();
    const std::string run_id = content_hash({model, text}) + "-" + std::to_string(++sequence_);
    lock.unlock();

    std::shared_ptr<const Analysis> analysis;
    try {
        analysis = compute(run_id);
    } catch (...) {
        lock.lock();
        in_flight_.erase(key);
        promise.set_exception(std::current_exception());
        throw;
    }
    lock.lock();
    insert_locked(analysis, key);
    in_flight_.erase(key);
    promise.set_value(analysis);
    return analysis;
}

std::pair<RunCache::Status, std::shared_ptr<const Analysis>> RunCache::find(const std::string& run_id) const {
    std::lock_guard lock(mutex_);
    if (auto it = by_id_.find(run_id); it != by_id_.end()) return {Status::Found, it->second->analysis};
    if (evicted_.count(run_id)) return {Status::Evicted, nullptr};
    return {Status::Unknown, nullptr};
}

// ---- Service

namespace {

class RunGone : public Error {
    using Error::Error;
};
class NotFound : public Error {
    using Error::Error;
};

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)), cache_(config_.run_cache_size) {
    if (config_.models.empty()) throw ConfigError("'models' must not be empty");
    if (config_.max_user_string_length < 1) throw ConfigError("'max_user_string_length' must be >= 1");
    for (const auto& [name, location] : config_.models) {
        auto slot = std::make_unique<ModelSlot>();
        slot->location = location;
        models_.emplace(name, std::move(slot));
    }
    if (!config_.preloaded_dataset_filename.empty()) {
        fs::path p = config_.preloaded_dataset_filename;
        if (p.is_relative()) p = config_.base_dir / p;
        std::ifstream in(p);
        if (in) {
            for (std::string line; std::getline(in, line);) {
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (!line.empty()) dataset_.push_back(line);
            }
        } else {
            std::cerr << "lmtrace: dataset file " << p << " not found; serving an empty dataset\n";
        }
    }
}

std::shared_ptr<const ModelBundle> Service::model(const std::string& name) {
    auto it = models_.find(name);
    if (it == models_.end()) throw UnknownModel("unknown model '" + name + "'");
    ModelSlot& slot = *it->second;
    std::lock_guard lock(slot.mutex);
    if (!slot.bundle) {
        slot.bundle =
            std::make_shared<const ModelBundle>(load_model_dir(name, resolve_model_location(config_, slot.location)));
    }
    return slot.bundle;
}

std::shared_ptr<const Analysis> Service::create_run(const std::string& model_name, const std::string& text) {
    if (text_length(text) > config_.max_user_string_length) {
        throw InputTooLong("text has " + std::to_string(text_length(text)) + " characters, limit is " +
                           std::to_string(config_.max_user_string_length));
    }
    auto bundle = model(model_name);
    return cache_.get_or_compute(model_name, text,
                                 [&](const std::string& run_id) { return analyze_text(bundle, text, run_id); });
}

std::shared_ptr<const Analysis> Service::lookup_run(const std::string& run_id) const {
    auto [status, analysis] = cache_.find(run_id);
    if (status == RunCache::Status::Evicted) throw RunGone("run '" + run_id + "' was evicted from the cache");
    if (status == RunCache::Status::Unknown) throw NotFound("unknown run '" + run_id + "'");
    return analysis;
}

Service::Response Service::handle(const std::string& method, const std::string& path, const Query& query,
                                  const std::string& body) {
    try {
        return route(method, path, query, body);
    } catch (const NotFound& e) {
        return error_response(404, e.what());
    } catch (const UnknownModel& e) {
        return error_response(404, e.what());
    } catch (const RunGone& e) {
        return error_response(410, e.what());
    } catch (const InputTooLong& e) {
        return error_response(413, e.what());
    } catch (const ContextOverflow& e) {
        return error_response(413, e.what());
    } catch (const ModelLoadError& e) {
        return error_response(503, e.what());
    } catch (const IndexError& e) {
        return error_response(400, e.what());
    } catch (const InvalidThreshold& e) {
        return error_response(400, e.what());
    } catch (const EmptyTargets& e) {
        return error_response(400, e.what());
    } catch (const EmptyInput& e) {
        return error_response(400, e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

Service::Response Service::route(const std::string& method, const std::string& path, const Query& query,
                                 const std::string& body) {
    const auto parts = split_path(path);
    if (parts.size() == 1 && parts[0] == "models") {
        if (method != "GET") return error_response(405, "use GET");
        ojson names = ojson::array();
        for (const auto& [name, _] : config_.models) names.push_back(name);
        return json_response(200, ojson{{"models", names}});
    }
    if (parts.size() == 1 && parts[0] == "dataset") {
        if (method != "GET") return error_response(405, "use GET");
        return json_response(200, ojson{{"prompts", dataset_}, {"max_user_string_length", config_.max_user_string_length}});
    }
    if (parts.size() == 1 && parts[0] == "runs") {
        if (method != "POST") return error_response(405, "use POST");
        ojson req;
        try {
            req = ojson::parse(body);
        } catch (const ojson::exception&) {
            return error_response(400, "request body must be a JSON object");
        }
        if (!req.is_object() || !req.contains("model") || !req.contains("text") || !req["model"].is_string() ||
            !req["text"].is_string()) {
            return error_response(400, "request body needs string fields 'model' and 'text'");
        }
        return json_response(200, run_payload(*create_run(req["model"].get<std::string>(),
                                                          req["text"].get<std::string>())));
    }
    if (parts.size() < 2 || parts.size() > 3 || parts[0] != "runs") return error_response(404, "no route for " + path);
    if (method != "GET") return error_response(405, "use GET");

    const auto analysis = lookup_run(parts[1]);
    const Analysis& a = *analysis;
    if (parts.size() == 2) return json_response(200, run_payload(a));

    const std::string& what = parts[2];
    auto count = [&](const char* name) { return parse_count(required(query, name), name); };
    auto k = [&] { return parse_count(optional_param(query, "k", std::to_string(kDefaultK)), "k"); };

    if (what == "graph") {
        const double tau = query.count("threshold") ? parse_real(query.at("threshold"), "threshold")
                                                    : config_.default_threshold;
        return json_response(200, graph_payload(a, tau, parse_targets(optional_param(query, "targets", "last"),
                                                                      a.capture->n_tokens())));
    }
    if (what == "heads") return json_response(200, heads_payload(a, count("layer"), count("position")));
    if (what == "attention_map") return json_response(200, attention_map_payload(a, count("layer"), count("head")));
    if (what == "contribution_map") {
        return json_response(200, contribution_map_payload(a, count("layer"), count("head")));
    }
    if (what == "neurons") return json_response(200, neurons_payload(a, count("layer"), count("position"), k()));
    if (what == "lens") {
        const Point point = parse_point(optional_param(query, "point", "post"));
        const std::size_t layer = point == Point::Embed ? parse_count(optional_param(query, "layer", "0"), "layer")
                                                        : count("layer");
        const NodeId node{layer, point, count("position")};
        const bool apply_ln = parse_bool(optional_param(query, "apply_ln", "true"), "apply_ln");
        return json_response(200, lens_payload(a, node, k(), apply_ln));
    }
    if (what == "projection") {
        return json_response(200, projection_payload(a, parse_component(required(query, "component")), k()));
    }
    return error_response(404, "no route for " + path);
}

}  // namespace lmtrace
