#pragma once

#include <filesystem>
#include <functional>
#include <future>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmtrace/payloads.hpp"

namespace lmtrace {

struct ServiceConfig {
    std::size_t max_user_string_length = 0;
    std::filesystem::path preloaded_dataset_filename;
    bool debug = false;
    // display name -> local model directory (relative to base_dir) or registry id
    std::vector<std::pair<std::string, std::string>> models;
    double default_threshold = kDefaultThreshold;
    std::size_t run_cache_size = 16;
    std::filesystem::path base_dir;  // directory of the configuration document
};

// Throws ConfigError. Unknown fields are rejected unless "debug" is true.
ServiceConfig parse_service_config(const std::string& text, const std::filesystem::path& base_dir = {});
ServiceConfig load_service_config(const std::filesystem::path& path);

// Where a models entry points: an existing path (absolute, or relative to
// base_dir) or else <LMTRACE_MODEL_HOME>/<id>.
std::filesystem::path resolve_model_location(const ServiceConfig& config, const std::string& id);

// Bounded LRU of analyses keyed by (model, text). Concurrent misses on the
// same key share one computation.
class RunCache {
public:
    using Compute = std::function<std::shared_ptr<const Analysis>(const std::string& run_id)>;
    enum class Status { Found, Evicted, Unknown };

    explicit RunCache(std::size_t capacity);

    std::shared_ptr<const Analysis> get_or_compute(const std::string& model, const std::string& text,
                                                   const Compute& compute);
    std::pair<Status, std::shared_ptr<const Analysis>> find(const std::string& run_id) const;
    std::size_t size() const;

private:
    using Key = std::pair<std::string, std::string>;
    struct Entry {
        Key key;
        std::shared_ptr<const Analysis> analysis;
    };

    void insert_locked(std::shared_ptr<const Analysis> analysis, const Key& key);

    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::list<Entry> lru_;  // front = most recent
    std::map<Key, std::list<Entry>::iterator> by_key_;
    std::unordered_map<std::string, std::list<Entry>::iterator> by_id_;
    std::set<std::string> evicted_;
    std::map<Key, std::shared_future<std::shared_ptr<const Analysis>>> in_flight_;
    std::uint64_t sequence_ = 0;
};

class Service {
public:
    struct Response {
        int status = 200;
        std::string body;
        std::string content_type = "application/json";
    };
    using Query = std::map<std::string, std::string>;

    explicit Service(ServiceConfig config);

    Response handle(const std::string& method, const std::string& path, const Query& query,
                    const std::string& body);

    // Loads on first use; a failed load is retried on the next request.
    std::shared_ptr<const ModelBundle> model(const std::string& name);
    std::shared_ptr<const Analysis> create_run(const std::string& model, const std::string& text);

    const ServiceConfig& config() const { return config_; }
    const std::vector<std::string>& dataset() const { return dataset_; }
    const RunCache& cache() const { return cache_; }

private:
    struct ModelSlot {
        std::string location;
        std::mutex mutex;
        std::shared_ptr<const ModelBundle> bundle;
    };

    Response route(const std::string& method, const std::string& path, const Query& query, const std::string& body);
    std::shared_ptr<const Analysis> lookup_run(const std::string& run_id) const;

    ServiceConfig config_;
    std::vector<std::string> dataset_;
    std::map<std::string, std::unique_ptr<ModelSlot>> models_;
    RunCache cache_;
};

// HTTP adapter over Service::handle.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // port 0 binds an ephemeral port; returns the bound port or -1.
    int bind(const std::string& host, int port);
    bool listen();  // blocks until stop()
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace lmtrace
