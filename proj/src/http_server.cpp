#include <httplib.h>

#include "lmtrace/service.hpp"

namespace lmtrace {

struct HttpServer::Impl {
    Service& service;
    httplib::Server server;
    std::string host;
    int port = -1;

    explicit Impl(Service& s) : service(s) {
        auto forward = [this](const httplib::Request& req, httplib::Response& res) {
            Service::Query query;
            for (const auto& [k, v] : req.params) query.emplace(k, v);  // first value wins
            const auto out = service.handle(req.method, req.path, query, req.body);
            res.status = out.status;
            res.set_content(out.body, out.content_type);
        };
        server.Get(".*", forward);
        server.Post(".*", forward);
        server.Put(".*", forward);
        server.Delete(".*", forward);
        server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                    {"Access-Control-Allow-Headers", "Content-Type"},
                                    {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    }
};

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {}
HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port(host);
    } else {
        impl_->port = impl_->server.bind_to_port(host, port) ? port : -1;
    }
    return impl_->port;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace lmtrace
