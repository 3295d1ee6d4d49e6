// lmtrace-serve CONFIG: HTTP analysis service.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "lmtrace/errors.hpp"
#include "lmtrace/service.hpp"

namespace {
lmtrace::HttpServer* g_server = nullptr;
void on_signal(int) {
    if (g_server) g_server->stop();
}
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lmtrace-serve: HTTP interface to the analysis engine"};
    std::string config_path, host = "127.0.0.1";
    int port = 8080;
    app.add_option("config", config_path, "service configuration document")->required();
    app.add_option("--host", host, "listen address");
    app.add_option("--port", port, "listen port (0 = any)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::unique_ptr<lmtrace::Service> service;
    try {
        service = std::make_unique<lmtrace::Service>(lmtrace::load_service_config(config_path));
    } catch (const lmtrace::ConfigError& e) {
        std::cerr << "lmtrace-serve: " << e.what() << "\n";
        return 2;
    }

    lmtrace::HttpServer server(*service);
    const int bound = server.bind(host, port);
    if (bound < 0) {
        std::cerr << "lmtrace-serve: cannot bind " << host << ":" << port << "\n";
        return 1;
    }
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "lmtrace-serve: listening on http://" << host << ":" << bound << "\n";
    return server.listen() ? 0 : 1;
}
