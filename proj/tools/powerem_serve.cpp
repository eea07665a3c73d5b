// HTTP decision-support service over a directory of fitted emulators.
#include "powerem/error.hpp"
#include "powerem/http_api.hpp"
#include "powerem/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <iostream>
#include <thread>

using namespace powerem;

int main(int argc, char** argv) {
    CLI::App app{"powerem-serve: decision-support HTTP API"};
    std::string models_dir = "models", space_file = "space.json", host = "127.0.0.1", cors = "*";
    int port = 8080;
    app.add_option("--models-dir", models_dir, "Directory of fitted model JSON files")->capture_default_str();
    app.add_option("--space", space_file, "Parameter space JSON")->capture_default_str();
    app.add_option("--port", port, "Listen port")->capture_default_str();
    app.add_option("--host", host, "Listen address")->capture_default_str();
    app.add_option("--cors-origin", cors, "Allowed browser origin")->capture_default_str();
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code(ErrorCode::invalid_input);
    }

    std::unique_ptr<DecisionService> service;
    try {
        service = std::make_unique<DecisionService>(load_space(space_file));
    } catch (const std::exception& e) {
        std::cerr << "refusing to start: " << e.what() << '\n';
        return exit_code(ErrorCode::invalid_input);
    }

    httplib::Server server;
    mount_api(server, *service, cors);
    if (!server.bind_to_port(host, port)) {
        std::cerr << "cannot bind " << host << ':' << port << '\n';
        return exit_code(ErrorCode::invalid_input);
    }

    // requests get 503 until the models are in memory
    int load_status = 0;
    std::thread loader([&] {
        try {
            auto store = ModelStore::load_dir(models_dir);
            const auto count = store.size();
            service->load_models(std::move(store));
            std::cerr << "loaded " << count << " models from " << models_dir << '\n';
        } catch (const Error& e) {
            std::cerr << "model load failed: " << e.what() << '\n';
            load_status = exit_code(e.code());
            server.wait_until_ready();
            server.stop();
        }
    });
    std::cerr << "listening on http://" << host << ':' << port << '\n';
    server.listen_after_bind();
    loader.join();
    return load_status;
}
