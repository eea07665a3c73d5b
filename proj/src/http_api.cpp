#include "powerem/http_api.hpp"

#include "powerem/service.hpp"

#include <httplib.h>

namespace powerem {

namespace {

void send(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json; charset=utf-8");
}

} // namespace

void mount_api(httplib::Server& server, const DecisionService& service, const std::string& cors_origin) {
    server.set_post_routing_handler([cors_origin](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", cors_origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.set_header("Access-Control-Max-Age", "600");
        if (cors_origin != "*") res.set_header("Vary", "Origin");
    });
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/api/space", [&service](const httplib::Request&, httplib::Response& res) { send(res, service.space()); });
    server.Get("/api/sensitivity", [&service](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query[k] = v;
        send(res, service.sensitivity(query));
    });
    for (const char* path : {"/api/predict", "/api/distribution", "/api/robustness"})
        server.Post(path, [&service, path = std::string(path)](const httplib::Request& req, httplib::Response& res) {
            send(res, service.post(path, req.body));
        });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        res.status = 500;
        res.set_content(nlohmann::json{{"error", what}}.dump(), "application/json; charset=utf-8");
    });
}

} // namespace powerem
