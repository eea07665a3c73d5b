#include "powerem/error.hpp"
#include "powerem/http_api.hpp"
#include "powerem/service.hpp"
#include "powerem/util.hpp"

#include <doctest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <random>
#include <thread>

using namespace powerem;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Workspace with small emulators for global emissions and the India 2030 targets.
struct Fixture {
    fs::path root;
    Workspace ws;

    Fixture() {
        std::random_device rd;
        root = fs::temp_directory_path() / ("powerem-svc-" + std::to_string(rd()) + std::to_string(rd()));
        ws = Workspace{root, {}};
        init_workspace(ws, default_space(), default_sim_config());
        cmd_design(ws, 50, 3);
        cmd_simulate(ws);
        FitCommandOptions o;
        o.restarts = 1;
        o.seed = 1;
        auto keys = expand_keys({"global"}, {"emissions_Mt"}, {2030, 2050});
        for (const auto& k : target_keys(default_targets("IN", 2030))) keys.push_back(k);
        cmd_fit(ws, keys, o);
    }
    ~Fixture() {
        std::error_code ec;
        fs::remove_all(root, ec);
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

const DecisionService& service() {
    static const auto s = [] {
        auto svc = std::make_unique<DecisionService>(default_space());
        svc->load_models(ModelStore::load_dir(fixture().ws.models()));
        return svc;
    }();
    return *s;
}

ServiceResponse post(const std::string& path, const json& body) { return service().post(path, body.dump()); }

std::string run(const std::string& cmd, int& status) {
    std::string out;
    FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    const int raw = pclose(pipe);
    status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return out;
}

const json kEmissions2030 = {{"region", "global"}, {"output", "emissions_Mt"}, {"year", 2030}};

} // namespace

TEST_CASE("every endpoint answers 503 until models are loaded") {
    DecisionService cold(default_space());
    CHECK_FALSE(cold.ready());
    CHECK(cold.space().status == 503);
    CHECK(cold.post("/api/predict", R"({"keys":["global__emissions_Mt__2030"]})").status == 503);
    CHECK(cold.post("/api/distribution", "{}").status == 503);
    CHECK(cold.post("/api/robustness", "{}").status == 503);
    CHECK(cold.sensitivity({}).status == 503);
}

TEST_CASE("a malformed space is refused") {
    auto bad = default_space();
    bad.inputs[3].id = bad.inputs[2].id;
    CHECK_THROWS_AS(DecisionService{bad}, Error);

    const auto path = fixture().root / "bad_space.json";
    write_file_atomic(path, to_json(bad).dump());
    int status = 0;
    const auto out = run(std::string(POWEREM_SERVE_PATH) + " --space " + path.string() + " --models-dir " +
                             fixture().ws.models().string() + " --port 0",
                         status);
    CHECK(status == 3);
    CHECK(out.find("refusing to start") != std::string::npos);
}

TEST_CASE("space endpoint mirrors the space file") {
    const auto r = service().space();
    REQUIRE(r.status == 200);
    CHECK(r.body["inputs"].size() == 30);
    int rollback = 0;
    for (const auto& in : r.body["inputs"])
        if (in["special_mapping"] == "us-rollback") {
            ++rollback;
            CHECK(in["id"] == "us_subsidy_fit");
        }
    CHECK(rollback == 1);
}

TEST_CASE("predict matches the command-line tool exactly") {
    const auto r = post("/api/predict", {{"keys", {"global__emissions_Mt__2030", kEmissions2030}}});
    REQUIRE(r.status == 200);
    REQUIRE(r.body["predictions"].size() == 2);
    CHECK(r.body["predictions"][0] == r.body["predictions"][1]);
    int status = 0;
    const auto out = run(std::string(POWEREM_CLI_PATH) + " -w " + fixture().root.string() +
                             " predict --key global__emissions_Mt__2030",
                         status);
    REQUIRE(status == 0);
    const auto cli = json::parse(out);
    CHECK(cli["predictions"][0].dump() == r.body["predictions"][0].dump());
    CHECK(cli["x"].dump() == r.body["x"].dump());
    const auto& p = r.body["predictions"][0];
    CHECK(p["units"] == "MtCO2/yr");
    CHECK(p["sd"].get<double>() >= 0.0);
}

TEST_CASE("predict validates coordinates and keys") {
    json techno = json::array();
    for (int i = 0; i < 15; ++i) techno.push_back(0.5);
    techno[7] = 1.2;
    auto r = post("/api/predict", {{"keys", {kEmissions2030}}, {"techno", techno}});
    CHECK(r.status == 400);
    CHECK(r.body["index"] == 7);
    CHECK(r.body["input"] == "grid_lead");

    r = post("/api/predict", {{"keys", {kEmissions2030}}, {"policy", {{"in_phase_out", -0.1}}}});
    CHECK(r.status == 400);
    CHECK(r.body["index"] == default_space().require_index("in_phase_out"));

    r = post("/api/predict", {{"keys", {{{"region", "global"}, {"output", "emissions_Mt"}, {"year", 2035}}}}});
    CHECK(r.status == 404);
    const auto msg = r.body["error"].get<std::string>();
    CHECK(msg.find("2030") != std::string::npos);
    CHECK(msg.find("2050") != std::string::npos);

    CHECK(post("/api/predict", json::object()).status == 400);
    CHECK(service().post("/api/predict", "{not json").status == 400);
    CHECK(service().post("/api/nothing", "{}").status == 404);

    json policy = json::array();
    for (int i = 0; i < 15; ++i) policy.push_back(0.0);
    policy[0] = 1.0;
    r = post("/api/predict", {{"keys", {kEmissions2030}}, {"policy", policy}, {"bands", {{"lead", "fast"}}}});
    REQUIRE(r.status == 200);
    const auto& x = r.body["x"];
    CHECK(x[15] == 1.0);
    CHECK(x[4].get<double>() == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("distribution: quantiles, histogram and seed replay") {
    auto r = post("/api/distribution", {{"keys", {kEmissions2030}}, {"n", 3000}, {"seed", 17}});
    REQUIRE(r.status == 200);
    const auto& res = r.body["results"][0];
    std::size_t total = 0;
    for (const auto& c : res["histogram"]["counts"]) total += c.get<std::size_t>();
    CHECK(res["histogram"]["counts"].size() == kHistogramBins);
    CHECK(total == 3000);
    const auto& q = res["quantiles"];
    CHECK(q["5"].get<double>() <= q["25"].get<double>());
    CHECK(q["25"].get<double>() <= q["50"].get<double>());
    CHECK(q["50"].get<double>() <= q["75"].get<double>());
    CHECK(q["75"].get<double>() <= q["95"].get<double>());
    CHECK(r.body["seed"] == 17);

    const auto again = post("/api/distribution", {{"keys", {kEmissions2030}}, {"n", 3000}, {"seed", 17}});
    CHECK(again.body.dump() == r.body.dump());

    const auto fresh = post("/api/distribution", {{"keys", {kEmissions2030}}, {"n", 500}});
    REQUIRE(fresh.status == 200);
    const auto seed = fresh.body["seed"].get<std::uint64_t>();
    CHECK(seed < (std::uint64_t{1} << 53));
    const auto replay = post("/api/distribution", {{"keys", {kEmissions2030}}, {"n", 500}, {"seed", seed}});
    CHECK(replay.body.dump() == fresh.body.dump());

    const auto dflt = post("/api/distribution", {{"keys", {kEmissions2030}}, {"seed", 1}});
    CHECK(dflt.body["n"] == 20000);
}

TEST_CASE("distribution: point mass and bad specs") {
    json inputs = json::object();
    for (const auto& in : default_space().inputs)
        if (in.kind == InputKind::techno_economic) inputs[in.id] = {{"kind", "fixed"}, {"value", 0.4}};
    const auto r = post("/api/distribution",
                        {{"keys", {kEmissions2030}}, {"n", 200}, {"seed", 3}, {"inputs", inputs}, {"emulator_noise", false}});
    REQUIRE(r.status == 200);
    const auto& q = r.body["results"][0]["quantiles"];
    for (const char* k : {"5", "25", "75", "95"}) CHECK(q[k] == q["50"]);
    CHECK(r.body["results"][0]["histogram"]["counts"][0] == 200);

    CHECK(post("/api/distribution", {{"keys", {kEmissions2030}}, {"n", 100001}}).status == 400);
    CHECK(post("/api/distribution", {{"keys", {kEmissions2030}}, {"n", 0}}).status == 400);
    CHECK(post("/api/distribution", {{"keys", {kEmissions2030}},
                                     {"inputs", {{"coal_price", {{"kind", "uniform"}, {"lo", 0.8}, {"hi", 0.2}}}}}})
              .status == 400);
    CHECK(post("/api/distribution", {{"keys", {kEmissions2030}}, {"seed", -4}}).status == 400);
    CHECK(post("/api/distribution", {{"keys", {kEmissions2030}}, {"bands", {{"lead", "warp"}}}}).status == 400);
}

TEST_CASE("robustness endpoint") {
    const json req = {{"packages", {"baseline", "Sub-CP", "CP-Phase", "Sub-CP-Phase", "Sub-Phase"}},
                      {"bands", {{{"lead", "fast"}}}},
                      {"n", 400},
                      {"seed", 9}};
    const auto r = post("/api/robustness", req);
    REQUIRE(r.status == 200);
    REQUIRE(r.body["cells"].size() == 5);
    for (const auto& cell : r.body["cells"]) {
        CHECK(cell["targets"].size() == 4);
        for (const auto& t : cell["targets"]) {
            CHECK(t["proportion"].get<double>() >= 0.0);
            CHECK(t["proportion"].get<double>() <= 1.0);
        }
        CHECK(cell["band_selection"]["lead"] == "fast");
    }
    CHECK(post("/api/robustness", req).body.dump() == r.body.dump());

    CHECK(post("/api/robustness", {{"packages", json::array()}}).status == 400);
    CHECK(post("/api/robustness", json::object()).status == 400);
    CHECK(post("/api/robustness", {{"packages", {"Teleport"}}}).status == 404);
    const auto custom = post("/api/robustness", {{"packages", {{{"name", "all-in"}, {"coordinates", {{"in_phase_out", 1.0}}}}}},
                                                 {"n", 100},
                                                 {"seed", 2}});
    REQUIRE(custom.status == 200);
    CHECK(custom.body["cells"][0]["package"] == "all-in");
}

TEST_CASE("sensitivity endpoint") {
    auto r = service().sensitivity({{"output", "emissions_Mt"}, {"year", "2030"}});
    REQUIRE(r.status == 200);
    REQUIRE(r.body["columns"].size() == 1);
    const auto& idx = r.body["columns"][0]["indices"];
    CHECK(idx.size() == 30);
    double sum = 0.0;
    for (const auto& [k, v] : idx.items()) sum += v.get<double>();
    CHECK(sum == doctest::Approx(1.0));
    CHECK(service().sensitivity({{"output", "emissions_Mt"}, {"year", "2035"}}).status == 404);
    CHECK(service().sensitivity({{"output", "emissions_Mt"}, {"year", "soon"}}).status == 400);
}

TEST_CASE("concurrent requests give identical answers") {
    const json req = {{"keys", {kEmissions2030}}, {"n", 2000}, {"seed", 5}};
    const auto expected = post("/api/distribution", req).body.dump();
    std::vector<std::string> got(4);
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < got.size(); ++t)
        threads.emplace_back([&, t] { got[t] = post("/api/distribution", req).body.dump(); });
    for (auto& t : threads) t.join();
    for (const auto& g : got) CHECK(g == expected);
}

TEST_CASE("predict latency per key stays interactive") {
    std::vector<double> ms;
    const json req = {{"keys", {kEmissions2030}}};
    for (int i = 0; i < 200; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = post("/api/predict", req);
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
        REQUIRE(r.status == 200);
    }
    std::sort(ms.begin(), ms.end());
    CHECK(ms[197] <= 50.0);
}

TEST_CASE("HTTP transport with CORS") {
    httplib::Server server;
    mount_api(server, service(), "http://explorer.local");
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    auto res = client.Get("/api/space");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "http://explorer.local");
    CHECK(json::parse(res->body)["inputs"].size() == 30);

    res = client.Options("/api/predict");
    REQUIRE(res);
    CHECK(res->status == 204);
    CHECK(res->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
    CHECK(res->get_header_value("Access-Control-Allow-Headers") == "Content-Type");

    res = client.Post("/api/predict", json{{"keys", {"global__emissions_Mt__2030"}}}.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body) == post("/api/predict", {{"keys", {"global__emissions_Mt__2030"}}}).body);

    res = client.Post("/api/predict", "{", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "http://explorer.local");

    res = client.Get("/api/sensitivity?output=emissions_Mt&year=2050");
    REQUIRE(res);
    CHECK(res->status == 200);

    server.stop();
    th.join();

    DecisionService cold(default_space());
    httplib::Server cold_server;
    mount_api(cold_server, cold);
    const int cold_port = cold_server.bind_to_any_port("127.0.0.1");
    std::thread ct([&] { cold_server.listen_after_bind(); });
    cold_server.wait_until_ready();
    httplib::Client cc("127.0.0.1", cold_port);
    res = cc.Get("/api/space");
    REQUIRE(res);
    CHECK(res->status == 503);
    CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
    cold_server.stop();
    ct.join();
}
