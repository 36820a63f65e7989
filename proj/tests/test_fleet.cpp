#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <thread>

#include "twinkit/datagen.hpp"
#include "twinkit/fleet.hpp"
#include "twinkit/maml.hpp"

#ifndef TWINKIT_SCHEMA_DIR
#define TWINKIT_SCHEMA_DIR "schemas"
#endif

using namespace twinkit;
using nlohmann::json;

namespace {

std::string lite_schema_path() {
    return std::string(TWINKIT_SCHEMA_DIR) + "/dispenser-lite-v1.json";
}

// Minimal artifact for fleet mechanics: an untrained model is enough to
// exercise routing, state isolation and persistence.
std::string artifact_path() {
    static std::string cached = [] {
        auto device = schema::load_schema_file(lite_schema_path());

        datagen::RawDataset raw;
        refdev::ReferenceDeviceSpec spec;
        spec.device = device;
        spec.serial_number = "DSL-0001";
        refdev::ReferenceDevice dev(spec);
        Rng rng(31337);
        for (int i = 0; i < 80; ++i) {
            json body = datagen::sample_config(device, rng, 0.4);
            auto r = dev.handle_post(body.dump());
            datagen::RawRecord rec;
            for (const auto& [k, v] : body.items()) rec.features[k] = v;
            rec.status_code = r.status_code;
            raw.records.push_back(std::move(rec));
            dev.reset_state();
        }
        auto processed = prep::fit_transform(raw, device);
        auto model = meta::init_model(static_cast<int>(processed.manifest.n_features()),
                                      static_cast<int>(processed.manifest.n_classes()), 16, 5);
        model.feature_order = processed.manifest.feature_order;
        model.label_codes = processed.manifest.label_unmap;
        // Fleet tests exercise routing and state, not learning: pin the
        // model to always predict the success class.
        model.params.fill(0.0);
        model.params.b2[0] = 5.0;  // label_codes[0] == 200 (sorted codes)

        auto dir = std::filesystem::temp_directory_path() / "twinkit-fleet-fixture";
        std::filesystem::create_directories(dir);
        std::string path = (dir / "model.json").string();
        meta::save_model(path, model, processed.manifest, json::object());
        return path;
    }();
    return cached;
}

fleet::FleetConfig config_for(int count, const std::string& tag, int batch_size = 100) {
    auto dir = std::filesystem::temp_directory_path() / ("twinkit-fleet-" + tag);
    std::filesystem::remove_all(dir);
    fleet::FleetConfig cfg;
    cfg.batch_size = batch_size;
    cfg.data_dir = dir.string();
    for (int i = 0; i < count; ++i) {
        char sn[32];
        snprintf(sn, sizeof(sn), "DSL-%04d", i + 1);
        cfg.entries.push_back({sn, artifact_path(), lite_schema_path(), {}});
    }
    return cfg;
}

}  // namespace

TEST_CASE("every launched twin responds under its own serial number") {
    auto fleet = fleet::Fleet::launch(config_for(20, "liveness"));
    CHECK(fleet->active_twins() == 20);
    net::DeviceClient cli("http://127.0.0.1:" + std::to_string(fleet->port()));
    for (int i = 1; i <= 20; ++i) {
        char sn[32];
        snprintf(sn, sizeof(sn), "DSL-%04d", i);
        auto r = cli.get("/devices/" + std::string(sn) + "/config");
        CHECK(r.status_code == 200);
    }
    fleet->shutdown();
}

TEST_CASE("duplicate serial numbers abort the launch naming the culprit") {
    auto cfg = config_for(2, "dup");
    cfg.entries[1].serial_number = cfg.entries[0].serial_number;
    try {
        fleet::Fleet::launch(cfg);
        FAIL("expected duplicate-sn error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("DSL-0001") != std::string::npos);
    }
}

TEST_CASE("missing artifact aborts the launch naming the twin") {
    auto cfg = config_for(1, "missing");
    cfg.entries[0].model_path = "/nonexistent/model.json";
    try {
        fleet::Fleet::launch(cfg);
        FAIL("expected load error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("DSL-0001") != std::string::npos);
    }
}

TEST_CASE("single wave activation handles the whole fleet") {
    auto fleet = fleet::Fleet::launch(config_for(50, "wave", 1000));
    CHECK(fleet->active_twins() == 50);
    fleet->shutdown();
}

TEST_CASE("unknown serial numbers route to 404") {
    auto fleet = fleet::Fleet::launch(config_for(2, "unknown"));
    auto r = fleet->route_get("DSL-9999");
    CHECK(r.status_code == 404);
    net::DeviceClient cli("http://127.0.0.1:" + std::to_string(fleet->port()));
    CHECK(cli.get("/devices/DSL-9999/config").status_code == 404);
    fleet->shutdown();
}

TEST_CASE("requests to one twin never observe another twin's state") {
    auto fleet = fleet::Fleet::launch(config_for(10, "isolation"));
    net::DeviceClient cli("http://127.0.0.1:" + std::to_string(fleet->port()));

    // stamp each twin with its own volume through the HTTP surface
    for (int i = 1; i <= 10; ++i) {
        char sn[32];
        snprintf(sn, sizeof(sn), "DSL-%04d", i);
        auto r = cli.post("/devices/" + std::string(sn) + "/config",
                          json{{"alarm_volume", i % 11}});
        REQUIRE(r.status_code == 200);
    }
    for (int i = 1; i <= 10; ++i) {
        char sn[32];
        snprintf(sn, sizeof(sn), "DSL-%04d", i);
        auto r = cli.get("/devices/" + std::string(sn) + "/config");
        CHECK(r.body["alarm_volume"] == i % 11);
    }
    fleet->shutdown();
}

TEST_CASE("concurrent posts to distinct twins succeed independently") {
    auto fleet = fleet::Fleet::launch(config_for(8, "concurrent"));
    std::string base = "http://127.0.0.1:" + std::to_string(fleet->port());

    std::vector<std::thread> threads;
    std::atomic<int> failures{0};
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&, t] {
            net::DeviceClient cli(base);
            char sn[32];
            snprintf(sn, sizeof(sn), "DSL-%04d", t + 1);
            for (int i = 0; i < 25; ++i) {
                auto r = cli.post("/devices/" + std::string(sn) + "/config",
                                  json{{"alarm_volume", (t + i) % 11}});
                if (r.status_code != 200) failures++;
            }
        });
    }
    for (auto& th : threads) th.join();
    CHECK(failures == 0);

    auto stats = fleet->stats();
    CHECK(stats["total_requests"].get<int>() >= 200);
    CHECK(stats["active_twins"] == 8);
    fleet->shutdown();
}

TEST_CASE("fleet stats endpoint reports counters and latency percentiles") {
    auto fleet = fleet::Fleet::launch(config_for(3, "stats"));
    net::DeviceClient cli("http://127.0.0.1:" + std::to_string(fleet->port()));
    for (int i = 0; i < 10; ++i) cli.get("/devices/DSL-0001/config");
    auto r = cli.get("/fleet/stats");
    REQUIRE(r.status_code == 200);
    CHECK(r.body["total_requests"].get<int>() >= 10);
    CHECK(r.body["per_twin"].contains("DSL-0001"));
    CHECK(r.body.contains("p50_latency_ms"));
    CHECK(r.body.contains("p95_latency_ms"));
    fleet->shutdown();
}

TEST_CASE("twins sharing one artifact share one weight copy") {
    auto fleet = fleet::Fleet::launch(config_for(5, "sharing"));
    auto a = fleet->twin("DSL-0001");
    auto b = fleet->twin("DSL-0005");
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->artifact().get() == b->artifact().get());
    fleet->shutdown();
}

TEST_CASE("fleet config JSON round-trips") {
    auto cfg = config_for(3, "roundtrip");
    auto j = cfg.to_json();
    auto cfg2 = fleet::FleetConfig::from_json(j);
    CHECK(cfg2.to_json() == j);
    CHECK(cfg2.entries.size() == 3);
}
