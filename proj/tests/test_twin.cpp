#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "twinkit/datagen.hpp"
#include "twinkit/maml.hpp"
#include "twinkit/twin.hpp"

#ifndef TWINKIT_SCHEMA_DIR
#define TWINKIT_SCHEMA_DIR "schemas"
#endif

using namespace twinkit;
using nlohmann::json;

namespace {

schema::DeviceSchema lite_schema() {
    return schema::load_schema_file(std::string(TWINKIT_SCHEMA_DIR) + "/dispenser-lite-v1.json");
}

// One trained dispenser-lite model shared across the twin tests. Data comes
// straight from the rule engine (no HTTP) to keep the fixture fast.
std::shared_ptr<const meta::ModelArtifact> lite_artifact() {
    static std::shared_ptr<const meta::ModelArtifact> cached = [] {
        auto device = lite_schema();
        refdev::ReferenceDeviceSpec spec;
        spec.device = device;
        spec.serial_number = "DSL-0001";
        refdev::ReferenceDevice dev(spec);

        datagen::RawDataset raw;
        raw.device_name = device.device_name;
        raw.version_tag = device.version_tag;
        Rng rng(20240801);
        for (int i = 0; i < 900; ++i) {
            json body = datagen::sample_config(device, rng, 0.35);
            auto r = dev.handle_post(body.dump());
            datagen::RawRecord rec;
            for (const auto& [k, v] : body.items()) rec.features[k] = v;
            rec.status_code = r.status_code;
            raw.records.push_back(std::move(rec));
            dev.reset_state();
        }
        auto processed = prep::fit_transform(raw, device);

        meta::TaskConfig tc;
        tc.n_ways = static_cast<int>(processed.manifest.n_classes());
        tc.k_shots = 1;
        tc.task_size = 128;
        meta::TrainConfig cfg;
        cfg.seed = 99;
        cfg.hidden_dim = 32;
        cfg.max_iterations = 1500;
        cfg.patience = 100;
        auto [model, report] = meta::train_maml(processed, tc, cfg);

        auto a = std::make_shared<meta::ModelArtifact>();
        a->model = std::move(model);
        a->manifest = processed.manifest;
        a->training = meta::make_train_digest(tc, cfg);
        return std::shared_ptr<const meta::ModelArtifact>(a);
    }();
    return cached;
}

std::string fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("twinkit-twin-" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("fresh twin serves schema defaults and creates its state file") {
    auto dir = fresh_dir("fresh");
    twin::TwinInstance t(lite_schema(), "DSL-0001", lite_artifact(), dir);
    auto r = t.handle_get(std::nullopt);
    CHECK(r.status_code == 200);
    CHECK(r.body == schema::default_config(lite_schema()));
    CHECK(std::filesystem::exists(dir + "/DSL-0001.json"));
}

TEST_CASE("two twins from one artifact share parameters but not state") {
    auto dir = fresh_dir("clone");
    twin::TwinInstance a(lite_schema(), "DSL-0001", lite_artifact(), dir);
    twin::TwinInstance b(lite_schema(), "DSL-0002", lite_artifact(), dir);
    CHECK(a.artifact().get() == b.artifact().get());  // one read-only copy

    a.handle_post(json{{"alarm_volume", 8}}.dump());
    CHECK(a.state()["alarm_volume"] == 8);
    CHECK(b.state()["alarm_volume"] == 3);  // untouched default
    CHECK(std::filesystem::exists(dir + "/DSL-0001.json"));
    CHECK(std::filesystem::exists(dir + "/DSL-0002.json"));
}

TEST_CASE("serial numbers must honor the schema prefix") {
    auto dir = fresh_dir("prefix");
    CHECK_THROWS_AS(twin::TwinInstance(lite_schema(), "XX-0001", lite_artifact(), dir),
                    DataError);
}

TEST_CASE("selector reads reflect state changes; unknown selector is 4XX") {
    auto dir = fresh_dir("selector");
    twin::TwinInstance t(lite_schema(), "DSL-0001", lite_artifact(), dir);
    t.handle_post(json{{"alarm_volume", 6}}.dump());
    auto r = t.handle_get("alarm_volume");
    CHECK(r.status_code == 200);
    CHECK(r.body == json{{"alarm_volume", 6}});
    CHECK(t.handle_get("bogus").status_code == 404);
}

TEST_CASE("twin post: prediction decides merge/reject") {
    auto dir = fresh_dir("post");
    twin::TwinInstance t(lite_schema(), "DSL-0001", lite_artifact(), dir);

    SECTION("clearly valid body merges and returns the merged config") {
        auto r = t.handle_post(json{{"alarm_volume", 5}, {"language", "EN"}}.dump());
        REQUIRE(r.status_code == 200);
        CHECK(r.body["alarm_volume"] == 5);
        CHECK(r.body["language"] == "EN");
        CHECK(t.state()["alarm_volume"] == 5);
    }
    SECTION("unknown enum token is predicted as a constraint violation") {
        auto before = t.state();
        auto r = t.handle_post(json{{"language", "XX"}}.dump());
        CHECK(r.status_code == 422);
        CHECK(t.state() == before);
    }
    SECTION("malformed body is 400 and does not touch state") {
        auto before = t.state();
        auto r = t.handle_post("{nope");
        CHECK(r.status_code == 400);
        CHECK(t.state() == before);
    }
}

TEST_CASE("twin agrees with the rule engine on most random bodies") {
    auto dir = fresh_dir("agreement");
    auto device = lite_schema();
    twin::TwinInstance t(device, "DSL-0001", lite_artifact(), dir);
    refdev::ReferenceDeviceSpec spec;
    spec.device = device;
    spec.serial_number = "DSL-0009";
    refdev::ReferenceDevice dev(spec);

    Rng rng(515);
    int agree = 0, total = 200;
    for (int i = 0; i < total; ++i) {
        json body = datagen::sample_config(device, rng, 0.4);
        auto tr = t.handle_post(body.dump());
        auto dr = dev.handle_post(body.dump());
        if (net::status_family(tr.status_code) == net::status_family(dr.status_code)) agree++;
        t.reset_state();
        dev.reset_state();
    }
    CHECK(agree >= total * 9 / 10);
}

TEST_CASE("failed posts never change subsequent reads") {
    auto dir = fresh_dir("nofail");
    auto device = lite_schema();
    twin::TwinInstance t(device, "DSL-0001", lite_artifact(), dir);
    Rng rng(616);
    for (int i = 0; i < 300; ++i) {
        json body = datagen::sample_config(device, rng, 0.5);
        auto before = t.handle_get(std::nullopt).body;
        auto r = t.handle_post(body.dump());
        if (net::status_family(r.status_code) != 2)
            CHECK(t.handle_get(std::nullopt).body == before);
    }
}

TEST_CASE("repeat GETs are byte-identical absent interleaved posts") {
    auto dir = fresh_dir("getpure");
    twin::TwinInstance t(lite_schema(), "DSL-0001", lite_artifact(), dir);
    auto a = t.handle_get(std::nullopt);
    auto b = t.handle_get(std::nullopt);
    CHECK(a.body.dump() == b.body.dump());
    CHECK(a.status_code == b.status_code);
}

TEST_CASE("restart recovers the last persisted state") {
    auto dir = fresh_dir("restart");
    {
        twin::TwinInstance t(lite_schema(), "DSL-0001", lite_artifact(), dir);
        auto r = t.handle_post(json{{"alarm_volume", 7}, {"keypad_locked", true}}.dump());
        REQUIRE(r.status_code == 200);
    }
    twin::TwinInstance reborn(lite_schema(), "DSL-0001", lite_artifact(), dir);
    CHECK(reborn.state()["alarm_volume"] == 7);
    CHECK(reborn.state()["keypad_locked"] == true);
}

TEST_CASE("model parameters are bit-identical after request volume") {
    auto dir = fresh_dir("immutable");
    auto artifact = lite_artifact();
    auto w1_before = artifact->model.params.w1;
    twin::TwinInstance t(lite_schema(), "DSL-0001", artifact, dir);
    Rng rng(717);
    for (int i = 0; i < 100; ++i)
        t.handle_post(datagen::sample_config(lite_schema(), rng, 0.3).dump());
    CHECK(artifact->model.params.w1 == w1_before);
}

namespace {

struct LiveDevice {
    net::DeviceHttpServer server;
    std::shared_ptr<refdev::ReferenceDevice> dev;
    std::string endpoint;

    LiveDevice() {
        refdev::ReferenceDeviceSpec spec;
        spec.device = lite_schema();
        spec.serial_number = "DSL-0001";
        dev = std::make_shared<refdev::ReferenceDevice>(spec);
        server.add_device("DSL-0001", dev);
        int port = server.start();
        endpoint = "http://127.0.0.1:" + std::to_string(port) + "/devices/DSL-0001/config";
    }
};

// Artifact with swapped status codes: predictions come out inverted, forcing
// twin/device divergence.
std::shared_ptr<const meta::ModelArtifact> corrupted_artifact() {
    auto good = lite_artifact();
    auto bad = std::make_shared<meta::ModelArtifact>(*good);
    std::reverse(bad->model.label_codes.begin(), bad->model.label_codes.end());
    return bad;
}

}  // namespace

TEST_CASE("calibration off behaves exactly like a plain twin post") {
    auto dir = fresh_dir("caloff");
    twin::CalibrationConfig off;  // mode=off
    twin::TwinInstance plain(lite_schema(), "DSL-0001", lite_artifact(), dir);
    twin::TwinInstance calibrated(lite_schema(), "DSL-0002", lite_artifact(), dir, std::nullopt, off);
    json body{{"alarm_volume", 4}};
    auto a = plain.handle_post(body.dump());
    auto b = calibrated.handle_post(body.dump());
    CHECK(a.status_code == b.status_code);
    CHECK(a.body.dump() == b.body.dump());
}

TEST_CASE("shadow calibration records divergence and syncs state from the device") {
    LiveDevice live;
    auto dir = fresh_dir("shadow");
    twin::CalibrationConfig cal;
    cal.mode = twin::CalibrationMode::shadow;
    cal.device_endpoint = live.endpoint;

    SECTION("agreement appends no record") {
        twin::TwinInstance t(lite_schema(), "DSL-0001", lite_artifact(), dir, std::nullopt, cal);
        auto r = t.handle_post(json{{"alarm_volume", 5}}.dump());
        CHECK(r.status_code == 200);
        CHECK_FALSE(std::filesystem::exists(dir + "/DSL-0001.calibration.jsonl"));
    }

    SECTION("forced disagreement appends a record and adopts the device state") {
        live.dev->reset_state();
        twin::TwinInstance t(lite_schema(), "DSL-0003", corrupted_artifact(), dir, std::nullopt, cal);
        auto r = t.handle_post(json{{"alarm_volume", 5}}.dump());
        // shadow: the twin's own (wrong) answer is returned
        CHECK(r.status_code != 200);
        REQUIRE(std::filesystem::exists(dir + "/DSL-0003.calibration.jsonl"));
        CHECK(t.state() == live.dev->state());

        auto raw = twin::calibration_log_to_raw(dir + "/DSL-0003.calibration.jsonl", lite_schema());
        REQUIRE(raw.records.size() == 1);
        CHECK(raw.records[0].status_code == 200);  // device's verdict is the label
    }
}

TEST_CASE("authoritative calibration answers with the device result") {
    LiveDevice live;
    live.dev->reset_state();
    auto dir = fresh_dir("authoritative");
    twin::CalibrationConfig cal;
    cal.mode = twin::CalibrationMode::authoritative;
    cal.device_endpoint = live.endpoint;
    twin::TwinInstance t(lite_schema(), "DSL-0004", corrupted_artifact(), dir, std::nullopt, cal);
    auto r = t.handle_post(json{{"alarm_volume", 5}}.dump());
    CHECK(r.status_code == 200);  // device accepted even though the twin disagreed
    CHECK(t.state()["alarm_volume"] == 5);
}

TEST_CASE("unreachable calibration device falls back to twin-only behavior") {
    auto dir = fresh_dir("unreachable");
    twin::CalibrationConfig cal;
    cal.mode = twin::CalibrationMode::shadow;
    cal.device_endpoint = "http://127.0.0.1:9/devices/DSL-0001/config";
    twin::TwinInstance t(lite_schema(), "DSL-0005", lite_artifact(), dir, std::nullopt, cal);
    auto r = t.handle_post(json{{"alarm_volume", 5}}.dump());
    CHECK(r.status_code == 200);
    CHECK(t.state()["alarm_volume"] == 5);
}

TEST_CASE("calibration config requires an endpoint unless off") {
    twin::CalibrationConfig cal;
    cal.mode = twin::CalibrationMode::shadow;
    CHECK_THROWS_AS(cal.validate(), UsageError);
}
