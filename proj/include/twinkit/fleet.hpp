#pragma once

// Fleet gateway: launches many twins behind one HTTP server and routes by
// serial number. Twins cloned from the same artifact share one read-only
// copy of the weights, so memory grows with state, not with parameters.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "twinkit/common.hpp"
#include "twinkit/device_http.hpp"
#include "twinkit/maml.hpp"
#include "twinkit/schema.hpp"
#include "twinkit/twin.hpp"

namespace twinkit::fleet {

using nlohmann::json;

struct FleetEntry {
    std::string serial_number;
    std::string model_path;
    std::string schema_path;
    twin::CalibrationConfig calibration;
};

struct FleetConfig {
    std::vector<FleetEntry> entries;
    int port = 0;          // 0 = pick any free port
    int batch_size = 100;  // twins activated per wave
    std::string data_dir = "twin-data";

    static FleetConfig from_json(const json& j) {
        FleetConfig cfg;
        cfg.port = j.value("port", 0);
        cfg.batch_size = j.value("batch_size", 100);
        cfg.data_dir = j.value("data_dir", "twin-data");
        for (const auto& e : j.at("entries")) {
            FleetEntry entry;
            entry.serial_number = e.at("serial_number").get<std::string>();
            entry.model_path = e.at("model").get<std::string>();
            entry.schema_path = e.at("schema").get<std::string>();
            if (e.contains("calibration")) {
                entry.calibration.mode =
                    twin::calibration_mode_from_string(e["calibration"].value("mode", "off"));
                entry.calibration.device_endpoint = e["calibration"].value("device_endpoint", "");
            }
            cfg.entries.push_back(std::move(entry));
        }
        return cfg;
    }

    json to_json() const {
        json entries_json = json::array();
        for (const auto& e : entries) {
            json ej{{"serial_number", e.serial_number},
                    {"model", e.model_path},
                    {"schema", e.schema_path}};
            if (e.calibration.mode != twin::CalibrationMode::off) {
                ej["calibration"] = {
                    {"mode", e.calibration.mode == twin::CalibrationMode::shadow ? "shadow"
                                                                                 : "authoritative"},
                    {"device_endpoint", e.calibration.device_endpoint}};
            }
            entries_json.push_back(std::move(ej));
        }
        return json{{"port", port},
                    {"batch_size", batch_size},
                    {"data_dir", data_dir},
                    {"entries", entries_json}};
    }

    void validate() const {
        if (batch_size < 1) throw DataError("fleet: batch_size must be >= 1");
        std::set<std::string> seen;
        for (const auto& e : entries)
            if (!seen.insert(e.serial_number).second)
                throw DataError("fleet: duplicate serial number \"" + e.serial_number + "\"");
    }
};

class Fleet {
public:
    // All twins are reachable once this returns; activation happens in waves
    // of batch_size. Any artifact or schema failing to load aborts the launch
    // naming the offending serial number.
    static std::unique_ptr<Fleet> launch(const FleetConfig& cfg) {
        cfg.validate();
        auto fleet = std::unique_ptr<Fleet>(new Fleet());

        // Artifacts and schemas are loaded once per path and shared.
        std::map<std::string, std::shared_ptr<const meta::ModelArtifact>> artifacts;
        std::map<std::string, schema::DeviceSchema> schemas;
        for (const auto& e : cfg.entries) {
            try {
                if (!artifacts.count(e.model_path))
                    artifacts[e.model_path] =
                        std::make_shared<const meta::ModelArtifact>(meta::load_model(e.model_path));
                if (!schemas.count(e.schema_path))
                    schemas[e.schema_path] = schema::load_schema_file(e.schema_path);
            } catch (const Error& err) {
                throw ModelError("fleet: twin \"" + e.serial_number +
                                 "\" failed to load: " + err.what());
            }
        }

        for (size_t wave = 0; wave < cfg.entries.size();
             wave += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(cfg.entries.size(), wave + static_cast<size_t>(cfg.batch_size));
            for (size_t i = wave; i < end; ++i) {
                const auto& e = cfg.entries[i];
                auto t = std::make_shared<twin::TwinInstance>(
                    schemas.at(e.schema_path), e.serial_number, artifacts.at(e.model_path),
                    cfg.data_dir, std::nullopt, e.calibration);
                fleet->server_.add_device(e.serial_number, t);
                fleet->twins_[e.serial_number] = t;
            }
        }
        fleet->server_.start(cfg.port);
        return fleet;
    }

    int port() const { return server_.port(); }
    size_t active_twins() const { return twins_.size(); }

    std::shared_ptr<twin::TwinInstance> twin(const std::string& sn) const {
        auto it = twins_.find(sn);
        return it == twins_.end() ? nullptr : it->second;
    }

    // In-process dispatch, mirroring what the HTTP routes do.
    net::DeviceResponse route_get(const std::string& sn,
                                  const std::optional<std::string>& property = {}) {
        auto t = twin(sn);
        if (!t) return unknown_sn(sn);
        return t->handle_get(property);
    }

    net::DeviceResponse route_post(const std::string& sn, const std::string& body) {
        auto t = twin(sn);
        if (!t) return unknown_sn(sn);
        return t->handle_post(body);
    }

    json stats() const { return server_.stats_json(); }

    // Drains by stopping the listener; in-flight handlers finish first.
    void shutdown() { server_.stop(); }

private:
    Fleet() = default;

    static net::DeviceResponse unknown_sn(const std::string& sn) {
        net::DeviceResponse r;
        r.status_code = 404;
        r.body = json{{"error", "unknown serial number \"" + sn + "\""}};
        return r;
    }

    net::DeviceHttpServer server_;
    std::map<std::string, std::shared_ptr<twin::TwinInstance>> twins_;
};

// Convenience for tests and the evaluation harness: hosts one reference
// device per serial number behind the same gateway mechanics.
class EmulatorFleet {
public:
    static std::unique_ptr<EmulatorFleet> launch(const schema::DeviceSchema& device,
                                                 const std::vector<std::string>& serials,
                                                 double fault_rate, uint64_t seed, int port = 0) {
        auto fleet = std::unique_ptr<EmulatorFleet>(new EmulatorFleet());
        for (const auto& sn : serials) {
            refdev::ReferenceDeviceSpec spec;
            spec.device = device;
            spec.serial_number = sn;
            spec.fault_rate = fault_rate;
            spec.seed = seed;  // same seed: clones of one physical design
            auto dev = std::make_shared<refdev::ReferenceDevice>(spec);
            fleet->server_.add_device(sn, dev);
            fleet->devices_[sn] = dev;
        }
        fleet->server_.start(port);
        return fleet;
    }

    int port() const { return server_.port(); }
    std::shared_ptr<refdev::ReferenceDevice> device(const std::string& sn) const {
        auto it = devices_.find(sn);
        return it == devices_.end() ? nullptr : it->second;
    }
    void shutdown() { server_.stop(); }

private:
    EmulatorFleet() = default;

    net::DeviceHttpServer server_;
    std::map<std::string, std::shared_ptr<refdev::ReferenceDevice>> devices_;
};

}  // namespace twinkit::fleet
