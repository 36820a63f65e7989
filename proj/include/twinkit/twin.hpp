#pragma once

// A digital twin: a serial-numbered runtime pairing a read-only trained model
// (possibly shared among many twins cloned from one training run) with JSON
// state storage and the device's HTTP routes. POST bodies run through the
// persisted transform manifest and the classifier; the predicted status code
// decides whether state is merged and persisted.

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "twinkit/common.hpp"
#include "twinkit/dataprep.hpp"
#include "twinkit/device_http.hpp"
#include "twinkit/maml.hpp"
#include "twinkit/mlp.hpp"
#include "twinkit/reference_device.hpp"
#include "twinkit/schema.hpp"

namespace twinkit::twin {

using net::DeviceResponse;
using nlohmann::json;

enum class CalibrationMode { off, shadow, authoritative };

inline CalibrationMode calibration_mode_from_string(const std::string& s) {
    if (s == "off") return CalibrationMode::off;
    if (s == "shadow") return CalibrationMode::shadow;
    if (s == "authoritative") return CalibrationMode::authoritative;
    throw UsageError("unknown calibration mode \"" + s + "\"");
}

struct CalibrationConfig {
    CalibrationMode mode = CalibrationMode::off;
    std::string device_endpoint;  // base URL of the physical device's write route

    void validate() const {
        if (mode != CalibrationMode::off && device_endpoint.empty())
            throw UsageError("calibration: device_endpoint required unless mode is off");
    }
};

struct CalibrationRecord {
    json request_body;
    int twin_status = 0;
    int device_status = 0;
    json device_config;
    std::string timestamp;

    json to_json() const {
        return json{{"request_body", request_body},
                    {"twin_status", twin_status},
                    {"device_status", device_status},
                    {"device_config", device_config},
                    {"timestamp", timestamp}};
    }
};

inline std::string iso_timestamp() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", &tm);
    return buf;
}

class TwinInstance : public net::DeviceHandler {
public:
    TwinInstance(schema::DeviceSchema device, std::string sn,
                 std::shared_ptr<const meta::ModelArtifact> artifact, std::string data_dir,
                 std::optional<json> initial_state = {}, CalibrationConfig calibration = {})
        : device_(std::move(device)),
          sn_(std::move(sn)),
          artifact_(std::move(artifact)),
          calibration_(std::move(calibration)) {
        if (sn_.rfind(device_.sn_prefix, 0) != 0)
            throw DataError("twin: serial number \"" + sn_ + "\" violates prefix \"" +
                            device_.sn_prefix + "\"");
        calibration_.validate();

        bool overlap = false;
        for (const auto& f : artifact_->manifest.feature_order)
            if (device_.find_property(f)) overlap = true;
        if (!overlap)
            throw ModelError("twin: model artifact shares no feature with schema \"" +
                             device_.device_name + "\"; not resolvable by manifest");

        std::filesystem::create_directories(data_dir);
        state_path_ = (std::filesystem::path(data_dir) / (sn_ + ".json")).string();
        calibration_log_path_ =
            (std::filesystem::path(data_dir) / (sn_ + ".calibration.jsonl")).string();

        if (initial_state) {
            state_ = *initial_state;
            persist_state();
        } else if (std::filesystem::exists(state_path_)) {
            std::ifstream in(state_path_, std::ios::binary);
            state_ = json::parse(in, nullptr, /*allow_exceptions=*/false);
            if (state_.is_discarded() || !state_.is_object())
                throw DataError("twin: corrupt state file " + state_path_);
        } else {
            state_ = schema::default_config(device_);
            persist_state();
        }
    }

    const std::string& serial_number() const { return sn_; }
    const schema::DeviceSchema& device_schema() const override { return device_; }
    std::shared_ptr<const meta::ModelArtifact> artifact() const { return artifact_; }

    DeviceResponse handle_get(const std::optional<std::string>& property) override {
        std::lock_guard<std::mutex> lock(mu_);
        DeviceResponse r;
        if (!property) {
            r.status_code = 200;
            r.body = state_;
        } else if (state_.contains(*property)) {
            r.status_code = 200;
            r.body = json{{*property, state_[*property]}};
        } else {
            r.status_code = 404;
            r.body = json{{"error", "unknown property \"" + *property + "\""}};
        }
        return r;
    }

    DeviceResponse handle_post(const std::string& body_text) override {
        json body = json::parse(body_text, nullptr, /*allow_exceptions=*/false);
        if (body.is_discarded() || !body.is_object()) {
            // Malformed input never reaches the model.
            DeviceResponse r;
            r.status_code = 400;
            r.body = json{{"error", "malformed request body"}};
            return r;
        }
        // POST handling (including the calibration round trip) is serialized
        // per twin; GETs only contend on the shorter state lock.
        std::lock_guard<std::mutex> post_lock(post_mu_);
        if (calibration_.mode == CalibrationMode::off) return local_post(body);
        return calibrated_post(body);
    }

    void reset_state() override {
        std::lock_guard<std::mutex> lock(mu_);
        state_ = schema::default_config(device_);
        persist_state();
    }

    json state() const {
        std::lock_guard<std::mutex> lock(mu_);
        return state_;
    }

private:
    // Model inference -> predicted status code; 2XX merges and persists.
    DeviceResponse local_post(const json& body) {
        std::lock_guard<std::mutex> lock(mu_);
        auto features = prep::apply_transform(artifact_->manifest, body);
        int cls = meta::predict_class(artifact_->model, features);
        int code = artifact_->model.label_codes[static_cast<size_t>(cls)];
        DeviceResponse r;
        r.status_code = code;
        if (net::status_family(code) == 2) {
            for (const auto& [k, v] : body.items()) state_[k] = v;
            persist_state();
            r.status_code = 200;
            r.body = state_;
        } else if (net::status_family(code) == 5) {
            r.body = json{{"error", "internal device fault"}};
        } else {
            r.body = json{{"error", "constraint violation"}};
        }
        return r;
    }

    DeviceResponse calibrated_post(const json& body) {
        DeviceResponse mine = local_post(body);

        net::DeviceResponse theirs;
        try {
            auto url = net::parse_url(calibration_.device_endpoint);
            net::DeviceClient client(url.origin);
            theirs = client.post(url.path, body);
        } catch (const NetworkError&) {
            // Fall back to twin-only behavior; divergence logging suspended.
            std::lock_guard<std::mutex> lock(mu_);
            if (!device_unreachable_warned_) {
                device_unreachable_warned_ = true;
                fprintf(stderr, "[twin %s] warning: calibration device unreachable; serving twin-only\n",
                        sn_.c_str());
            }
            return mine;
        }

        json device_config =
            net::status_family(theirs.status_code) == 2 ? theirs.body : fetch_device_config();
        bool family_diverged = net::status_family(mine.status_code) != net::status_family(theirs.status_code);
        bool state_diverged = device_config.is_object() && state() != device_config;

        if (family_diverged || state_diverged) {
            CalibrationRecord rec;
            rec.request_body = body;
            rec.twin_status = mine.status_code;
            rec.device_status = theirs.status_code;
            rec.device_config = device_config;
            rec.timestamp = iso_timestamp();
            std::lock_guard<std::mutex> lock(mu_);
            std::ofstream log(calibration_log_path_, std::ios::app | std::ios::binary);
            log << rec.to_json().dump() << "\n";
            if (device_config.is_object()) {
                state_ = device_config;
                persist_state();
            }
        }

        if (calibration_.mode == CalibrationMode::authoritative) {
            DeviceResponse r;
            r.status_code = theirs.status_code;
            r.body = theirs.body;
            return r;
        }
        return mine;  // shadow: the twin speaks for itself
    }

    json fetch_device_config() {
        try {
            auto url = net::parse_url(calibration_.device_endpoint);
            net::DeviceClient client(url.origin);
            auto r = client.get(url.path);
            if (net::status_family(r.status_code) == 2) return r.body;
        } catch (const NetworkError&) {
        }
        return json();
    }

    void persist_state() {
        // Atomic replace so a killed process never leaves a torn state file.
        std::string tmp = state_path_ + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            if (!out) throw DataError("twin: cannot write state file " + tmp);
            out << state_.dump(2) << "\n";
        }
        std::filesystem::rename(tmp, state_path_);
    }

    schema::DeviceSchema device_;
    std::string sn_;
    std::shared_ptr<const meta::ModelArtifact> artifact_;
    CalibrationConfig calibration_;
    std::string state_path_;
    std::string calibration_log_path_;
    std::mutex post_mu_;
    mutable std::mutex mu_;
    json state_;
    bool device_unreachable_warned_ = false;
};

// Calibration logs convert directly into raw datasets for fine-tuning: the
// request body supplies the features, the device's status code the label.
inline datagen::RawDataset calibration_log_to_raw(const std::string& jsonl_path,
                                                  const schema::DeviceSchema& device) {
    std::ifstream in(jsonl_path, std::ios::binary);
    if (!in) throw DataError("cannot open calibration log: " + jsonl_path);
    datagen::RawDataset ds;
    ds.device_name = device.device_name;
    ds.version_tag = device.version_tag;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (rec.is_discarded()) throw DataError("corrupt calibration log line in " + jsonl_path);
        datagen::RawRecord r;
        for (const auto& [k, v] : rec["request_body"].items()) r.features[k] = v;
        r.status_code = rec["device_status"].get<int>();
        ds.records.push_back(std::move(r));
    }
    if (ds.records.empty()) throw DataError("calibration log is empty: " + jsonl_path);
    return ds;
}

}  // namespace twinkit::twin
