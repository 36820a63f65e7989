#pragma once

// Rule-based reference device emulator: the ground-truth oracle that stands
// in for a physical device. It validates POSTed configurations against its
// schema, keeps JSON state, and can inject faults and latency.
//
// Status-code policy: 400 malformed body, 422 constraint violation,
// 500 injected fault, 200 success.
//
// Fault injection is a seeded hash of the request body, so a given (device
// seed, body) pair always produces the same outcome. Over the body space the
// fault frequency matches fault_rate, while the emulator stays non-flaky:
// re-sending a request yields the same response, matching how stable device
// firmware behaves.

#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "twinkit/common.hpp"
#include "twinkit/device_http.hpp"
#include "twinkit/schema.hpp"

namespace twinkit::refdev {

using net::DeviceResponse;
using nlohmann::json;

struct LatencySpec {
    double min_ms = 0.0;
    double max_ms = 0.0;  // == min_ms means fixed delay

    static LatencySpec fixed(double ms) { return {ms, ms}; }
};

struct ReferenceDeviceSpec {
    schema::DeviceSchema device;
    std::string serial_number;
    double fault_rate = 0.0;  // probability of a 5XX on otherwise-valid input
    LatencySpec latency;
    uint64_t seed = 0;
};

class ReferenceDevice : public net::DeviceHandler {
public:
    explicit ReferenceDevice(ReferenceDeviceSpec spec)
        : spec_(std::move(spec)), latency_rng_(derive_seed(spec_.seed, "latency")) {
        if (spec_.fault_rate < 0.0 || spec_.fault_rate > 1.0)
            throw DataError("refdev: fault_rate must be in [0,1]");
        if (spec_.latency.min_ms < 0.0 || spec_.latency.max_ms < spec_.latency.min_ms)
            throw DataError("refdev: latency must be non-negative");
        state_ = schema::default_config(spec_.device);
    }

    const schema::DeviceSchema& device_schema() const override { return spec_.device; }
    const std::string& serial_number() const { return spec_.serial_number; }

    DeviceResponse handle_get(const std::optional<std::string>& property) override {
        auto start = Clock::now();
        inject_latency();
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
        r.processing_time_ms = elapsed_ms(start);
        return r;
    }

    DeviceResponse handle_post(const std::string& body_text) override {
        auto start = Clock::now();
        inject_latency();
        std::lock_guard<std::mutex> lock(mu_);
        DeviceResponse r;
        json body = json::parse(body_text, nullptr, /*allow_exceptions=*/false);
        if (body.is_discarded() || !body.is_object()) {
            r.status_code = 400;
            r.body = json{{"error", "malformed request body"}};
        } else {
            auto vr = schema::validate_config(spec_.device, merged_with_state(body));
            if (!vr.ok()) {
                r.status_code = 422;
                r.body = json{{"error", "constraint violation"}};
            } else if (is_faulted(body)) {
                r.status_code = 500;
                r.body = json{{"error", "internal device fault"}};
            } else {
                for (const auto& [k, v] : body.items()) state_[k] = v;
                r.status_code = 200;
                r.body = state_;
            }
        }
        r.processing_time_ms = elapsed_ms(start);
        return r;
    }

    void reset_state() override {
        std::lock_guard<std::mutex> lock(mu_);
        state_ = schema::default_config(spec_.device);
    }

    json state() const {
        std::lock_guard<std::mutex> lock(mu_);
        return state_;
    }

    // Exposed so tests and schema design can check which bodies fault.
    bool is_faulted(const json& valid_body) const {
        if (spec_.fault_rate <= 0.0) return false;
        uint64_t h = fnv1a64(valid_body.dump(), mix64(spec_.seed ^ 0x5eedfau));
        double u = static_cast<double>(h >> 11) * 0x1.0p-53;
        return u < spec_.fault_rate;
    }

private:
    // POST bodies are partial updates merged over current state, so absent
    // required properties are not violations here; per-value rules still are.
    schema::DeviceConfig merged_with_state(const json& body) const {
        json full = state_;
        for (const auto& [k, v] : body.items()) full[k] = v;
        return full;
    }

    void inject_latency() {
        double ms;
        {
            std::lock_guard<std::mutex> lock(latency_mu_);
            ms = spec_.latency.max_ms > spec_.latency.min_ms
                     ? latency_rng_.uniform(spec_.latency.min_ms, spec_.latency.max_ms)
                     : spec_.latency.min_ms;
        }
        if (ms > 0.0)
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
    }

    ReferenceDeviceSpec spec_;
    mutable std::mutex mu_;
    json state_;
    std::mutex latency_mu_;
    Rng latency_rng_;
};

}  // namespace twinkit::refdev
