#pragma once

// HTTP hosting and client plumbing shared by the reference-device emulator,
// single twins, and the fleet gateway. One DeviceHttpServer hosts any number
// of device handlers keyed by serial number; routes come from the devices'
// schema endpoint templates.

#ifndef CPPHTTPLIB_THREAD_POOL_COUNT
#define CPPHTTPLIB_THREAD_POOL_COUNT 32
#endif

#include <algorithm>
#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "twinkit/common.hpp"
#include "twinkit/schema.hpp"

namespace twinkit::net {

using nlohmann::json;

struct DeviceResponse {
    int status_code = 0;
    json body;
    double processing_time_ms = 0.0;
};

inline int status_family(int code) { return code / 100; }

// Interface every hosted device (emulator instance or twin) implements.
// Handlers must be safe for concurrent calls; mutation is serialized inside.
class DeviceHandler {
public:
    virtual ~DeviceHandler() = default;
    virtual DeviceResponse handle_get(const std::optional<std::string>& property) = 0;
    virtual DeviceResponse handle_post(const std::string& body) = 0;
    virtual void reset_state() = 0;
    virtual const schema::DeviceSchema& device_schema() const = 0;
};

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

struct RequestStats {
    uint64_t total = 0;
    uint64_t ok_2xx = 0;
    uint64_t err_4xx = 0;
    uint64_t err_5xx = 0;
};

class DeviceHttpServer {
public:
    DeviceHttpServer() {
        server_.Get("/fleet/stats", [this](const httplib::Request&, httplib::Response& res) {
            res.set_content(stats_json().dump(2), "application/json");
        });
    }

    ~DeviceHttpServer() { stop(); }

    DeviceHttpServer(const DeviceHttpServer&) = delete;
    DeviceHttpServer& operator=(const DeviceHttpServer&) = delete;

    // Registers a device under its serial number and wires the routes from
    // its schema's endpoint templates. Must be called before start().
    void add_device(const std::string& sn, std::shared_ptr<DeviceHandler> handler) {
        std::lock_guard<std::mutex> lock(mu_);
        if (!devices_.emplace(sn, std::move(handler)).second)
            throw DataError("fleet: duplicate serial number \"" + sn + "\"");
        const auto& s = devices_[sn]->device_schema();
        for (const auto& e : s.endpoints) register_route(e);
        register_reset_route(s);
    }

    void remove_device(const std::string& sn) {
        std::lock_guard<std::mutex> lock(mu_);
        devices_.erase(sn);
    }

    size_t device_count() const {
        std::lock_guard<std::mutex> lock(mu_);
        return devices_.size();
    }

    // Binds and serves on a background thread. port 0 picks a free port.
    int start(int port = 0, const std::string& host = "127.0.0.1") {
        if (port == 0) {
            port_ = server_.bind_to_any_port(host);
            if (port_ < 0) throw NetworkError("server: failed to bind to any port");
        } else {
            if (!server_.bind_to_port(host, port))
                throw NetworkError("server: port unavailable: " + std::to_string(port));
            port_ = port;
        }
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    int port() const { return port_; }

    json stats_json() const {
        std::lock_guard<std::mutex> lock(stats_mu_);
        json per_twin = json::object();
        for (const auto& [sn, st] : per_device_) {
            per_twin[sn] = {{"requests", st.total},
                            {"ok_2xx", st.ok_2xx},
                            {"err_4xx", st.err_4xx},
                            {"err_5xx", st.err_5xx}};
        }
        std::vector<double> lat = latencies_ms_;
        std::sort(lat.begin(), lat.end());
        auto pct = [&](double q) -> double {
            if (lat.empty()) return 0.0;
            size_t i = static_cast<size_t>(q * static_cast<double>(lat.size() - 1));
            return lat[i];
        };
        return json{{"active_twins", devices_.size()},
                    {"total_requests", total_.total},
                    {"ok_2xx", total_.ok_2xx},
                    {"err_4xx", total_.err_4xx},
                    {"err_5xx", total_.err_5xx},
                    {"p50_latency_ms", pct(0.50)},
                    {"p95_latency_ms", pct(0.95)},
                    {"per_twin", per_twin}};
    }

private:
    void register_route(const schema::EndpointSpec& e) {
        std::string pattern = route_pattern(e.path);
        if (!registered_.insert(e.method + " " + pattern).second) return;
        auto handler = [this](const httplib::Request& req, httplib::Response& res) {
            dispatch(req, res);
        };
        if (e.method == "GET") server_.Get(pattern, handler);
        else server_.Post(pattern, handler);
    }

    void register_reset_route(const schema::DeviceSchema& s) {
        // Testing facility: restores a device's state to schema defaults.
        // Not part of the device API surface; the fidelity harness uses it
        // to isolate per-request comparisons.
        const auto* e = s.endpoint_for(schema::EndpointRole::write_config);
        std::string base = e->path.substr(0, e->path.find("{sn}"));
        std::string pattern = base + ":sn/reset";
        if (!registered_.insert("POST " + pattern).second) return;
        server_.Post(pattern, [this](const httplib::Request& req, httplib::Response& res) {
            auto dev = find_device(req.path_params.at("sn"));
            if (!dev) {
                res.status = 404;
                res.set_content(json{{"error", "unknown serial number"}}.dump(), "application/json");
                return;
            }
            dev->reset_state();
            res.status = 200;
            res.set_content(json{{"reset", true}}.dump(), "application/json");
        });
    }

    static std::string route_pattern(const std::string& path_template) {
        // "{sn}" becomes the httplib path parameter ":sn".
        std::string p = path_template;
        size_t pos = p.find("{sn}");
        p.replace(pos, 4, ":sn");
        return p;
    }

    std::shared_ptr<DeviceHandler> find_device(const std::string& sn) const {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = devices_.find(sn);
        return it == devices_.end() ? nullptr : it->second;
    }

    void dispatch(const httplib::Request& req, httplib::Response& res) {
        auto start = Clock::now();
        std::string sn = req.path_params.count("sn") ? req.path_params.at("sn") : "";
        auto dev = find_device(sn);
        DeviceResponse dr;
        if (!dev) {
            dr.status_code = 404;
            dr.body = json{{"error", "unknown serial number \"" + sn + "\""}};
        } else if (req.method == "GET") {
            std::optional<std::string> selector;
            if (req.has_param("property")) selector = req.get_param_value("property");
            dr = dev->handle_get(selector);
        } else {
            dr = dev->handle_post(req.body);
        }
        res.status = dr.status_code;
        res.set_content(dr.body.dump(), "application/json");
        record(sn, dr.status_code, elapsed_ms(start));
    }

    void record(const std::string& sn, int status, double ms) {
        std::lock_guard<std::mutex> lock(stats_mu_);
        auto bump = [&](RequestStats& st) {
            st.total++;
            int fam = status_family(status);
            if (fam == 2) st.ok_2xx++;
            else if (fam == 4) st.err_4xx++;
            else if (fam == 5) st.err_5xx++;
        };
        bump(total_);
        if (!sn.empty()) bump(per_device_[sn]);
        latencies_ms_.push_back(ms);
    }

    httplib::Server server_;
    std::thread thread_;
    int port_ = -1;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<DeviceHandler>> devices_;
    std::set<std::string> registered_;
    mutable std::mutex stats_mu_;
    std::map<std::string, RequestStats> per_device_;
    RequestStats total_;
    std::vector<double> latencies_ms_;
};

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

// Splits "http://host:port/some/path" into origin and path.
struct ParsedUrl {
    std::string origin;  // scheme://host:port
    std::string path;    // /some/path (possibly empty -> "/")
};

inline ParsedUrl parse_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re))
        throw UsageError("malformed URL: " + url);
    return ParsedUrl{m[1].str(), m[2].matched ? m[2].str() : "/"};
}

// Thin wrapper over httplib::Client returning DeviceResponse. One client per
// thread; httplib clients are not meant for concurrent reuse.
class DeviceClient {
public:
    explicit DeviceClient(const std::string& origin) : cli_(origin) {
        cli_.set_connection_timeout(10);
        cli_.set_read_timeout(30);
        cli_.set_keep_alive(true);
    }

    DeviceResponse get(const std::string& path, const std::optional<std::string>& property = {}) {
        std::string p = path;
        if (property) p += "?property=" + *property;
        auto start = Clock::now();
        auto r = cli_.Get(p);
        return to_response(r, elapsed_ms(start));
    }

    DeviceResponse post(const std::string& path, const json& body) {
        auto start = Clock::now();
        auto r = cli_.Post(path, body.dump(), "application/json");
        return to_response(r, elapsed_ms(start));
    }

    DeviceResponse post_raw(const std::string& path, const std::string& body) {
        auto start = Clock::now();
        auto r = cli_.Post(path, body, "application/json");
        return to_response(r, elapsed_ms(start));
    }

private:
    static DeviceResponse to_response(const httplib::Result& r, double ms) {
        if (!r) throw NetworkError("device unreachable: " + httplib::to_string(r.error()));
        DeviceResponse dr;
        dr.status_code = r->status;
        dr.processing_time_ms = ms;
        if (!r->body.empty()) {
            dr.body = json::parse(r->body, nullptr, /*allow_exceptions=*/false);
            if (dr.body.is_discarded()) dr.body = json{{"raw", r->body}};
        }
        return dr;
    }

    httplib::Client cli_;
};

// Substitutes the serial number into a schema endpoint template.
inline std::string endpoint_path(const schema::EndpointSpec& e, const std::string& sn) {
    std::string p = e.path;
    p.replace(p.find("{sn}"), 4, sn);
    return p;
}

inline std::string reset_path(const schema::DeviceSchema& s, const std::string& sn) {
    const auto* e = s.endpoint_for(schema::EndpointRole::write_config);
    std::string base = e->path.substr(0, e->path.find("{sn}"));
    return base + sn + "/reset";
}

}  // namespace twinkit::net
