#pragma once

// Phase 1: probe a device endpoint with randomized within/out-of-range
// configurations under a request/time budget and rate limit, compiling the
// raw tabular dataset. Request issuance is strictly sequential; the delay is
// a rate-limit contract protecting real devices.

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "twinkit/common.hpp"
#include "twinkit/device_http.hpp"
#include "twinkit/schema.hpp"

namespace twinkit::datagen {

using nlohmann::json;

struct RawRecord {
    std::map<std::string, json> features;  // property name -> raw value
    double processing_time_ms = 0.0;
    int status_code = 0;
};

struct RawDataset {
    std::string device_name;
    std::string version_tag;
    std::vector<RawRecord> records;
    bool complete = true;
};

struct GenBudget {
    std::optional<int> max_requests;
    std::optional<double> max_duration_ms;
    double delay_ms = 3000.0;     // delay between two successive requests
    double p_out_of_range = 0.3;  // per-property corruption probability

    void validate() const {
        if (!max_requests && !max_duration_ms)
            throw DataError("budget: set max_requests and/or max_duration");
        if ((max_requests && *max_requests <= 0) || (max_duration_ms && *max_duration_ms <= 0))
            throw DataError("budget: yields an empty dataset");
        if (p_out_of_range < 0.0 || p_out_of_range > 1.0)
            throw DataError("budget: p_out_of_range must be in [0,1]");
        if (delay_ms < 0.0) throw DataError("budget: delay must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// Value sampling
// ---------------------------------------------------------------------------

namespace detail {

// Tokens deliberately carry the special characters the preparation phase
// strips; none of them collides with a legal enum token after stripping.
inline const std::vector<std::string>& bad_enum_tokens() {
    static const std::vector<std::string> t = {"%INVALID%", "__unknown__", "*oops*"};
    return t;
}
inline const std::vector<std::string>& bad_bool_tokens() {
    static const std::vector<std::string> t = {"%NaB%", "maybe", "2"};
    return t;
}

inline json in_range_value(const schema::PropertySpec& p, Rng& rng) {
    switch (p.kind) {
        case schema::PropertyKind::integer: {
            int64_t lo = p.min ? static_cast<int64_t>(std::ceil(*p.min)) : -100;
            int64_t hi = p.max ? static_cast<int64_t>(std::floor(*p.max)) : 100;
            return rng.uniform_int(lo, hi);
        }
        case schema::PropertyKind::real: {
            double lo = p.min.value_or(-100.0), hi = p.max.value_or(100.0);
            return rng.uniform(lo, hi);
        }
        case schema::PropertyKind::boolean:
            return rng.bernoulli(0.5);
        case schema::PropertyKind::string_enum:
            return p.allowed[static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(p.allowed.size()) - 1))];
    }
    return nullptr;
}

inline json out_of_range_value(const schema::PropertySpec& p, Rng& rng) {
    switch (p.kind) {
        case schema::PropertyKind::integer: {
            double lo = p.min.value_or(-100.0), hi = p.max.value_or(100.0);
            double width = std::max(hi - lo, 1.0);
            int64_t offset = 1 + static_cast<int64_t>(rng.uniform01() * 2.0 * width);
            return rng.bernoulli(0.5) ? static_cast<int64_t>(std::floor(hi)) + offset
                                      : static_cast<int64_t>(std::ceil(lo)) - offset;
        }
        case schema::PropertyKind::real: {
            double lo = p.min.value_or(-100.0), hi = p.max.value_or(100.0);
            double width = std::max(hi - lo, 1.0);
            double offset = rng.uniform(0.05, 1.0) * 2.0 * width;
            return rng.bernoulli(0.5) ? hi + offset : lo - offset;
        }
        case schema::PropertyKind::boolean: {
            const auto& pool = bad_bool_tokens();
            return pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
        }
        case schema::PropertyKind::string_enum: {
            const auto& pool = bad_enum_tokens();
            return pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))];
        }
    }
    return nullptr;
}

}  // namespace detail

// Per property: with probability 1-p a uniform in-range value, with
// probability p a value violating that property's constraint. Corruption is
// decided independently per property so failure rows localize the feature.
inline json sample_config(const schema::DeviceSchema& s, Rng& rng, double p_out_of_range) {
    json body = json::object();
    for (const auto& p : s.properties) {
        body[p.name] = rng.bernoulli(p_out_of_range) ? detail::out_of_range_value(p, rng)
                                                     : detail::in_range_value(p, rng);
    }
    return body;
}

// ---------------------------------------------------------------------------
// Generation run
// ---------------------------------------------------------------------------

inline RawDataset run_generation(const std::string& endpoint_url, const schema::DeviceSchema& s,
                                 const GenBudget& budget, uint64_t seed) {
    budget.validate();
    RawDataset ds;
    ds.device_name = s.device_name;
    ds.version_tag = s.version_tag;

    Rng rng(derive_seed(seed, "datagen"));
    auto url = net::parse_url(endpoint_url);
    net::DeviceClient client(url.origin);

    const auto start = Clock::now();
    while (true) {
        if (budget.max_requests && static_cast<int>(ds.records.size()) >= *budget.max_requests) break;
        if (budget.max_duration_ms && elapsed_ms(start) >= *budget.max_duration_ms) break;

        json body = sample_config(s, rng, budget.p_out_of_range);
        net::DeviceResponse resp;
        bool sent = false;
        for (int attempt = 0; attempt < 3 && !sent; ++attempt) {
            try {
                resp = client.post(url.path, body);
                sent = true;
            } catch (const NetworkError&) {
                if (attempt == 2) break;
                std::this_thread::sleep_for(std::chrono::milliseconds(250 << attempt));
            }
        }
        if (!sent) {
            ds.complete = false;  // endpoint unreachable after retries
            return ds;
        }

        RawRecord rec;
        for (const auto& [k, v] : body.items()) rec.features[k] = v;
        rec.processing_time_ms = resp.processing_time_ms;
        rec.status_code = resp.status_code;
        ds.records.push_back(std::move(rec));

        bool more = (!budget.max_requests || static_cast<int>(ds.records.size()) < *budget.max_requests) &&
                    (!budget.max_duration_ms || elapsed_ms(start) < *budget.max_duration_ms);
        if (more && budget.delay_ms > 0.0)
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(budget.delay_ms));
    }
    if (ds.records.empty()) throw DataError("generation produced an empty dataset");
    return ds;
}

// ---------------------------------------------------------------------------
// Raw persistence: CSV with header = property names + processing_time_ms +
// status_code; nulls as empty cells; sidecar metadata JSON beside it.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string csv_escape(const std::string& cell) {
    if (cell.find_first_of(",\"\n") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

inline std::string cell_of(const json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) {
        const std::string& s = v.get_ref<const std::string&>();
        // Strings that would read back as a different scalar (numbers,
        // booleans, null) or as an empty cell are written JSON-quoted.
        json probe = json::parse(s, nullptr, /*allow_exceptions=*/false);
        if (s.empty() || (!probe.is_discarded() && !probe.is_structured())) return v.dump();
        return s;
    }
    return v.dump();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

inline json cell_to_value(const std::string& cell) {
    json v = json::parse(cell, nullptr, /*allow_exceptions=*/false);
    if (v.is_discarded() || v.is_structured()) return json(cell);
    return v;
}

inline std::string sidecar_path(const std::string& csv_path) {
    std::string base = csv_path;
    if (base.size() > 4 && base.substr(base.size() - 4) == ".csv")
        base.resize(base.size() - 4);
    return base + ".meta.json";
}

}  // namespace detail

inline void save_raw_csv(const RawDataset& ds, const schema::DeviceSchema& s,
                         const std::string& csv_path, uint64_t seed, const GenBudget& budget) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + csv_path);
    for (const auto& p : s.properties) out << detail::csv_escape(p.name) << ",";
    out << "processing_time_ms,status_code\n";
    for (const auto& rec : ds.records) {
        for (const auto& p : s.properties) {
            auto it = rec.features.find(p.name);
            if (it != rec.features.end()) out << detail::csv_escape(detail::cell_of(it->second));
            out << ",";
        }
        char tbuf[32];
        snprintf(tbuf, sizeof(tbuf), "%.3f", rec.processing_time_ms);
        out << tbuf << "," << rec.status_code << "\n";
    }

    json budget_json = json::object();
    if (budget.max_requests) budget_json["max_requests"] = *budget.max_requests;
    if (budget.max_duration_ms) budget_json["max_duration_ms"] = *budget.max_duration_ms;
    budget_json["delay_ms"] = budget.delay_ms;
    budget_json["p_out_of_range"] = budget.p_out_of_range;
    json meta{{"format", "twinkit-rawdata"},
              {"format_version", 1},
              {"device_name", ds.device_name},
              {"version_tag", ds.version_tag},
              {"seed", seed},
              {"budget", budget_json},
              {"complete", ds.complete},
              {"record_count", ds.records.size()},
              {"schema", schema::schema_to_json(s)}};
    std::ofstream mout(detail::sidecar_path(csv_path), std::ios::binary);
    if (!mout) throw DataError("cannot write " + detail::sidecar_path(csv_path));
    mout << meta.dump(2) << "\n";
}

struct LoadedRaw {
    RawDataset dataset;
    schema::DeviceSchema device;
};

inline LoadedRaw load_raw_csv(const std::string& csv_path) {
    std::ifstream meta_in(detail::sidecar_path(csv_path), std::ios::binary);
    if (!meta_in)
        throw DataError("missing raw-dataset sidecar: " + detail::sidecar_path(csv_path));
    json meta = json::parse(meta_in, nullptr, /*allow_exceptions=*/false);
    if (meta.is_discarded() || meta.value("format", "") != "twinkit-rawdata")
        throw DataError("not a raw-dataset sidecar: " + detail::sidecar_path(csv_path));

    LoadedRaw out;
    out.device = schema::parse_schema(meta["schema"].dump());
    out.dataset.device_name = meta["device_name"].get<std::string>();
    out.dataset.version_tag = meta["version_tag"].get<std::string>();
    out.dataset.complete = meta.value("complete", true);

    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw DataError("cannot open " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty raw CSV: " + csv_path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[header.size() - 2] != "processing_time_ms" ||
        header.back() != "status_code")
        throw DataError("raw CSV header must end with processing_time_ms,status_code");
    std::vector<std::string> props(header.begin(), header.end() - 2);

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("raw CSV row width mismatch in " + csv_path);
        RawRecord rec;
        for (size_t i = 0; i < props.size(); ++i)
            if (!cells[i].empty()) rec.features[props[i]] = detail::cell_to_value(cells[i]);
        rec.processing_time_ms = std::stod(cells[cells.size() - 2]);
        rec.status_code = std::stoi(cells.back());
        out.dataset.records.push_back(std::move(rec));
    }
    return out;
}

}  // namespace twinkit::datagen
