#pragma once

// Phase 2: the deterministic, serializable transform mapping raw tabular
// records to a real-valued feature matrix plus class labels. The manifest is
// the transform; persisting it lets inference replay training-time
// preprocessing exactly.
//
// Encoding rules, applied in order:
//   1. strip special characters (% * _) from string values
//   2. booleans -> {0,1}, enum tokens -> lexicographic integer codes,
//      numerics parsed to real
//   3. null/empty/unparseable -> 0 (terminal: null fills are not clamped)
//   4. parsed numerics outside schema bounds clamp to the violated bound
//   5. features with out-of-threshold variance are dropped
//   6. sorted unique status codes -> consecutive class indices

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "twinkit/common.hpp"
#include "twinkit/datagen.hpp"
#include "twinkit/schema.hpp"

namespace twinkit::prep {

using nlohmann::json;

enum class FeatureKind { numeric, boolean, string_enum };
enum class DropReason { low_variance, high_variance };

inline const char* drop_reason_name(DropReason r) {
    return r == DropReason::low_variance ? "low-variance" : "high-variance";
}

struct TransformManifest {
    std::vector<std::string> feature_order;                       // kept features
    std::vector<std::pair<std::string, DropReason>> dropped_features;
    std::map<std::string, FeatureKind> feature_kinds;             // kept features
    std::map<std::string, std::map<std::string, int>> enum_codes; // enum features
    std::map<std::string, std::pair<double, double>> clamp_bounds;// numeric features
    std::map<int, int> label_map;   // status code -> class index
    std::vector<int> label_unmap;   // class index -> status code

    size_t n_features() const { return feature_order.size(); }
    size_t n_classes() const { return label_unmap.size(); }

    json to_json() const {
        json dropped = json::array();
        for (const auto& [name, reason] : dropped_features)
            dropped.push_back({{"name", name}, {"reason", drop_reason_name(reason)}});
        json kinds = json::object();
        for (const auto& [name, kind] : feature_kinds)
            kinds[name] = kind == FeatureKind::numeric ? "numeric"
                        : kind == FeatureKind::boolean ? "boolean"
                                                       : "enum";
        json codes = json::object();
        for (const auto& [name, m] : enum_codes) {
            json mj = json::object();
            for (const auto& [tok, c] : m) mj[tok] = c;
            codes[name] = mj;
        }
        json clamps = json::object();
        for (const auto& [name, b] : clamp_bounds) clamps[name] = {b.first, b.second};
        json labels = json::object();
        for (const auto& [code, idx] : label_map) labels[std::to_string(code)] = idx;
        return json{{"format", "twinkit-manifest"},
                    {"format_version", 1},
                    {"feature_order", feature_order},
                    {"dropped_features", dropped},
                    {"feature_kinds", kinds},
                    {"enum_codes", codes},
                    {"clamp_bounds", clamps},
                    {"label_map", labels},
                    {"label_unmap", label_unmap}};
    }

    static TransformManifest from_json(const json& j) {
        if (j.value("format", "") != "twinkit-manifest" || j.value("format_version", 0) != 1)
            throw DataError("manifest: unknown format or version");
        TransformManifest m;
        m.feature_order = j["feature_order"].get<std::vector<std::string>>();
        for (const auto& d : j["dropped_features"])
            m.dropped_features.emplace_back(d["name"].get<std::string>(),
                                            d["reason"] == "low-variance"
                                                ? DropReason::low_variance
                                                : DropReason::high_variance);
        for (const auto& [name, kind] : j["feature_kinds"].items())
            m.feature_kinds[name] = kind == "numeric" ? FeatureKind::numeric
                                  : kind == "boolean" ? FeatureKind::boolean
                                                      : FeatureKind::string_enum;
        for (const auto& [name, codes] : j["enum_codes"].items())
            for (const auto& [tok, c] : codes.items())
                m.enum_codes[name][tok] = c.get<int>();
        for (const auto& [name, b] : j["clamp_bounds"].items())
            m.clamp_bounds[name] = {b[0].get<double>(), b[1].get<double>()};
        for (const auto& [code, idx] : j["label_map"].items())
            m.label_map[std::stoi(code)] = idx.get<int>();
        m.label_unmap = j["label_unmap"].get<std::vector<int>>();
        return m;
    }
};

struct ProcessedDataset {
    std::vector<std::vector<double>> matrix;  // rows in manifest feature order
    std::vector<int> labels;                  // class indices
    TransformManifest manifest;

    size_t size() const { return matrix.size(); }
};

struct PrepOptions {
    double low_variance_threshold = 1e-9;
    std::optional<double> high_variance_threshold;  // disabled by default
    bool include_timing = false;                    // processing_time_ms as a feature
};

// ---------------------------------------------------------------------------
// Cell encoding, shared verbatim between fit and replay
// ---------------------------------------------------------------------------

namespace detail {

inline std::string strip_special(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s)
        if (c != '%' && c != '*' && c != '_') out += c;
    return out;
}

struct FeatureCodec {
    FeatureKind kind = FeatureKind::numeric;
    std::map<std::string, int> codes;               // enum only
    std::optional<std::pair<double, double>> clamp; // numeric only

    // Returns the encoded value; sets parsed=false when a present value was
    // unparseable and fell back to the null rule.
    double encode(const json* value, bool* parsed = nullptr) const {
        if (parsed) *parsed = true;
        if (!value || value->is_null()) return 0.0;

        switch (kind) {
            case FeatureKind::numeric: {
                double d;
                if (value->is_number()) {
                    d = value->get<double>();
                } else if (value->is_boolean()) {
                    d = value->get<bool>() ? 1.0 : 0.0;
                } else if (value->is_string()) {
                    std::string s = strip_special(value->get<std::string>());
                    if (s.empty()) return 0.0;
                    char* end = nullptr;
                    d = std::strtod(s.c_str(), &end);
                    if (end != s.c_str() + s.size()) {
                        if (parsed) *parsed = false;
                        return 0.0;
                    }
                } else {
                    if (parsed) *parsed = false;
                    return 0.0;
                }
                if (clamp) {
                    if (d < clamp->first) d = clamp->first;
                    if (d > clamp->second) d = clamp->second;
                }
                return d;
            }
            case FeatureKind::boolean: {
                if (value->is_boolean()) return value->get<bool>() ? 1.0 : 0.0;
                if (value->is_number()) return value->get<double>();
                if (value->is_string()) {
                    std::string s = strip_special(value->get<std::string>());
                    if (s.empty()) return 0.0;
                    if (s == "true" || s == "1") return 1.0;
                    if (s == "false" || s == "0") return 0.0;
                    return 2.0;  // out-of-domain marker, mirrors the enum rule
                }
                return 2.0;
            }
            case FeatureKind::string_enum: {
                std::string s;
                if (value->is_string()) s = strip_special(value->get<std::string>());
                else s = strip_special(value->dump());
                if (s.empty()) return 0.0;
                auto it = codes.find(s);
                if (it != codes.end()) return static_cast<double>(it->second);
                return static_cast<double>(codes.size());  // reserved "unknown" code
            }
        }
        return 0.0;
    }
};

inline FeatureCodec codec_for(const TransformManifest& m, const std::string& name) {
    FeatureCodec c;
    c.kind = m.feature_kinds.at(name);
    auto eit = m.enum_codes.find(name);
    if (eit != m.enum_codes.end()) c.codes = eit->second;
    auto bit = m.clamp_bounds.find(name);
    if (bit != m.clamp_bounds.end()) c.clamp = bit->second;
    return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fit
// ---------------------------------------------------------------------------

inline ProcessedDataset fit_transform(const datagen::RawDataset& raw,
                                      const schema::DeviceSchema& device,
                                      const PrepOptions& options = {}) {
    if (raw.records.empty()) throw DataError("preparation: raw dataset is empty");

    struct Column {
        std::string name;
        detail::FeatureCodec codec;
        std::vector<double> values;
        size_t present = 0, unparseable = 0;
    };
    std::vector<Column> columns;
    for (const auto& p : device.properties) {
        Column c;
        c.name = p.name;
        switch (p.kind) {
            case schema::PropertyKind::integer:
            case schema::PropertyKind::real:
                c.codec.kind = FeatureKind::numeric;
                if (p.min && p.max) c.codec.clamp = {{*p.min, *p.max}};
                break;
            case schema::PropertyKind::boolean:
                c.codec.kind = FeatureKind::boolean;
                break;
            case schema::PropertyKind::string_enum: {
                c.codec.kind = FeatureKind::string_enum;
                std::vector<std::string> sorted = p.allowed;
                std::sort(sorted.begin(), sorted.end());
                for (size_t i = 0; i < sorted.size(); ++i)
                    c.codec.codes[sorted[i]] = static_cast<int>(i);
                break;
            }
        }
        columns.push_back(std::move(c));
    }
    if (options.include_timing) {
        Column c;
        c.name = "processing_time_ms";
        c.codec.kind = FeatureKind::numeric;
        columns.push_back(std::move(c));
    }

    for (const auto& rec : raw.records) {
        for (auto& col : columns) {
            const json* v = nullptr;
            json timing;
            if (col.name == "processing_time_ms") {
                timing = rec.processing_time_ms;
                v = &timing;
            } else {
                auto it = rec.features.find(col.name);
                if (it != rec.features.end()) v = &it->second;
            }
            bool parsed = true;
            double d = col.codec.encode(v, &parsed);
            if (v && !v->is_null()) {
                col.present++;
                if (!parsed) col.unparseable++;
            }
            col.values.push_back(d);
        }
    }

    TransformManifest manifest;
    const double n = static_cast<double>(raw.records.size());
    for (auto& col : columns) {
        if (col.present > 0 && col.unparseable == col.present)
            throw DataError("preparation: feature \"" + col.name + "\" is entirely unparseable");
        double mean = 0.0;
        for (double v : col.values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : col.values) var += (v - mean) * (v - mean);
        var /= n;
        if (var < options.low_variance_threshold) {
            manifest.dropped_features.emplace_back(col.name, DropReason::low_variance);
            continue;
        }
        if (options.high_variance_threshold && var > *options.high_variance_threshold) {
            manifest.dropped_features.emplace_back(col.name, DropReason::high_variance);
            continue;
        }
        manifest.feature_order.push_back(col.name);
        manifest.feature_kinds[col.name] = col.codec.kind;
        if (!col.codec.codes.empty()) manifest.enum_codes[col.name] = col.codec.codes;
        if (col.codec.clamp) manifest.clamp_bounds[col.name] = *col.codec.clamp;
    }
    if (manifest.feature_order.empty())
        throw DataError("preparation: no features survived variance selection");

    std::set<int> codes;
    for (const auto& rec : raw.records) codes.insert(rec.status_code);
    if (codes.size() < 2)
        throw DataError("preparation: fewer than 2 distinct labels; training would be degenerate");
    for (int code : codes) {
        manifest.label_map[code] = static_cast<int>(manifest.label_unmap.size());
        manifest.label_unmap.push_back(code);
    }

    ProcessedDataset ds;
    ds.manifest = std::move(manifest);
    ds.matrix.reserve(raw.records.size());
    ds.labels.reserve(raw.records.size());
    std::vector<const Column*> kept;
    for (const auto& name : ds.manifest.feature_order)
        for (const auto& col : columns)
            if (col.name == name) kept.push_back(&col);
    for (size_t r = 0; r < raw.records.size(); ++r) {
        std::vector<double> row;
        row.reserve(kept.size());
        for (const Column* col : kept) row.push_back(col->values[r]);
        ds.matrix.push_back(std::move(row));
        ds.labels.push_back(ds.manifest.label_map.at(raw.records[r].status_code));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Replay (inference-time). Total by construction: absent/unknown values fall
// back to the null rule or the reserved enum code.
// ---------------------------------------------------------------------------

inline std::vector<double> apply_transform(const TransformManifest& m,
                                           const std::map<std::string, json>& record) {
    std::vector<double> row;
    row.reserve(m.feature_order.size());
    for (const auto& name : m.feature_order) {
        auto codec = detail::codec_for(m, name);
        auto it = record.find(name);
        row.push_back(codec.encode(it == record.end() ? nullptr : &it->second));
    }
    return row;
}

inline std::vector<double> apply_transform(const TransformManifest& m, const json& body) {
    std::map<std::string, json> record;
    if (body.is_object())
        for (const auto& [k, v] : body.items()) record[k] = v;
    return apply_transform(m, record);
}

// ---------------------------------------------------------------------------
// Processed persistence: CSV of features + label column, manifest JSON
// alongside.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string processed_manifest_path(const std::string& csv_path) {
    std::string base = csv_path;
    if (base.size() > 4 && base.substr(base.size() - 4) == ".csv")
        base.resize(base.size() - 4);
    return base + ".manifest.json";
}

}  // namespace detail

inline void save_processed_csv(const ProcessedDataset& ds, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + csv_path);
    for (const auto& name : ds.manifest.feature_order) out << name << ",";
    out << "label\n";
    for (size_t r = 0; r < ds.matrix.size(); ++r) {
        for (double v : ds.matrix[r]) out << json(v).dump() << ",";
        out << ds.labels[r] << "\n";
    }
    std::ofstream mout(detail::processed_manifest_path(csv_path), std::ios::binary);
    if (!mout) throw DataError("cannot write " + detail::processed_manifest_path(csv_path));
    mout << ds.manifest.to_json().dump(2) << "\n";
}

inline ProcessedDataset load_processed_csv(const std::string& csv_path) {
    std::ifstream min(detail::processed_manifest_path(csv_path), std::ios::binary);
    if (!min) throw DataError("missing manifest: " + detail::processed_manifest_path(csv_path));
    json mj = json::parse(min, nullptr, /*allow_exceptions=*/false);
    if (mj.is_discarded()) throw DataError("corrupt manifest JSON");
    ProcessedDataset ds;
    ds.manifest = TransformManifest::from_json(mj);

    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw DataError("cannot open " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty processed CSV");
    size_t width = ds.manifest.feature_order.size();
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = datagen::detail::split_csv_line(line);
        if (cells.size() != width + 1)
            throw DataError("processed CSV row width mismatch");
        std::vector<double> row(width);
        for (size_t i = 0; i < width; ++i) row[i] = std::stod(cells[i]);
        ds.matrix.push_back(std::move(row));
        ds.labels.push_back(std::stoi(cells.back()));
    }
    return ds;
}

}  // namespace twinkit::prep
