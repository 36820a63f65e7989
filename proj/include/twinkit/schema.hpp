#pragma once

// Device schema format: typed, range-constrained properties plus HTTP
// endpoint descriptions. Everything downstream (emulator, data generation,
// preprocessing, twins) consumes these types. All types are immutable after
// construction by convention; nothing here mutates shared state.

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "twinkit/common.hpp"

namespace twinkit::schema {

using nlohmann::json;

enum class PropertyKind { integer, real, boolean, string_enum };

inline const char* kind_name(PropertyKind k) {
    switch (k) {
        case PropertyKind::integer: return "integer";
        case PropertyKind::real: return "real";
        case PropertyKind::boolean: return "boolean";
        case PropertyKind::string_enum: return "string-enum";
    }
    return "?";
}

struct PropertySpec {
    std::string name;
    PropertyKind kind = PropertyKind::integer;
    std::optional<double> min;          // integer/real kinds only
    std::optional<double> max;          // integer/real kinds only
    std::vector<std::string> allowed;   // string-enum only
    json default_value;
    bool required = true;
};

enum class EndpointRole { read_config, write_config };

struct EndpointSpec {
    std::string path;    // URL template with exactly one {sn} placeholder
    std::string method;  // GET | POST
    EndpointRole role = EndpointRole::read_config;
};

struct DeviceSchema {
    std::string device_name;
    std::string version_tag;
    std::string sn_prefix;
    std::vector<PropertySpec> properties;
    std::vector<EndpointSpec> endpoints;

    const PropertySpec* find_property(const std::string& name) const {
        for (const auto& p : properties)
            if (p.name == name) return &p;
        return nullptr;
    }

    const EndpointSpec* endpoint_for(EndpointRole role) const {
        for (const auto& e : endpoints)
            if (e.role == role) return &e;
        return nullptr;
    }
};

// A device configuration is a JSON object mapping property names to values.
using DeviceConfig = json;

struct SchemaDelta {
    std::set<std::string> added;
    std::set<std::string> removed;
    std::set<std::string> changed;  // kind/bounds/enum/default differ

    bool empty() const { return added.empty() && removed.empty() && changed.empty(); }
};

struct Violation {
    std::string property;
    std::string reason;
};

struct ValidationResult {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

// ---------------------------------------------------------------------------
// Single-value constraint check. Violations are data, not failures.
// ---------------------------------------------------------------------------

inline bool value_satisfies(const PropertySpec& p, const json& v, std::string* reason = nullptr) {
    auto fail = [&](const std::string& r) {
        if (reason) *reason = r;
        return false;
    };
    switch (p.kind) {
        case PropertyKind::integer: {
            if (!v.is_number_integer() && !v.is_number_unsigned())
                return fail("expected integer, got " + std::string(v.type_name()));
            double d = v.get<double>();
            if (p.min && d < *p.min) return fail("below minimum " + std::to_string(*p.min));
            if (p.max && d > *p.max) return fail("above maximum " + std::to_string(*p.max));
            return true;
        }
        case PropertyKind::real: {
            if (!v.is_number()) return fail("expected number, got " + std::string(v.type_name()));
            double d = v.get<double>();
            if (p.min && d < *p.min) return fail("below minimum " + std::to_string(*p.min));
            if (p.max && d > *p.max) return fail("above maximum " + std::to_string(*p.max));
            return true;
        }
        case PropertyKind::boolean:
            if (!v.is_boolean()) return fail("expected boolean, got " + std::string(v.type_name()));
            return true;
        case PropertyKind::string_enum: {
            if (!v.is_string()) return fail("expected string, got " + std::string(v.type_name()));
            const auto& s = v.get_ref<const std::string&>();
            if (std::find(p.allowed.begin(), p.allowed.end(), s) == p.allowed.end())
                return fail("value \"" + s + "\" not in allowed set");
            return true;
        }
    }
    return fail("unknown kind");
}

// ---------------------------------------------------------------------------
// Parsing. Errors carry the offending JSON path / property name.
// ---------------------------------------------------------------------------

namespace detail {

inline DataError schema_error(const std::string& path, const std::string& what) {
    return DataError("schema: " + path + ": " + what);
}

inline PropertySpec parse_property(const json& j, size_t index) {
    const std::string path = "properties[" + std::to_string(index) + "]";
    if (!j.is_object()) throw schema_error(path, "expected object");
    PropertySpec p;
    if (!j.contains("name") || !j["name"].is_string())
        throw schema_error(path, "missing required field \"name\"");
    p.name = j["name"].get<std::string>();
    const std::string ppath = path + " (" + p.name + ")";
    if (!j.contains("kind") || !j["kind"].is_string())
        throw schema_error(ppath, "missing required field \"kind\"");
    const std::string kind = j["kind"].get<std::string>();
    if (kind == "integer") p.kind = PropertyKind::integer;
    else if (kind == "real") p.kind = PropertyKind::real;
    else if (kind == "boolean") p.kind = PropertyKind::boolean;
    else if (kind == "string-enum") p.kind = PropertyKind::string_enum;
    else throw schema_error(ppath, "unknown kind \"" + kind + "\"");

    if (j.contains("min")) {
        if (!j["min"].is_number()) throw schema_error(ppath, "min must be numeric");
        p.min = j["min"].get<double>();
    }
    if (j.contains("max")) {
        if (!j["max"].is_number()) throw schema_error(ppath, "max must be numeric");
        p.max = j["max"].get<double>();
    }
    if (j.contains("allowed")) {
        if (!j["allowed"].is_array()) throw schema_error(ppath, "allowed must be an array");
        for (const auto& a : j["allowed"]) {
            if (!a.is_string()) throw schema_error(ppath, "allowed values must be strings");
            p.allowed.push_back(a.get<std::string>());
        }
    }
    if (j.contains("required")) {
        if (!j["required"].is_boolean()) throw schema_error(ppath, "required must be boolean");
        p.required = j["required"].get<bool>();
    }
    if (!j.contains("default")) throw schema_error(ppath, "missing required field \"default\"");
    p.default_value = j["default"];

    // invariants
    if (p.kind == PropertyKind::integer || p.kind == PropertyKind::real) {
        if (p.min && p.max && *p.min > *p.max)
            throw schema_error(ppath, "bound violation: min > max");
        if (!p.allowed.empty())
            throw schema_error(ppath, "allowed list is only valid for string-enum");
    } else {
        if (p.min || p.max) throw schema_error(ppath, "bounds are only valid for numeric kinds");
        if (p.kind == PropertyKind::string_enum && p.allowed.empty())
            throw schema_error(ppath, "string-enum requires a non-empty allowed list");
    }
    std::string reason;
    if (!value_satisfies(p, p.default_value, &reason))
        throw schema_error(ppath, "default violates its own constraint: " + reason);
    return p;
}

inline EndpointSpec parse_endpoint(const json& j, size_t index) {
    const std::string path = "endpoints[" + std::to_string(index) + "]";
    if (!j.is_object()) throw schema_error(path, "expected object");
    EndpointSpec e;
    for (const char* field : {"path", "method", "role"})
        if (!j.contains(field) || !j[field].is_string())
            throw schema_error(path, std::string("missing required field \"") + field + "\"");
    e.path = j["path"].get<std::string>();
    e.method = j["method"].get<std::string>();
    if (e.method != "GET" && e.method != "POST")
        throw schema_error(path, "method must be GET or POST");
    const std::string role = j["role"].get<std::string>();
    if (role == "read-config") e.role = EndpointRole::read_config;
    else if (role == "write-config") e.role = EndpointRole::write_config;
    else throw schema_error(path, "role must be read-config or write-config");

    size_t first = e.path.find("{sn}");
    if (first == std::string::npos || e.path.find("{sn}", first + 1) != std::string::npos)
        throw schema_error(path, "path must contain exactly one {sn} placeholder");
    return e;
}

}  // namespace detail

inline DeviceSchema parse_schema(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("schema: JSON syntax error: ") + e.what());
    }
    if (!j.is_object()) throw detail::schema_error("$", "document must be an object");

    DeviceSchema s;
    for (const char* field : {"device_name", "version_tag", "sn_prefix"})
        if (!j.contains(field) || !j[field].is_string())
            throw detail::schema_error("$", std::string("missing required field \"") + field + "\"");
    s.device_name = j["device_name"].get<std::string>();
    s.version_tag = j["version_tag"].get<std::string>();
    s.sn_prefix = j["sn_prefix"].get<std::string>();
    if (s.version_tag.empty()) throw detail::schema_error("version_tag", "must be non-empty");

    if (!j.contains("properties") || !j["properties"].is_array() || j["properties"].empty())
        throw detail::schema_error("properties", "at least one property required");
    std::set<std::string> seen;
    for (size_t i = 0; i < j["properties"].size(); ++i) {
        PropertySpec p = detail::parse_property(j["properties"][i], i);
        if (!seen.insert(p.name).second)
            throw detail::schema_error("properties", "duplicate property name \"" + p.name + "\"");
        s.properties.push_back(std::move(p));
    }

    if (!j.contains("endpoints") || !j["endpoints"].is_array())
        throw detail::schema_error("endpoints", "missing endpoint list");
    for (size_t i = 0; i < j["endpoints"].size(); ++i)
        s.endpoints.push_back(detail::parse_endpoint(j["endpoints"][i], i));
    if (!s.endpoint_for(EndpointRole::read_config))
        throw detail::schema_error("endpoints", "at least one read-config endpoint required");
    if (!s.endpoint_for(EndpointRole::write_config))
        throw detail::schema_error("endpoints", "at least one write-config endpoint required");
    return s;
}

inline json schema_to_json(const DeviceSchema& s) {
    json props = json::array();
    for (const auto& p : s.properties) {
        json pj{{"name", p.name}, {"kind", kind_name(p.kind)}, {"default", p.default_value}};
        if (p.min) pj["min"] = *p.min;
        if (p.max) pj["max"] = *p.max;
        if (!p.allowed.empty()) pj["allowed"] = p.allowed;
        if (!p.required) pj["required"] = false;
        props.push_back(std::move(pj));
    }
    json eps = json::array();
    for (const auto& e : s.endpoints)
        eps.push_back({{"path", e.path},
                       {"method", e.method},
                       {"role", e.role == EndpointRole::read_config ? "read-config" : "write-config"}});
    return json{{"device_name", s.device_name},
                {"version_tag", s.version_tag},
                {"sn_prefix", s.sn_prefix},
                {"properties", props},
                {"endpoints", eps}};
}

inline std::string serialize_schema(const DeviceSchema& s) { return schema_to_json(s).dump(2); }

// ---------------------------------------------------------------------------
// Diff / validation / defaults
// ---------------------------------------------------------------------------

inline SchemaDelta diff_schemas(const DeviceSchema& oldest, const DeviceSchema& newest) {
    SchemaDelta d;
    for (const auto& p : newest.properties)
        if (!oldest.find_property(p.name)) d.added.insert(p.name);
    for (const auto& p : oldest.properties) {
        const PropertySpec* q = newest.find_property(p.name);
        if (!q) {
            d.removed.insert(p.name);
            continue;
        }
        bool same = p.kind == q->kind && p.min == q->min && p.max == q->max &&
                    p.allowed == q->allowed && p.default_value == q->default_value;
        if (!same) d.changed.insert(p.name);
    }
    return d;
}

inline ValidationResult validate_config(const DeviceSchema& s, const DeviceConfig& config) {
    ValidationResult r;
    if (!config.is_object()) {
        r.violations.push_back({"$", "configuration must be a JSON object"});
        return r;
    }
    for (const auto& [key, value] : config.items()) {
        const PropertySpec* p = s.find_property(key);
        if (!p) {
            r.violations.push_back({key, "unknown property"});
            continue;
        }
        std::string reason;
        if (!value_satisfies(*p, value, &reason)) r.violations.push_back({key, reason});
    }
    for (const auto& p : s.properties)
        if (p.required && !config.contains(p.name))
            r.violations.push_back({p.name, "missing required property"});
    return r;
}

inline DeviceConfig default_config(const DeviceSchema& s) {
    DeviceConfig c = json::object();
    for (const auto& p : s.properties) c[p.name] = p.default_value;
    return c;
}

inline DeviceSchema load_schema_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("schema: cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_schema(buf.str());
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace twinkit::schema
