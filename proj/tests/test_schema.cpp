#include <catch2/catch_amalgamated.hpp>

#include "twinkit/schema.hpp"

using namespace twinkit;
using nlohmann::json;

namespace {

const char* kMinimalDoc = R"({
  "device_name": "dev", "version_tag": "v1", "sn_prefix": "DX",
  "properties": [
    {"name": "volume", "kind": "integer", "min": 0, "max": 10, "default": 5}
  ],
  "endpoints": [
    {"path": "/devices/{sn}/config", "method": "GET", "role": "read-config"},
    {"path": "/devices/{sn}/config", "method": "POST", "role": "write-config"}
  ]
})";

// Random valid schema generator for round-trip and validation properties.
schema::DeviceSchema random_schema(Rng& rng) {
    json doc;
    doc["device_name"] = "dev" + std::to_string(rng.uniform_int(0, 999));
    doc["version_tag"] = "v" + std::to_string(rng.uniform_int(1, 9));
    doc["sn_prefix"] = "RX";
    json props = json::array();
    int n = static_cast<int>(rng.uniform_int(1, 6));
    for (int i = 0; i < n; ++i) {
        json p;
        p["name"] = "p" + std::to_string(i);
        switch (rng.uniform_int(0, 3)) {
            case 0: {
                int64_t lo = rng.uniform_int(-20, 10);
                int64_t hi = lo + rng.uniform_int(0, 30);
                p["kind"] = "integer";
                p["min"] = lo;
                p["max"] = hi;
                p["default"] = rng.uniform_int(lo, hi);
                break;
            }
            case 1: {
                double lo = rng.uniform(-5.0, 5.0);
                double hi = lo + rng.uniform(0.5, 10.0);
                p["kind"] = "real";
                p["min"] = lo;
                p["max"] = hi;
                p["default"] = rng.uniform(lo, hi);
                break;
            }
            case 2:
                p["kind"] = "boolean";
                p["default"] = rng.bernoulli(0.5);
                break;
            default: {
                p["kind"] = "string-enum";
                int k = static_cast<int>(rng.uniform_int(1, 5));
                json allowed = json::array();
                for (int t = 0; t < k; ++t) allowed.push_back("tok" + std::to_string(t));
                p["allowed"] = allowed;
                p["default"] = allowed[static_cast<size_t>(rng.uniform_int(0, k - 1))];
                break;
            }
        }
        if (rng.bernoulli(0.2)) p["required"] = false;
        props.push_back(p);
    }
    doc["properties"] = props;
    doc["endpoints"] = json::array(
        {{{"path", "/devices/{sn}/config"}, {"method", "GET"}, {"role", "read-config"}},
         {{"path", "/devices/{sn}/config"}, {"method", "POST"}, {"role", "write-config"}}});
    return schema::parse_schema(doc.dump());
}

}  // namespace

TEST_CASE("minimal document parses") {
    auto s = schema::parse_schema(kMinimalDoc);
    REQUIRE(s.properties.size() == 1);
    CHECK(s.properties[0].name == "volume");
    CHECK(s.properties[0].kind == schema::PropertyKind::integer);
    CHECK(s.properties[0].min == 0.0);
    CHECK(s.properties[0].max == 10.0);
    CHECK(s.endpoints.size() == 2);
}

TEST_CASE("bound violation names the property") {
    std::string doc = kMinimalDoc;
    auto pos = doc.find("\"min\": 0, \"max\": 10");
    doc.replace(pos, strlen("\"min\": 0, \"max\": 10"), "\"min\": 10, \"max\": 0");
    try {
        schema::parse_schema(doc);
        FAIL("expected bound violation");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("volume") != std::string::npos);
        CHECK(std::string(e.what()).find("min > max") != std::string::npos);
    }
}

TEST_CASE("string-enum membership and default checks") {
    json doc = json::parse(kMinimalDoc);
    doc["properties"].push_back({{"name", "language"},
                                 {"kind", "string-enum"},
                                 {"allowed", {"EN", "NO", "DE"}},
                                 {"default", "EN"}});
    REQUIRE_NOTHROW(schema::parse_schema(doc.dump()));
    doc["properties"][1]["default"] = "FR";
    REQUIRE_THROWS_AS(schema::parse_schema(doc.dump()), DataError);
}

TEST_CASE("syntax and structural errors") {
    CHECK_THROWS_AS(schema::parse_schema("{not json"), DataError);
    json doc = json::parse(kMinimalDoc);
    doc["properties"].push_back(doc["properties"][0]);  // duplicate name
    CHECK_THROWS_AS(schema::parse_schema(doc.dump()), DataError);
    doc = json::parse(kMinimalDoc);
    doc["properties"][0].erase("default");
    CHECK_THROWS_AS(schema::parse_schema(doc.dump()), DataError);
    doc = json::parse(kMinimalDoc);
    doc["endpoints"][0]["path"] = "/devices/config";  // no {sn}
    CHECK_THROWS_AS(schema::parse_schema(doc.dump()), DataError);
    doc = json::parse(kMinimalDoc);
    doc["endpoints"].erase(1);  // no write-config left
    CHECK_THROWS_AS(schema::parse_schema(doc.dump()), DataError);
}

TEST_CASE("serialize/parse round-trips generated schemas") {
    Rng rng(20240811);
    for (int i = 0; i < 200; ++i) {
        auto s = random_schema(rng);
        auto s2 = schema::parse_schema(schema::serialize_schema(s));
        CHECK(schema::schema_to_json(s) == schema::schema_to_json(s2));
        CHECK(schema::diff_schemas(s, s2).empty());
        // defaults always validate
        CHECK(schema::validate_config(s, schema::default_config(s)).ok());
    }
}

TEST_CASE("diff identity and set semantics") {
    auto a = schema::parse_schema(kMinimalDoc);
    CHECK(schema::diff_schemas(a, a).empty());

    json doc = json::parse(kMinimalDoc);
    doc["properties"].push_back(
        {{"name", "mode"}, {"kind", "string-enum"}, {"allowed", {"a", "b"}}, {"default", "a"}});
    auto b = schema::parse_schema(doc.dump());
    auto d = schema::diff_schemas(a, b);
    CHECK(d.added == std::set<std::string>{"mode"});
    CHECK(d.removed.empty());
    CHECK(d.changed.empty());
    auto rd = schema::diff_schemas(b, a);
    CHECK(rd.removed == d.added);
    CHECK(rd.added == d.removed);
}

TEST_CASE("diff flags changed bounds") {
    auto a = schema::parse_schema(kMinimalDoc);
    std::string doc = kMinimalDoc;
    auto pos = doc.find("\"max\": 10");
    doc.replace(pos, strlen("\"max\": 10"), "\"max\": 20");
    auto b = schema::parse_schema(doc);
    auto d = schema::diff_schemas(a, b);
    CHECK(d.changed == std::set<std::string>{"volume"});
    CHECK(d.added.empty());
    CHECK(d.removed.empty());
}

TEST_CASE("added/removed/changed are pairwise disjoint on random pairs") {
    Rng rng(77);
    for (int i = 0; i < 100; ++i) {
        auto a = random_schema(rng);
        auto b = random_schema(rng);
        auto d = schema::diff_schemas(a, b);
        for (const auto& name : d.added) {
            CHECK_FALSE(d.removed.count(name));
            CHECK_FALSE(d.changed.count(name));
        }
        for (const auto& name : d.removed) CHECK_FALSE(d.changed.count(name));
    }
}

TEST_CASE("validate_config flags out-of-range, unknown and missing") {
    auto s = schema::parse_schema(kMinimalDoc);
    CHECK(schema::validate_config(s, schema::default_config(s)).ok());

    auto r = schema::validate_config(s, json{{"volume", 11}});
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].property == "volume");

    r = schema::validate_config(s, json{{"nonexistent", 1}, {"volume", 5}});
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].property == "nonexistent");

    r = schema::validate_config(s, json::object());
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].reason == "missing required property");

    // type mismatches
    CHECK_FALSE(schema::validate_config(s, json{{"volume", 5.5}}).ok());
    CHECK_FALSE(schema::validate_config(s, json{{"volume", "5"}}).ok());
}
