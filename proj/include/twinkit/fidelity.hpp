#pragma once

// Twin-vs-device fidelity harness: identical randomized requests go to both
// endpoints, states are reset between requests so divergence never
// compounds, and the per-request canonicalized responses feed the similarity
// and status-code statistics.

#include <filesystem>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "twinkit/common.hpp"
#include "twinkit/datagen.hpp"
#include "twinkit/device_http.hpp"
#include "twinkit/evalstats.hpp"
#include "twinkit/fleet.hpp"
#include "twinkit/schema.hpp"

namespace twinkit::eval {

struct EndpointRef {
    std::string base_url;  // scheme://host:port
    std::string sn;
};

struct FidelityOptions {
    int n_requests = 500;
    uint64_t seed = 0;
    double p_out_of_range = 0.3;
    bool status_only = false;  // compare status codes instead of full bodies
    bool one_sided = false;    // Wilcoxon sidedness
};

struct EvalReport {
    std::vector<double> similarity;  // per-request scores
    double summary_similarity = 0.0; // mean
    double median_similarity = 0.0;
    StatResult wilcoxon;
    double cliffs = 0.0;
    ClassMetrics metrics;  // device status = truth, twin status = prediction
    double wall_time_ms = 0.0;
    bool partial = false;
    int n_requests = 0;

    json to_json() const {
        return json{{"n_requests", n_requests},
                    {"summary_similarity", summary_similarity},
                    {"median_similarity", median_similarity},
                    {"wilcoxon",
                     {{"statistic", wilcoxon.statistic},
                      {"p_value", wilcoxon.p_value},
                      {"method", wilcoxon.method == StatResult::Method::exact
                                     ? "exact"
                                     : "normal-approximation"},
                      {"n_effective", wilcoxon.n_effective}}},
                    {"cliffs_delta", cliffs},
                    {"macro_precision", metrics.macro_precision},
                    {"macro_recall", metrics.macro_recall},
                    {"macro_f1", metrics.macro_f1},
                    {"partial", partial},
                    {"wall_time_ms", wall_time_ms}};
    }

    // Human-readable row in the style of the similarity report tables.
    std::string table_row(const std::string& label) const {
        char buf[160];
        snprintf(buf, sizeof(buf), "%-28s %8.2f%% %10.4f %10.4f", label.c_str(),
                 summary_similarity, wilcoxon.p_value, cliffs);
        return buf;
    }
};

namespace detail {

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline void finalize_report(EvalReport& r, const std::vector<int>& twin_codes,
                            const std::vector<int>& device_codes, bool one_sided) {
    if (!r.similarity.empty()) {
        double sum = 0.0;
        for (double s : r.similarity) sum += s;
        r.summary_similarity = sum / static_cast<double>(r.similarity.size());
        r.median_similarity = median_of(r.similarity);
    }
    if (!twin_codes.empty()) {
        std::vector<double> a(twin_codes.begin(), twin_codes.end());
        std::vector<double> b(device_codes.begin(), device_codes.end());
        r.wilcoxon = wilcoxon_signed_rank(a, b, !one_sided);
        r.cliffs = cliffs_delta(a, b);
        r.metrics = macro_metrics(device_codes, twin_codes);
    }
}

}  // namespace detail

// Sends n identical request bodies to the twin and the device, resetting
// both states between requests. Endpoint failure mid-run flags the report
// partial instead of aborting the whole evaluation.
inline EvalReport paired_fidelity_run(const EndpointRef& twin_ep, const EndpointRef& device_ep,
                                      const schema::DeviceSchema& device,
                                      const FidelityOptions& opt) {
    if (opt.n_requests <= 0) throw DataError("fidelity: n_requests must be positive");
    const auto* write = device.endpoint_for(schema::EndpointRole::write_config);

    Rng rng(derive_seed(opt.seed, "fidelity"));
    net::DeviceClient twin_cli(net::parse_url(twin_ep.base_url).origin);
    net::DeviceClient device_cli(net::parse_url(device_ep.base_url).origin);
    const std::string twin_path = net::endpoint_path(*write, twin_ep.sn);
    const std::string device_path = net::endpoint_path(*write, device_ep.sn);
    const std::string twin_reset = net::reset_path(device, twin_ep.sn);
    const std::string device_reset = net::reset_path(device, device_ep.sn);

    EvalReport report;
    std::vector<int> twin_codes, device_codes;
    const auto start = Clock::now();
    for (int i = 0; i < opt.n_requests; ++i) {
        json body = datagen::sample_config(device, rng, opt.p_out_of_range);
        try {
            twin_cli.post_raw(twin_reset, "{}");
            device_cli.post_raw(device_reset, "{}");
            auto tr = twin_cli.post(twin_path, body);
            auto dr = device_cli.post(device_path, body);
            std::string tx = opt.status_only ? std::to_string(tr.status_code)
                                             : canonical_response(tr.status_code, tr.body);
            std::string dx = opt.status_only ? std::to_string(dr.status_code)
                                             : canonical_response(dr.status_code, dr.body);
            report.similarity.push_back(hamming_similarity(tx, dx).percent);
            twin_codes.push_back(tr.status_code);
            device_codes.push_back(dr.status_code);
            report.n_requests++;
        } catch (const NetworkError&) {
            report.partial = true;
            break;
        }
    }
    detail::finalize_report(report, twin_codes, device_codes, opt.one_sided);
    report.wall_time_ms = elapsed_ms(start);
    if (report.n_requests == 0 && !report.partial)
        throw DataError("fidelity: no requests executed");
    return report;
}

// ---------------------------------------------------------------------------
// Batch sweep: for each batch size, launch that many twins plus matching
// emulator instances and run per-twin paired fidelity concurrently. The
// pooled per-request scores form the batch's distribution.
// ---------------------------------------------------------------------------

struct BatchOptions {
    std::string model_path;
    std::string schema_path;
    std::vector<int> batch_sizes{100, 200, 400};
    int requests_per_twin = 20;
    uint64_t seed = 0;
    double p_out_of_range = 0.3;
    double device_fault_rate = 0.0;
    std::optional<uint64_t> device_seed;  // pin to the twins' source emulator
    int workers = 16;      // concurrent fidelity clients
    std::string data_dir;  // empty -> temp directory
};

struct BatchResult {
    int batch_size = 0;
    int twins_active = 0;
    EvalReport report;  // pooled over all twins in the batch
};

inline std::vector<BatchResult> batch_fidelity(const BatchOptions& opt) {
    const schema::DeviceSchema device = schema::load_schema_file(opt.schema_path);
    std::vector<BatchResult> results;

    for (int batch_size : opt.batch_sizes) {
        std::string data_dir = opt.data_dir;
        if (data_dir.empty()) {
            data_dir = (std::filesystem::temp_directory_path() /
                        ("twinkit-batch-" + std::to_string(batch_size) + "-" +
                         std::to_string(mix64(opt.seed) & 0xffffff)))
                           .string();
        }
        std::filesystem::remove_all(data_dir);

        std::vector<std::string> serials;
        fleet::FleetConfig fc;
        fc.data_dir = data_dir;
        fc.batch_size = std::min(batch_size, 100);
        for (int i = 0; i < batch_size; ++i) {
            char sn[64];
            snprintf(sn, sizeof(sn), "%s-%04d", device.sn_prefix.c_str(), i + 1);
            serials.push_back(sn);
            fc.entries.push_back({sn, opt.model_path, opt.schema_path, {}});
        }
        auto twins = fleet::Fleet::launch(fc);
        uint64_t device_seed =
            opt.device_seed ? *opt.device_seed : derive_seed(opt.seed, "batch-device");
        auto devices =
            fleet::EmulatorFleet::launch(device, serials, opt.device_fault_rate, device_seed);

        const std::string twin_base = "http://127.0.0.1:" + std::to_string(twins->port());
        const std::string device_base = "http://127.0.0.1:" + std::to_string(devices->port());

        BatchResult batch;
        batch.batch_size = batch_size;
        batch.twins_active = static_cast<int>(twins->active_twins());

        std::mutex agg_mu;
        std::vector<int> twin_codes, device_codes;
        bool partial = false;
        const auto start = Clock::now();

        // Per-twin loops run inline (not via paired_fidelity_run) so the
        // pooled statistics see every request's status-code pair.
        auto run_twin = [&](size_t i) {
            FidelityOptions fo;
            fo.n_requests = opt.requests_per_twin;
            fo.seed = derive_seed(opt.seed, serials[i]);
            fo.p_out_of_range = opt.p_out_of_range;

            Rng rng(derive_seed(fo.seed, "fidelity"));
            net::DeviceClient twin_cli(twin_base);
            net::DeviceClient device_cli(device_base);
            const auto* wr = device.endpoint_for(schema::EndpointRole::write_config);
            const std::string tp = net::endpoint_path(*wr, serials[i]);
            const std::string tr_path = net::reset_path(device, serials[i]);

            std::vector<double> sims;
            std::vector<int> tcodes, dcodes;
            bool this_partial = false;
            for (int k = 0; k < fo.n_requests; ++k) {
                json body = datagen::sample_config(device, rng, fo.p_out_of_range);
                try {
                    twin_cli.post_raw(tr_path, "{}");
                    device_cli.post_raw(tr_path, "{}");
                    auto t = twin_cli.post(tp, body);
                    auto d = device_cli.post(tp, body);
                    sims.push_back(hamming_similarity(canonical_response(t.status_code, t.body),
                                                      canonical_response(d.status_code, d.body))
                                       .percent);
                    tcodes.push_back(t.status_code);
                    dcodes.push_back(d.status_code);
                } catch (const NetworkError&) {
                    this_partial = true;
                    break;
                }
            }
            std::lock_guard<std::mutex> lock(agg_mu);
            batch.report.similarity.insert(batch.report.similarity.end(), sims.begin(), sims.end());
            batch.report.n_requests += static_cast<int>(sims.size());
            twin_codes.insert(twin_codes.end(), tcodes.begin(), tcodes.end());
            device_codes.insert(device_codes.end(), dcodes.begin(), dcodes.end());
            partial = partial || this_partial;
        };

        std::vector<std::thread> pool;
        std::atomic<size_t> cursor{0};
        int n_workers = std::max(1, opt.workers);
        for (int w = 0; w < n_workers; ++w)
            pool.emplace_back([&]() {
                while (true) {
                    size_t i = cursor.fetch_add(1);
                    if (i >= serials.size()) return;
                    run_twin(i);
                }
            });
        for (auto& th : pool) th.join();

        batch.report.partial = partial;
        detail::finalize_report(batch.report, twin_codes, device_codes, /*one_sided=*/false);
        batch.report.wall_time_ms = elapsed_ms(start);

        twins->shutdown();
        devices->shutdown();
        std::filesystem::remove_all(data_dir);
        results.push_back(std::move(batch));
    }
    return results;
}

}  // namespace twinkit::eval
