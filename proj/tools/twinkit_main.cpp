// twinkit command-line interface: one entry point for the whole pipeline
// (data generation -> preparation -> training/adaptation -> twin serving ->
// fidelity evaluation), with seeds and run manifests for reproducibility.
//
// Exit codes: 0 ok, 2 usage, 3 data error, 4 model error, 5 network error.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "twinkit/common.hpp"
#include "twinkit/datagen.hpp"
#include "twinkit/dataprep.hpp"
#include "twinkit/device_http.hpp"
#include "twinkit/evalstats.hpp"
#include "twinkit/fidelity.hpp"
#include "twinkit/fleet.hpp"
#include "twinkit/maml.hpp"
#include "twinkit/mlp.hpp"
#include "twinkit/reference_device.hpp"
#include "twinkit/schema.hpp"
#include "twinkit/tasks.hpp"
#include "twinkit/twin.hpp"

namespace tk = twinkit;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

void install_signal_handlers() {
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
}

void wait_for_signal() {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "missing";
    std::ostringstream buf;
    buf << in.rdbuf();
    char hex[17];
    snprintf(hex, sizeof(hex), "%016llx",
             static_cast<unsigned long long>(tk::fnv1a64(buf.str())));
    return hex;
}

std::string data_dir_override(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    const char* env = std::getenv("TWINKIT_DATA_DIR");
    return env ? env : "twin-data";
}

// Run manifest written beside the primary output: resolved configuration,
// input/output digests and per-phase wall times.
struct ManifestWriter {
    std::string subcommand;
    json config = json::object();
    uint64_t seed = 0;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
    std::map<std::string, double> phase_ms;

    void add_input(const std::string& path) { inputs[path] = file_digest(path); }
    void add_output(const std::string& path) { outputs[path] = file_digest(path); }

    void write(const std::string& primary_output) const {
        json j{{"subcommand", subcommand},
               {"config", config},
               {"seed", seed},
               {"inputs", inputs},
               {"outputs", outputs},
               {"phase_wall_times_ms", phase_ms},
               {"generated_at", tk::twin::iso_timestamp()}};
        std::string path = primary_output + ".run.json";
        std::ofstream out(path, std::ios::binary);
        out << j.dump(2) << "\n";
    }
};

// ---------------------------------------------------------------------------
// Subcommand implementations
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string schema_path, endpoint, out = "raw.csv";
    int max_requests = 0;
    double max_duration_s = 0.0;
    double delay_ms = 3000.0;
    double p_out = 0.3;
    uint64_t seed = 0;
};

int run_gen_data(const GenDataArgs& a) {
    tk::datagen::GenBudget budget;
    if (a.max_requests > 0) budget.max_requests = a.max_requests;
    if (a.max_duration_s > 0.0) budget.max_duration_ms = a.max_duration_s * 1000.0;
    budget.delay_ms = a.delay_ms;
    budget.p_out_of_range = a.p_out;

    auto device = tk::schema::load_schema_file(a.schema_path);
    auto start = tk::Clock::now();
    auto ds = tk::datagen::run_generation(a.endpoint, device, budget, a.seed);
    double gen_ms = tk::elapsed_ms(start);
    tk::datagen::save_raw_csv(ds, device, a.out, a.seed, budget);

    ManifestWriter mw;
    mw.subcommand = "gen-data";
    mw.seed = a.seed;
    mw.config = {{"schema", a.schema_path}, {"endpoint", a.endpoint},
                 {"max_requests", a.max_requests}, {"max_duration_s", a.max_duration_s},
                 {"delay_ms", a.delay_ms}, {"p_out", a.p_out}};
    mw.add_input(a.schema_path);
    mw.add_output(a.out);
    mw.phase_ms["gen-data"] = gen_ms;
    mw.write(a.out);

    printf("wrote %zu records to %s (%s)\n", ds.records.size(), a.out.c_str(),
           ds.complete ? "complete" : "INCOMPLETE: endpoint failed mid-run");
    return ds.complete ? 0 : 5;
}

struct PreprocessArgs {
    std::string in, out = "processed.csv", schema_path;
    double low_variance = 1e-9;
    double high_variance = 0.0;  // 0 = disabled
    bool include_timing = false;
};

int run_preprocess(const PreprocessArgs& a) {
    tk::prep::PrepOptions opt;
    opt.low_variance_threshold = a.low_variance;
    if (a.high_variance > 0.0) opt.high_variance_threshold = a.high_variance;
    opt.include_timing = a.include_timing;

    tk::datagen::RawDataset raw;
    tk::schema::DeviceSchema device;
    bool is_jsonl = a.in.size() > 6 && a.in.substr(a.in.size() - 6) == ".jsonl";
    if (is_jsonl) {
        if (a.schema_path.empty())
            throw tk::UsageError("preprocess: --schema is required for calibration-log input");
        device = tk::schema::load_schema_file(a.schema_path);
        raw = tk::twin::calibration_log_to_raw(a.in, device);
    } else {
        auto loaded = tk::datagen::load_raw_csv(a.in);
        raw = std::move(loaded.dataset);
        device = std::move(loaded.device);
    }

    auto start = tk::Clock::now();
    auto processed = tk::prep::fit_transform(raw, device, opt);
    double fit_ms = tk::elapsed_ms(start);
    tk::prep::save_processed_csv(processed, a.out);

    ManifestWriter mw;
    mw.subcommand = "preprocess";
    mw.config = {{"in", a.in}, {"low_variance", a.low_variance},
                 {"high_variance", a.high_variance}, {"include_timing", a.include_timing}};
    mw.add_input(a.in);
    mw.add_output(a.out);
    mw.phase_ms["preprocess"] = fit_ms;
    mw.write(a.out);

    printf("processed %zu rows, %zu features, %zu classes -> %s\n", processed.size(),
           processed.manifest.n_features(), processed.manifest.n_classes(), a.out.c_str());
    for (const auto& [name, reason] : processed.manifest.dropped_features)
        printf("  dropped %s (%s)\n", name.c_str(), tk::prep::drop_reason_name(reason));
    return 0;
}

struct TrainArgs {
    std::string data, out = "model.json", base_model;
    int shots = 1, ways = 0, tasks = 10, task_size = 0, iters = 0, patience = 0, hidden = 128;
    double meta_lr = 1e-3, inner_lr = 0.05, min_improvement = 1e-4;
    int adapt_steps = 1;
    uint64_t seed = 0;
    bool second_order = false, parallel = false;
};

int run_train_or_adapt(const TrainArgs& a, bool adapting) {
    auto processed = tk::prep::load_processed_csv(a.data);

    tk::meta::TaskConfig task_cfg;
    task_cfg.k_shots = a.shots;
    task_cfg.n_ways = a.ways > 0 ? a.ways : static_cast<int>(processed.manifest.n_classes());
    task_cfg.m_tasks = a.tasks;
    task_cfg.task_size = a.task_size > 0 ? a.task_size : (adapting ? 64 : 256);

    tk::meta::TrainConfig cfg = adapting ? tk::meta::TrainConfig::adaptation_defaults()
                                         : tk::meta::TrainConfig::training_defaults();
    if (a.iters > 0) cfg.max_iterations = a.iters;
    if (a.patience > 0) cfg.patience = a.patience;
    cfg.meta_lr = a.meta_lr;
    cfg.inner_lr = a.inner_lr;
    cfg.adaptation_steps = a.adapt_steps;
    cfg.min_improvement = a.min_improvement;
    cfg.seed = a.seed;
    cfg.second_order = a.second_order;
    cfg.hidden_dim = a.hidden;
    cfg.parallel_tasks = a.parallel;

    std::pair<tk::meta::MlpModel, tk::meta::TrainReport> result;
    if (adapting) {
        auto base = tk::meta::load_model(a.base_model);
        result = tk::meta::adapt_model(base.model, processed, task_cfg, cfg);
    } else {
        result = tk::meta::train_maml(processed, task_cfg, cfg);
    }
    const auto& [model, report] = result;

    tk::meta::save_model(a.out, model, processed.manifest,
                         tk::meta::make_train_digest(task_cfg, cfg));

    ManifestWriter mw;
    mw.subcommand = adapting ? "adapt" : "train";
    mw.seed = a.seed;
    mw.config = tk::meta::make_train_digest(task_cfg, cfg);
    mw.add_input(a.data);
    if (adapting) mw.add_input(a.base_model);
    mw.add_output(a.out);
    mw.phase_ms[adapting ? "adapt" : "train"] = report.wall_time_ms;
    mw.write(a.out);

    printf("%s finished: %d iterations (%s), final loss %.6f, wall %.1f ms -> %s\n",
           adapting ? "adaptation" : "training", report.iterations_run,
           tk::meta::stop_reason_name(report.stop_reason),
           report.loss_curve.empty() ? 0.0 : report.loss_curve.back(), report.wall_time_ms,
           a.out.c_str());
    return 0;
}

struct BuildTwinsArgs {
    std::string schema_path, model_path, out = "fleet.json", data_dir;
    std::string calibration_mode = "off", device_endpoint;
    int count = 1, start_index = 1, port = 0, batch_size = 100;
};

int run_build_twins(const BuildTwinsArgs& a) {
    auto device = tk::schema::load_schema_file(a.schema_path);
    auto artifact = std::make_shared<const tk::meta::ModelArtifact>(
        tk::meta::load_model(a.model_path));
    std::string data_dir = data_dir_override(a.data_dir);

    tk::fleet::FleetConfig fc;
    fc.port = a.port;
    fc.batch_size = a.batch_size;
    fc.data_dir = data_dir;
    tk::twin::CalibrationConfig cal;
    cal.mode = tk::twin::calibration_mode_from_string(a.calibration_mode);
    cal.device_endpoint = a.device_endpoint;
    cal.validate();

    for (int i = 0; i < a.count; ++i) {
        char sn[64];
        snprintf(sn, sizeof(sn), "%s-%04d", device.sn_prefix.c_str(), a.start_index + i);
        // Instantiating materializes the state file with schema defaults.
        tk::twin::TwinInstance t(device, sn, artifact, data_dir, std::nullopt, cal);
        fc.entries.push_back({sn, a.model_path, a.schema_path, cal});
    }
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw tk::DataError("cannot write " + a.out);
    out << fc.to_json().dump(2) << "\n";

    ManifestWriter mw;
    mw.subcommand = "build-twins";
    mw.config = {{"schema", a.schema_path}, {"model", a.model_path}, {"count", a.count},
                 {"data_dir", data_dir}};
    mw.add_input(a.schema_path);
    mw.add_input(a.model_path);
    mw.add_output(a.out);
    mw.write(a.out);

    printf("built %d twin(s) under %s, fleet config -> %s\n", a.count, data_dir.c_str(),
           a.out.c_str());
    return 0;
}

struct ServeFleetArgs {
    std::string config_path;
    int port = -1, batch_size = 0;
};

int run_serve_fleet(const ServeFleetArgs& a) {
    std::ifstream in(a.config_path, std::ios::binary);
    if (!in) throw tk::DataError("cannot open fleet config: " + a.config_path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw tk::DataError("corrupt fleet config: " + a.config_path);
    auto cfg = tk::fleet::FleetConfig::from_json(j);
    if (a.port >= 0) cfg.port = a.port;
    if (a.batch_size > 0) cfg.batch_size = a.batch_size;

    install_signal_handlers();
    auto fleet = tk::fleet::Fleet::launch(cfg);
    printf("fleet serving %zu twin(s) on port %d (stats at /fleet/stats)\n",
           fleet->active_twins(), fleet->port());
    fflush(stdout);
    wait_for_signal();
    fleet->shutdown();
    printf("fleet shut down cleanly\n");
    return 0;
}

struct ServeRefdevArgs {
    std::string schema_path, sn;
    int port = 0;
    double fault_rate = 0.0;
    double latency_min_ms = 0.0, latency_max_ms = 0.0;
    uint64_t seed = 0;
};

int run_serve_refdev(const ServeRefdevArgs& a) {
    auto device = tk::schema::load_schema_file(a.schema_path);
    tk::refdev::ReferenceDeviceSpec spec;
    spec.device = device;
    spec.serial_number = a.sn.empty() ? device.sn_prefix + "-0001" : a.sn;
    spec.fault_rate = a.fault_rate;
    spec.latency = {a.latency_min_ms, std::max(a.latency_min_ms, a.latency_max_ms)};
    spec.seed = a.seed;

    install_signal_handlers();
    tk::net::DeviceHttpServer server;
    server.add_device(spec.serial_number, std::make_shared<tk::refdev::ReferenceDevice>(spec));
    int port = server.start(a.port);
    const auto* write = device.endpoint_for(tk::schema::EndpointRole::write_config);
    printf("reference device %s (%s %s) on port %d, POST %s\n", spec.serial_number.c_str(),
           device.device_name.c_str(), device.version_tag.c_str(), port,
           tk::net::endpoint_path(*write, spec.serial_number).c_str());
    fflush(stdout);
    wait_for_signal();
    server.stop();
    printf("reference device shut down cleanly\n");
    return 0;
}

struct EvaluateArgs {
    std::string twin_url, twin_sn, device_url, device_sn, schema_path, out = "report.json";
    int requests = 500;
    uint64_t seed = 0;
    double p_out = 0.3;
    bool status_only = false, one_sided = false;
};

int run_evaluate(const EvaluateArgs& a) {
    auto device = tk::schema::load_schema_file(a.schema_path);
    tk::eval::FidelityOptions opt;
    opt.n_requests = a.requests;
    opt.seed = a.seed;
    opt.p_out_of_range = a.p_out;
    opt.status_only = a.status_only;
    opt.one_sided = a.one_sided;

    std::string device_sn = a.device_sn.empty() ? a.twin_sn : a.device_sn;
    auto report = tk::eval::paired_fidelity_run({a.twin_url, a.twin_sn},
                                                {a.device_url, device_sn}, device, opt);

    std::ofstream out(a.out, std::ios::binary);
    out << report.to_json().dump(2) << "\n";
    std::string scores_csv = a.out + ".scores.csv";
    std::ofstream sc(scores_csv, std::ios::binary);
    sc << "request,similarity_percent\n";
    for (size_t i = 0; i < report.similarity.size(); ++i)
        sc << i + 1 << "," << report.similarity[i] << "\n";

    ManifestWriter mw;
    mw.subcommand = "evaluate";
    mw.seed = a.seed;
    mw.config = {{"twin", a.twin_url}, {"device", a.device_url}, {"requests", a.requests},
                 {"p_out", a.p_out}, {"status_only", a.status_only}, {"one_sided", a.one_sided}};
    mw.add_input(a.schema_path);
    mw.add_output(a.out);
    mw.add_output(scores_csv);
    mw.write(a.out);

    printf("%-28s %9s %10s %10s\n", "comparison", "Sim. %", "p-value", "Cliff d");
    printf("%s\n", report.table_row("twin & device").c_str());
    if (report.partial) printf("WARNING: run flagged partial (endpoint failure mid-run)\n");
    return report.partial ? 5 : 0;
}

struct BatchEvalArgs {
    std::string model_path, schema_path, out = "batch-report.json", batches = "100,200,400";
    int requests_per_twin = 20, workers = 16;
    uint64_t seed = 0;
    double p_out = 0.3, fault_rate = 0.0;
};

int run_batch_eval(const BatchEvalArgs& a) {
    tk::eval::BatchOptions opt;
    opt.model_path = a.model_path;
    opt.schema_path = a.schema_path;
    opt.batch_sizes.clear();
    std::stringstream ss(a.batches);
    std::string tok;
    while (std::getline(ss, tok, ',')) opt.batch_sizes.push_back(std::stoi(tok));
    opt.requests_per_twin = a.requests_per_twin;
    opt.seed = a.seed;
    opt.p_out_of_range = a.p_out;
    opt.device_fault_rate = a.fault_rate;
    opt.workers = a.workers;

    auto results = tk::eval::batch_fidelity(opt);

    json out_json = json::array();
    printf("%-28s %9s %10s %10s\n", "batch", "Sim. %", "p-value", "Cliff d");
    for (const auto& r : results) {
        json rj = r.report.to_json();
        rj["batch_size"] = r.batch_size;
        rj["twins_active"] = r.twins_active;
        out_json.push_back(rj);
        printf("%s\n",
               r.report.table_row(std::to_string(r.batch_size) + " twins").c_str());
    }
    std::ofstream out(a.out, std::ios::binary);
    out << out_json.dump(2) << "\n";

    ManifestWriter mw;
    mw.subcommand = "batch-eval";
    mw.seed = a.seed;
    mw.config = {{"model", a.model_path}, {"schema", a.schema_path}, {"batches", a.batches},
                 {"requests_per_twin", a.requests_per_twin}, {"workers", a.workers}};
    mw.add_input(a.model_path);
    mw.add_input(a.schema_path);
    mw.add_output(a.out);
    mw.write(a.out);
    return 0;
}

struct RecommendArgs {
    std::string features = "low", task = "train", upgrade;
    bool time_constrained = false;
};

int run_recommend(const RecommendArgs& a) {
    std::optional<tk::eval::UpgradeKind> upgrade;
    if (!a.upgrade.empty()) {
        if (a.upgrade == "minor") upgrade = tk::eval::UpgradeKind::minor;
        else if (a.upgrade == "major") upgrade = tk::eval::UpgradeKind::major;
        else throw tk::UsageError("upgrade must be minor|major");
    }
    int shots = tk::eval::recommend_shot_method(tk::eval::feature_level_from_string(a.features),
                                                tk::eval::shot_task_from_string(a.task),
                                                a.time_constrained, upgrade);
    printf("%d-shot\n", shots);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"twinkit: learn, serve and evaluate digital twins of schema-described devices"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "probe a device endpoint and compile raw data");
    gen_cmd->add_option("--schema", gen.schema_path, "device schema JSON")->required();
    gen_cmd->add_option("--endpoint", gen.endpoint, "full URL of the device's write route")->required();
    gen_cmd->add_option("--max-requests", gen.max_requests, "request budget");
    gen_cmd->add_option("--max-duration", gen.max_duration_s, "time budget in seconds");
    gen_cmd->add_option("--delay-ms", gen.delay_ms, "delay between requests (default 3000)");
    gen_cmd->add_option("--p-out", gen.p_out, "per-property out-of-range probability (default 0.3)");
    gen_cmd->add_option("--seed", gen.seed, "rng seed");
    gen_cmd->add_option("--out", gen.out, "output CSV path");

    PreprocessArgs pre;
    auto* pre_cmd = app.add_subcommand("preprocess", "fit the transform and emit processed data");
    pre_cmd->add_option("--in", pre.in, "raw CSV (or calibration .jsonl)")->required();
    pre_cmd->add_option("--out", pre.out, "processed CSV path");
    pre_cmd->add_option("--schema", pre.schema_path, "schema (required for .jsonl input)");
    pre_cmd->add_option("--low-variance", pre.low_variance, "low-variance drop threshold");
    pre_cmd->add_option("--high-variance", pre.high_variance, "high-variance drop threshold (0=off)");
    pre_cmd->add_flag("--include-timing", pre.include_timing, "include processing_time_ms as a feature");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "meta-train a twin model from scratch");
    train_cmd->add_option("--data", train.data, "processed CSV")->required();
    train_cmd->add_option("--shots", train.shots, "K shots (1, 2 or 5)");
    train_cmd->add_option("--ways", train.ways, "N ways (0 = all classes)");
    train_cmd->add_option("--tasks", train.tasks, "tasks per iteration");
    train_cmd->add_option("--task-size", train.task_size, "samples per task (default 256)");
    train_cmd->add_option("--iters", train.iters, "max iterations (default 5000)");
    train_cmd->add_option("--patience", train.patience, "early-stop patience (default 100)");
    train_cmd->add_option("--hidden", train.hidden, "hidden layer width (default 128)");
    train_cmd->add_option("--meta-lr", train.meta_lr, "outer Adam learning rate");
    train_cmd->add_option("--inner-lr", train.inner_lr, "inner gradient step size");
    train_cmd->add_option("--adapt-steps", train.adapt_steps, "inner steps per task");
    train_cmd->add_option("--min-improvement", train.min_improvement, "early-stop threshold");
    train_cmd->add_option("--seed", train.seed, "rng seed");
    train_cmd->add_flag("--second-order", train.second_order, "differentiate through inner steps");
    train_cmd->add_flag("--parallel", train.parallel, "evaluate tasks concurrently");
    train_cmd->add_option("--out", train.out, "model artifact path");

    TrainArgs adapt;
    auto* adapt_cmd = app.add_subcommand("adapt", "few-shot adapt an existing twin model");
    adapt_cmd->add_option("--data", adapt.data, "processed CSV for the target device/version")->required();
    adapt_cmd->add_option("--base-model", adapt.base_model, "source model artifact")->required();
    adapt_cmd->add_option("--shots", adapt.shots, "K shots");
    adapt_cmd->add_option("--ways", adapt.ways, "N ways (0 = all classes)");
    adapt_cmd->add_option("--tasks", adapt.tasks, "tasks per iteration");
    adapt_cmd->add_option("--task-size", adapt.task_size, "samples per task (default 64)");
    adapt_cmd->add_option("--iters", adapt.iters, "max iterations (default 1000)");
    adapt_cmd->add_option("--patience", adapt.patience, "early-stop patience (default 20)");
    adapt_cmd->add_option("--hidden", adapt.hidden, "hidden layer width");
    adapt_cmd->add_option("--meta-lr", adapt.meta_lr, "outer Adam learning rate");
    adapt_cmd->add_option("--inner-lr", adapt.inner_lr, "inner gradient step size");
    adapt_cmd->add_option("--adapt-steps", adapt.adapt_steps, "inner steps per task");
    adapt_cmd->add_option("--min-improvement", adapt.min_improvement, "early-stop threshold");
    adapt_cmd->add_option("--seed", adapt.seed, "rng seed");
    adapt_cmd->add_flag("--second-order", adapt.second_order, "differentiate through inner steps");
    adapt_cmd->add_flag("--parallel", adapt.parallel, "evaluate tasks concurrently");
    adapt_cmd->add_option("--out", adapt.out, "model artifact path");

    BuildTwinsArgs build;
    auto* build_cmd = app.add_subcommand("build-twins", "materialize twins and a fleet config");
    build_cmd->add_option("--schema", build.schema_path, "device schema JSON")->required();
    build_cmd->add_option("--model", build.model_path, "model artifact")->required();
    build_cmd->add_option("--count", build.count, "number of twins");
    build_cmd->add_option("--start-index", build.start_index, "first serial index");
    build_cmd->add_option("--data-dir", build.data_dir, "state directory (or TWINKIT_DATA_DIR)");
    build_cmd->add_option("--port", build.port, "port to embed in the fleet config");
    build_cmd->add_option("--batch-size", build.batch_size, "activation wave size");
    build_cmd->add_option("--calibration-mode", build.calibration_mode, "off|shadow|authoritative");
    build_cmd->add_option("--device-endpoint", build.device_endpoint, "physical device write URL");
    build_cmd->add_option("--out", build.out, "fleet config path");

    ServeFleetArgs fleet;
    auto* fleet_cmd = app.add_subcommand("serve-fleet", "serve a fleet of twins over HTTP");
    fleet_cmd->add_option("--config", fleet.config_path, "fleet config JSON")->required();
    fleet_cmd->add_option("--port", fleet.port, "port override (0 = any)");
    fleet_cmd->add_option("--batch-size", fleet.batch_size, "activation wave size override");

    ServeRefdevArgs refdev;
    auto* refdev_cmd = app.add_subcommand("serve-refdev", "serve a rule-based reference device");
    refdev_cmd->add_option("--schema", refdev.schema_path, "device schema JSON")->required();
    refdev_cmd->add_option("--sn", refdev.sn, "serial number (default <prefix>-0001)");
    refdev_cmd->add_option("--port", refdev.port, "port (0 = any)");
    refdev_cmd->add_option("--fault-rate", refdev.fault_rate, "5XX probability on valid input");
    refdev_cmd->add_option("--latency-ms", refdev.latency_min_ms, "fixed artificial delay");
    refdev_cmd->add_option("--latency-max-ms", refdev.latency_max_ms, "upper bound for uniform delay");
    refdev_cmd->add_option("--seed", refdev.seed, "rng seed");

    EvaluateArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "paired twin-vs-device fidelity run");
    eval_cmd->add_option("--twin", eval.twin_url, "twin base URL")->required();
    eval_cmd->add_option("--twin-sn", eval.twin_sn, "twin serial number")->required();
    eval_cmd->add_option("--device", eval.device_url, "device base URL")->required();
    eval_cmd->add_option("--device-sn", eval.device_sn, "device serial (default: twin's)");
    eval_cmd->add_option("--schema", eval.schema_path, "device schema JSON")->required();
    eval_cmd->add_option("--requests", eval.requests, "number of paired requests");
    eval_cmd->add_option("--seed", eval.seed, "rng seed");
    eval_cmd->add_option("--p-out", eval.p_out, "per-property out-of-range probability");
    eval_cmd->add_flag("--status-only", eval.status_only, "compare status codes only");
    eval_cmd->add_flag("--one-sided", eval.one_sided, "one-sided Wilcoxon");
    eval_cmd->add_option("--out", eval.out, "report JSON path");

    BatchEvalArgs batch;
    auto* batch_cmd = app.add_subcommand("batch-eval", "fidelity sweep over twin batch sizes");
    batch_cmd->add_option("--model", batch.model_path, "model artifact")->required();
    batch_cmd->add_option("--schema", batch.schema_path, "device schema JSON")->required();
    batch_cmd->add_option("--batches", batch.batches, "comma-separated batch sizes");
    batch_cmd->add_option("--requests-per-twin", batch.requests_per_twin, "requests per twin");
    batch_cmd->add_option("--workers", batch.workers, "concurrent fidelity clients");
    batch_cmd->add_option("--seed", batch.seed, "rng seed");
    batch_cmd->add_option("--p-out", batch.p_out, "per-property out-of-range probability");
    batch_cmd->add_option("--fault-rate", batch.fault_rate, "device fault rate");
    batch_cmd->add_option("--out", batch.out, "report JSON path");

    RecommendArgs rec;
    auto* rec_cmd = app.add_subcommand("recommend", "pick a few-shot method");
    rec_cmd->add_option("--features", rec.features, "low|medium|high")->required();
    rec_cmd->add_option("--task", rec.task, "train|device-adapt|version-adapt")->required();
    rec_cmd->add_flag("--time-constrained", rec.time_constrained, "minimize time cost");
    rec_cmd->add_option("--upgrade", rec.upgrade, "minor|major (version-adapt only)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen);
        if (pre_cmd->parsed()) return run_preprocess(pre);
        if (train_cmd->parsed()) return run_train_or_adapt(train, false);
        if (adapt_cmd->parsed()) return run_train_or_adapt(adapt, true);
        if (build_cmd->parsed()) return run_build_twins(build);
        if (fleet_cmd->parsed()) return run_serve_fleet(fleet);
        if (refdev_cmd->parsed()) return run_serve_refdev(refdev);
        if (eval_cmd->parsed()) return run_evaluate(eval);
        if (batch_cmd->parsed()) return run_batch_eval(batch);
        if (rec_cmd->parsed()) return run_recommend(rec);
    } catch (const tk::Error& e) {
        fprintf(stderr, "error: %s\n", e.what());
        switch (e.category()) {
            case tk::ErrorCategory::usage: return 2;
            case tk::ErrorCategory::data: return 3;
            case tk::ErrorCategory::model: return 4;
            case tk::ErrorCategory::network: return 5;
        }
    } catch (const std::exception& e) {
        fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 2;
}
