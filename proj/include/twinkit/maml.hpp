#pragma once

// Meta-training loop: per iteration, sample tasks, run plain gradient steps
// on each task's adaptation split, score the adapted parameters on the
// evaluation split, and apply the averaged evaluation gradient to the base
// parameters with a moment-based (Adam) outer step. First-order by default:
// evaluation gradients at the adapted parameters are applied to the base as
// is. The second-order flag differentiates through the inner steps exactly,
// using Hessian-vector products.
//
// Also here: weight surgery for schema drift (transfer by feature name and
// status code), few-shot adaptation, and the model artifact format.

#include <algorithm>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "twinkit/common.hpp"
#include "twinkit/dataprep.hpp"
#include "twinkit/mlp.hpp"
#include "twinkit/tasks.hpp"

namespace twinkit::meta {

using nlohmann::json;

struct TrainConfig {
    double meta_lr = 1e-3;         // outer Adam step size
    double inner_lr = 0.05;        // plain gradient steps inside a task
    int adaptation_steps = 1;
    int max_iterations = 5000;
    int patience = 100;            // iterations without improvement before stopping
    double min_improvement = 1e-4; // on the smoothed averaged evaluation loss
    int smoothing_window = 10;
    uint64_t seed = 0;
    bool second_order = false;
    int hidden_dim = 128;
    bool parallel_tasks = false;   // evaluate tasks concurrently, fixed-order reduction

    static TrainConfig training_defaults() { return TrainConfig{}; }

    static TrainConfig adaptation_defaults() {
        TrainConfig c;
        c.max_iterations = 1000;
        c.patience = 20;
        return c;
    }

    void validate() const {
        if (meta_lr <= 0.0 || inner_lr <= 0.0)
            throw ModelError("train: learning rates must be positive");
        if (inner_lr <= meta_lr)
            throw ModelError("train: the outer (Adam) learning rate must be below the inner rate");
        if (adaptation_steps < 1) throw ModelError("train: adaptation_steps must be >= 1");
        if (patience >= max_iterations)
            throw ModelError("train: patience must be below max_iterations");
    }
};

struct TrainReport {
    enum class StopReason { max_iterations, patience };

    int iterations_run = 0;
    std::vector<double> loss_curve;           // averaged evaluation loss per iteration
    std::vector<double> eval_accuracy_curve;  // averaged adapted-model accuracy
    double wall_time_ms = 0.0;
    StopReason stop_reason = StopReason::max_iterations;
};

inline const char* stop_reason_name(TrainReport::StopReason r) {
    return r == TrainReport::StopReason::patience ? "patience" : "max-iterations";
}

// ---------------------------------------------------------------------------
// Inner loop
// ---------------------------------------------------------------------------

namespace detail {

// Visited parameter sets theta_0..theta_k (theta_0 = start; theta_k = final).
inline std::vector<ParamBlock> inner_trajectory(const ParamBlock& start, int in, int hid, int out,
                                                const Batch& adaptation, double inner_lr,
                                                int steps) {
    std::vector<ParamBlock> traj;
    traj.reserve(static_cast<size_t>(steps) + 1);
    traj.push_back(start);
    ParamBlock grads = ParamBlock::shaped(in, hid, out);
    for (int t = 0; t < steps; ++t) {
        loss_and_grads(traj.back(), in, hid, out, adaptation, &grads);
        ParamBlock next = traj.back();
        next.add_scaled(grads, -inner_lr);
        traj.push_back(std::move(next));
    }
    return traj;
}

}  // namespace detail

// Clone of the model advanced by plain gradient descent on the adaptation
// split; the original is untouched.
inline MlpModel inner_adapt(const MlpModel& model, const Batch& adaptation, double inner_lr,
                            int steps) {
    if (steps < 1) throw ModelError("inner_adapt: steps must be >= 1");
    MlpModel out = model;
    out.params = detail::inner_trajectory(model.params, model.input_dim, model.hidden_dim,
                                          model.output_dim, adaptation, inner_lr, steps)
                     .back();
    return out;
}

// ---------------------------------------------------------------------------
// Outer optimizer
// ---------------------------------------------------------------------------

namespace detail {

struct Adam {
    ParamBlock m, v;
    int t = 0;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

    explicit Adam(const ParamBlock& shape) : m(shape), v(shape) {
        m.fill(0.0);
        v.fill(0.0);
    }

    void step(ParamBlock& params, const ParamBlock& grads, double lr) {
        ++t;
        double c1 = 1.0 - std::pow(beta1, t);
        double c2 = 1.0 - std::pow(beta2, t);
        size_t n = params.flat_size();
        for (size_t i = 0; i < n; ++i) {
            double g = grads.flat(i);
            double& mi = m.flat(i);
            double& vi = v.flat(i);
            mi = beta1 * mi + (1.0 - beta1) * g;
            vi = beta2 * vi + (1.0 - beta2) * g * g;
            params.flat(i) -= lr * (mi / c1) / (std::sqrt(vi / c2) + epsilon);
        }
    }
};

struct TaskOutcome {
    double loss = 0.0;
    double accuracy = 0.0;
    ParamBlock grads;
};

inline TaskOutcome evaluate_task(const ParamBlock& base, int in, int hid, int out,
                                 const Task& task, const TrainConfig& cfg) {
    TaskOutcome r;
    auto traj = inner_trajectory(base, in, hid, out, task.adaptation, cfg.inner_lr,
                                 cfg.adaptation_steps);
    r.grads = ParamBlock::shaped(in, hid, out);
    r.loss = loss_and_grads(traj.back(), in, hid, out, task.evaluation, &r.grads);
    r.accuracy = batch_accuracy(traj.back(), in, hid, out, task.evaluation);
    if (cfg.second_order) {
        // Pull the evaluation gradient back through each inner step:
        // d theta_{t+1} / d theta_t = I - inner_lr * H_adapt(theta_t).
        ParamBlock hvp = ParamBlock::shaped(in, hid, out);
        for (int t = cfg.adaptation_steps - 1; t >= 0; --t) {
            loss_grads_hvp(traj[static_cast<size_t>(t)], in, hid, out, task.adaptation, r.grads,
                           nullptr, &hvp);
            r.grads.add_scaled(hvp, -cfg.inner_lr);
        }
    }
    return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

inline std::pair<MlpModel, TrainReport> train_maml(const prep::ProcessedDataset& data,
                                                   const TaskConfig& task_cfg,
                                                   const TrainConfig& cfg,
                                                   const MlpModel* initial = nullptr) {
    cfg.validate();
    MetaDataset meta = build_meta_dataset(data);
    task_cfg.validate(meta.n_classes());

    const int in = static_cast<int>(data.manifest.n_features());
    const int out = static_cast<int>(data.manifest.n_classes());
    MlpModel model;
    if (initial) {
        if (initial->input_dim != in || initial->output_dim != out)
            throw ModelError("train: initial model shape does not match the dataset");
        model = *initial;
    } else {
        model = init_model(in, out, cfg.hidden_dim, cfg.seed);
    }
    model.feature_order = data.manifest.feature_order;
    model.label_codes = data.manifest.label_unmap;
    const int hid = model.hidden_dim;

    Rng rng(derive_seed(cfg.seed, "maml"));
    detail::Adam adam(model.params);
    TrainReport report;
    const auto start = Clock::now();
    double best_smoothed = std::numeric_limits<double>::infinity();
    int stale = 0;

    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        std::vector<Task> tasks;
        tasks.reserve(static_cast<size_t>(task_cfg.m_tasks));
        for (int t = 0; t < task_cfg.m_tasks; ++t)
            tasks.push_back(sample_task(meta, task_cfg, rng));

        std::vector<detail::TaskOutcome> outcomes(tasks.size());
        if (cfg.parallel_tasks) {
            std::vector<std::future<detail::TaskOutcome>> futs;
            futs.reserve(tasks.size());
            for (const Task& task : tasks)
                futs.push_back(std::async(std::launch::async, [&, &task = task] {
                    return detail::evaluate_task(model.params, in, hid, out, task, cfg);
                }));
            for (size_t t = 0; t < futs.size(); ++t) outcomes[t] = futs[t].get();
        } else {
            for (size_t t = 0; t < tasks.size(); ++t)
                outcomes[t] = detail::evaluate_task(model.params, in, hid, out, tasks[t], cfg);
        }

        ParamBlock mean_grads = ParamBlock::shaped(in, hid, out);
        double mean_loss = 0.0, mean_acc = 0.0;
        const double inv_m = 1.0 / static_cast<double>(outcomes.size());
        for (const auto& o : outcomes) {  // fixed-order reduction
            mean_grads.add_scaled(o.grads, inv_m);
            mean_loss += o.loss * inv_m;
            mean_acc += o.accuracy * inv_m;
        }
        if (!std::isfinite(mean_loss) || !mean_grads.finite())
            throw ModelError("train: non-finite loss at iteration " + std::to_string(iter + 1) +
                             " (loss=" + std::to_string(mean_loss) + ")");

        adam.step(model.params, mean_grads, cfg.meta_lr);
        report.loss_curve.push_back(mean_loss);
        report.eval_accuracy_curve.push_back(mean_acc);
        report.iterations_run = iter + 1;

        size_t win = std::min<size_t>(static_cast<size_t>(cfg.smoothing_window),
                                      report.loss_curve.size());
        double smoothed = std::accumulate(report.loss_curve.end() - static_cast<long>(win),
                                          report.loss_curve.end(), 0.0) /
                          static_cast<double>(win);
        if (smoothed < best_smoothed - cfg.min_improvement) {
            best_smoothed = smoothed;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            report.stop_reason = TrainReport::StopReason::patience;
            break;
        }
    }
    report.wall_time_ms = elapsed_ms(start);
    return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Weight surgery across schema drift. Input columns are matched by feature
// name, output rows by status code; unmatched slots keep fresh fan-based
// initialization and vanished ones are dropped.
// ---------------------------------------------------------------------------

namespace detail {

inline MlpModel transfer_to(const MlpModel& src, const std::vector<std::string>& new_features,
                            const std::vector<int>& new_label_codes, uint64_t seed) {
    MlpModel dst = init_model(static_cast<int>(new_features.size()),
                              static_cast<int>(new_label_codes.size()), src.hidden_dim, seed);
    dst.feature_order = new_features;
    dst.label_codes = new_label_codes;
    dst.activation = src.activation;

    bool any_feature = false, any_label = false;
    for (size_t ni = 0; ni < new_features.size(); ++ni) {
        auto it = std::find(src.feature_order.begin(), src.feature_order.end(), new_features[ni]);
        if (it == src.feature_order.end()) continue;
        any_feature = true;
        size_t oi = static_cast<size_t>(it - src.feature_order.begin());
        for (int j = 0; j < src.hidden_dim; ++j)
            dst.params.w1[static_cast<size_t>(j) * new_features.size() + ni] =
                src.params.w1[static_cast<size_t>(j) * src.input_dim + oi];
    }
    dst.params.b1 = src.params.b1;
    for (size_t nk = 0; nk < new_label_codes.size(); ++nk) {
        auto it = std::find(src.label_codes.begin(), src.label_codes.end(), new_label_codes[nk]);
        if (it == src.label_codes.end()) continue;
        any_label = true;
        size_t ok = static_cast<size_t>(it - src.label_codes.begin());
        std::copy_n(&src.params.w2[ok * static_cast<size_t>(src.hidden_dim)], src.hidden_dim,
                    &dst.params.w2[nk * static_cast<size_t>(src.hidden_dim)]);
        dst.params.b2[nk] = src.params.b2[ok];
    }
    if (!any_feature && !any_label)
        throw ModelError("transfer: disjoint feature and label sets; adaptation is meaningless");
    return dst;
}

}  // namespace detail

inline MlpModel transfer_weights(const MlpModel& model, const prep::TransformManifest& old_manifest,
                                 const prep::TransformManifest& new_manifest, uint64_t seed) {
    if (old_manifest.feature_order != model.feature_order ||
        old_manifest.label_unmap != model.label_codes)
        throw ModelError("transfer: old manifest does not describe the given model");
    return detail::transfer_to(model, new_manifest.feature_order, new_manifest.label_unmap, seed);
}

// Few-shot adaptation of an existing twin model to new data (another device
// or a newer version): weight surgery followed by the training loop with
// adaptation settings.
inline std::pair<MlpModel, TrainReport> adapt_model(const MlpModel& base,
                                                    const prep::ProcessedDataset& new_data,
                                                    const TaskConfig& task_cfg,
                                                    const TrainConfig& cfg) {
    MlpModel start = detail::transfer_to(base, new_data.manifest.feature_order,
                                         new_data.manifest.label_unmap, cfg.seed);
    return train_maml(new_data, task_cfg, cfg, &start);
}

// ---------------------------------------------------------------------------
// Model artifact: versioned JSON holding the parameters (full-precision
// decimal arrays), the transform manifest, and a digest of the training
// configuration. Loading verifies format version and content digest.
// ---------------------------------------------------------------------------

struct ModelArtifact {
    MlpModel model;
    prep::TransformManifest manifest;
    json training;  // configuration digest, informational
};

inline json make_train_digest(const TaskConfig& t, const TrainConfig& c) {
    return json{{"n_ways", t.n_ways},
                {"k_shots", t.k_shots},
                {"m_tasks", t.m_tasks},
                {"task_size", t.task_size},
                {"meta_lr", c.meta_lr},
                {"inner_lr", c.inner_lr},
                {"adaptation_steps", c.adaptation_steps},
                {"max_iterations", c.max_iterations},
                {"patience", c.patience},
                {"min_improvement", c.min_improvement},
                {"seed", c.seed},
                {"second_order", c.second_order},
                {"hidden_dim", c.hidden_dim}};
}

namespace detail {

inline json artifact_payload(const MlpModel& m, const prep::TransformManifest& manifest,
                             const json& training) {
    return json{{"model",
                 {{"input_dim", m.input_dim},
                  {"hidden_dim", m.hidden_dim},
                  {"output_dim", m.output_dim},
                  {"activation", m.activation},
                  {"feature_order", m.feature_order},
                  {"label_codes", m.label_codes},
                  {"w1", m.params.w1},
                  {"b1", m.params.b1},
                  {"w2", m.params.w2},
                  {"b2", m.params.b2}}},
                {"manifest", manifest.to_json()},
                {"training", training}};
}

inline std::string payload_digest(const json& payload) {
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx",
             static_cast<unsigned long long>(fnv1a64(payload.dump())));
    return buf;
}

}  // namespace detail

inline void save_model(const std::string& path, const MlpModel& m,
                       const prep::TransformManifest& manifest, const json& training) {
    json payload = detail::artifact_payload(m, manifest, training);
    json artifact{{"format", "twinkit-model"},
                  {"format_version", 1},
                  {"payload", payload},
                  {"digest", detail::payload_digest(payload)}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ModelError("cannot write model artifact: " + path);
    out << artifact.dump(2) << "\n";
}

inline ModelArtifact load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open model artifact: " + path);
    json artifact = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (artifact.is_discarded())
        throw ModelError("corrupted model artifact (unparseable): " + path);
    if (artifact.value("format", "") != "twinkit-model")
        throw ModelError("not a model artifact: " + path);
    if (artifact.value("format_version", 0) != 1)
        throw ModelError("model artifact version mismatch in " + path);
    if (!artifact.contains("payload") || !artifact.contains("digest"))
        throw ModelError("corrupted model artifact (missing sections): " + path);
    const json& payload = artifact["payload"];
    if (detail::payload_digest(payload) != artifact["digest"].get<std::string>())
        throw ModelError("corrupted model artifact (digest mismatch): " + path);

    ModelArtifact a;
    const json& mj = payload["model"];
    a.model.input_dim = mj["input_dim"].get<int>();
    a.model.hidden_dim = mj["hidden_dim"].get<int>();
    a.model.output_dim = mj["output_dim"].get<int>();
    a.model.activation = mj["activation"].get<std::string>();
    a.model.feature_order = mj["feature_order"].get<std::vector<std::string>>();
    a.model.label_codes = mj["label_codes"].get<std::vector<int>>();
    a.model.params.w1 = mj["w1"].get<std::vector<double>>();
    a.model.params.b1 = mj["b1"].get<std::vector<double>>();
    a.model.params.w2 = mj["w2"].get<std::vector<double>>();
    a.model.params.b2 = mj["b2"].get<std::vector<double>>();
    size_t want_w1 = static_cast<size_t>(a.model.hidden_dim) * a.model.input_dim;
    size_t want_w2 = static_cast<size_t>(a.model.output_dim) * a.model.hidden_dim;
    if (a.model.params.w1.size() != want_w1 || a.model.params.w2.size() != want_w2 ||
        a.model.params.b1.size() != static_cast<size_t>(a.model.hidden_dim) ||
        a.model.params.b2.size() != static_cast<size_t>(a.model.output_dim))
        throw ModelError("corrupted model artifact (shape mismatch): " + path);
    a.manifest = prep::TransformManifest::from_json(payload["manifest"]);
    a.training = payload["training"];
    return a;
}

}  // namespace twinkit::meta
