#pragma once

// Meta-dataset and episode construction: rows are grouped by class, and each
// task draws N distinct classes with K adaptation rows per class plus an
// evaluation remainder. Labels are remapped to consecutive indices 0..N-1 in
// ascending class order, so when N equals the class count the remapping is
// the identity and task labels align with the dataset's class indices.

#include <map>
#include <vector>

#include "twinkit/common.hpp"
#include "twinkit/dataprep.hpp"
#include "twinkit/mlp.hpp"

namespace twinkit::meta {

struct MetaDataset {
    std::map<int, std::vector<size_t>> class_index;  // class -> row indices
    const prep::ProcessedDataset* data = nullptr;

    size_t n_classes() const { return class_index.size(); }
};

inline MetaDataset build_meta_dataset(const prep::ProcessedDataset& ds) {
    MetaDataset meta;
    meta.data = &ds;
    for (size_t r = 0; r < ds.labels.size(); ++r)
        meta.class_index[ds.labels[r]].push_back(r);
    if (meta.class_index.size() < 2)
        throw DataError("meta-dataset: need at least 2 classes, got " +
                        std::to_string(meta.class_index.size()));
    return meta;
}

struct TaskConfig {
    int n_ways = 2;
    int k_shots = 1;
    int m_tasks = 10;
    int task_size = 256;  // samples drawn per task before the N*K split

    void validate(size_t n_classes) const {
        if (n_ways < 2) throw DataError("task: n_ways must be >= 2");
        if (n_ways > static_cast<int>(n_classes))
            throw DataError("task: n_ways exceeds the number of classes");
        if (k_shots < 1) throw DataError("task: k_shots must be >= 1");
        if (m_tasks < 1) throw DataError("task: m_tasks must be >= 1");
        if (n_ways * k_shots >= task_size)
            throw DataError("task: n_ways*k_shots must be < task_size so an evaluation split remains");
    }
};

struct Task {
    Batch adaptation;  // exactly N*K rows, K per class
    Batch evaluation;  // up to task_size - N*K further rows of the same classes
    std::vector<int> chosen_classes;  // ascending; remapped label = position
};

inline Task sample_task(const MetaDataset& meta, const TaskConfig& cfg, Rng& rng) {
    cfg.validate(meta.n_classes());

    std::vector<int> eligible;
    for (const auto& [cls, rows] : meta.class_index)
        if (rows.size() >= static_cast<size_t>(cfg.k_shots) + 1) eligible.push_back(cls);
    if (static_cast<int>(eligible.size()) < cfg.n_ways)
        throw DataError("task: insufficient rows per class for " + std::to_string(cfg.n_ways) +
                        "-way " + std::to_string(cfg.k_shots) + "-shot sampling");

    Task task;
    for (size_t i : rng.sample_indices(eligible.size(), static_cast<size_t>(cfg.n_ways)))
        task.chosen_classes.push_back(eligible[i]);
    std::sort(task.chosen_classes.begin(), task.chosen_classes.end());

    // The evaluation budget is split evenly across the chosen classes (the
    // episode draws samples per class), so minority classes carry the same
    // weight in the evaluation loss as majority ones.
    size_t eval_budget = static_cast<size_t>(cfg.task_size) -
                         static_cast<size_t>(cfg.n_ways) * static_cast<size_t>(cfg.k_shots);
    size_t base_quota = eval_budget / static_cast<size_t>(cfg.n_ways);
    size_t extra = eval_budget % static_cast<size_t>(cfg.n_ways);

    for (int pos = 0; pos < cfg.n_ways; ++pos) {
        const auto& rows = meta.class_index.at(task.chosen_classes[pos]);
        size_t quota = base_quota + (static_cast<size_t>(pos) < extra ? 1 : 0);
        size_t want = std::min(rows.size(),
                               static_cast<size_t>(cfg.k_shots) + quota);
        auto picked = rng.sample_indices(rows.size(), want);
        for (size_t i = 0; i < picked.size(); ++i) {
            const double* row = meta.data->matrix[rows[picked[i]]].data();
            if (i < static_cast<size_t>(cfg.k_shots)) {
                task.adaptation.rows.push_back(row);
                task.adaptation.labels.push_back(pos);
            } else {
                task.evaluation.rows.push_back(row);
                task.evaluation.labels.push_back(pos);
            }
        }
    }
    return task;
}

}  // namespace twinkit::meta
