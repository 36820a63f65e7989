#pragma once

// Measurement machinery: macro precision/recall/F1 over one-vs-rest counts,
// normalized-Hamming similarity of canonicalized responses, the Wilcoxon
// signed-rank test (exact enumeration for small n, tie- and continuity-
// corrected normal approximation above), Cliff's delta, and the decision
// table recommending a few-shot method.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "twinkit/common.hpp"

namespace twinkit::eval {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Macro classification metrics
// ---------------------------------------------------------------------------

struct PerClassMetrics {
    long tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct ClassMetrics {
    std::map<int, PerClassMetrics> per_class;  // keyed by class (status code)
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

// One-vs-rest counts over the union of observed true and predicted classes;
// zero-denominator precision/recall fall back to 0.
inline ClassMetrics macro_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.size() != y_pred.size())
        throw DataError("metrics: length mismatch " + std::to_string(y_true.size()) + " vs " +
                        std::to_string(y_pred.size()));
    if (y_true.empty()) throw DataError("metrics: empty input");

    ClassMetrics m;
    for (int c : y_true) m.per_class[c];
    for (int c : y_pred) m.per_class[c];
    for (size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == y_pred[i]) {
            m.per_class[y_true[i]].tp++;
        } else {
            m.per_class[y_pred[i]].fp++;
            m.per_class[y_true[i]].fn++;
        }
    }
    for (auto& [cls, c] : m.per_class) {
        c.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
        c.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
        c.f1 = (c.precision + c.recall) > 0.0
                   ? 2.0 * c.precision * c.recall / (c.precision + c.recall)
                   : 0.0;
        m.macro_precision += c.precision;
        m.macro_recall += c.recall;
        m.macro_f1 += c.f1;
    }
    double n = static_cast<double>(m.per_class.size());
    m.macro_precision /= n;
    m.macro_recall /= n;
    m.macro_f1 /= n;
    return m;
}

// ---------------------------------------------------------------------------
// Response canonicalization + normalized-Hamming similarity
// ---------------------------------------------------------------------------

namespace detail {

inline void canonical_json_into(const json& j, std::string& out) {
    switch (j.type()) {
        case json::value_t::object: {
            out += '{';
            bool first = true;
            for (const auto& [k, v] : j.items()) {  // nlohmann objects iterate key-sorted
                if (!first) out += ',';
                first = false;
                out += json(k).dump();
                out += ':';
                canonical_json_into(v, out);
            }
            out += '}';
            break;
        }
        case json::value_t::array: {
            out += '[';
            for (size_t i = 0; i < j.size(); ++i) {
                if (i) out += ',';
                canonical_json_into(j[i], out);
            }
            out += ']';
            break;
        }
        case json::value_t::number_integer:
        case json::value_t::number_unsigned:
        case json::value_t::number_float: {
            // Fixed numeric formatting so 7, 7u and 7.0 compare equal.
            char buf[40];
            snprintf(buf, sizeof(buf), "%.12g", j.get<double>());
            out += buf;
            break;
        }
        default:
            out += j.dump();
    }
}

}  // namespace detail

inline std::string canonical_json(const json& j) {
    std::string out;
    detail::canonical_json_into(j, out);
    return out;
}

// JSON-normalizes parseable text (sorted keys, fixed number formatting);
// anything else is compared verbatim.
inline std::string canonicalize_text(const std::string& s) {
    json j = json::parse(s, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) return s;
    return canonical_json(j);
}

// Status code prefixed onto the canonical body: the comparison unit of the
// fidelity harness.
inline std::string canonical_response(int status_code, const json& body) {
    return std::to_string(status_code) + " " + canonical_json(body);
}

struct SimilarityScore {
    double percent = 0.0;  // (1 - mismatches/length) * 100
    long mismatches = 0;
    long length = 0;       // compared length after padding
};

inline SimilarityScore hamming_similarity(const std::string& x, const std::string& y) {
    if (x.empty() || y.empty()) throw DataError("similarity: empty input");
    std::string a = canonicalize_text(x);
    std::string b = canonicalize_text(y);
    // The shorter string is padded with a reserved sentinel, so every
    // position past its end counts as a mismatch.
    const char sentinel = '\x01';
    size_t m = std::max(a.size(), b.size());
    long mismatches = 0;
    for (size_t i = 0; i < m; ++i) {
        char ca = i < a.size() ? a[i] : sentinel;
        char cb = i < b.size() ? b[i] : sentinel;
        if (ca != cb) ++mismatches;
    }
    SimilarityScore s;
    s.mismatches = mismatches;
    s.length = static_cast<long>(m);
    s.percent = (1.0 - static_cast<double>(mismatches) / static_cast<double>(m)) * 100.0;
    return s;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

struct StatResult {
    double statistic = 0.0;  // W+ (rank sum of positive differences)
    double p_value = 1.0;
    enum class Method { exact, normal_approximation } method = Method::exact;
    int n_effective = 0;
};

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Average ranks of |d| with ties sharing the mean rank. Returns ranks
// doubled so they are exact integers even with .5 ties.
inline std::vector<long> doubled_ranks(const std::vector<double>& abs_d) {
    size_t n = abs_d.size();
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return abs_d[a] < abs_d[b]; });
    std::vector<long> r2(n, 0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
        // average rank of positions i..j (1-based), doubled: (i+1 + j+1)
        long doubled = static_cast<long>(i + 1 + j + 1);
        for (size_t k = i; k <= j; ++k) r2[order[k]] = doubled;
        i = j + 1;
    }
    return r2;
}

// Exact null distribution of the doubled W+ via subset-sum counting over all
// 2^n sign assignments.
inline double wilcoxon_exact_p(const std::vector<long>& r2, long w2, bool two_sided) {
    long total = 0;
    for (long r : r2) total += r;
    std::vector<double> count(static_cast<size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    for (long r : r2)
        for (long s = total; s >= r; --s) count[static_cast<size_t>(s)] += count[static_cast<size_t>(s - r)];
    double all = std::pow(2.0, static_cast<double>(r2.size()));
    double below = 0.0, above = 0.0;
    for (long s = 0; s <= total; ++s) {
        if (s <= w2) below += count[static_cast<size_t>(s)];
        if (s >= w2) above += count[static_cast<size_t>(s)];
    }
    double p = two_sided ? 2.0 * std::min(below, above) / all : above / all;
    return std::min(p, 1.0);
}

inline double wilcoxon_normal_p(const std::vector<long>& r2, double w_plus, bool two_sided) {
    double n = static_cast<double>(r2.size());
    double mean = n * (n + 1.0) / 4.0;
    // tie correction: subtract sum(t^3 - t)/48 over tie groups
    std::map<long, long> groups;
    for (long r : r2) groups[r]++;
    double tie_term = 0.0;
    for (const auto& [rank, t] : groups) {
        double td = static_cast<double>(t);
        tie_term += (td * td * td - td);
    }
    double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) return 1.0;
    double diff = w_plus - mean;
    double cc = diff > 0 ? -0.5 : (diff < 0 ? 0.5 : 0.0);  // continuity correction
    double z = (diff + cc) / std::sqrt(var);
    if (two_sided) return std::min(1.0, 2.0 * (1.0 - normal_cdf(std::fabs(z))));
    return 1.0 - normal_cdf(z);
}

}  // namespace detail

// Two-sided by default; zero differences are dropped (classical treatment);
// ties share average ranks. Exact enumeration for n_effective <= 25, normal
// approximation with tie and continuity corrections above. All-zero
// differences give p = 1.0 two-sided (0.5 one-sided) with statistic 0.
inline StatResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b,
                                       bool two_sided = true) {
    if (a.size() != b.size())
        throw DataError("wilcoxon: length mismatch " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    if (a.empty()) throw DataError("wilcoxon: empty input");

    std::vector<double> d;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) d.push_back(a[i] - b[i]);

    StatResult r;
    r.n_effective = static_cast<int>(d.size());
    if (d.empty()) {
        r.statistic = 0.0;
        r.p_value = two_sided ? 1.0 : 0.5;
        r.method = StatResult::Method::exact;
        return r;
    }

    std::vector<double> abs_d(d.size());
    for (size_t i = 0; i < d.size(); ++i) abs_d[i] = std::fabs(d[i]);
    auto r2 = detail::doubled_ranks(abs_d);
    long w2 = 0;
    for (size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0) w2 += r2[i];
    r.statistic = static_cast<double>(w2) / 2.0;

    if (d.size() <= 25) {
        r.method = StatResult::Method::exact;
        r.p_value = detail::wilcoxon_exact_p(r2, w2, two_sided);
    } else {
        r.method = StatResult::Method::normal_approximation;
        r.p_value = detail::wilcoxon_normal_p(r2, r.statistic, two_sided);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Cliff's delta: (#(a_i > b_j) - #(a_i < b_j)) / (|a|*|b|), computed exactly
// via a sorted copy of b and binary searches.
// ---------------------------------------------------------------------------

inline double cliffs_delta(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw DataError("cliffs_delta: empty input");
    std::vector<double> sb = b;
    std::sort(sb.begin(), sb.end());
    long net = 0;
    for (double x : a) {
        auto lo = std::lower_bound(sb.begin(), sb.end(), x);
        auto hi = std::upper_bound(sb.begin(), sb.end(), x);
        long less = static_cast<long>(lo - sb.begin());       // b_j < x  -> a_i > b_j
        long greater = static_cast<long>(sb.end() - hi);      // b_j > x  -> a_i < b_j
        net += less - greater;
    }
    return static_cast<double>(net) /
           (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

// ---------------------------------------------------------------------------
// Few-shot method recommendation (decision table)
// ---------------------------------------------------------------------------

enum class FeatureLevel { low, medium, high };
enum class ShotTask { train, device_adapt, version_adapt };
enum class UpgradeKind { minor, major };

inline FeatureLevel feature_level_from_string(const std::string& s) {
    if (s == "low") return FeatureLevel::low;
    if (s == "medium") return FeatureLevel::medium;
    if (s == "high") return FeatureLevel::high;
    throw UsageError("features must be low|medium|high");
}

inline ShotTask shot_task_from_string(const std::string& s) {
    if (s == "train") return ShotTask::train;
    if (s == "device-adapt") return ShotTask::device_adapt;
    if (s == "version-adapt") return ShotTask::version_adapt;
    throw UsageError("task must be train|device-adapt|version-adapt");
}

inline int recommend_shot_method(FeatureLevel features, ShotTask task, bool time_constrained,
                                 std::optional<UpgradeKind> upgrade = {}) {
    if (task == ShotTask::version_adapt) {
        if (!upgrade) throw UsageError("recommend: version-adapt requires an upgrade kind");
        if (*upgrade == UpgradeKind::minor) return 1;
        return features == FeatureLevel::high ? 5 : 2;
    }
    if (upgrade) throw UsageError("recommend: upgrade kind only applies to version-adapt");
    if (task == ShotTask::device_adapt) {
        switch (features) {
            case FeatureLevel::low: return 1;
            case FeatureLevel::medium: return 2;
            case FeatureLevel::high: return 5;
        }
    }
    // train
    if (time_constrained) return features == FeatureLevel::high ? 2 : 1;
    return features == FeatureLevel::high ? 5 : 2;
}

}  // namespace twinkit::eval
