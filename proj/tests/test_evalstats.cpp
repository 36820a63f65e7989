#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "twinkit/evalstats.hpp"

using namespace twinkit;
using namespace twinkit::eval;
using nlohmann::json;

namespace {

// Naive O(n*C) confusion-matrix recount, the independent metrics oracle.
struct NaiveMetrics {
    double macro_p = 0, macro_r = 0, macro_f = 0;
};

NaiveMetrics naive_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    std::set<int> universe(y_true.begin(), y_true.end());
    universe.insert(y_pred.begin(), y_pred.end());
    NaiveMetrics m;
    for (int cls : universe) {
        long tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < y_true.size(); ++i) {
            if (y_pred[i] == cls && y_true[i] == cls) tp++;
            if (y_pred[i] == cls && y_true[i] != cls) fp++;
            if (y_pred[i] != cls && y_true[i] == cls) fn++;
        }
        double p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
        double r = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
        double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
        m.macro_p += p;
        m.macro_r += r;
        m.macro_f += f;
    }
    double n = double(universe.size());
    m.macro_p /= n;
    m.macro_r /= n;
    m.macro_f /= n;
    return m;
}

// Brute-force Cliff's delta over all pairs.
double brute_cliffs(const std::vector<double>& a, const std::vector<double>& b) {
    long gt = 0, lt = 0;
    for (double x : a)
        for (double y : b) {
            if (x > y) gt++;
            if (x < y) lt++;
        }
    return double(gt - lt) / (double(a.size()) * double(b.size()));
}

// Full 2^n sign enumeration of the Wilcoxon null, the exact-path oracle.
double enumerate_wilcoxon_p(const std::vector<double>& diffs, bool two_sided) {
    std::vector<double> abs_d;
    for (double d : diffs)
        if (d != 0.0) abs_d.push_back(std::fabs(d));
    size_t n = abs_d.size();
    if (n == 0) return two_sided ? 1.0 : 0.5;

    // average ranks with ties
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return abs_d[a] < abs_d[b]; });
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && abs_d[order[j + 1]] == abs_d[order[i]]) ++j;
        double avg = (double(i + 1) + double(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double w = 0;
    size_t idx = 0;
    for (double d : diffs) {
        if (d == 0.0) continue;
        if (d > 0) w += rank[idx];
        idx++;
    }

    long above = 0, below = 0;
    for (uint64_t mask = 0; mask < (1ull << n); ++mask) {
        double s = 0;
        for (size_t k = 0; k < n; ++k)
            if (mask & (1ull << k)) s += rank[k];
        if (s >= w - 1e-12) above++;
        if (s <= w + 1e-12) below++;
    }
    double all = std::pow(2.0, double(n));
    double p = two_sided ? 2.0 * std::min(above, below) / all : double(above) / all;
    return std::min(p, 1.0);
}

}  // namespace

TEST_CASE("macro metrics: worked example") {
    // y_true=[A,A,B], y_pred=[A,B,B] with A=0,B=1
    auto m = macro_metrics({0, 0, 1}, {0, 1, 1});
    CHECK(m.macro_precision == Catch::Approx(0.75));
    CHECK(m.macro_recall == Catch::Approx(0.75));
    CHECK(m.macro_f1 == Catch::Approx(2.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("macro metrics: perfect and disjoint predictions") {
    auto perfect = macro_metrics({1, 2, 3, 2}, {1, 2, 3, 2});
    CHECK(perfect.macro_precision == 1.0);
    CHECK(perfect.macro_recall == 1.0);
    CHECK(perfect.macro_f1 == 1.0);

    auto disjoint = macro_metrics({0, 0, 0}, {1, 1, 1});
    CHECK(disjoint.macro_f1 == 0.0);
}

TEST_CASE("macro metrics: errors") {
    CHECK_THROWS_AS(macro_metrics({1}, {1, 2}), DataError);
    CHECK_THROWS_AS(macro_metrics({}, {}), DataError);
}

TEST_CASE("macro metrics match the naive recount on random inputs") {
    Rng rng(801);
    for (int rep = 0; rep < 300; ++rep) {
        int n = int(rng.uniform_int(1, 60));
        int c = int(rng.uniform_int(2, 5));
        std::vector<int> y_true(static_cast<size_t>(n)), y_pred(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            y_true[static_cast<size_t>(i)] = int(rng.uniform_int(0, c - 1));
            y_pred[static_cast<size_t>(i)] = int(rng.uniform_int(0, c - 1));
        }
        auto fast = macro_metrics(y_true, y_pred);
        auto slow = naive_macro(y_true, y_pred);
        CHECK(fast.macro_precision == Catch::Approx(slow.macro_p).margin(1e-12));
        CHECK(fast.macro_recall == Catch::Approx(slow.macro_r).margin(1e-12));
        CHECK(fast.macro_f1 == Catch::Approx(slow.macro_f).margin(1e-12));
    }
}

TEST_CASE("hamming similarity: string examples") {
    CHECK(hamming_similarity("same text", "same text").percent == 100.0);
    CHECK(hamming_similarity("abcd", "abce").percent == 75.0);
    auto padded = hamming_similarity("ab", "abc");
    CHECK(padded.length == 3);
    CHECK(padded.mismatches == 1);
    CHECK(padded.percent == Catch::Approx(66.6667).margin(0.01));
    CHECK_THROWS_AS(hamming_similarity("", "x"), DataError);
}

TEST_CASE("hamming similarity is symmetric and matches a char-loop recount") {
    Rng rng(802);
    for (int rep = 0; rep < 200; ++rep) {
        auto make = [&] {
            std::string s;
            int len = int(rng.uniform_int(1, 20));
            for (int i = 0; i < len; ++i) s += char('a' + rng.uniform_int(0, 5));
            return s;
        };
        std::string x = make(), y = make();
        auto fwd = hamming_similarity(x, y);
        auto rev = hamming_similarity(y, x);
        CHECK(fwd.percent == rev.percent);

        long mism = 0;
        size_t m = std::max(x.size(), y.size());
        for (size_t i = 0; i < m; ++i) {
            char a = i < x.size() ? x[i] : '\x01';
            char b = i < y.size() ? y[i] : '\x01';
            if (a != b) mism++;
        }
        CHECK(fwd.mismatches == mism);
        CHECK(fwd.percent == Catch::Approx((1.0 - double(mism) / double(m)) * 100.0).margin(1e-12));
    }
}

TEST_CASE("canonicalization makes key order and number format irrelevant") {
    json a = json::parse(R"({"b": 1, "a": 2.0})");
    json b = json::parse(R"({"a": 2, "b": 1.0})");
    CHECK(canonical_json(a) == canonical_json(b));
    CHECK(hamming_similarity(a.dump(), b.dump()).percent == 100.0);
    CHECK(canonical_response(200, a) == canonical_response(200, b));
    CHECK(canonical_response(200, a) != canonical_response(422, a));
}

TEST_CASE("wilcoxon: identical samples") {
    std::vector<double> a{1, 2, 3, 4};
    auto r = wilcoxon_signed_rank(a, a);
    CHECK(r.p_value == 1.0);
    CHECK(r.statistic == 0.0);
    CHECK(r.n_effective == 0);
    auto one = wilcoxon_signed_rank(a, a, /*two_sided=*/false);
    CHECK(one.p_value == 0.5);
}

TEST_CASE("wilcoxon: all-positive differences [1..5]") {
    std::vector<double> a{1, 2, 3, 4, 5};
    std::vector<double> b{0, 0, 0, 0, 0};
    auto r = wilcoxon_signed_rank(a, b);
    CHECK(r.statistic == 15.0);
    CHECK(r.p_value == Catch::Approx(0.0625).margin(1e-12));
    CHECK(r.method == StatResult::Method::exact);
    CHECK(r.n_effective == 5);
}

TEST_CASE("wilcoxon exact path equals full sign enumeration for n <= 10") {
    Rng rng(803);
    for (int rep = 0; rep < 200; ++rep) {
        int n = int(rng.uniform_int(1, 10));
        std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            a[static_cast<size_t>(i)] = double(rng.uniform_int(0, 6));
            b[static_cast<size_t>(i)] = double(rng.uniform_int(0, 6));  // ties and zeros likely
        }
        std::vector<double> diffs(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) diffs[static_cast<size_t>(i)] = a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)];
        for (bool two_sided : {true, false}) {
            auto r = wilcoxon_signed_rank(a, b, two_sided);
            double oracle = enumerate_wilcoxon_p(diffs, two_sided);
            CHECK(r.p_value == Catch::Approx(oracle).margin(1e-12));
        }
    }
}

TEST_CASE("wilcoxon exact and normal approximation agree near the cutover") {
    Rng rng(804);
    for (int rep = 0; rep < 50; ++rep) {
        const int n = 25;
        std::vector<double> d(static_cast<size_t>(n));
        for (auto& v : d) v = rng.uniform(-3.0, 3.0);
        std::vector<long> r2 = eval::detail::doubled_ranks([&] {
            std::vector<double> abs_d(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) abs_d[static_cast<size_t>(i)] = std::fabs(d[static_cast<size_t>(i)]);
            return abs_d;
        }());
        long w2 = 0;
        for (int i = 0; i < n; ++i)
            if (d[static_cast<size_t>(i)] > 0) w2 += r2[static_cast<size_t>(i)];
        double exact = eval::detail::wilcoxon_exact_p(r2, w2, true);
        double approx = eval::detail::wilcoxon_normal_p(r2, double(w2) / 2.0, true);
        CHECK(std::fabs(exact - approx) <= 0.02);
    }
}

TEST_CASE("wilcoxon errors") {
    CHECK_THROWS_AS(wilcoxon_signed_rank({1.0}, {1.0, 2.0}), DataError);
    CHECK_THROWS_AS(wilcoxon_signed_rank({}, {}), DataError);
}

TEST_CASE("cliffs delta: worked examples") {
    CHECK(cliffs_delta({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(cliffs_delta({1, 2, 3}, {4, 5, 6}) == -1.0);
    CHECK(cliffs_delta({1, 3}, {2, 2}) == 0.0);
    CHECK_THROWS_AS(cliffs_delta({}, {1.0}), DataError);
}

TEST_CASE("cliffs delta matches brute force and is antisymmetric") {
    Rng rng(805);
    for (int rep = 0; rep < 300; ++rep) {
        int n = int(rng.uniform_int(1, 30)), m = int(rng.uniform_int(1, 30));
        std::vector<double> a(static_cast<size_t>(n)), b(static_cast<size_t>(m));
        for (auto& v : a) v = double(rng.uniform_int(-5, 5));
        for (auto& v : b) v = double(rng.uniform_int(-5, 5));
        double d = cliffs_delta(a, b);
        CHECK(d == Catch::Approx(brute_cliffs(a, b)).margin(1e-12));
        CHECK(cliffs_delta(b, a) == Catch::Approx(-d).margin(1e-12));
        CHECK(std::fabs(d) <= 1.0);

        // invariant under strictly increasing transforms
        auto stretch = [](std::vector<double> v) {
            for (auto& x : v) x = std::exp(x / 3.0);
            return v;
        };
        CHECK(cliffs_delta(stretch(a), stretch(b)) == Catch::Approx(d).margin(1e-12));
    }
}

TEST_CASE("few-shot recommendation table") {
    using FL = FeatureLevel;
    using ST = ShotTask;
    using UK = UpgradeKind;

    // training
    CHECK(recommend_shot_method(FL::low, ST::train, true) == 1);
    CHECK(recommend_shot_method(FL::medium, ST::train, true) == 1);
    CHECK(recommend_shot_method(FL::high, ST::train, true) == 2);
    CHECK(recommend_shot_method(FL::low, ST::train, false) == 2);
    CHECK(recommend_shot_method(FL::medium, ST::train, false) == 2);
    CHECK(recommend_shot_method(FL::high, ST::train, false) == 5);

    // adaptation across devices
    CHECK(recommend_shot_method(FL::low, ST::device_adapt, false) == 1);
    CHECK(recommend_shot_method(FL::medium, ST::device_adapt, false) == 2);
    CHECK(recommend_shot_method(FL::high, ST::device_adapt, false) == 5);

    // adaptation across versions
    for (FL f : {FL::low, FL::medium, FL::high})
        CHECK(recommend_shot_method(f, ST::version_adapt, false, UK::minor) == 1);
    CHECK(recommend_shot_method(FL::low, ST::version_adapt, false, UK::major) == 2);
    CHECK(recommend_shot_method(FL::medium, ST::version_adapt, false, UK::major) == 2);
    CHECK(recommend_shot_method(FL::high, ST::version_adapt, false, UK::major) == 5);

    // argument consistency
    CHECK_THROWS_AS(recommend_shot_method(FL::low, ST::version_adapt, false), UsageError);
    CHECK_THROWS_AS(recommend_shot_method(FL::low, ST::train, false, UK::minor), UsageError);
}
