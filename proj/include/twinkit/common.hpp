#pragma once

// Shared plumbing: error categories, deterministic RNG, hashing, clock helpers.

#include <chrono>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace twinkit {

// ---------------------------------------------------------------------------
// Errors. Categories map 1:1 onto CLI exit codes (usage=2, data=3, model=4,
// network=5).
// ---------------------------------------------------------------------------

enum class ErrorCategory { usage, data, model, network };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}
    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error(ErrorCategory::usage, m) {}
};
struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorCategory::data, m) {}
};
struct ModelError : Error {
    explicit ModelError(const std::string& m) : Error(ErrorCategory::model, m) {}
};
struct NetworkError : Error {
    explicit NetworkError(const std::string& m) : Error(ErrorCategory::network, m) {}
};

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64). Used for content digests and for deriving per-phase
// seeds from one root seed.
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t mix64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// One root seed fans out to independent streams, one per pipeline phase.
inline uint64_t derive_seed(uint64_t root, std::string_view phase) {
    return mix64(root ^ fnv1a64(phase));
}

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness in the toolkit flows through this class;
// the helpers avoid std::uniform_*_distribution so sequences are stable
// across standard-library implementations.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(mix64(seed)) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Sample k distinct indices from [0, n) without replacement.
    std::vector<size_t> sample_indices(size_t n, size_t k) {
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (size_t i = 0; i < k && i < n; ++i) {
            size_t j = i + static_cast<size_t>(uniform_int(0, static_cast<int64_t>(n - i) - 1));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k < n ? k : n);
        return idx;
    }

    Rng split(std::string_view stream) {
        return Rng(mix64(next_u64() ^ fnv1a64(stream)));
    }

private:
    std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------
// Wall clock
// ---------------------------------------------------------------------------

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace twinkit
