#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace maple {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Ingestion and validation failures (missing files, bad labels, dims).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid run configuration or command line.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t step)
        : std::runtime_error(what), step_(step) {}
    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

// Deterministic random stream. Only the engine output of mt19937_64 is
// specified by the standard, so the distributions are done by hand to keep
// streams identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // uniform on [0, n), n > 0
    std::size_t index(std::size_t n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = engine_();
        while (x >= limit) {
            x = engine_();
        }
        return static_cast<std::size_t>(x % bound);
    }

    // uniform on [0, 1) with 53 random bits
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Independent child stream.
    Rng split() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

private:
    std::mt19937_64 engine_;
};

// Draws `count` distinct elements of `pool` (partial Fisher-Yates).
template <typename T>
std::vector<T> sample_without_replacement(std::span<const T> pool, std::size_t count, Rng& rng) {
    if (count > pool.size()) {
        throw std::invalid_argument("sample_without_replacement: count exceeds pool size");
    }
    std::vector<T> work(pool.begin(), pool.end());
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + rng.index(work.size() - i);
        std::swap(work[i], work[j]);
    }
    work.resize(count);
    return work;
}

// FNV-1a, used for stable config hashes.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace maple
