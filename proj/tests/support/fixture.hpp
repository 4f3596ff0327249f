#pragma once

// Synthetic corpora for tests. Values are rounded through float so that an
// EMB1 round trip is exact.

#include <cmath>
#include <string>
#include <vector>

#include "maple/corpus.hpp"

namespace maple::testing {

inline double gaussian(Rng& rng) {
    // Box-Muller on the portable uniform stream.
    const double u1 = 1.0 - rng.uniform01();
    const double u2 = rng.uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline Vec float_vec(Vec v) {
    for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
    return v;
}

inline Vec random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
    Vec v(static_cast<Eigen::Index>(n));
    for (auto& x : v) x = scale * gaussian(rng);
    return float_vec(v);
}

struct SyntheticOptions {
    std::size_t prompts = 6;
    std::size_t essays_per_prompt = 60;
    std::size_t dim = 8;
    std::size_t feature_dim = 0;
    std::vector<std::size_t> trait_levels{4, 3};
    // Distance between adjacent level clusters, in units of the noise sigma.
    double separation = 10.0;
    double noise = 1.0;
    // Prompts (by position) that skip the last trait.
    std::vector<std::size_t> prompts_without_last_trait;
    std::uint64_t seed = 1;
};

// Each trait owns a slice of the embedding; an essay sits at level * separation
// along its trait's direction in every slice, plus isotropic noise.
inline CorpusSpec synthetic_spec(const SyntheticOptions& o) {
    Rng rng(o.seed);
    const std::size_t traits = o.trait_levels.size();
    const std::size_t slice = o.dim / traits;

    CorpusSpec spec;
    spec.name = "synthetic";
    spec.dim = o.dim;
    spec.feature_dim = o.feature_dim;

    std::vector<Vec> directions;
    for (std::size_t t = 0; t < traits; ++t) {
        Vec u = Vec::Zero(static_cast<Eigen::Index>(o.dim));
        for (std::size_t i = 0; i < slice; ++i) u[static_cast<Eigen::Index>(t * slice + i)] = gaussian(rng);
        directions.push_back(u.normalized());
        std::vector<double> values;
        for (std::size_t l = 0; l < o.trait_levels[t]; ++l) values.push_back(static_cast<double>(l));
        spec.traits.push_back({"T" + std::to_string(t), random_vec(o.dim, rng), ScoreScale(values), {}});
    }
    for (std::size_t p = 0; p < o.prompts; ++p) {
        spec.prompts.push_back({"P" + std::to_string(p), random_vec(o.dim, rng)});
    }
    for (std::size_t p = 0; p < o.prompts; ++p) {
        bool skip_last = false;
        for (auto s : o.prompts_without_last_trait) skip_last = skip_last || s == p;
        for (std::size_t i = 0; i < o.essays_per_prompt; ++i) {
            CorpusSpec::EssaySpec e;
            e.id = "P" + std::to_string(p) + "_E" + std::to_string(i);
            e.prompt_id = "P" + std::to_string(p);
            Vec emb = Vec::Zero(static_cast<Eigen::Index>(o.dim));
            std::size_t stride = 1;
            for (std::size_t t = 0; t < traits; ++t) {
                const std::size_t level = (i / stride + p) % o.trait_levels[t];
                stride *= o.trait_levels[t];
                emb += static_cast<double>(level) * o.separation * o.noise * directions[t];
                if (t + 1 == traits && skip_last) continue;
                e.labels.emplace_back("T" + std::to_string(t), static_cast<double>(level));
            }
            for (auto& x : emb) x += o.noise * gaussian(rng);
            e.embedding = float_vec(emb);
            if (o.feature_dim > 0) e.features = random_vec(o.feature_dim, rng);
            spec.essays.push_back(std::move(e));
        }
    }
    return spec;
}

inline Corpus synthetic_corpus(const SyntheticOptions& o) { return Corpus::build(synthetic_spec(o)); }

}  // namespace maple::testing

#include <filesystem>

namespace maple::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(std::filesystem::temp_directory_path() / ("maple_" + name)) {
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace maple::testing
