#pragma once

#include <span>
#include <vector>

#include "maple/common.hpp"

namespace maple {

struct PrototypeSet {
    std::vector<Vec> centroids;
    std::vector<std::size_t> counts;

    std::size_t size() const { return centroids.size(); }
};

// Mean representation per class. Throws std::invalid_argument on an empty class.
PrototypeSet compute_prototypes(std::span<const std::vector<Vec>> support);

// Negative squared Euclidean distance; larger means closer.
double similarity(const Vec& query, const Vec& prototype);

// Most similar prototype; ties go to the lowest index.
std::size_t predict(const Vec& query, const PrototypeSet& prototypes);

struct EpisodeLossResult {
    double loss = 0.0;                    // mean over query shots
    std::vector<double> query_losses;     // -log softmax at the true class
    std::vector<Vec> probabilities;       // per query, over classes
    std::vector<std::size_t> predictions;
    std::vector<Vec> grad_query;                   // d loss / d query rep
    std::vector<std::vector<Vec>> grad_support;    // d loss / d support rep, per class
};

// Softmax cross-entropy over similarities to the class prototypes. Gradients
// reach support shots through the centroid means.
EpisodeLossResult episode_loss(std::span<const Vec> query, std::span<const std::size_t> labels,
                               std::span<const std::vector<Vec>> support);

}  // namespace maple
