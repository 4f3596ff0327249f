#include "maple/proto.hpp"

#include <cmath>
#include <stdexcept>

namespace maple {

PrototypeSet compute_prototypes(std::span<const std::vector<Vec>> support) {
    PrototypeSet set;
    set.centroids.reserve(support.size());
    for (std::size_t c = 0; c < support.size(); ++c) {
        const auto& shots = support[c];
        if (shots.empty()) {
            throw std::invalid_argument("compute_prototypes: class " + std::to_string(c) + " has no support");
        }
        Vec sum = Vec::Zero(shots.front().size());
        for (const Vec& v : shots) {
            if (v.size() != sum.size()) throw std::invalid_argument("compute_prototypes: dimension mismatch");
            sum += v;
        }
        set.centroids.push_back(sum / static_cast<double>(shots.size()));
        set.counts.push_back(shots.size());
    }
    return set;
}

double similarity(const Vec& query, const Vec& prototype) {
    if (query.size() != prototype.size()) throw std::invalid_argument("similarity: dimension mismatch");
    return -(query - prototype).squaredNorm();
}

std::size_t predict(const Vec& query, const PrototypeSet& prototypes) {
    if (prototypes.size() == 0) throw std::invalid_argument("predict: empty prototype set");
    std::size_t best = 0;
    double best_sim = similarity(query, prototypes.centroids[0]);
    for (std::size_t c = 1; c < prototypes.size(); ++c) {
        const double s = similarity(query, prototypes.centroids[c]);
        if (s > best_sim) {
            best_sim = s;
            best = c;
        }
    }
    return best;
}

EpisodeLossResult episode_loss(std::span<const Vec> query, std::span<const std::size_t> labels,
                               std::span<const std::vector<Vec>> support) {
    if (query.size() != labels.size()) throw std::invalid_argument("episode_loss: query/label count mismatch");
    if (query.empty()) throw std::invalid_argument("episode_loss: no query shots");
    for (const auto& shots : support) {
        for (const Vec& v : shots) {
            if (!v.allFinite()) throw std::invalid_argument("episode_loss: non-finite support representation");
        }
    }
    const PrototypeSet protos = compute_prototypes(support);
    const std::size_t n_classes = protos.size();
    const double inv_q = 1.0 / static_cast<double>(query.size());

    EpisodeLossResult res;
    std::vector<Vec> grad_centroid(n_classes, Vec::Zero(protos.centroids[0].size()));
    Vec sims(static_cast<Eigen::Index>(n_classes));

    for (std::size_t j = 0; j < query.size(); ++j) {
        const Vec& q = query[j];
        if (!q.allFinite()) throw std::invalid_argument("episode_loss: non-finite query representation");
        if (labels[j] >= n_classes) throw std::invalid_argument("episode_loss: label out of range");

        for (std::size_t c = 0; c < n_classes; ++c) sims[static_cast<Eigen::Index>(c)] = similarity(q, protos.centroids[c]);
        const double top = sims.maxCoeff();
        const Vec ex = (sims.array() - top).exp().matrix();
        const double z = ex.sum();
        const Vec prob = ex / z;
        const double loss = -(sims[static_cast<Eigen::Index>(labels[j])] - top - std::log(z));

        res.query_losses.push_back(loss);
        res.loss += loss * inv_q;
        res.predictions.push_back(predict(q, protos));

        // dL/dD_c = p_c - [c == y]; dD_c/dq = -2 (q - c*); dD_c/dc* = 2 (q - c*)
        Vec gq = Vec::Zero(q.size());
        for (std::size_t c = 0; c < n_classes; ++c) {
            const double coef = (prob[static_cast<Eigen::Index>(c)] - (c == labels[j] ? 1.0 : 0.0)) * inv_q;
            const Vec diff = q - protos.centroids[c];
            gq -= 2.0 * coef * diff;
            grad_centroid[c] += 2.0 * coef * diff;
        }
        res.grad_query.push_back(std::move(gq));
        res.probabilities.push_back(prob);
    }

    res.grad_support.resize(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        const Vec per_shot = grad_centroid[c] / static_cast<double>(protos.counts[c]);
        res.grad_support[c].assign(protos.counts[c], per_shot);
    }
    return res;
}

}  // namespace maple
