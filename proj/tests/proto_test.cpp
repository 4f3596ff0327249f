#include <cmath>
#include <numeric>

#include <doctest.h>

#include "maple/proto.hpp"
#include "support/fixture.hpp"
#include "support/oracles.hpp"

using namespace maple;
using namespace maple::testing;

namespace {

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

struct RandomEpisode {
    std::vector<std::vector<Vec>> support;
    std::vector<Vec> query;
    std::vector<std::size_t> labels;
};

RandomEpisode random_episode(std::size_t classes, std::size_t k, std::size_t m, std::size_t d, Rng& rng) {
    RandomEpisode ep;
    ep.support.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < k; ++i) ep.support[c].push_back(random_vec(d, rng));
        for (std::size_t i = 0; i < m; ++i) {
            ep.query.push_back(random_vec(d, rng));
            ep.labels.push_back(c);
        }
    }
    return ep;
}

// Largest relative error between the analytic episode gradients and central
// differences of the loss. When `drop_support` is set the support gradients
// are replaced by zeros before comparison.
double loss_gradcheck(RandomEpisode ep, bool drop_support) {
    const double eps = 1e-6;
    auto r = episode_loss(ep.query, ep.labels, ep.support);
    if (drop_support) {
        for (auto& cls : r.grad_support) {
            for (auto& g : cls) g.setZero();
        }
    }
    auto loss = [&] { return episode_loss(ep.query, ep.labels, ep.support).loss; };
    double worst = 0.0;
    auto probe = [&](Vec& v, const Vec& analytic) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            v[i] = saved + eps;
            const double up = loss();
            v[i] = saved - eps;
            const double down = loss();
            v[i] = saved;
            worst = std::max(worst, rel_error(analytic[i], (up - down) / (2 * eps)));
        }
    };
    for (std::size_t q = 0; q < ep.query.size(); ++q) probe(ep.query[q], r.grad_query[q]);
    for (std::size_t c = 0; c < ep.support.size(); ++c) {
        for (std::size_t s = 0; s < ep.support[c].size(); ++s) probe(ep.support[c][s], r.grad_support[c][s]);
    }
    return worst;
}

}  // namespace

TEST_CASE("centroids are exact means") {
    const Vec v = vec2(0.3, -1.7);
    std::vector<std::vector<Vec>> support{{v, v, v}, {vec2(1, 0), vec2(0, 1)}};
    const auto set = compute_prototypes(support);
    REQUIRE(set.size() == 2);
    CHECK(set.centroids[0] == v);
    CHECK(set.centroids[1] == vec2(0.5, 0.5));
    CHECK(set.counts == std::vector<std::size_t>{3, 2});

    std::vector<std::vector<Vec>> empty{{v}, {}};
    CHECK_THROWS_AS(compute_prototypes(empty), std::invalid_argument);
}

TEST_CASE("centroid matches a compensated-sum oracle") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Vec> cls;
        for (int i = 0; i < 5; ++i) cls.push_back(random_vec(8, rng, 10.0));
        std::vector<std::vector<Vec>> support{cls};
        const Vec c = compute_prototypes(support).centroids[0];
        CHECK((c - kahan_mean(cls)).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("similarity is negative squared distance") {
    CHECK(similarity(vec2(0, 0), vec2(3, 4)) == -25.0);
    const Vec v = vec2(1.5, 2.5);
    CHECK(similarity(v, v) == 0.0);
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const Vec a = random_vec(16, rng), b = random_vec(16, rng);
        double expect = 0.0;
        for (int i = 0; i < 16; ++i) expect -= (a[i] - b[i]) * (a[i] - b[i]);
        const double s = similarity(a, b);
        CHECK(std::abs(s - expect) <= 1e-12);
        CHECK(s <= 0.0);
    }
}

TEST_CASE("predict picks the nearest centroid and breaks ties low") {
    PrototypeSet set{{vec2(0, 0), vec2(2, 0), vec2(5, 5)}, {1, 1, 1}};
    CHECK(predict(vec2(2, 0), set) == 1);
    CHECK(predict(vec2(1, 0), set) == 0);
    CHECK(predict(vec2(5, 5), set) == 2);
    PrototypeSet dup{{vec2(1, 1), vec2(1, 1)}, {1, 1}};
    CHECK(predict(vec2(0, 0), dup) == 0);
    CHECK_THROWS_AS(predict(vec2(0, 0), PrototypeSet{}), std::invalid_argument);

    Rng rng(3);
    std::vector<Vec> protos;
    for (int i = 0; i < 5; ++i) protos.push_back(random_vec(4, rng));
    const PrototypeSet random_set{protos, std::vector<std::size_t>(5, 1)};
    for (int q = 0; q < 100; ++q) {
        const Vec query = random_vec(4, rng);
        CHECK(predict(query, random_set) == nearest_scan(query, protos));
    }
}

TEST_CASE("loss between two prototypes is ln 2") {
    std::vector<std::vector<Vec>> support{{vec2(-1, 0)}, {vec2(1, 0)}};
    std::vector<Vec> query{vec2(0, 3), vec2(0, -2)};
    std::vector<std::size_t> labels{0, 1};
    const auto r = episode_loss(query, labels, support);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    for (double l : r.query_losses) CHECK(l == doctest::Approx(0.6931471805599453).epsilon(1e-15));
    CHECK(r.predictions == std::vector<std::size_t>{0, 0});
}

TEST_CASE("loss vanishes as the other prototype recedes") {
    double previous = 1.0;
    for (double far : {1.0, 3.0, 10.0, 100.0}) {
        std::vector<std::vector<Vec>> support{{vec2(0, 0)}, {vec2(far, 0)}};
        std::vector<Vec> query{vec2(0, 0)};
        std::vector<std::size_t> labels{0};
        const double loss = episode_loss(query, labels, support).loss;
        CHECK(loss >= 0.0);
        CHECK(loss <= previous);
        previous = loss;
    }
    CHECK(previous == 0.0);
    std::vector<std::vector<Vec>> near{{vec2(0, 0)}, {vec2(1, 0)}};
    std::vector<Vec> query{vec2(0, 0)};
    std::vector<std::size_t> labels{0};
    CHECK(episode_loss(query, labels, near).loss == doctest::Approx(std::log1p(std::exp(-1.0))));
}

TEST_CASE("loss is stable at large distances") {
    std::vector<std::vector<Vec>> support{{vec2(0, 0)}, {vec2(150, 0)}};
    std::vector<Vec> query{vec2(140, 0)};
    std::vector<std::size_t> labels{0};
    const auto r = episode_loss(query, labels, support);
    CHECK(std::isfinite(r.loss));
    CHECK(r.loss == doctest::Approx(140.0 * 140.0 - 100.0).epsilon(1e-12));
}

TEST_CASE("loss matches a direct long double evaluation") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto ep = random_episode(2 + trial % 4, 1 + trial % 3, 1 + trial % 2, 4, rng);
        const double got = episode_loss(ep.query, ep.labels, ep.support).loss;
        CHECK(std::abs(got - loss_oracle(ep.query, ep.labels, ep.support)) <= 1e-10 * std::max(1.0, got));
    }
}

TEST_CASE("loss gradients match central finite differences") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        CHECK(loss_gradcheck(random_episode(3, 2, 2, 4, rng), false) <= 1e-4);
    }
}

TEST_CASE("guard: dropping the support gradient path fails the check") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        CHECK(loss_gradcheck(random_episode(3, 2, 2, 4, rng), true) > 1e-2);
    }
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        auto ep = random_episode(2 + trial % 4, 2, 2, 6, rng);
        for (auto& q : ep.query) q *= 5.0;
        const auto r = episode_loss(ep.query, ep.labels, ep.support);
        for (const auto& p : r.probabilities) CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    }
}

TEST_CASE("translation leaves loss and predictions unchanged") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        auto ep = random_episode(3, 2, 2, 4, rng);
        const auto before = episode_loss(ep.query, ep.labels, ep.support);
        const Vec shift = random_vec(4, rng, 3.0);
        for (auto& q : ep.query) q += shift;
        for (auto& cls : ep.support) {
            for (auto& s : cls) s += shift;
        }
        const auto after = episode_loss(ep.query, ep.labels, ep.support);
        CHECK(after.loss == doctest::Approx(before.loss).epsilon(1e-9));
        CHECK(after.predictions == before.predictions);
    }
}

TEST_CASE("permuting shots within a class changes nothing") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        auto ep = random_episode(3, 2, 2, 4, rng);
        const auto before = episode_loss(ep.query, ep.labels, ep.support);
        auto swapped = ep.support;
        for (auto& cls : swapped) std::swap(cls[0], cls[1]);
        const auto after = episode_loss(ep.query, ep.labels, swapped);
        CHECK(after.loss == before.loss);
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(compute_prototypes(swapped).centroids[c] == compute_prototypes(ep.support).centroids[c]);
            CHECK(after.grad_support[c][0] == before.grad_support[c][1]);
            CHECK(after.grad_support[c][1] == before.grad_support[c][0]);
        }
        for (std::size_t q = 0; q < ep.query.size(); ++q) CHECK(after.grad_query[q] == before.grad_query[q]);
    }
}

TEST_CASE("episode loss rejects bad input") {
    std::vector<std::vector<Vec>> support{{vec2(0, 0)}, {vec2(1, 0)}};
    std::vector<Vec> query{vec2(0, 0)};
    std::vector<std::size_t> bad_label{2};
    CHECK_THROWS_AS(episode_loss(query, bad_label, support), std::invalid_argument);
    std::vector<Vec> nan_query{vec2(std::nan(""), 0)};
    std::vector<std::size_t> label{0};
    CHECK_THROWS_AS(episode_loss(nan_query, label, support), std::invalid_argument);
}
