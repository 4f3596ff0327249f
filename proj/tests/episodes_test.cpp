#include <cmath>
#include <map>

#include <doctest.h>
#include <json.hpp>

#include "maple/episodes.hpp"
#include "support/episode_checks.hpp"
#include "support/fixture.hpp"

using namespace maple;
using namespace maple::testing;

namespace {

// One trait; counts[p][l] essays of prompt p at level l.
Corpus count_corpus(const std::vector<std::vector<std::size_t>>& counts) {
    CorpusSpec spec;
    spec.dim = 1;
    std::vector<double> values;
    for (std::size_t l = 0; l < counts.front().size(); ++l) values.push_back(static_cast<double>(l));
    spec.traits.push_back({"T", Vec::Zero(1), ScoreScale(values), {}});
    int n = 0;
    for (std::size_t p = 0; p < counts.size(); ++p) {
        const std::string pid = "P" + std::to_string(p);
        spec.prompts.push_back({pid, Vec::Zero(1)});
        for (std::size_t l = 0; l < counts[p].size(); ++l) {
            for (std::size_t i = 0; i < counts[p][l]; ++i) {
                spec.essays.push_back({"e" + std::to_string(n++), pid, Vec::Zero(1), std::nullopt,
                                       {{"T", static_cast<double>(l)}}});
            }
        }
    }
    return Corpus::build(spec);
}

EssayMask all_of(const Corpus& c) { return EssayMask(c.essays().size(), true); }

SamplerOptions options_for(Classification cls, SupportSource src, std::size_t k = 5, std::size_t m = 5) {
    SamplerOptions o;
    o.regime = {cls, src};
    o.k = k;
    o.m = m;
    return o;
}

// Five prompts, a 9-level trait and a 3-level trait.
Corpus five_prompt_fixture() {
    SyntheticOptions o;
    o.prompts = 5;
    o.essays_per_prompt = 90;
    o.trait_levels = {9, 3};
    o.dim = 4;
    return synthetic_corpus(o);
}

const Regime kRegimes[] = {{Classification::binary, SupportSource::one_prompt},
                           {Classification::binary, SupportSource::multi_prompt},
                           {Classification::multiclass, SupportSource::one_prompt},
                           {Classification::multiclass, SupportSource::multi_prompt}};

}  // namespace

TEST_CASE("regime names") {
    CHECK(to_string(Regime{Classification::multiclass, SupportSource::multi_prompt}) == "multiclass-mP");
    CHECK(to_string(Regime{Classification::binary, SupportSource::one_prompt}) == "binary-1P");
    CHECK(parse_support_source("1P") == SupportSource::one_prompt);
    CHECK(parse_support_source("multi_prompt") == SupportSource::multi_prompt);
    CHECK(parse_classification("binary") == Classification::binary);
    CHECK(parse_negative_class("single_level") == NegativeClass::single_level);
    CHECK_THROWS_AS(parse_classification("ternary"), ConfigError);
}

TEST_CASE("eligibility applies k and m per side") {
    // P0 lacks query essays at level 0; P1 lacks support at level 0
    const Corpus c = count_corpus({{4, 5}, {6, 6}});
    const auto s = EpisodeSampler(c, all_of(c), options_for(Classification::multiclass, SupportSource::multi_prompt));
    CHECK(s.eligible_levels(0, 0) == std::vector<Level>{1});
    CHECK(s.eligible_levels(0, 1) == std::vector<Level>{1});
}

TEST_CASE("eligible levels match an exhaustive count") {
    Rng rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::vector<std::size_t>> counts(3, std::vector<std::size_t>(4));
        for (auto& row : counts) {
            for (auto& n : row) n = rng.index(8);
            row[rng.index(4)] += 1;
        }
        const Corpus c = count_corpus(counts);
        EssayMask mask(c.essays().size());
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.index(5) != 0;
        std::vector<std::vector<std::size_t>> kept(3, std::vector<std::size_t>(4, 0));
        for (EssayIndex e = 0; e < c.essays().size(); ++e) {
            if (mask[e]) ++kept[c.essay(e).prompt][*c.essay(e).levels[0]];
        }
        const std::size_t k = 1 + rng.index(4), m = 1 + rng.index(4);
        for (SupportSource src : {SupportSource::one_prompt, SupportSource::multi_prompt}) {
            const EpisodeSampler s(c, mask, options_for(Classification::multiclass, src, k, m));
            for (PromptIndex q = 0; q < 3; ++q) {
                std::vector<Level> expect;
                for (Level l = 0; l < 4; ++l) {
                    if (kept[q][l] < m) continue;
                    std::size_t total = 0, best = 0;
                    for (PromptIndex p = 0; p < 3; ++p) {
                        if (p == q) continue;
                        total += kept[p][l];
                        best = std::max(best, kept[p][l]);
                    }
                    if ((src == SupportSource::multi_prompt ? total : best) >= k) expect.push_back(l);
                }
                bool any = false;
                for (std::size_t n : kept[q]) any = any || n > 0;
                CHECK(s.eligible_levels(0, q) == (any ? expect : std::vector<Level>{}));
            }
        }
    }
}

TEST_CASE("episodes satisfy every structural invariant") {
    const Corpus c = five_prompt_fixture();
    const EssayMask mask = all_of(c);
    for (const Regime& regime : kRegimes) {
        CAPTURE(to_string(regime));
        SamplerOptions o;
        o.regime = regime;
        const EpisodeSampler s(c, mask, o);
        CHECK(s.sampleable_traits().size() == 2);
        Rng rng(7);
        std::map<std::size_t, std::size_t> histogram;
        std::size_t violations = 0;
        std::map<PromptIndex, std::set<PromptIndex>> support_seen;
        for (int i = 0; i < 2000; ++i) {
            const Episode ep = s.sample_any(rng);
            violations += episode_violations(ep, c, o, mask).size();
            ++histogram[ep.class_count()];
            for (const auto& g : ep.support) {
                for (EssayIndex e : g) support_seen[ep.query_prompt].insert(c.essay(e).prompt);
            }
        }
        CHECK(violations == 0);
        if (regime.classification == Classification::binary) {
            CHECK(histogram.size() == 1);
            CHECK(histogram.count(2) == 1);
        } else {
            CHECK(histogram.rbegin()->first == 5);
            CHECK(histogram.count(3) == 1);  // the 3-level trait
        }
        // every other prompt eventually supplies support
        for (const auto& [q, prompts] : support_seen) CHECK(prompts.size() == 4);
    }
}

TEST_CASE("two prompts under one_prompt: support is the other prompt") {
    const Corpus c = count_corpus({{6, 6, 6}, {6, 6, 6}});
    for (Classification cls : {Classification::binary, Classification::multiclass}) {
        const auto o = options_for(cls, SupportSource::one_prompt, 2, 2);
        const EpisodeSampler s(c, all_of(c), o);
        Rng rng(2);
        for (int i = 0; i < 200; ++i) {
            const Episode ep = s.sample_any(rng);
            CHECK(episode_violations(ep, c, o, all_of(c)).empty());
            for (const auto& g : ep.support) {
                for (EssayIndex e : g) CHECK(c.essay(e).prompt == 1 - ep.query_prompt);
            }
        }
    }
}

TEST_CASE("binary negative class with only two populated levels is the other level") {
    const Corpus c = count_corpus({{6, 6, 0, 0}, {6, 6, 0, 0}, {6, 6, 0, 0}});
    const auto o = options_for(Classification::binary, SupportSource::multi_prompt, 3, 3);
    const EpisodeSampler s(c, all_of(c), o);
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const Episode ep = *s.sample(0, rng);
        const Level pos = ep.class_levels[0][0];
        CHECK(pos < 2);
        for (const auto* g : {&ep.support[1], &ep.query[1]}) {
            for (EssayIndex e : *g) CHECK(*c.essay(e).levels[0] == 1 - pos);
        }
    }
}

TEST_CASE("binary single-level negatives use one contrasting level") {
    const Corpus c = five_prompt_fixture();
    auto o = options_for(Classification::binary, SupportSource::multi_prompt);
    o.negative = NegativeClass::single_level;
    const EpisodeSampler s(c, all_of(c), o);
    Rng rng(4);
    std::set<std::pair<Level, Level>> pairs;
    for (int i = 0; i < 2000; ++i) {
        const Episode ep = s.sample_any(rng);
        CHECK(episode_violations(ep, c, o, all_of(c)).empty());
        REQUIRE(ep.class_levels[1].size() == 1);
        if (ep.trait == 0) pairs.insert({ep.class_levels[0][0], ep.class_levels[1][0]});
    }
    CHECK(pairs.size() == 72);  // all ordered pairs of 9 levels
}

TEST_CASE("multiclass class counts") {
    SUBCASE("exactly two eligible levels") {
        const Corpus c = count_corpus({{5, 1, 5}, {5, 5, 5}, {5, 0, 5}});
        const auto o = options_for(Classification::multiclass, SupportSource::multi_prompt, 5, 5);
        const EpisodeSampler s(c, all_of(c), o);
        Rng rng(5);
        for (int i = 0; i < 100; ++i) {
            const Episode ep = s.sample_any(rng);
            CHECK(ep.class_levels == std::vector<std::vector<Level>>{{0}, {2}});
        }
    }
    SUBCASE("nine eligible levels are capped at five") {
        const Corpus c = count_corpus(std::vector<std::vector<std::size_t>>(3, std::vector<std::size_t>(9, 6)));
        const auto o = options_for(Classification::multiclass, SupportSource::multi_prompt);
        const EpisodeSampler s(c, all_of(c), o);
        Rng rng(6);
        for (int i = 0; i < 100; ++i) CHECK(s.sample_any(rng).class_count() == 5);
    }
}

TEST_CASE("capped level subsets are uniform") {
    const Corpus c = count_corpus(std::vector<std::vector<std::size_t>>(2, std::vector<std::size_t>(9, 5)));
    const auto o = options_for(Classification::multiclass, SupportSource::multi_prompt);
    const EpisodeSampler s(c, all_of(c), o);
    Rng rng(7);
    std::map<std::vector<std::vector<Level>>, std::size_t> counts;
    const std::size_t draws = 50000;
    for (std::size_t i = 0; i < draws; ++i) ++counts[s.sample(0, rng)->class_levels];
    const std::size_t subsets = 126;  // C(9, 5)
    CHECK(counts.size() == subsets);
    const double expected = static_cast<double>(draws) / subsets;
    double chi2 = 0.0;
    for (const auto& [subset, n] : counts) chi2 += (n - expected) * (n - expected) / expected;
    // 99th percentile of chi-square with 125 dof (Wilson-Hilferty)
    const double dof = subsets - 1.0;
    const double h = 2.0 / (9.0 * dof);
    const double critical = dof * std::pow(1.0 - h + 2.3263478740 * std::sqrt(h), 3);
    CHECK(critical == doctest::Approx(164.69).epsilon(1e-3));
    CHECK(chi2 < critical);
}

TEST_CASE("episode streams are deterministic") {
    const Corpus c = five_prompt_fixture();
    for (const Regime& regime : kRegimes) {
        SamplerOptions o;
        o.regime = regime;
        const EpisodeSampler s(c, all_of(c), o);
        Rng a(11), b(11), other(12);
        bool differs = false;
        for (int i = 0; i < 200; ++i) {
            const std::string x = episode_to_json(s.sample_any(a), c);
            CHECK(x == episode_to_json(s.sample_any(b), c));
            differs = differs || x != episode_to_json(s.sample_any(other), c);
        }
        CHECK(differs);
    }
}

TEST_CASE("unsampleable corpus") {
    const Corpus c = count_corpus({{2, 2}, {2, 2}});
    const EpisodeSampler s(c, all_of(c), options_for(Classification::multiclass, SupportSource::multi_prompt));
    CHECK(s.sampleable_traits().empty());
    Rng rng(1);
    CHECK_FALSE(s.sample(0, rng).has_value());
    CHECK_THROWS_AS(s.sample_any(rng), DataError);
    CHECK_THROWS_AS(EpisodeSampler(c, all_of(c), options_for(Classification::binary, SupportSource::one_prompt, 0, 1)),
                    ConfigError);
}

TEST_CASE("episode JSON") {
    const Corpus c = count_corpus({{3, 3}, {3, 3}});
    const auto o = options_for(Classification::binary, SupportSource::one_prompt, 1, 1);
    const EpisodeSampler s(c, all_of(c), o);
    Rng rng(1);
    const auto j = nlohmann::json::parse(episode_to_json(s.sample_any(rng), c));
    CHECK(j.at("regime") == "binary-1P");
    CHECK(j.at("trait") == "T");
    CHECK(j.at("classes").size() == 2);
    CHECK(j.at("support").size() == 2);
    CHECK(j.at("query").size() == 2);
    CHECK(j.at("support_prompts").size() == 1);
    CHECK(j.at("support_prompts")[0] != j.at("query_prompt"));
}

TEST_CASE("meta-test task") {
    SUBCASE("empty training levels yield no support") {
        const Corpus c = count_corpus({{7, 0, 3}, {2, 2, 2}});
        EssayMask train(c.essays().size(), false);
        for (EssayIndex e : c.prompt(0).essays) train[e] = true;
        const MetaTestTask task = build_meta_test(c, 0, 1, train);
        CHECK(task.levels == 3);
        CHECK(task.support[0].size() == 7);
        CHECK(task.support[1].empty());
        CHECK(task.support[2].size() == 3);
        CHECK(task.query == c.prompt(1).essays);
    }
    SUBCASE("support equals a filter of training essays") {
        SyntheticOptions opts;
        opts.prompts = 4;
        opts.essays_per_prompt = 24;
        opts.prompts_without_last_trait = {2};
        const Corpus c = synthetic_corpus(opts);
        Rng rng(3);
        EssayMask train(c.essays().size());
        for (std::size_t i = 0; i < train.size(); ++i) train[i] = rng.index(3) != 0;
        for (TraitIndex t = 0; t < 2; ++t) {
            for (PromptIndex test = 0; test < 4; ++test) {
                if (!c.annotates(test, t)) {
                    CHECK_THROWS_AS(build_meta_test(c, t, test, train), DataError);
                    continue;
                }
                const MetaTestTask task = build_meta_test(c, t, test, train);
                const std::size_t n = c.scale(t, test)->scale.levels();
                REQUIRE(task.support.size() == n);
                for (Level l = 0; l < n; ++l) {
                    std::vector<EssayIndex> expect;
                    for (EssayIndex e = 0; e < c.essays().size(); ++e) {
                        const auto& essay = c.essay(e);
                        if (train[e] && essay.prompt != test && essay.levels[t] == l) expect.push_back(e);
                    }
                    CHECK(task.support[l] == expect);
                }
                std::vector<EssayIndex> query;
                for (EssayIndex e : c.prompt(test).essays) {
                    if (c.essay(e).levels[t]) query.push_back(e);
                }
                CHECK(task.query == query);
            }
        }
    }
    SUBCASE("no annotated training essays") {
        const Corpus c = count_corpus({{2, 2}, {2, 2}});
        EssayMask none(c.essays().size(), false);
        CHECK_THROWS_AS(build_meta_test(c, 0, 1, none), DataError);
    }
}
