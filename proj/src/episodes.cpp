#include "maple/episodes.hpp"

#include <algorithm>
#include <cassert>

#include <json.hpp>

namespace maple {

std::string to_string(Classification c) { return c == Classification::binary ? "binary" : "multiclass"; }

std::string to_string(SupportSource s) { return s == SupportSource::one_prompt ? "one_prompt" : "multi_prompt"; }

std::string to_string(const Regime& r) {
    return to_string(r.classification) + (r.support == SupportSource::one_prompt ? "-1P" : "-mP");
}

Classification parse_classification(std::string_view text) {
    if (text == "binary") return Classification::binary;
    if (text == "multiclass") return Classification::multiclass;
    throw ConfigError("unknown classification: " + std::string(text));
}

SupportSource parse_support_source(std::string_view text) {
    if (text == "one_prompt" || text == "1P") return SupportSource::one_prompt;
    if (text == "multi_prompt" || text == "mP") return SupportSource::multi_prompt;
    throw ConfigError("unknown support source: " + std::string(text));
}

std::string to_string(NegativeClass n) { return n == NegativeClass::pooled ? "pooled" : "single_level"; }

NegativeClass parse_negative_class(std::string_view text) {
    if (text == "pooled") return NegativeClass::pooled;
    if (text == "single_level") return NegativeClass::single_level;
    throw ConfigError("unknown negative class mode: " + std::string(text));
}

EpisodeSampler::EpisodeSampler(const Corpus& corpus, EssayMask allowed, SamplerOptions options)
    : corpus_(&corpus), options_(options) {
    if (allowed.size() != corpus.essays().size()) {
        throw std::invalid_argument("EpisodeSampler: mask size does not match corpus");
    }
    if (options_.k == 0 || options_.m == 0) {
        throw ConfigError("k and m must be positive");
    }
    if (options_.max_classes < 2) {
        throw ConfigError("max_classes must be at least 2");
    }
    const auto n_traits = corpus.traits().size();
    prompts_.resize(n_traits);
    pools_.resize(n_traits);
    binary_.resize(n_traits);
    multiclass_.resize(n_traits);

    for (EssayIndex e = 0; e < corpus.essays().size(); ++e) {
        if (!allowed[e]) continue;
        const auto& essay = corpus.essay(e);
        for (TraitIndex t = 0; t < n_traits; ++t) {
            if (!essay.levels[t]) continue;
            auto& per_level = pools_[t][essay.prompt];
            if (per_level.empty()) per_level.resize(corpus.scale(t, essay.prompt)->scale.levels());
            per_level[*essay.levels[t]].push_back(e);
        }
    }
    for (TraitIndex t = 0; t < n_traits; ++t) {
        for (const auto& [p, levels] : pools_[t]) prompts_[t].push_back(p);
        if (options_.regime.classification == Classification::binary) {
            index_binary(t);
            if (!binary_[t].empty()) sampleable_.push_back(t);
        } else {
            index_multiclass(t);
            if (!multiclass_[t].empty()) sampleable_.push_back(t);
        }
    }
}

std::size_t EpisodeSampler::pool_size(TraitIndex t, PromptIndex p, Level l) const {
    const auto& by_prompt = pools_[t];
    auto it = by_prompt.find(p);
    if (it == by_prompt.end() || l >= it->second.size()) return 0;
    return it->second[l].size();
}

std::size_t EpisodeSampler::complement_size(TraitIndex t, PromptIndex p, Level l) const {
    auto it = pools_[t].find(p);
    if (it == pools_[t].end()) return 0;
    std::size_t n = 0;
    for (Level other = 0; other < it->second.size(); ++other) {
        if (other != l) n += it->second[other].size();
    }
    return n;
}

std::vector<PromptIndex> EpisodeSampler::others(TraitIndex t, PromptIndex q) const {
    std::vector<PromptIndex> out;
    for (PromptIndex p : prompts_[t]) {
        if (p != q) out.push_back(p);
    }
    return out;
}

std::vector<EssayIndex> EpisodeSampler::gather(TraitIndex t, const std::vector<PromptIndex>& prompts,
                                               const std::vector<Level>& levels) const {
    std::vector<EssayIndex> out;
    for (PromptIndex p : prompts) {
        auto it = pools_[t].find(p);
        if (it == pools_[t].end()) continue;
        for (Level l : levels) {
            if (l < it->second.size()) out.insert(out.end(), it->second[l].begin(), it->second[l].end());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Level> EpisodeSampler::eligible_levels(TraitIndex t, PromptIndex q) const {
    std::vector<Level> out;
    auto it = pools_.at(t).find(q);
    if (it == pools_[t].end()) return out;
    const auto support = others(t, q);
    for (Level l = 0; l < it->second.size(); ++l) {
        if (it->second[l].size() < options_.m) continue;
        bool ok = false;
        if (options_.regime.support == SupportSource::multi_prompt) {
            std::size_t total = 0;
            for (PromptIndex p : support) total += pool_size(t, p, l);
            ok = total >= options_.k;
        } else {
            ok = std::any_of(support.begin(), support.end(),
                             [&](PromptIndex p) { return pool_size(t, p, l) >= options_.k; });
        }
        if (ok) out.push_back(l);
    }
    return out;
}

std::vector<Level> EpisodeSampler::joint_levels(TraitIndex t, PromptIndex q,
                                                const std::vector<PromptIndex>& support) const {
    std::vector<Level> out;
    auto it = pools_[t].find(q);
    if (it == pools_[t].end()) return out;
    for (Level l = 0; l < it->second.size(); ++l) {
        if (it->second[l].size() < options_.m) continue;
        std::size_t total = 0;
        for (PromptIndex p : support) total += pool_size(t, p, l);
        if (total >= options_.k) out.push_back(l);
    }
    return out;
}

void EpisodeSampler::index_binary(TraitIndex t) {
    const std::size_t k = options_.k;
    const std::size_t m = options_.m;
    const bool pooled = options_.negative == NegativeClass::pooled;
    for (PromptIndex q : prompts_[t]) {
        const auto support = others(t, q);
        const auto q_levels = pools_[t].at(q).size();
        BinaryOption option{q, {}, {}};
        for (Level pos = 0; pos < q_levels; ++pos) {
            if (pool_size(t, q, pos) < m) continue;
            if (pooled && complement_size(t, q, pos) < m) continue;

            // Can support prompts `sp` supply both classes for positive level `pos`?
            auto feasible = [&](const std::vector<PromptIndex>& sp) {
                std::size_t positive = 0;
                for (PromptIndex p : sp) positive += pool_size(t, p, pos);
                if (positive < k) return false;
                if (pooled) {
                    std::size_t negative = 0;
                    for (PromptIndex p : sp) negative += complement_size(t, p, pos);
                    return negative >= k;
                }
                auto levels = joint_levels(t, q, sp);
                return std::any_of(levels.begin(), levels.end(), [&](Level l) { return l != pos; });
            };

            if (options_.regime.support == SupportSource::multi_prompt) {
                if (feasible(support)) option.positive_levels.push_back(pos);
            } else {
                std::vector<PromptIndex> ok;
                for (PromptIndex p : support) {
                    if (feasible({p})) ok.push_back(p);
                }
                if (!ok.empty()) {
                    option.positive_levels.push_back(pos);
                    option.support_prompts.push_back(std::move(ok));
                }
            }
        }
        if (!option.positive_levels.empty()) binary_[t].push_back(std::move(option));
    }
}

void EpisodeSampler::index_multiclass(TraitIndex t) {
    for (PromptIndex q : prompts_[t]) {
        MulticlassOption option{q, {}, {}, {}};
        const auto support = others(t, q);
        if (options_.regime.support == SupportSource::multi_prompt) {
            option.levels = joint_levels(t, q, support);
            if (option.levels.size() >= 2) multiclass_[t].push_back(std::move(option));
        } else {
            for (PromptIndex p : support) {
                auto levels = joint_levels(t, q, {p});
                if (levels.size() >= 2) {
                    option.support_prompts.push_back(p);
                    option.support_prompt_levels.push_back(std::move(levels));
                }
            }
            if (!option.support_prompts.empty()) multiclass_[t].push_back(std::move(option));
        }
    }
}

std::optional<Episode> EpisodeSampler::sample_binary(TraitIndex t, Rng& rng) const {
    const auto& options = binary_.at(t);
    if (options_.regime.classification != Classification::binary || options.empty()) {
        return std::nullopt;
    }
    const auto& option = options[rng.index(options.size())];
    const PromptIndex q = option.query_prompt;
    const std::size_t li = rng.index(option.positive_levels.size());
    const Level pos = option.positive_levels[li];

    std::vector<PromptIndex> support;
    if (options_.regime.support == SupportSource::one_prompt) {
        const auto& candidates = option.support_prompts[li];
        support.push_back(candidates[rng.index(candidates.size())]);
    } else {
        support = others(t, q);
    }

    std::size_t max_levels = 0;
    for (const auto& [p, levels] : pools_[t]) max_levels = std::max(max_levels, levels.size());

    std::vector<Level> negative;
    if (options_.negative == NegativeClass::pooled) {
        for (Level l = 0; l < max_levels; ++l) {
            if (l != pos) negative.push_back(l);
        }
    } else {
        std::vector<Level> candidates;
        for (Level l : joint_levels(t, q, support)) {
            if (l != pos) candidates.push_back(l);
        }
        assert(!candidates.empty());
        negative.push_back(candidates[rng.index(candidates.size())]);
    }

    Episode ep;
    ep.regime = options_.regime;
    ep.trait = t;
    ep.query_prompt = q;
    ep.class_levels = {{pos}, negative};
    for (const auto& levels : ep.class_levels) {
        const auto pool = gather(t, support, levels);
        ep.support.push_back(sample_without_replacement<EssayIndex>(pool, options_.k, rng));
    }
    for (const auto& levels : ep.class_levels) {
        const auto pool = gather(t, {q}, levels);
        ep.query.push_back(sample_without_replacement<EssayIndex>(pool, options_.m, rng));
    }
    return ep;
}

std::optional<Episode> EpisodeSampler::sample_multiclass(TraitIndex t, Rng& rng) const {
    const auto& options = multiclass_.at(t);
    if (options_.regime.classification != Classification::multiclass || options.empty()) {
        return std::nullopt;
    }
    const auto& option = options[rng.index(options.size())];
    const PromptIndex q = option.query_prompt;

    std::vector<PromptIndex> support;
    std::vector<Level> levels;
    if (options_.regime.support == SupportSource::one_prompt) {
        const std::size_t i = rng.index(option.support_prompts.size());
        support.push_back(option.support_prompts[i]);
        levels = option.support_prompt_levels[i];
    } else {
        support = others(t, q);
        levels = option.levels;
    }
    if (levels.size() > options_.max_classes) {
        levels = sample_without_replacement<Level>(levels, options_.max_classes, rng);
        std::sort(levels.begin(), levels.end());
    }

    Episode ep;
    ep.regime = options_.regime;
    ep.trait = t;
    ep.query_prompt = q;
    for (Level l : levels) ep.class_levels.push_back({l});
    for (Level l : levels) {
        ep.support.push_back(sample_without_replacement<EssayIndex>(gather(t, support, {l}), options_.k, rng));
    }
    for (Level l : levels) {
        ep.query.push_back(sample_without_replacement<EssayIndex>(gather(t, {q}, {l}), options_.m, rng));
    }
    return ep;
}

std::optional<Episode> EpisodeSampler::sample(TraitIndex t, Rng& rng) const {
    return options_.regime.classification == Classification::binary ? sample_binary(t, rng)
                                                                     : sample_multiclass(t, rng);
}

Episode EpisodeSampler::sample_any(Rng& rng) const {
    if (sampleable_.empty()) {
        throw DataError("no " + to_string(options_.regime) + " episode can be formed with k=" +
                        std::to_string(options_.k) + ", m=" + std::to_string(options_.m) +
                        " (corpus too small for the regime)");
    }
    const TraitIndex t = sampleable_[rng.index(sampleable_.size())];
    auto ep = sample(t, rng);
    assert(ep.has_value());
    return std::move(*ep);
}

std::string episode_to_json(const Episode& episode, const Corpus& corpus) {
    using nlohmann::json;
    auto ids = [&](const std::vector<std::vector<EssayIndex>>& groups) {
        json out = json::array();
        for (const auto& g : groups) {
            json row = json::array();
            for (EssayIndex e : g) row.push_back(corpus.essay(e).id);
            out.push_back(std::move(row));
        }
        return out;
    };
    std::set<PromptIndex> support_prompts;
    for (const auto& g : episode.support) {
        for (EssayIndex e : g) support_prompts.insert(corpus.essay(e).prompt);
    }
    json sp = json::array();
    for (PromptIndex p : support_prompts) sp.push_back(corpus.prompt(p).id);
    json j{{"regime", to_string(episode.regime)},
           {"trait", corpus.trait(episode.trait).id},
           {"query_prompt", corpus.prompt(episode.query_prompt).id},
           {"classes", episode.class_levels},
           {"support_prompts", std::move(sp)},
           {"support", ids(episode.support)},
           {"query", ids(episode.query)}};
    return j.dump();
}

MetaTestTask build_meta_test(const Corpus& corpus, TraitIndex t, PromptIndex test_prompt,
                             const EssayMask& support_mask, const EssayMask* query_mask) {
    const auto* ts = corpus.scale(t, test_prompt);
    if (!ts) {
        throw DataError("prompt " + corpus.prompt(test_prompt).id + " does not annotate trait " +
                        corpus.trait(t).id);
    }
    MetaTestTask task;
    task.trait = t;
    task.test_prompt = test_prompt;
    task.levels = ts->scale.levels();
    task.support.resize(task.levels);

    std::size_t annotated = 0;
    for (EssayIndex e = 0; e < corpus.essays().size(); ++e) {
        const auto& essay = corpus.essay(e);
        if (!essay.levels[t]) continue;
        if (essay.prompt == test_prompt) {
            if (!query_mask || (*query_mask)[e]) task.query.push_back(e);
            continue;
        }
        if (!support_mask[e]) continue;
        ++annotated;
        if (*essay.levels[t] < task.levels) task.support[*essay.levels[t]].push_back(e);
    }
    if (annotated == 0) {
        throw DataError("no annotated training essays for trait " + corpus.trait(t).id);
    }
    return task;
}

}  // namespace maple
