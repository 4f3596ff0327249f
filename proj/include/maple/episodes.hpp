#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maple/corpus.hpp"

namespace maple {

enum class Classification { binary, multiclass };
enum class SupportSource { one_prompt, multi_prompt };

struct Regime {
    Classification classification = Classification::multiclass;
    SupportSource support = SupportSource::multi_prompt;

    bool operator==(const Regime&) const = default;
};

std::string to_string(Classification c);
std::string to_string(SupportSource s);
std::string to_string(const Regime& r);  // e.g. "multiclass-mP"
Classification parse_classification(std::string_view text);
SupportSource parse_support_source(std::string_view text);

// How the negative class of a binary episode is formed: the pooled
// complement of l*, or one contrasting level drawn uniformly.
enum class NegativeClass { pooled, single_level };

std::string to_string(NegativeClass n);
NegativeClass parse_negative_class(std::string_view text);

using EssayMask = std::vector<bool>;

// One meta-training task. Class 0 of a binary episode is the positive level.
struct Episode {
    Regime regime;
    TraitIndex trait = 0;
    PromptIndex query_prompt = 0;
    std::vector<std::vector<Level>> class_levels;
    std::vector<std::vector<EssayIndex>> support;  // per class, k each
    std::vector<std::vector<EssayIndex>> query;    // per class, m each

    std::size_t class_count() const { return class_levels.size(); }
};

struct SamplerOptions {
    Regime regime;
    std::size_t k = 5;
    std::size_t m = 5;
    std::size_t max_classes = 5;
    NegativeClass negative = NegativeClass::pooled;
};

// Episode generator over the essays admitted by `allowed`. The sampler itself
// is immutable; all randomness comes from the caller's stream.
class EpisodeSampler {
public:
    EpisodeSampler(const Corpus& corpus, EssayMask allowed, SamplerOptions options);

    const SamplerOptions& options() const { return options_; }

    // Levels whose query-prompt pool has >= m essays and whose support source
    // has >= k (for one_prompt: some single other prompt has >= k).
    std::vector<Level> eligible_levels(TraitIndex t, PromptIndex query_prompt) const;

    std::optional<Episode> sample_binary(TraitIndex t, Rng& rng) const;
    std::optional<Episode> sample_multiclass(TraitIndex t, Rng& rng) const;
    std::optional<Episode> sample(TraitIndex t, Rng& rng) const;

    // Traits that can produce at least one episode under the regime.
    const std::vector<TraitIndex>& sampleable_traits() const { return sampleable_; }

    // Trait uniform over sampleable_traits(), then an episode of it. Throws
    // DataError when no trait is sampleable.
    Episode sample_any(Rng& rng) const;

private:
    struct BinaryOption {
        PromptIndex query_prompt;
        std::vector<Level> positive_levels;
        std::vector<std::vector<PromptIndex>> support_prompts;  // one_prompt only, per level
    };
    struct MulticlassOption {
        PromptIndex query_prompt;
        std::vector<Level> levels;                              // multi_prompt
        std::vector<PromptIndex> support_prompts;               // one_prompt
        std::vector<std::vector<Level>> support_prompt_levels;  // one_prompt, parallel
    };

    std::size_t pool_size(TraitIndex t, PromptIndex p, Level l) const;
    std::size_t complement_size(TraitIndex t, PromptIndex p, Level l) const;
    std::vector<EssayIndex> gather(TraitIndex t, const std::vector<PromptIndex>& prompts,
                                   const std::vector<Level>& levels) const;
    std::vector<Level> joint_levels(TraitIndex t, PromptIndex q, const std::vector<PromptIndex>& support) const;
    std::vector<PromptIndex> others(TraitIndex t, PromptIndex q) const;

    void index_binary(TraitIndex t);
    void index_multiclass(TraitIndex t);

    const Corpus* corpus_;
    SamplerOptions options_;
    // [trait] -> prompts annotating the trait with >= 1 admitted essay
    std::vector<std::vector<PromptIndex>> prompts_;
    // [trait][prompt] -> per-level admitted essays
    std::vector<std::map<PromptIndex, std::vector<std::vector<EssayIndex>>>> pools_;
    std::vector<std::vector<BinaryOption>> binary_;
    std::vector<std::vector<MulticlassOption>> multiclass_;
    std::vector<TraitIndex> sampleable_;
};

// One line of the episode dump (JSON, no trailing newline).
std::string episode_to_json(const Episode& episode, const Corpus& corpus);

// N-way meta-test task on an unseen prompt.
struct MetaTestTask {
    TraitIndex trait = 0;
    PromptIndex test_prompt = 0;
    std::size_t levels = 0;                        // N, from the test prompt's scale
    std::vector<std::vector<EssayIndex>> support;  // per level; empty when unseen in training
    std::vector<EssayIndex> query;
};

// Support: every essay admitted by `support_mask`, outside the test prompt,
// labelled on the trait with a level below N. Query: test-prompt essays
// labelled on the trait (restricted by `query_mask` when given).
MetaTestTask build_meta_test(const Corpus& corpus, TraitIndex t, PromptIndex test_prompt,
                             const EssayMask& support_mask, const EssayMask* query_mask = nullptr);

}  // namespace maple
