#pragma once

#include <optional>

#include "maple/corpus.hpp"
#include "maple/fusion.hpp"

namespace maple {

// Head shape for a corpus under the ablation flags. Throws DataError when a
// flag asks for vectors the corpus does not carry.
HeadConfig head_config_for(const Corpus& corpus, bool use_context, bool use_features, double dropout_rate);

// Builds fusion inputs for (essay, trait) pairs: essay, prompt and rubric
// embeddings plus normalized features, as the head config requires.
class InputBuilder {
public:
    InputBuilder(const Corpus& corpus, HeadConfig config, std::optional<FeatureNormalizer> normalizer);

    HeadInput operator()(EssayIndex e, TraitIndex t) const;

    const HeadConfig& config() const { return config_; }
    const Corpus& corpus() const { return *corpus_; }

private:
    const Corpus* corpus_;
    HeadConfig config_;
    std::optional<FeatureNormalizer> normalizer_;
};

}  // namespace maple
