#include "maple/encoding.hpp"

namespace maple {

HeadConfig head_config_for(const Corpus& corpus, bool use_context, bool use_features, double dropout_rate) {
    if (use_context) {
        for (const auto& p : corpus.prompts()) {
            if (!p.embedding) throw DataError("context enabled but prompt has no embedding: " + p.id);
        }
        for (const auto& t : corpus.traits()) {
            if (!t.rubric_embedding) throw DataError("context enabled but trait has no rubric embedding: " + t.id);
        }
    }
    if (use_features && !corpus.has_features()) {
        throw DataError("features enabled but the corpus has no feature vectors");
    }
    HeadConfig config{corpus.dim(), use_features ? corpus.feature_dim() : 0, use_context, dropout_rate};
    config.validate();
    return config;
}

InputBuilder::InputBuilder(const Corpus& corpus, HeadConfig config, std::optional<FeatureNormalizer> normalizer)
    : corpus_(&corpus), config_(config), normalizer_(std::move(normalizer)) {
    if (config_.d != corpus.dim()) {
        throw DataError("head dimension d=" + std::to_string(config_.d) + " does not match corpus d=" +
                        std::to_string(corpus.dim()));
    }
    if (config_.use_context) {
        head_config_for(corpus, true, false, config_.dropout_rate);
    }
    if (config_.d_u > 0) {
        if (!corpus.has_features() || corpus.feature_dim() != config_.d_u) {
            throw DataError("head expects " + std::to_string(config_.d_u) + " features per essay");
        }
        if (!normalizer_) throw std::invalid_argument("InputBuilder: features enabled without a normalizer");
    }
}

HeadInput InputBuilder::operator()(EssayIndex e, TraitIndex t) const {
    const auto& essay = corpus_->essay(e);
    HeadInput in;
    in.essay = essay.embedding;
    if (config_.use_context) {
        in.prompt = *corpus_->prompt(essay.prompt).embedding;
        in.rubric = *corpus_->trait(t).rubric_embedding;
    }
    if (config_.d_u > 0) in.features = normalizer_->apply(*essay.features);
    return in;
}

}  // namespace maple
