#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maple/common.hpp"

namespace maple {

using EssayIndex = std::size_t;
using TraitIndex = std::size_t;
using PromptIndex = std::size_t;
using Level = std::size_t;

// Scores closer than this to a scale value are considered on that value.
inline constexpr double kScoreTolerance = 1e-9;

enum class ShiftPolicy { none, shift_to_zero };

std::string to_string(ShiftPolicy policy);
ShiftPolicy parse_shift_policy(std::string_view text);

// Ordered score values of one trait on one prompt. Level i maps to values()[i].
class ScoreScale {
public:
    explicit ScoreScale(std::vector<double> values);

    // min, min + step, ..., max (inclusive within tolerance)
    static ScoreScale range(double min, double max, double step);

    std::size_t levels() const { return values_.size(); }
    double value(Level level) const { return values_.at(level); }
    const std::vector<double>& values() const { return values_; }

    std::optional<Level> find(double score) const;
    ScoreScale shifted(double offset) const;  // every value minus offset

    bool operator==(const ScoreScale&) const = default;

private:
    std::vector<double> values_;
};

// Throws DataError when the score is not on the scale.
Level level_of(double score, const ScoreScale& scale);

// Per-prompt scoring info of one trait. `scale` is the stored scale (shifted
// under shift_to_zero); original score = stored value + offset.
struct TraitScale {
    ScoreScale scale;
    double offset = 0.0;
};

struct Trait {
    std::string id;
    std::optional<Vec> rubric_embedding;
    std::map<PromptIndex, TraitScale> scales;  // prompts annotating this trait
};

struct Prompt {
    std::string id;
    std::optional<Vec> embedding;
    std::vector<EssayIndex> essays;
};

struct Essay {
    std::string id;
    PromptIndex prompt = 0;
    Vec embedding;
    std::optional<Vec> features;
    std::vector<std::optional<Level>> levels;  // indexed by trait
};

// Which prompts a pool query may draw from.
struct PromptFilter {
    enum class Mode { include, exclude };
    Mode mode = Mode::exclude;
    std::set<PromptIndex> prompts;

    static PromptFilter all() { return {}; }
    static PromptFilter only(std::set<PromptIndex> p) { return {Mode::include, std::move(p)}; }
    static PromptFilter except(std::set<PromptIndex> p) { return {Mode::exclude, std::move(p)}; }

    bool admits(PromptIndex p) const {
        return (mode == Mode::include) == prompts.contains(p);
    }
};

// Raw, unvalidated corpus description. Scores are on the original scales.
struct CorpusSpec {
    struct TraitSpec {
        std::string id;
        std::optional<Vec> rubric_embedding;
        std::optional<ScoreScale> scale;                  // default for all prompts
        std::map<std::string, ScoreScale> prompt_scales;  // per-prompt overrides
    };
    struct PromptSpec {
        std::string id;
        std::optional<Vec> embedding;
    };
    struct EssaySpec {
        std::string id;
        std::string prompt_id;
        Vec embedding;
        std::optional<Vec> features;
        std::vector<std::pair<std::string, double>> labels;
    };

    std::string name;
    std::size_t dim = 0;
    std::size_t feature_dim = 0;
    ShiftPolicy shift = ShiftPolicy::none;
    std::vector<TraitSpec> traits;
    std::vector<PromptSpec> prompts;
    std::vector<EssaySpec> essays;
};

// Immutable, validated corpus.
class Corpus {
public:
    static Corpus build(CorpusSpec spec);

    const std::string& name() const { return name_; }
    std::size_t dim() const { return dim_; }
    std::size_t feature_dim() const { return feature_dim_; }
    bool has_features() const { return has_features_; }
    ShiftPolicy shift_policy() const { return shift_; }

    std::span<const Trait> traits() const { return traits_; }
    std::span<const Prompt> prompts() const { return prompts_; }
    std::span<const Essay> essays() const { return essays_; }

    const Trait& trait(TraitIndex t) const { return traits_.at(t); }
    const Prompt& prompt(PromptIndex p) const { return prompts_.at(p); }
    const Essay& essay(EssayIndex e) const { return essays_.at(e); }

    std::optional<TraitIndex> find_trait(std::string_view id) const;
    std::optional<PromptIndex> find_prompt(std::string_view id) const;
    std::optional<EssayIndex> find_essay(std::string_view id) const;

    bool annotates(PromptIndex p, TraitIndex t) const { return traits_.at(t).scales.contains(p); }
    // nullptr when the prompt does not annotate the trait
    const TraitScale* scale(TraitIndex t, PromptIndex p) const;

    // Stored score value of an essay's label, if annotated.
    std::optional<double> label(EssayIndex e, TraitIndex t) const;
    // Original (unshifted) score of `level` on prompt p.
    double original_score(TraitIndex t, PromptIndex p, Level level) const;

    // Essays (ascending index) labelled `level` on trait t, restricted by filter.
    std::vector<EssayIndex> pool(TraitIndex t, Level level, const PromptFilter& filter) const;

private:
    std::string name_;
    std::size_t dim_ = 0;
    std::size_t feature_dim_ = 0;
    bool has_features_ = false;
    ShiftPolicy shift_ = ShiftPolicy::none;
    std::vector<Trait> traits_;
    std::vector<Prompt> prompts_;
    std::vector<Essay> essays_;
    std::map<std::string, TraitIndex, std::less<>> trait_ids_;
    std::map<std::string, PromptIndex, std::less<>> prompt_ids_;
    std::map<std::string, EssayIndex, std::less<>> essay_ids_;
    // [trait][prompt] -> per-level essay lists
    std::vector<std::map<PromptIndex, std::vector<std::vector<EssayIndex>>>> by_level_;
};

// Reads a JSON manifest and the files it references (paths relative to the
// manifest's directory).
Corpus load_corpus(const std::filesystem::path& manifest_path);

// Writes manifest.json, labels.csv, embeddings.emb1 and, when present,
// features.csv into `dir`. Returns the manifest path.
std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir);

// Per-dimension z-score using statistics of the training essays only.
// Dimensions with std < 1e-12 are centred but not scaled.
class FeatureNormalizer {
public:
    FeatureNormalizer() = default;
    FeatureNormalizer(Vec mean, Vec stddev);

    static FeatureNormalizer fit(const Corpus& corpus, std::span<const EssayIndex> train);

    Vec apply(const Vec& features) const;

    const Vec& mean() const { return mean_; }
    const Vec& stddev() const { return stddev_; }

private:
    Vec mean_;
    Vec stddev_;
};

}  // namespace maple
