#include "maple/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "maple/emb_file.hpp"
#include "text_io.hpp"

namespace maple {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(ShiftPolicy policy) {
    return policy == ShiftPolicy::shift_to_zero ? "shift_to_zero" : "none";
}

ShiftPolicy parse_shift_policy(std::string_view text) {
    if (text == "none") return ShiftPolicy::none;
    if (text == "shift_to_zero") return ShiftPolicy::shift_to_zero;
    throw DataError("unknown shift_policy: " + std::string(text));
}

ScoreScale::ScoreScale(std::vector<double> values) : values_(std::move(values)) {
    if (values_.size() < 2) {
        throw DataError("score scale needs at least 2 levels");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw DataError("score scale has a non-finite value");
        }
        if (i > 0 && !(values_[i] > values_[i - 1] + kScoreTolerance)) {
            throw DataError("score scale values must be strictly increasing");
        }
    }
}

ScoreScale ScoreScale::range(double min, double max, double step) {
    if (!(step > 0.0) || !(max > min)) {
        throw DataError("invalid score range");
    }
    const double span = (max - min) / step;
    const auto steps = static_cast<std::size_t>(std::llround(span));
    if (std::abs(span - static_cast<double>(steps)) * step > kScoreTolerance) {
        throw DataError("score range max is not reachable from min in whole steps");
    }
    std::vector<double> values;
    values.reserve(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        values.push_back(min + static_cast<double>(i) * step);
    }
    return ScoreScale(std::move(values));
}

std::optional<Level> ScoreScale::find(double score) const {
    auto it = std::lower_bound(values_.begin(), values_.end(), score - kScoreTolerance);
    if (it != values_.end() && std::abs(*it - score) <= kScoreTolerance) {
        return static_cast<Level>(it - values_.begin());
    }
    return std::nullopt;
}

ScoreScale ScoreScale::shifted(double offset) const {
    std::vector<double> out(values_);
    for (double& v : out) v -= offset;
    return ScoreScale(std::move(out));
}

Level level_of(double score, const ScoreScale& scale) {
    if (auto level = scale.find(score)) {
        return *level;
    }
    throw DataError("label not on scale: " + format_double(score));
}

Corpus Corpus::build(CorpusSpec spec) {
    Corpus c;
    c.name_ = std::move(spec.name);
    c.dim_ = spec.dim;
    c.feature_dim_ = spec.feature_dim;
    c.shift_ = spec.shift;
    if (c.dim_ == 0) {
        throw DataError("embedding dimension d must be positive");
    }

    auto check_dim = [&](const Vec& v, const std::string& what) {
        if (static_cast<std::size_t>(v.size()) != c.dim_) {
            throw DataError("dimension mismatch for " + what + ": expected " + std::to_string(c.dim_) +
                            ", got " + std::to_string(v.size()));
        }
        if (!v.allFinite()) {
            throw DataError("non-finite embedding for " + what);
        }
    };

    for (auto& ps : spec.prompts) {
        if (c.prompt_ids_.contains(ps.id)) {
            throw DataError("duplicate prompt_id: " + ps.id);
        }
        if (ps.embedding) check_dim(*ps.embedding, "prompt:" + ps.id);
        c.prompt_ids_.emplace(ps.id, c.prompts_.size());
        c.prompts_.push_back(Prompt{ps.id, std::move(ps.embedding), {}});
    }

    // Per-trait original scales, resolved per prompt lazily as labels appear.
    struct PendingTrait {
        std::optional<ScoreScale> scale;
        std::map<PromptIndex, ScoreScale> overrides;
    };
    std::vector<PendingTrait> pending;
    for (auto& ts : spec.traits) {
        if (c.trait_ids_.contains(ts.id)) {
            throw DataError("duplicate trait_id: " + ts.id);
        }
        if (ts.rubric_embedding) check_dim(*ts.rubric_embedding, "rubric:" + ts.id);
        PendingTrait pt{std::move(ts.scale), {}};
        for (auto& [pid, scale] : ts.prompt_scales) {
            auto p = c.find_prompt(pid);
            if (!p) {
                throw DataError("trait " + ts.id + " has a scale for unknown prompt " + pid);
            }
            pt.overrides.emplace(*p, std::move(scale));
        }
        c.trait_ids_.emplace(ts.id, c.traits_.size());
        c.traits_.push_back(Trait{ts.id, std::move(ts.rubric_embedding), {}});
        pending.push_back(std::move(pt));
    }

    std::size_t with_features = 0;
    c.essays_.reserve(spec.essays.size());
    for (auto& es : spec.essays) {
        if (c.essay_ids_.contains(es.id)) {
            throw DataError("duplicate essay_id: " + es.id);
        }
        auto p = c.find_prompt(es.prompt_id);
        if (!p) {
            throw DataError("essay " + es.id + " references unknown prompt " + es.prompt_id);
        }
        check_dim(es.embedding, "essay:" + es.id);
        if (es.features) {
            ++with_features;
            if (static_cast<std::size_t>(es.features->size()) != c.feature_dim_) {
                throw DataError("feature dimension mismatch for essay " + es.id + ": expected " +
                                std::to_string(c.feature_dim_) + ", got " +
                                std::to_string(es.features->size()));
            }
            if (!es.features->allFinite()) {
                throw DataError("non-finite feature for essay " + es.id);
            }
        }

        Essay essay{es.id, *p, std::move(es.embedding), std::move(es.features),
                    std::vector<std::optional<Level>>(c.traits_.size())};
        for (const auto& [tid, score] : es.labels) {
            auto t = c.find_trait(tid);
            if (!t) {
                throw DataError("essay " + es.id + " labels unknown trait " + tid);
            }
            auto& trait = c.traits_[*t];
            auto it = trait.scales.find(*p);
            if (it == trait.scales.end()) {
                const auto& pt = pending[*t];
                auto ov = pt.overrides.find(*p);
                const ScoreScale* original = ov != pt.overrides.end() ? &ov->second
                                             : pt.scale                ? &*pt.scale
                                                                       : nullptr;
                if (!original) {
                    throw DataError("no score scale for trait " + tid + " on prompt " + es.prompt_id);
                }
                const double offset = c.shift_ == ShiftPolicy::shift_to_zero ? original->value(0) : 0.0;
                it = trait.scales.emplace(*p, TraitScale{original->shifted(offset), offset}).first;
            }
            auto level = it->second.scale.find(score - it->second.offset);
            if (!level) {
                throw DataError("label not on scale: essay " + es.id + ", trait " + tid + ", score " +
                                format_double(score));
            }
            if (essay.levels[*t]) {
                throw DataError("essay " + es.id + " labels trait " + tid + " twice");
            }
            essay.levels[*t] = *level;
        }
        c.essay_ids_.emplace(essay.id, c.essays_.size());
        c.prompts_[*p].essays.push_back(c.essays_.size());
        c.essays_.push_back(std::move(essay));
    }

    if (with_features != 0 && with_features != c.essays_.size()) {
        throw DataError("feature vectors present for " + std::to_string(with_features) + " of " +
                        std::to_string(c.essays_.size()) + " essays; presence must be all or none");
    }
    c.has_features_ = with_features != 0;
    if (c.has_features_ && c.feature_dim_ == 0) {
        throw DataError("feature vectors supplied but d_u is 0");
    }

    for (const auto& prompt : c.prompts_) {
        if (prompt.essays.empty()) {
            throw DataError("prompt has no essays: " + prompt.id);
        }
    }

    c.by_level_.resize(c.traits_.size());
    for (TraitIndex t = 0; t < c.traits_.size(); ++t) {
        for (const auto& [p, ts] : c.traits_[t].scales) {
            c.by_level_[t][p].resize(ts.scale.levels());
        }
    }
    for (EssayIndex e = 0; e < c.essays_.size(); ++e) {
        const auto& essay = c.essays_[e];
        for (TraitIndex t = 0; t < c.traits_.size(); ++t) {
            if (essay.levels[t]) {
                c.by_level_[t][essay.prompt][*essay.levels[t]].push_back(e);
            }
        }
    }
    return c;
}

std::optional<TraitIndex> Corpus::find_trait(std::string_view id) const {
    auto it = trait_ids_.find(id);
    return it == trait_ids_.end() ? std::nullopt : std::optional<TraitIndex>(it->second);
}

std::optional<PromptIndex> Corpus::find_prompt(std::string_view id) const {
    auto it = prompt_ids_.find(id);
    return it == prompt_ids_.end() ? std::nullopt : std::optional<PromptIndex>(it->second);
}

std::optional<EssayIndex> Corpus::find_essay(std::string_view id) const {
    auto it = essay_ids_.find(id);
    return it == essay_ids_.end() ? std::nullopt : std::optional<EssayIndex>(it->second);
}

const TraitScale* Corpus::scale(TraitIndex t, PromptIndex p) const {
    const auto& scales = traits_.at(t).scales;
    auto it = scales.find(p);
    return it == scales.end() ? nullptr : &it->second;
}

std::optional<double> Corpus::label(EssayIndex e, TraitIndex t) const {
    const auto& essay = essays_.at(e);
    const auto& level = essay.levels.at(t);
    if (!level) return std::nullopt;
    return scale(t, essay.prompt)->scale.value(*level);
}

double Corpus::original_score(TraitIndex t, PromptIndex p, Level level) const {
    const auto* ts = scale(t, p);
    if (!ts) {
        throw DataError("prompt " + prompts_.at(p).id + " does not annotate trait " + traits_.at(t).id);
    }
    return ts->scale.value(level) + ts->offset;
}

std::vector<EssayIndex> Corpus::pool(TraitIndex t, Level level, const PromptFilter& filter) const {
    std::vector<EssayIndex> out;
    for (const auto& [p, levels] : by_level_.at(t)) {
        if (!filter.admits(p) || level >= levels.size()) continue;
        out.insert(out.end(), levels[level].begin(), levels[level].end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Manifest loading

namespace {

ScoreScale parse_scale(const json& j, const std::string& where) {
    try {
        if (j.contains("values")) {
            return ScoreScale(j.at("values").get<std::vector<double>>());
        }
        return ScoreScale::range(j.at("min").get<double>(), j.at("max").get<double>(),
                                 j.value("step", 1.0));
    } catch (const json::exception& e) {
        throw DataError("bad scale for " + where + ": " + e.what());
    }
}

json scale_to_json(const ScoreScale& s) { return json{{"values", s.values()}}; }

Vec widen(const std::vector<float>& v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

std::vector<float> narrow(const Vec& v) {
    std::vector<float> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
    return out;
}

CorpusSpec spec_from_manifest(const json& m, const fs::path& manifest_path);

}  // namespace

Corpus load_corpus(const fs::path& manifest_path) {
    if (!fs::exists(manifest_path)) {
        throw DataError("manifest not found: " + manifest_path.string());
    }
    json m;
    try {
        m = json::parse(detail::read_text_file(manifest_path));
    } catch (const json::parse_error& e) {
        throw DataError("invalid manifest JSON " + manifest_path.string() + ": " + e.what());
    }
    try {
        return Corpus::build(spec_from_manifest(m, manifest_path));
    } catch (const json::exception& e) {
        throw DataError("bad manifest " + manifest_path.string() + ": " + e.what());
    }
}

namespace {

CorpusSpec spec_from_manifest(const json& m, const fs::path& manifest_path) {
    const fs::path base = manifest_path.parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

    CorpusSpec spec;
    try {
        spec.name = m.value("dataset_name", std::string{});
        spec.dim = m.at("d").get<std::size_t>();
        spec.feature_dim = m.value("d_u", std::size_t{0});
        spec.shift = parse_shift_policy(m.value("shift_policy", std::string("none")));
    } catch (const json::exception& e) {
        throw DataError("bad manifest " + manifest_path.string() + ": " + e.what());
    }

    const fs::path emb_path = resolve(m.at("embeddings_file").get<std::string>());
    const EmbFile emb = read_emb_file(emb_path);
    if (emb.dim != spec.dim) {
        throw DataError("dimension mismatch: manifest d=" + std::to_string(spec.dim) + " but " +
                        emb_path.string() + " has d=" + std::to_string(emb.dim));
    }
    std::map<std::string, const EmbRecord*> by_key;
    for (const auto& rec : emb.records) {
        if (!by_key.emplace(rec.key, &rec).second) {
            throw DataError("duplicate embedding key: " + rec.key);
        }
    }
    auto lookup = [&](const json& entry, const char* field, const std::string& fallback) -> std::optional<Vec> {
        if (entry.contains(field) && !entry.at(field).is_null()) {
            const auto key = entry.at(field).get<std::string>();
            auto it = by_key.find(key);
            if (it == by_key.end()) {
                throw DataError("missing embedding for key " + key + " in " + emb_path.string());
            }
            return widen(it->second->values);
        }
        auto it = by_key.find(fallback);
        if (it == by_key.end()) return std::nullopt;
        return widen(it->second->values);
    };

    for (const auto& tj : m.at("traits")) {
        CorpusSpec::TraitSpec ts;
        ts.id = tj.at("trait_id").get<std::string>();
        ts.rubric_embedding = lookup(tj, "rubric_vec_key", "rubric:" + ts.id);
        if (tj.contains("scale")) ts.scale = parse_scale(tj.at("scale"), ts.id);
        if (tj.contains("prompt_scales")) {
            for (const auto& [pid, sj] : tj.at("prompt_scales").items()) {
                ts.prompt_scales.emplace(pid, parse_scale(sj, ts.id + "/" + pid));
            }
        }
        spec.traits.push_back(std::move(ts));
    }
    for (const auto& pj : m.at("prompts")) {
        CorpusSpec::PromptSpec ps;
        ps.id = pj.at("prompt_id").get<std::string>();
        ps.embedding = lookup(pj, "prompt_vec_key", "prompt:" + ps.id);
        spec.prompts.push_back(std::move(ps));
    }

    const fs::path labels_path = resolve(m.at("labels_csv").get<std::string>());
    const auto labels = detail::read_csv(labels_path);
    if (labels.header.size() < 2 || labels.header[0] != "essay_id" || labels.header[1] != "prompt_id") {
        throw DataError("labels CSV header must start with essay_id,prompt_id: " + labels_path.string());
    }
    for (std::size_t r = 0; r < labels.rows.size(); ++r) {
        const auto& row = labels.rows[r];
        CorpusSpec::EssaySpec es;
        es.id = row[0];
        es.prompt_id = row[1];
        const std::string key = "essay:" + es.id;
        auto it = by_key.find(key);
        if (it == by_key.end()) {
            throw DataError("missing embedding for key " + key + " in " + emb_path.string());
        }
        es.embedding = widen(it->second->values);
        for (std::size_t col = 2; col < row.size(); ++col) {
            if (row[col].empty()) continue;
            auto score = detail::parse_double(row[col]);
            if (!score) {
                throw DataError(labels_path.string() + ":" + std::to_string(labels.line_numbers[r]) +
                                ": bad score '" + row[col] + "' for essay " + es.id);
            }
            es.labels.emplace_back(labels.header[col], *score);
        }
        spec.essays.push_back(std::move(es));
    }

    if (m.contains("features_csv") && !m.at("features_csv").is_null()) {
        const fs::path feat_path = resolve(m.at("features_csv").get<std::string>());
        const auto feats = detail::read_csv(feat_path);
        if (feats.header.empty() || feats.header[0] != "essay_id" || feats.header.size() != spec.feature_dim + 1) {
            throw DataError("features CSV header must be essay_id followed by " + std::to_string(spec.feature_dim) +
                            " feature columns: " + feat_path.string());
        }
        std::map<std::string, std::size_t> essay_pos;
        for (std::size_t i = 0; i < spec.essays.size(); ++i) essay_pos.emplace(spec.essays[i].id, i);
        for (std::size_t r = 0; r < feats.rows.size(); ++r) {
            const auto& row = feats.rows[r];
            auto pos = essay_pos.find(row[0]);
            if (pos == essay_pos.end()) {
                throw DataError("features CSV references unknown essay " + row[0]);
            }
            auto& es = spec.essays[pos->second];
            if (es.features) {
                throw DataError("duplicate feature row for essay " + row[0]);
            }
            Vec f(static_cast<Eigen::Index>(spec.feature_dim));
            for (std::size_t j = 0; j < spec.feature_dim; ++j) {
                auto v = detail::parse_double(row[j + 1]);
                if (!v) {
                    throw DataError(feat_path.string() + ":" + std::to_string(feats.line_numbers[r]) +
                                    ": bad feature value '" + row[j + 1] + "'");
                }
                f[static_cast<Eigen::Index>(j)] = *v;
            }
            es.features = std::move(f);
        }
        for (const auto& es : spec.essays) {
            if (!es.features) {
                throw DataError("missing feature vector for essay " + es.id);
            }
        }
    }
    return spec;
}

}  // namespace

fs::path write_corpus(const Corpus& corpus, const fs::path& dir) {
    fs::create_directories(dir);

    EmbFile emb;
    emb.dim = static_cast<std::uint32_t>(corpus.dim());
    for (const auto& e : corpus.essays()) {
        emb.records.push_back({"essay:" + e.id, narrow(e.embedding)});
    }
    json prompts = json::array();
    for (const auto& p : corpus.prompts()) {
        json pj{{"prompt_id", p.id}};
        if (p.embedding) {
            emb.records.push_back({"prompt:" + p.id, narrow(*p.embedding)});
            pj["prompt_vec_key"] = "prompt:" + p.id;
        }
        prompts.push_back(std::move(pj));
    }
    json traits = json::array();
    for (const auto& t : corpus.traits()) {
        json tj{{"trait_id", t.id}};
        if (t.rubric_embedding) {
            emb.records.push_back({"rubric:" + t.id, narrow(*t.rubric_embedding)});
            tj["rubric_vec_key"] = "rubric:" + t.id;
        }
        json ps = json::object();
        for (const auto& [p, ts] : t.scales) {
            ps[corpus.prompt(p).id] = scale_to_json(ts.scale.shifted(-ts.offset));
        }
        tj["prompt_scales"] = std::move(ps);
        traits.push_back(std::move(tj));
    }
    write_emb_file(dir / "embeddings.emb1", emb);

    std::string labels = "essay_id,prompt_id";
    for (const auto& t : corpus.traits()) labels += "," + t.id;
    labels += "\n";
    for (EssayIndex e = 0; e < corpus.essays().size(); ++e) {
        const auto& essay = corpus.essay(e);
        labels += essay.id + "," + corpus.prompt(essay.prompt).id;
        for (TraitIndex t = 0; t < corpus.traits().size(); ++t) {
            labels += ",";
            if (essay.levels[t]) labels += format_double(corpus.original_score(t, essay.prompt, *essay.levels[t]));
        }
        labels += "\n";
    }
    detail::write_text_file(dir / "labels.csv", labels);

    json manifest{{"dataset_name", corpus.name()},
                  {"d", corpus.dim()},
                  {"d_u", corpus.feature_dim()},
                  {"shift_policy", to_string(corpus.shift_policy())},
                  {"traits", std::move(traits)},
                  {"prompts", std::move(prompts)},
                  {"labels_csv", "labels.csv"},
                  {"embeddings_file", "embeddings.emb1"}};

    if (corpus.has_features()) {
        std::string feats = "essay_id";
        for (std::size_t j = 0; j < corpus.feature_dim(); ++j) feats += ",f" + std::to_string(j);
        feats += "\n";
        for (const auto& e : corpus.essays()) {
            feats += e.id;
            for (Eigen::Index j = 0; j < e.features->size(); ++j) feats += "," + format_double((*e.features)[j]);
            feats += "\n";
        }
        detail::write_text_file(dir / "features.csv", feats);
        manifest["features_csv"] = "features.csv";
    }
    const fs::path manifest_path = dir / "manifest.json";
    detail::write_text_file(manifest_path, manifest.dump(2) + "\n");
    return manifest_path;
}

// ---------------------------------------------------------------------------

FeatureNormalizer::FeatureNormalizer(Vec mean, Vec stddev) : mean_(std::move(mean)), stddev_(std::move(stddev)) {
    if (mean_.size() != stddev_.size()) {
        throw std::invalid_argument("FeatureNormalizer: mean/std size mismatch");
    }
}

FeatureNormalizer FeatureNormalizer::fit(const Corpus& corpus, std::span<const EssayIndex> train) {
    if (train.empty()) {
        throw DataError("feature normalizer needs at least one training essay");
    }
    const auto du = static_cast<Eigen::Index>(corpus.feature_dim());
    Vec sum = Vec::Zero(du);
    for (EssayIndex e : train) {
        const auto& essay = corpus.essay(e);
        if (!essay.features) {
            throw DataError("missing feature vector on essay " + essay.id);
        }
        sum += *essay.features;
    }
    const double n = static_cast<double>(train.size());
    Vec mean = sum / n;
    Vec sq = Vec::Zero(du);
    for (EssayIndex e : train) {
        sq += (*corpus.essay(e).features - mean).cwiseAbs2();
    }
    Vec stddev = (sq / n).cwiseSqrt();
    return FeatureNormalizer(std::move(mean), std::move(stddev));
}

Vec FeatureNormalizer::apply(const Vec& features) const {
    if (features.size() != mean_.size()) {
        throw std::invalid_argument("FeatureNormalizer: feature dimension mismatch");
    }
    Vec out = features - mean_;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (stddev_[i] >= 1e-12) out[i] /= stddev_[i];
    }
    return out;
}

}  // namespace maple
