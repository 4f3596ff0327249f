#include "maple/eval.hpp"

#include <cstdint>
#include <cstdio>
#include <stdexcept>

#include "maple/proto.hpp"

namespace maple {

double qwk(std::span<const Level> gold, std::span<const Level> predicted, std::size_t levels) {
    if (gold.size() != predicted.size()) throw std::invalid_argument("qwk: length mismatch");
    if (gold.empty()) throw std::invalid_argument("qwk: empty input");
    if (levels == 0) throw std::invalid_argument("qwk: level count must be positive");

    const std::size_t n_levels = levels;
    std::vector<std::int64_t> observed(n_levels * n_levels, 0);
    std::vector<std::int64_t> gold_hist(n_levels, 0), pred_hist(n_levels, 0);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] >= n_levels || predicted[i] >= n_levels) throw std::invalid_argument("qwk: level out of range");
        ++observed[gold[i] * n_levels + predicted[i]];
        ++gold_hist[gold[i]];
        ++pred_hist[predicted[i]];
    }

    // With w_ij = (i-j)^2/(N-1)^2 and E = outer(gold, pred)/n, the (N-1)^2
    // cancels and kappa = 1 - n * A / B over integer sums. Pairing (i,j) with
    // (j,i) keeps the result exactly symmetric in its arguments.
    std::int64_t disagreement = 0;
    std::int64_t expected = 0;
    for (std::size_t i = 0; i < n_levels; ++i) {
        for (std::size_t j = i + 1; j < n_levels; ++j) {
            const auto w = static_cast<std::int64_t>((j - i) * (j - i));
            disagreement += w * (observed[i * n_levels + j] + observed[j * n_levels + i]);
            expected += w * (gold_hist[i] * pred_hist[j] + gold_hist[j] * pred_hist[i]);
        }
    }
    if (expected == 0) {
        return disagreement == 0 ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(gold.size());
    return 1.0 - n * static_cast<double>(disagreement) / static_cast<double>(expected);
}

TaskScore score_task(const MetaTestTask& task, const HeadParams& params, const InputBuilder& inputs) {
    const Corpus& corpus = inputs.corpus();
    const HeadConfig& config = inputs.config();

    std::vector<std::vector<Vec>> support;
    TaskScore score;
    for (Level l = 0; l < task.support.size(); ++l) {
        if (task.support[l].empty()) continue;
        std::vector<Vec> reps;
        reps.reserve(task.support[l].size());
        for (EssayIndex e : task.support[l]) reps.push_back(encode(params, config, inputs(e, task.trait)));
        support.push_back(std::move(reps));
        score.prototype_levels.push_back(l);
    }
    if (support.empty()) {
        throw DataError("meta-test task for trait " + corpus.trait(task.trait).id + " on prompt " +
                        corpus.prompt(task.test_prompt).id + " has zero prototypes");
    }
    if (task.query.empty()) {
        throw DataError("meta-test task for trait " + corpus.trait(task.trait).id + " on prompt " +
                        corpus.prompt(task.test_prompt).id + " has no query essays");
    }
    const PrototypeSet protos = compute_prototypes(support);

    for (EssayIndex e : task.query) {
        const Vec rep = encode(params, config, inputs(e, task.trait));
        const Level level = score.prototype_levels[predict(rep, protos)];
        score.essays.push_back(e);
        score.gold.push_back(*corpus.essay(e).levels[task.trait]);
        score.predicted.push_back(level);
        score.predicted_scores.push_back(corpus.original_score(task.trait, task.test_prompt, level));
    }
    score.qwk = qwk(score.gold, score.predicted, task.levels);
    return score;
}

// ---------------------------------------------------------------------------

EvalReport::EvalReport(std::vector<std::string> prompts, std::vector<std::string> traits,
                       std::optional<std::string> holistic_trait)
    : prompts_(std::move(prompts)),
      traits_(std::move(traits)),
      holistic_(std::move(holistic_trait)),
      cells_(prompts_.size() * traits_.size()) {}

void EvalReport::set(std::size_t r, std::size_t c, double value) { cells_.at(r * traits_.size() + c) = value; }

std::optional<double> EvalReport::cell(std::size_t r, std::size_t c) const {
    return cells_.at(r * traits_.size() + c);
}

std::optional<double> EvalReport::mean_where(const std::function<bool(std::size_t, std::size_t)>& keep) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < prompts_.size(); ++r) {
        for (std::size_t c = 0; c < traits_.size(); ++c) {
            const auto& v = cells_[r * traits_.size() + c];
            if (v && keep(r, c)) {
                sum += *v;
                ++n;
            }
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

std::optional<double> EvalReport::trait_average(std::size_t c) const {
    return mean_where([c](std::size_t, std::size_t cc) { return cc == c; });
}

std::optional<double> EvalReport::prompt_average(std::size_t r) const {
    return mean_where([r](std::size_t rr, std::size_t) { return rr == r; });
}

std::optional<double> EvalReport::grand_average() const {
    return mean_where([](std::size_t, std::size_t) { return true; });
}

std::optional<double> EvalReport::average_without_holistic() const {
    if (!holistic_) return std::nullopt;
    return mean_where([this](std::size_t, std::size_t c) { return traits_[c] != *holistic_; });
}

namespace {

std::string fixed3(const std::optional<double>& v) {
    if (!v) return "-";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", *v);
    return buf;
}

std::string exact(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string EvalReport::to_csv() const {
    std::string out = "prompt";
    for (const auto& t : traits_) out += "," + t;
    out += ",avg";
    if (holistic_) out += ",avg_without_" + *holistic_;
    out += "\n";
    for (std::size_t r = 0; r < prompts_.size(); ++r) {
        out += prompts_[r];
        for (std::size_t c = 0; c < traits_.size(); ++c) out += "," + exact(cell(r, c));
        out += "," + exact(prompt_average(r));
        if (holistic_) {
            out += "," + exact(mean_where([&](std::size_t rr, std::size_t c) {
                       return rr == r && traits_[c] != *holistic_;
                   }));
        }
        out += "\n";
    }
    out += "avg";
    for (std::size_t c = 0; c < traits_.size(); ++c) out += "," + exact(trait_average(c));
    out += "," + exact(grand_average());
    if (holistic_) out += "," + exact(average_without_holistic());
    out += "\n";
    return out;
}

std::string EvalReport::to_text() const {
    std::vector<std::string> header{"Prompt"};
    for (const auto& t : traits_) header.push_back(t);
    header.push_back("Avg");
    if (holistic_) header.push_back("Avg-" + *holistic_);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t r = 0; r < prompts_.size(); ++r) {
        std::vector<std::string> row{prompts_[r]};
        for (std::size_t c = 0; c < traits_.size(); ++c) row.push_back(fixed3(cell(r, c)));
        row.push_back(fixed3(prompt_average(r)));
        if (holistic_) {
            row.push_back(fixed3(mean_where([&](std::size_t rr, std::size_t c) {
                return rr == r && traits_[c] != *holistic_;
            })));
        }
        rows.push_back(std::move(row));
    }
    std::vector<std::string> avg{"Avg"};
    for (std::size_t c = 0; c < traits_.size(); ++c) avg.push_back(fixed3(trait_average(c)));
    avg.push_back(fixed3(grand_average()));
    if (holistic_) avg.push_back(fixed3(average_without_holistic()));

    std::vector<std::size_t> width(header.size());
    auto widen = [&](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    };
    widen(header);
    for (const auto& row : rows) widen(row);
    widen(avg);

    auto line = [&](const std::vector<std::string>& row) {
        std::string s;
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) s += "  ";
            if (i == 0) {
                s += row[i] + std::string(width[i] - row[i].size(), ' ');
            } else {
                s += std::string(width[i] - row[i].size(), ' ') + row[i];
            }
        }
        return s + "\n";
    };
    std::size_t total = 0;
    for (auto w : width) total += w;
    total += 2 * (width.size() - 1);
    const std::string rule(total, '-');

    std::string out = line(header) + rule + "\n";
    for (const auto& row : rows) out += line(row);
    out += rule + "\n" + line(avg);
    return out;
}

}  // namespace maple
