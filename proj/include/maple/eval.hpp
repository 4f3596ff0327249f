#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maple/encoding.hpp"
#include "maple/episodes.hpp"
#include "maple/fusion.hpp"

namespace maple {

// Quadratic weighted kappa between two level sequences on an N-level scale.
// When the expected weighted disagreement is zero the result is 1 for
// perfect agreement and 0 otherwise.
double qwk(std::span<const Level> gold, std::span<const Level> predicted, std::size_t levels);

struct TaskScore {
    std::vector<EssayIndex> essays;
    std::vector<Level> gold;
    std::vector<Level> predicted;
    std::vector<double> predicted_scores;  // original score scale
    std::vector<Level> prototype_levels;   // levels that received a prototype
    double qwk = 0.0;
};

// Encodes support and query in eval mode, builds one prototype per level with
// support, and predicts each query by its nearest prototype.
TaskScore score_task(const MetaTestTask& task, const HeadParams& params, const InputBuilder& inputs);

// QWK matrix over (prompt, trait) with absent cells for unannotated pairs.
class EvalReport {
public:
    EvalReport() = default;
    EvalReport(std::vector<std::string> prompts, std::vector<std::string> traits,
               std::optional<std::string> holistic_trait = std::nullopt);

    const std::vector<std::string>& prompts() const { return prompts_; }
    const std::vector<std::string>& traits() const { return traits_; }

    void set(std::size_t prompt_row, std::size_t trait_col, double value);
    std::optional<double> cell(std::size_t prompt_row, std::size_t trait_col) const;

    std::optional<double> trait_average(std::size_t trait_col) const;
    std::optional<double> prompt_average(std::size_t prompt_row) const;
    std::optional<double> grand_average() const;
    // Grand average without the holistic trait column, when one is designated.
    std::optional<double> average_without_holistic() const;

    std::string to_csv() const;
    std::string to_text() const;

private:
    std::optional<double> mean_where(const std::function<bool(std::size_t, std::size_t)>& keep) const;

    std::vector<std::string> prompts_;
    std::vector<std::string> traits_;
    std::optional<std::string> holistic_;
    std::vector<std::optional<double>> cells_;  // row-major
};

}  // namespace maple
