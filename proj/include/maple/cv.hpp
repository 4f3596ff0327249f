#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "maple/eval.hpp"
#include "maple/trainer.hpp"

namespace maple {

// One fold: held-out test prompts plus either whole dev prompts or a
// per-prompt dev fraction of every training prompt.
struct FoldSpec {
    std::vector<std::string> test_prompts;
    std::vector<std::string> dev_prompts;
    std::optional<double> dev_fraction;
};

struct FoldPlan {
    std::vector<FoldSpec> folds;
    std::uint64_t split_seed = 0;
};

// {"split_seed": s, "dev_fraction": f, "folds": [{"test": [...], "dev": [...] | "dev_fraction": f}]}
FoldPlan load_fold_plan(const std::filesystem::path& path);
FoldPlan parse_fold_plan(const std::string& json_text);

// One fold per prompt, with a within-prompt dev fraction.
FoldPlan leave_one_prompt_out(const Corpus& corpus, double dev_fraction = 0.2);

DataSplit make_split(const Corpus& corpus, const FoldSpec& fold, std::uint64_t split_seed);

struct FoldAudit {
    std::size_t fold = 0;
    std::vector<std::string> test_prompts;
    std::vector<std::string> dev_prompts;    // prompts holding dev essays
    std::vector<std::string> train_prompts;  // prompts holding training essays
    std::size_t training_episodes = 0;
    std::set<std::string> episode_support_prompts;
    std::set<std::string> episode_query_prompts;
    std::set<std::string> meta_test_support_prompts;
    std::size_t test_essays_in_training = 0;
    std::size_t test_essays_in_support = 0;

    std::string to_json() const;
};

struct TaskResult {
    std::string prompt;
    std::string trait;
    TaskScore score;
};

struct FoldResult {
    std::optional<TrainResult> training;  // absent when a checkpoint was supplied
    Checkpoint checkpoint;
    std::vector<TaskResult> tasks;
    FoldAudit audit;
};

struct CvOptions {
    HeadConfig head;
    TrainConfig train;
    std::size_t jobs = 1;
    std::optional<std::string> holistic_trait;
    // Per-fold checkpoints to evaluate instead of training (empty = train all).
    std::vector<std::optional<Checkpoint>> checkpoints;
    // Called with (fold index, episode) for every training episode. May be
    // called from several threads when jobs > 1.
    std::function<void(std::size_t, const Episode&)> on_episode;
};

struct CvResult {
    EvalReport report;
    std::vector<FoldResult> folds;
};

// Trains (or loads) per fold, meta-tests every annotated trait on the fold's
// test prompts and fills the report. Fold seeds are train.seed + fold index.
CvResult run_cv(const Corpus& corpus, const FoldPlan& plan, const CvOptions& options);

// report.csv, report.txt and audit.jsonl
void write_report(const std::filesystem::path& dir, const CvResult& result);

}  // namespace maple
