#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "maple/encoding.hpp"
#include "maple/episodes.hpp"
#include "maple/fusion.hpp"

namespace maple {

struct AdamConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    HeadParams m;
    HeadParams v;
    std::uint64_t t = 0;

    static AdamState zeros(const HeadConfig& config);
};

// One bias-corrected Adam update. Throws std::domain_error on a non-finite
// gradient, leaving params and state untouched.
void adam_step(HeadParams& params, const HeadParams& grads, AdamState& state, const AdamConfig& config);

struct TrainConfig {
    SamplerOptions sampler;
    std::size_t total_tasks = 30000;
    std::size_t batch_size = 12;
    AdamConfig adam;
    std::size_t dev_every = 1000;  // tasks between dev evaluations; 0 = only at the end
    double grad_clip = 0.0;        // global-norm clip, 0 = off
    std::uint64_t seed = 0;

    // ceil(total_tasks / batch_size); the last batch holds the remainder.
    std::size_t steps() const { return (total_tasks + batch_size - 1) / batch_size; }
    void validate() const;
};

// Train/dev essay masks of one fold. Test prompts are absent from both.
struct DataSplit {
    EssayMask train;
    EssayMask dev;
    std::vector<PromptIndex> test_prompts;
};

struct EpisodeGradient {
    double loss = 0.0;
    HeadParams params;
    std::vector<std::vector<InputGrads>> support_inputs;
    std::vector<std::vector<InputGrads>> query_inputs;
};

// Loss of one episode (query shots labelled by class position) and its exact
// gradient through the prototype loss and the fusion head.
EpisodeGradient episode_gradient(const HeadParams& params, const HeadConfig& config,
                                 const std::vector<std::vector<HeadInput>>& support,
                                 const std::vector<std::vector<HeadInput>>& query, Mode mode, Rng* dropout_rng);

// Fusion inputs of an episode's shots under the episode's trait.
void episode_inputs(const Episode& episode, const InputBuilder& inputs, std::vector<std::vector<HeadInput>>& support,
                    std::vector<std::vector<HeadInput>>& query);

struct TrainLogEntry {
    std::size_t step = 0;
    std::size_t tasks_seen = 0;
    std::optional<double> batch_loss;  // absent on the initial evaluation row
    std::optional<double> dev_qwk;
};

struct Checkpoint {
    HeadConfig config;
    HeadParams params;
    std::optional<double> dev_qwk;
    std::size_t tasks_seen = 0;
    std::uint64_t config_hash = 0;
};

struct TrainResult {
    Checkpoint best;
    HeadParams final_params;
    std::vector<TrainLogEntry> log;
};

struct TrainHooks {
    std::function<void(const Episode&)> on_episode;
};

// Mean dev QWK over (dev prompt, trait) tasks, or nullopt without dev data.
std::optional<double> dev_score(const HeadParams& params, const InputBuilder& inputs, const DataSplit& split);

// Feature normalizer fitted on the split's training essays (nullopt when the
// config has no features).
std::optional<FeatureNormalizer> fit_normalizer(const Corpus& corpus, const HeadConfig& config,
                                                const EssayMask& train);

std::uint64_t config_hash(const HeadConfig& head, const TrainConfig& train);

TrainResult train(const Corpus& corpus, const DataSplit& split, const HeadConfig& head, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// CSV: step,tasks_seen,batch_loss,dev_qwk_avg
std::string training_log_csv(const std::vector<TrainLogEntry>& log);

// `<stem>.mhd` plus `<stem>.json` sidecar with dev score, task count and hash.
void write_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint);

}  // namespace maple
