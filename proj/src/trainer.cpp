#include "maple/trainer.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "maple/eval.hpp"
#include "maple/proto.hpp"
#include "text_io.hpp"

namespace maple {

AdamState AdamState::zeros(const HeadConfig& config) {
    return AdamState{HeadParams::zeros(config), HeadParams::zeros(config), 0};
}

namespace {

template <typename Block>
void adam_block(Block& param, const Block& grad, Block& m, Block& v, double lr, double b1, double b2,
                double eps, double bias1, double bias2) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseAbs2();
    const auto m_hat = m.array() / bias1;
    const auto v_hat = v.array() / bias2;
    param.array() -= lr * m_hat / (v_hat.sqrt() + eps);
}

}  // namespace

void adam_step(HeadParams& params, const HeadParams& grads, AdamState& state, const AdamConfig& c) {
    if (!grads.all_finite()) throw std::domain_error("adam_step: non-finite gradient");
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);
    const double lr = c.learning_rate;
    adam_block(params.gate, grads.gate, state.m.gate, state.v.gate, lr, c.beta1, c.beta2, c.epsilon, bias1, bias2);
    adam_block(params.hidden, grads.hidden, state.m.hidden, state.v.hidden, lr, c.beta1, c.beta2, c.epsilon, bias1,
               bias2);
    adam_block(params.hidden_bias, grads.hidden_bias, state.m.hidden_bias, state.v.hidden_bias, lr, c.beta1,
               c.beta2, c.epsilon, bias1, bias2);
    adam_block(params.output, grads.output, state.m.output, state.v.output, lr, c.beta1, c.beta2, c.epsilon, bias1,
               bias2);
    adam_block(params.output_bias, grads.output_bias, state.m.output_bias, state.v.output_bias, lr, c.beta1,
               c.beta2, c.epsilon, bias1, bias2);
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (!(adam.learning_rate >= 0.0) || !std::isfinite(adam.learning_rate)) {
        throw ConfigError("learning_rate must be a finite non-negative number");
    }
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw ConfigError("adam betas must be in [0, 1)");
    }
    if (!(adam.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
    if (sampler.k == 0 || sampler.m == 0) throw ConfigError("k and m must be positive");
    if (sampler.max_classes < 2) throw ConfigError("max_classes must be at least 2");
}

EpisodeGradient episode_gradient(const HeadParams& params, const HeadConfig& config,
                                 const std::vector<std::vector<HeadInput>>& support,
                                 const std::vector<std::vector<HeadInput>>& query, Mode mode, Rng* dropout_rng) {
    std::vector<std::vector<ForwardTrace>> support_traces(support.size());
    std::vector<std::vector<Vec>> support_reps(support.size());
    for (std::size_t c = 0; c < support.size(); ++c) {
        for (const auto& in : support[c]) {
            auto fr = forward(params, config, in, mode, dropout_rng);
            support_reps[c].push_back(std::move(fr.output));
            support_traces[c].push_back(std::move(fr.trace));
        }
    }
    std::vector<ForwardTrace> query_traces;
    std::vector<Vec> query_reps;
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < query.size(); ++c) {
        for (const auto& in : query[c]) {
            auto fr = forward(params, config, in, mode, dropout_rng);
            query_reps.push_back(std::move(fr.output));
            query_traces.push_back(std::move(fr.trace));
            labels.push_back(c);
        }
    }

    const auto loss = episode_loss(query_reps, labels, support_reps);

    EpisodeGradient out;
    out.loss = loss.loss;
    out.params = HeadParams::zeros(config);
    out.support_inputs.resize(support.size());
    for (std::size_t c = 0; c < support.size(); ++c) {
        for (std::size_t i = 0; i < support_traces[c].size(); ++i) {
            auto bw = backward(support_traces[c][i], params, loss.grad_support[c][i]);
            out.params += bw.params;
            out.support_inputs[c].push_back(std::move(bw.inputs));
        }
    }
    out.query_inputs.resize(query.size());
    std::size_t j = 0;
    for (std::size_t c = 0; c < query.size(); ++c) {
        for (std::size_t i = 0; i < query[c].size(); ++i, ++j) {
            auto bw = backward(query_traces[j], params, loss.grad_query[j]);
            out.params += bw.params;
            out.query_inputs[c].push_back(std::move(bw.inputs));
        }
    }
    return out;
}

void episode_inputs(const Episode& episode, const InputBuilder& inputs, std::vector<std::vector<HeadInput>>& support,
                    std::vector<std::vector<HeadInput>>& query) {
    support.assign(episode.support.size(), {});
    query.assign(episode.query.size(), {});
    for (std::size_t c = 0; c < episode.support.size(); ++c) {
        for (EssayIndex e : episode.support[c]) support[c].push_back(inputs(e, episode.trait));
    }
    for (std::size_t c = 0; c < episode.query.size(); ++c) {
        for (EssayIndex e : episode.query[c]) query[c].push_back(inputs(e, episode.trait));
    }
}

std::optional<double> dev_score(const HeadParams& params, const InputBuilder& inputs, const DataSplit& split) {
    const Corpus& corpus = inputs.corpus();
    std::set<PromptIndex> dev_prompts;
    for (EssayIndex e = 0; e < corpus.essays().size(); ++e) {
        if (split.dev[e]) dev_prompts.insert(corpus.essay(e).prompt);
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (PromptIndex p : dev_prompts) {
        for (TraitIndex t = 0; t < corpus.traits().size(); ++t) {
            if (!corpus.annotates(p, t)) continue;
            MetaTestTask task;
            try {
                task = build_meta_test(corpus, t, p, split.train, &split.dev);
            } catch (const DataError&) {
                continue;  // no training essays for this trait
            }
            if (task.query.empty()) continue;
            bool any_support = false;
            for (const auto& s : task.support) any_support = any_support || !s.empty();
            if (!any_support) continue;
            sum += score_task(task, params, inputs).qwk;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

std::optional<FeatureNormalizer> fit_normalizer(const Corpus& corpus, const HeadConfig& config,
                                                const EssayMask& train) {
    if (config.d_u == 0) return std::nullopt;
    std::vector<EssayIndex> ids;
    for (EssayIndex e = 0; e < train.size(); ++e) {
        if (train[e]) ids.push_back(e);
    }
    return FeatureNormalizer::fit(corpus, ids);
}

std::uint64_t config_hash(const HeadConfig& head, const TrainConfig& c) {
    const nlohmann::json j{{"d", head.d},
                           {"d_u", head.d_u},
                           {"use_context", head.use_context},
                           {"dropout_rate", head.dropout_rate},
                           {"regime", to_string(c.sampler.regime)},
                           {"k", c.sampler.k},
                           {"m", c.sampler.m},
                           {"max_classes", c.sampler.max_classes},
                           {"negative_class", to_string(c.sampler.negative)},
                           {"total_tasks", c.total_tasks},
                           {"batch_size", c.batch_size},
                           {"learning_rate", c.adam.learning_rate},
                           {"beta1", c.adam.beta1},
                           {"beta2", c.adam.beta2},
                           {"epsilon", c.adam.epsilon},
                           {"dev_every", c.dev_every},
                           {"grad_clip", c.grad_clip},
                           {"seed", c.seed}};
    return fnv1a(j.dump());
}

TrainResult train(const Corpus& corpus, const DataSplit& split, const HeadConfig& head, const TrainConfig& config,
                  const TrainHooks& hooks) {
    config.validate();
    head.validate();
    if (split.train.size() != corpus.essays().size() || split.dev.size() != corpus.essays().size()) {
        throw std::invalid_argument("train: split masks do not match corpus");
    }
    std::set<PromptIndex> train_prompts;
    for (EssayIndex e = 0; e < corpus.essays().size(); ++e) {
        if (split.train[e]) train_prompts.insert(corpus.essay(e).prompt);
    }
    if (train_prompts.size() < 2) {
        throw DataError("training needs at least 2 training prompts, found " + std::to_string(train_prompts.size()));
    }

    const InputBuilder inputs(corpus, head, fit_normalizer(corpus, head, split.train));
    const EpisodeSampler sampler(corpus, split.train, config.sampler);
    if (sampler.sampleable_traits().empty()) {
        throw DataError("no " + to_string(config.sampler.regime) + " episode can be formed from the training split");
    }

    Rng master(config.seed);
    Rng init_rng = master.split();
    Rng episode_rng = master.split();
    Rng dropout_rng = master.split();

    TrainResult result;
    HeadParams params = init_params(head, init_rng);
    AdamState adam = AdamState::zeros(head);
    const std::uint64_t hash = config_hash(head, config);

    auto evaluate = [&](std::size_t step, std::size_t tasks_seen, std::optional<double> batch_loss, bool run_dev) {
        TrainLogEntry entry{step, tasks_seen, batch_loss, std::nullopt};
        if (run_dev) {
            entry.dev_qwk = dev_score(params, inputs, split);
            if (entry.dev_qwk && (!result.best.dev_qwk || *entry.dev_qwk > *result.best.dev_qwk)) {
                result.best = Checkpoint{head, params, entry.dev_qwk, tasks_seen, hash};
            }
        }
        result.log.push_back(entry);
    };

    evaluate(0, 0, std::nullopt, true);

    std::vector<std::vector<HeadInput>> support_in, query_in;
    std::size_t tasks_seen = 0;
    const std::size_t steps = config.steps();
    for (std::size_t step = 1; step <= steps; ++step) {
        const std::size_t batch = std::min(config.batch_size, config.total_tasks - tasks_seen);
        HeadParams grads = HeadParams::zeros(head);
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const Episode ep = sampler.sample_any(episode_rng);
            if (hooks.on_episode) hooks.on_episode(ep);
            episode_inputs(ep, inputs, support_in, query_in);
            EpisodeGradient eg;
            try {
                eg = episode_gradient(params, head, support_in, query_in, Mode::train, &dropout_rng);
            } catch (const std::domain_error&) {
                throw DivergenceError("non-finite representation at step " + std::to_string(step), step);
            }
            if (!std::isfinite(eg.loss)) {
                throw DivergenceError("non-finite loss at step " + std::to_string(step), step);
            }
            loss_sum += eg.loss;
            grads += eg.params;
        }
        const double inv = 1.0 / static_cast<double>(batch);
        grads *= inv;
        const double batch_loss = loss_sum * inv;

        if (config.grad_clip > 0.0) {
            const double norm = std::sqrt(grads.gate.squaredNorm() + grads.hidden.squaredNorm() +
                                          grads.hidden_bias.squaredNorm() + grads.output.squaredNorm() +
                                          grads.output_bias.squaredNorm());
            if (norm > config.grad_clip) grads *= config.grad_clip / norm;
        }
        try {
            adam_step(params, grads, adam, config.adam);
        } catch (const std::domain_error&) {
            throw DivergenceError("non-finite gradient at step " + std::to_string(step), step);
        }
        if (!params.all_finite()) {
            throw DivergenceError("non-finite parameters after step " + std::to_string(step), step);
        }

        const std::size_t before = tasks_seen;
        tasks_seen += batch;
        const bool crossed = config.dev_every > 0 && tasks_seen / config.dev_every != before / config.dev_every;
        try {
            evaluate(step, tasks_seen, batch_loss, crossed || step == steps);
        } catch (const std::domain_error&) {
            throw DivergenceError("non-finite representation in dev evaluation at step " + std::to_string(step), step);
        }
    }

    result.final_params = params;
    if (!result.best.dev_qwk) {
        // No dev data: keep the final parameters.
        result.best = Checkpoint{head, params, std::nullopt, tasks_seen, hash};
    }
    return result;
}

std::string training_log_csv(const std::vector<TrainLogEntry>& log) {
    std::string out = "step,tasks_seen,batch_loss,dev_qwk_avg\n";
    for (const auto& e : log) {
        out += std::to_string(e.step) + "," + std::to_string(e.tasks_seen) + ",";
        if (e.batch_loss) out += format_double(*e.batch_loss);
        out += ",";
        if (e.dev_qwk) out += format_double(*e.dev_qwk);
        out += "\n";
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& stem, const Checkpoint& checkpoint) {
    auto mhd = stem;
    mhd += ".mhd";
    auto sidecar = stem;
    sidecar += ".json";
    write_head(mhd, checkpoint.config, checkpoint.params);
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(checkpoint.config_hash));
    nlohmann::json j{{"dev_qwk_avg", checkpoint.dev_qwk ? nlohmann::json(*checkpoint.dev_qwk) : nlohmann::json()},
                     {"tasks_seen", checkpoint.tasks_seen},
                     {"config_hash", hash}};
    detail::write_text_file(sidecar, j.dump(2) + "\n");
}

}  // namespace maple
