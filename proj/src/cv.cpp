#include "maple/cv.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <map>

#include <json.hpp>

#include "text_io.hpp"

namespace maple {

using nlohmann::json;

FoldPlan parse_fold_plan(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid fold file: ") + e.what());
    }
    FoldPlan plan;
    try {
        plan.split_seed = j.value("split_seed", std::uint64_t{0});
        std::optional<double> default_fraction;
        if (j.contains("dev_fraction")) default_fraction = j.at("dev_fraction").get<double>();
        for (const auto& fj : j.at("folds")) {
            FoldSpec f;
            f.test_prompts = fj.at("test").get<std::vector<std::string>>();
            if (fj.contains("dev")) f.dev_prompts = fj.at("dev").get<std::vector<std::string>>();
            if (fj.contains("dev_fraction")) {
                f.dev_fraction = fj.at("dev_fraction").get<double>();
            } else if (f.dev_prompts.empty()) {
                f.dev_fraction = default_fraction;
            }
            if (!f.dev_prompts.empty() && f.dev_fraction) {
                throw ConfigError("fold states both dev prompts and a dev fraction");
            }
            if (f.test_prompts.empty()) throw ConfigError("fold has no test prompts");
            plan.folds.push_back(std::move(f));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad fold file: ") + e.what());
    }
    if (plan.folds.empty()) throw ConfigError("fold file lists no folds");
    return plan;
}

FoldPlan load_fold_plan(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("fold file not found: " + path.string());
    return parse_fold_plan(detail::read_text_file(path));
}

FoldPlan leave_one_prompt_out(const Corpus& corpus, double dev_fraction) {
    FoldPlan plan;
    for (const auto& p : corpus.prompts()) {
        plan.folds.push_back(FoldSpec{{p.id}, {}, dev_fraction});
    }
    return plan;
}

DataSplit make_split(const Corpus& corpus, const FoldSpec& fold, std::uint64_t split_seed) {
    const auto n = corpus.essays().size();
    std::set<PromptIndex> test, dev;
    auto resolve = [&](const std::string& id) {
        auto p = corpus.find_prompt(id);
        if (!p) throw DataError("fold references unknown prompt " + id);
        return *p;
    };
    for (const auto& id : fold.test_prompts) test.insert(resolve(id));
    for (const auto& id : fold.dev_prompts) {
        const auto p = resolve(id);
        if (test.contains(p)) throw ConfigError("prompt " + id + " is both test and dev in one fold");
        dev.insert(p);
    }
    if (fold.dev_fraction && !(*fold.dev_fraction >= 0.0 && *fold.dev_fraction < 1.0)) {
        throw ConfigError("dev_fraction must be in [0, 1)");
    }

    DataSplit split{EssayMask(n, false), EssayMask(n, false), {test.begin(), test.end()}};
    Rng rng(split_seed);
    for (PromptIndex p = 0; p < corpus.prompts().size(); ++p) {
        if (test.contains(p)) continue;
        const auto& essays = corpus.prompt(p).essays;
        if (dev.contains(p)) {
            for (EssayIndex e : essays) split.dev[e] = true;
            continue;
        }
        std::size_t n_dev = 0;
        if (fold.dev_fraction) {
            n_dev = static_cast<std::size_t>(std::floor(*fold.dev_fraction * static_cast<double>(essays.size())));
        }
        const auto held = sample_without_replacement<EssayIndex>(essays, n_dev, rng);
        for (EssayIndex e : essays) split.train[e] = true;
        for (EssayIndex e : held) {
            split.train[e] = false;
            split.dev[e] = true;
        }
    }
    return split;
}

std::string FoldAudit::to_json() const {
    json j{{"fold", fold},
           {"test_prompts", test_prompts},
           {"dev_prompts", dev_prompts},
           {"train_prompts", train_prompts},
           {"training_episodes", training_episodes},
           {"episode_support_prompts", episode_support_prompts},
           {"episode_query_prompts", episode_query_prompts},
           {"meta_test_support_prompts", meta_test_support_prompts},
           {"test_essays_in_training", test_essays_in_training},
           {"test_essays_in_support", test_essays_in_support}};
    return j.dump();
}

namespace {

FoldResult run_fold(const Corpus& corpus, const FoldPlan& plan, std::size_t index, const CvOptions& options) {
    const FoldSpec& spec = plan.folds[index];
    const DataSplit split = make_split(corpus, spec, plan.split_seed + index);
    const std::set<PromptIndex> test(split.test_prompts.begin(), split.test_prompts.end());

    FoldResult out;
    auto& audit = out.audit;
    audit.fold = index;
    audit.test_prompts = spec.test_prompts;
    std::set<PromptIndex> train_prompts, dev_prompts;
    for (EssayIndex e = 0; e < corpus.essays().size(); ++e) {
        if (split.train[e]) train_prompts.insert(corpus.essay(e).prompt);
        if (split.dev[e]) dev_prompts.insert(corpus.essay(e).prompt);
    }
    for (PromptIndex p : train_prompts) audit.train_prompts.push_back(corpus.prompt(p).id);
    for (PromptIndex p : dev_prompts) audit.dev_prompts.push_back(corpus.prompt(p).id);

    const bool supplied = index < options.checkpoints.size() && options.checkpoints[index].has_value();
    if (supplied) {
        out.checkpoint = *options.checkpoints[index];
    } else {
        TrainConfig tc = options.train;
        tc.seed = options.train.seed + index;
        TrainHooks hooks;
        hooks.on_episode = [&](const Episode& ep) {
            ++audit.training_episodes;
            if (options.on_episode) options.on_episode(index, ep);
            for (const auto* groups : {&ep.support, &ep.query}) {
                for (const auto& g : *groups) {
                    for (EssayIndex e : g) {
                        const PromptIndex p = corpus.essay(e).prompt;
                        if (test.contains(p)) ++audit.test_essays_in_training;
                        (groups == &ep.support ? audit.episode_support_prompts : audit.episode_query_prompts)
                            .insert(corpus.prompt(p).id);
                    }
                }
            }
        };
        out.training = train(corpus, split, options.head, tc, hooks);
        out.checkpoint = out.training->best;
    }

    const HeadConfig& head = out.checkpoint.config;
    if (!out.checkpoint.params.matches(head)) throw DataError("checkpoint parameters do not match its config");
    const InputBuilder inputs(corpus, head, fit_normalizer(corpus, head, split.train));
    for (PromptIndex p : split.test_prompts) {
        for (TraitIndex t = 0; t < corpus.traits().size(); ++t) {
            if (!corpus.annotates(p, t)) continue;
            const MetaTestTask task = build_meta_test(corpus, t, p, split.train);
            for (const auto& level : task.support) {
                for (EssayIndex e : level) {
                    const PromptIndex sp = corpus.essay(e).prompt;
                    if (test.contains(sp)) ++audit.test_essays_in_support;
                    audit.meta_test_support_prompts.insert(corpus.prompt(sp).id);
                }
            }
            out.tasks.push_back(TaskResult{corpus.prompt(p).id, corpus.trait(t).id, score_task(task, out.checkpoint.params, inputs)});
        }
    }
    if (out.tasks.empty()) {
        throw DataError("fold " + std::to_string(index) + " has no annotated trait on its test prompts");
    }
    return out;
}

}  // namespace

CvResult run_cv(const Corpus& corpus, const FoldPlan& plan, const CvOptions& options) {
    std::vector<std::string> rows;
    std::set<std::string> seen;
    for (const auto& f : plan.folds) {
        for (const auto& p : f.test_prompts) {
            if (!seen.insert(p).second) throw ConfigError("prompt " + p + " is a test prompt in more than one fold");
            rows.push_back(p);
        }
    }
    std::vector<std::string> cols;
    for (const auto& t : corpus.traits()) cols.push_back(t.id);

    CvResult result;
    result.report = EvalReport(rows, cols, options.holistic_trait);
    result.folds.resize(plan.folds.size());

    const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
    for (std::size_t start = 0; start < plan.folds.size(); start += jobs) {
        const std::size_t end = std::min(plan.folds.size(), start + jobs);
        if (jobs == 1) {
            result.folds[start] = run_fold(corpus, plan, start, options);
            continue;
        }
        std::vector<std::future<FoldResult>> pending;
        for (std::size_t i = start; i < end; ++i) {
            pending.push_back(std::async(std::launch::async, run_fold, std::cref(corpus), std::cref(plan), i,
                                         std::cref(options)));
        }
        for (std::size_t i = start; i < end; ++i) result.folds[i] = pending[i - start].get();
    }

    std::map<std::string, std::size_t> row_of, col_of;
    for (std::size_t r = 0; r < rows.size(); ++r) row_of[rows[r]] = r;
    for (std::size_t c = 0; c < cols.size(); ++c) col_of[cols[c]] = c;
    for (const auto& fold : result.folds) {
        for (const auto& task : fold.tasks) result.report.set(row_of.at(task.prompt), col_of.at(task.trait), task.score.qwk);
    }
    return result;
}

void write_report(const std::filesystem::path& dir, const CvResult& result) {
    std::filesystem::create_directories(dir);
    detail::write_text_file(dir / "report.csv", result.report.to_csv());
    detail::write_text_file(dir / "report.txt", result.report.to_text());
    std::string audit;
    for (const auto& fold : result.folds) audit += fold.audit.to_json() + "\n";
    detail::write_text_file(dir / "audit.jsonl", audit);
}

}  // namespace maple
