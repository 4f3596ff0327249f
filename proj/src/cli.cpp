#include "maple/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <map>
#include <mutex>
#include <ostream>
#include <set>

#include <CLI11.hpp>

#include "maple/corpus.hpp"
#include "text_io.hpp"

namespace maple::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json default_config() {
    return json{
        {"manifest", nullptr},
        {"folds", nullptr},
        {"output_dir", "out"},
        {"seed", nullptr},
        {"regime", {{"classification", "multiclass"}, {"support", "multi_prompt"}}},
        {"use_context", true},
        {"use_features", false},
        {"dropout_rate", 0.5},
        {"holistic_trait", nullptr},
        {"jobs", 1},
        {"train",
         {{"k", 5},
          {"m", 5},
          {"max_classes", 5},
          {"total_tasks", 30000},
          {"batch_size", 12},
          {"learning_rate", 1e-5},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"epsilon", 1e-8},
          {"dev_every", 1000},
          {"grad_clip", 0.0},
          {"negative_class", "pooled"}}},
    };
}

void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key.path=value: " + assignment);
    }
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &config;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("empty key in override: " + assignment);
        if (!node->is_object()) throw ConfigError("override path does not name an object: " + path);
        if (dot == std::string::npos) {
            (*node)[key] = std::move(value);
            return;
        }
        node = &(*node)[key];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
}

namespace {

void merge(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) throw ConfigError("config " + (prefix.empty() ? std::string("root") : prefix) + " must be an object");
    for (const auto& [key, value] : user.items()) {
        const std::string name = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key: " + name);
        if (base[key].is_object()) {
            merge(base[key], value, name);
        } else {
            base[key] = value;
        }
    }
}

fs::path absolute_from(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal();
}

std::string format_score(double v) {
    std::string s = format_double(v);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

}  // namespace

RunConfig resolve_config(const json& user, const fs::path& base_dir) {
    json c = default_config();
    merge(c, user, "");
    const fs::path base = fs::absolute(base_dir);

    RunConfig rc;
    try {
        if (c["manifest"].is_null()) throw ConfigError("config is missing 'manifest'");
        rc.manifest = absolute_from(base, c["manifest"].get<std::string>());
        if (!c["folds"].is_null()) rc.folds = absolute_from(base, c["folds"].get<std::string>());
        rc.output_dir = absolute_from(base, c["output_dir"].get<std::string>());
        rc.use_context = c["use_context"].get<bool>();
        rc.use_features = c["use_features"].get<bool>();
        rc.dropout_rate = c["dropout_rate"].get<double>();
        if (!c["holistic_trait"].is_null()) rc.holistic_trait = c["holistic_trait"].get<std::string>();
        rc.jobs = c["jobs"].get<std::size_t>();

        auto& t = rc.train;
        t.sampler.regime.classification = parse_classification(c["regime"]["classification"].get<std::string>());
        t.sampler.regime.support = parse_support_source(c["regime"]["support"].get<std::string>());
        const auto& tj = c["train"];
        t.sampler.k = tj["k"].get<std::size_t>();
        t.sampler.m = tj["m"].get<std::size_t>();
        t.sampler.max_classes = tj["max_classes"].get<std::size_t>();
        t.sampler.negative = parse_negative_class(tj["negative_class"].get<std::string>());
        t.total_tasks = tj["total_tasks"].get<std::size_t>();
        t.batch_size = tj["batch_size"].get<std::size_t>();
        t.adam.learning_rate = tj["learning_rate"].get<double>();
        t.adam.beta1 = tj["beta1"].get<double>();
        t.adam.beta2 = tj["beta2"].get<double>();
        t.adam.epsilon = tj["epsilon"].get<double>();
        t.dev_every = tj["dev_every"].get<std::size_t>();
        t.grad_clip = tj["grad_clip"].get<double>();

        if (c["seed"].is_null()) {
            t.seed = 0;
            if (const char* env = std::getenv("MAPLE_SEED"); env && *env) {
                const std::string_view sv(env);
                auto res = std::from_chars(sv.data(), sv.data() + sv.size(), t.seed);
                if (res.ec != std::errc{} || res.ptr != sv.data() + sv.size()) {
                    throw ConfigError("MAPLE_SEED is not an unsigned integer: " + std::string(sv));
                }
            }
        } else {
            t.seed = c["seed"].get<std::uint64_t>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    rc.train.validate();
    if (!(rc.dropout_rate >= 0.0 && rc.dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
    if (rc.jobs == 0) throw ConfigError("jobs must be at least 1");
    return rc;
}

json RunConfig::to_json() const {
    const auto& s = train.sampler;
    return json{
        {"manifest", manifest.string()},
        {"folds", folds ? json(folds->string()) : json()},
        {"output_dir", output_dir.string()},
        {"seed", train.seed},
        {"regime", {{"classification", to_string(s.regime.classification)}, {"support", to_string(s.regime.support)}}},
        {"use_context", use_context},
        {"use_features", use_features},
        {"dropout_rate", dropout_rate},
        {"holistic_trait", holistic_trait ? json(*holistic_trait) : json()},
        {"jobs", jobs},
        {"train",
         {{"k", s.k},
          {"m", s.m},
          {"max_classes", s.max_classes},
          {"total_tasks", train.total_tasks},
          {"batch_size", train.batch_size},
          {"learning_rate", train.adam.learning_rate},
          {"beta1", train.adam.beta1},
          {"beta2", train.adam.beta2},
          {"epsilon", train.adam.epsilon},
          {"dev_every", train.dev_every},
          {"grad_clip", train.grad_clip},
          {"negative_class", to_string(s.negative)}}},
    };
}

namespace {

struct Loaded {
    RunConfig config;
    Corpus corpus;
    FoldPlan plan;
    HeadConfig head;
};

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed) {
    const fs::path cfg_path(path);
    if (!fs::exists(cfg_path)) throw ConfigError("config file not found: " + path);
    json user;
    try {
        user = json::parse(detail::read_text_file(cfg_path));
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid config JSON " + path + ": " + e.what());
    }
    for (const auto& o : overrides) apply_override(user, o);
    if (seed) user["seed"] = *seed;
    return resolve_config(user, fs::absolute(cfg_path).parent_path());
}

Loaded load_all(RunConfig rc) {
    Corpus corpus = load_corpus(rc.manifest);
    FoldPlan plan = rc.folds ? load_fold_plan(*rc.folds) : leave_one_prompt_out(corpus, 0.2);
    HeadConfig head = head_config_for(corpus, rc.use_context, rc.use_features, rc.dropout_rate);
    return Loaded{std::move(rc), std::move(corpus), std::move(plan), head};
}

void prepare_output(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory " + dir.string());
}

void write_resolved(const RunConfig& rc, const fs::path& dir) {
    detail::write_text_file(dir / "resolved_config.json", rc.to_json().dump(2) + "\n");
}

CvOptions cv_options(const Loaded& l) {
    CvOptions o;
    o.head = l.head;
    o.train = l.config.train;
    o.jobs = l.config.jobs;
    o.holistic_trait = l.config.holistic_trait;
    return o;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::optional<std::uint64_t> seed, const std::string& dump_path, const std::string& report_dir,
              std::ostream& out, std::ostream& err) {
    auto loaded = load_all(load_run_config(config_path, overrides, seed));
    const auto& rc = loaded.config;
    prepare_output(rc.output_dir);
    write_resolved(rc, rc.output_dir);

    CvOptions options = cv_options(loaded);
    std::vector<std::vector<std::string>> dumps(loaded.plan.folds.size());
    std::mutex dump_mutex;
    if (!dump_path.empty()) {
        options.on_episode = [&](std::size_t fold, const Episode& ep) {
            std::string line = episode_to_json(ep, loaded.corpus);
            std::lock_guard lock(dump_mutex);
            dumps[fold].push_back(std::move(line));
        };
    }
    const CvResult result = run_cv(loaded.corpus, loaded.plan, options);

    for (std::size_t i = 0; i < result.folds.size(); ++i) {
        const auto& fold = result.folds[i];
        const fs::path dir = rc.output_dir / ("fold" + std::to_string(i));
        fs::create_directories(dir);
        write_checkpoint(dir / "best", fold.checkpoint);
        detail::write_text_file(dir / "train_log.csv", training_log_csv(fold.training->log));
        err << "fold " << i << ": best dev QWK "
            << (fold.checkpoint.dev_qwk ? format_double(*fold.checkpoint.dev_qwk) : std::string("n/a"))
            << " at task " << fold.checkpoint.tasks_seen << "\n";
    }
    if (!dump_path.empty()) {
        std::string text;
        for (const auto& lines : dumps) {
            for (const auto& line : lines) text += line + "\n";
        }
        detail::write_text_file(dump_path, text);
    }
    write_report(report_dir.empty() ? rc.output_dir / "report" : fs::path(report_dir), result);
    out << result.report.to_text();
    return kOk;
}

int cmd_eval(const std::string& config_path, const std::vector<std::string>& overrides,
             const std::string& checkpoint, const std::string& report_dir, std::ostream& out) {
    auto loaded = load_all(load_run_config(config_path, overrides, std::nullopt));
    const auto& rc = loaded.config;
    prepare_output(rc.output_dir);
    write_resolved(rc, rc.output_dir);

    CvOptions options = cv_options(loaded);
    const fs::path ck(checkpoint);
    for (std::size_t i = 0; i < loaded.plan.folds.size(); ++i) {
        const fs::path file = fs::is_directory(ck) ? ck / ("fold" + std::to_string(i)) / "best.mhd" : ck;
        if (!fs::exists(file)) throw DataError("checkpoint not found: " + file.string());
        auto [head, params] = read_head(file);
        if (head.d != loaded.corpus.dim()) {
            throw DataError("checkpoint d=" + std::to_string(head.d) + " does not match corpus d=" +
                            std::to_string(loaded.corpus.dim()));
        }
        options.checkpoints.push_back(Checkpoint{head, std::move(params), std::nullopt, 0, 0});
    }
    const CvResult result = run_cv(loaded.corpus, loaded.plan, options);
    write_report(report_dir.empty() ? rc.output_dir / "report" : fs::path(report_dir), result);
    out << result.report.to_text();
    return kOk;
}

std::map<std::string, double> read_scores(const std::string& path) {
    if (!fs::exists(path)) throw DataError("file not found: " + path);
    const auto table = detail::read_csv(path);
    if (table.header.size() != 2 || table.header[0] != "essay_id") {
        throw DataError("expected a 2-column CSV with header essay_id,<score>: " + path);
    }
    std::map<std::string, double> scores;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        auto v = detail::parse_double(table.rows[r][1]);
        if (!v) {
            throw DataError(path + ":" + std::to_string(table.line_numbers[r]) + ": bad score '" + table.rows[r][1] + "'");
        }
        if (!scores.emplace(table.rows[r][0], *v).second) throw DataError("duplicate essay_id " + table.rows[r][0] + " in " + path);
    }
    return scores;
}

int cmd_qwk(const std::string& pred_path, const std::string& gold_path, const std::string& scale_text,
            std::ostream& out) {
    const auto pred = read_scores(pred_path);
    const auto gold = read_scores(gold_path);
    if (pred.size() != gold.size()) {
        throw DataError("prediction and gold files list different essays (" + std::to_string(pred.size()) + " vs " +
                        std::to_string(gold.size()) + ")");
    }
    std::optional<ScoreScale> scale;
    if (!scale_text.empty()) {
        std::vector<double> parts;
        std::size_t start = 0;
        while (true) {
            const auto colon = scale_text.find(':', start);
            auto v = detail::parse_double(std::string_view(scale_text).substr(start, colon - start));
            if (!v) throw ConfigError("--scale must be min:max[:step]");
            parts.push_back(*v);
            if (colon == std::string::npos) break;
            start = colon + 1;
        }
        if (parts.size() < 2 || parts.size() > 3) throw ConfigError("--scale must be min:max[:step]");
        scale = ScoreScale::range(parts[0], parts[1], parts.size() == 3 ? parts[2] : 1.0);
    } else {
        std::vector<double> values;
        for (const auto* m : {&pred, &gold}) {
            for (const auto& [id, v] : *m) values.push_back(v);
        }
        std::sort(values.begin(), values.end());
        std::vector<double> distinct;
        for (double v : values) {
            if (distinct.empty() || v > distinct.back() + kScoreTolerance) distinct.push_back(v);
        }
        if (distinct.size() == 1) distinct.push_back(distinct.front() + 1.0);
        scale = ScoreScale(std::move(distinct));
    }
    std::vector<Level> g, p;
    for (const auto& [id, score] : gold) {
        auto it = pred.find(id);
        if (it == pred.end()) throw DataError("no prediction for essay " + id);
        g.push_back(level_of(score, *scale));
        p.push_back(level_of(it->second, *scale));
    }
    out << format_score(qwk(g, p, scale->levels())) << "\n";
    return kOk;
}

int cmd_sample(const std::string& config_path, const std::vector<std::string>& overrides,
               std::optional<std::uint64_t> seed, std::size_t count, const std::string& dump_path, std::size_t fold,
               std::ostream& out) {
    auto loaded = load_all(load_run_config(config_path, overrides, seed));
    const auto& rc = loaded.config;
    prepare_output(rc.output_dir);
    write_resolved(rc, rc.output_dir);
    if (fold >= loaded.plan.folds.size()) throw ConfigError("--fold out of range");

    const DataSplit split = make_split(loaded.corpus, loaded.plan.folds[fold], loaded.plan.split_seed + fold);
    const EpisodeSampler sampler(loaded.corpus, split.train, rc.train.sampler);
    Rng rng(rc.train.seed);

    std::string text;
    std::set<std::string> tuples;
    std::map<std::size_t, std::size_t> histogram;
    for (std::size_t i = 0; i < count; ++i) {
        const Episode ep = sampler.sample_any(rng);
        text += episode_to_json(ep, loaded.corpus) + "\n";
        std::string key = loaded.corpus.prompt(ep.query_prompt).id + "|" + loaded.corpus.trait(ep.trait).id;
        if (ep.regime.classification == Classification::binary) key += "|" + std::to_string(ep.class_levels[0][0]);
        tuples.insert(key);
        ++histogram[ep.class_count()];
    }
    if (!dump_path.empty()) detail::write_text_file(dump_path, text);

    json hist = json::object();
    for (const auto& [k, v] : histogram) hist[std::to_string(k)] = v;
    out << json{{"episodes", count}, {"unique_tuples", tuples.size()}, {"class_count_histogram", hist}}.dump() << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Prototypical meta-learning for cross-prompt essay trait scoring", "maple"};
    app.require_subcommand(1);

    std::string config_path, dump_path, report_dir, checkpoint, pred_path, gold_path, scale_text;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::size_t count = 0, fold = 0;

    auto* train = app.add_subcommand("train", "Train per fold and evaluate on held-out prompts");
    train->add_option("--config", config_path, "Run config JSON")->required();
    train->add_option("--set", overrides, "Dotted-path override, e.g. regime.classification=binary");
    train->add_option("--seed", seed, "Seed (overrides config and MAPLE_SEED)");
    train->add_option("--dump-episodes", dump_path, "Write training episodes as JSON lines");
    train->add_option("--report", report_dir, "Report directory (default <output_dir>/report)");
    train->add_option("--jobs", jobs, "Folds run in parallel");

    auto* eval = app.add_subcommand("eval", "Evaluate checkpoints on held-out prompts");
    eval->add_option("--config", config_path, "Run config JSON")->required();
    eval->add_option("--checkpoint", checkpoint, "MHD1 file, or a train output dir with fold<i>/best.mhd")->required();
    eval->add_option("--set", overrides, "Dotted-path override");
    eval->add_option("--report", report_dir, "Report directory (default <output_dir>/report)");
    eval->add_option("--jobs", jobs, "Folds run in parallel");

    auto* qwk_cmd = app.add_subcommand("qwk", "Quadratic weighted kappa of a prediction CSV against gold");
    qwk_cmd->add_option("--pred", pred_path, "CSV essay_id,predicted_score")->required();
    qwk_cmd->add_option("--gold", gold_path, "CSV essay_id,gold_score")->required();
    qwk_cmd->add_option("--scale", scale_text, "min:max[:step]; default: distinct observed scores");

    auto* sample = app.add_subcommand("sample", "Sample training episodes and print regime statistics");
    sample->add_option("--config", config_path, "Run config JSON")->required();
    sample->add_option("--count", count, "Number of episodes")->required();
    sample->add_option("--dump", dump_path, "Write episodes as JSON lines");
    sample->add_option("--fold", fold, "Fold whose training split is sampled");
    sample->add_option("--set", overrides, "Dotted-path override");
    sample->add_option("--seed", seed, "Seed (overrides config and MAPLE_SEED)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "maple: " << e.what() << "\n";
        return kConfigError;
    }
    if (jobs) overrides.push_back("jobs=" + std::to_string(*jobs));

    try {
        if (train->parsed()) return cmd_train(config_path, overrides, seed, dump_path, report_dir, out, err);
        if (eval->parsed()) return cmd_eval(config_path, overrides, checkpoint, report_dir, out);
        if (qwk_cmd->parsed()) return cmd_qwk(pred_path, gold_path, scale_text, out);
        if (sample->parsed()) return cmd_sample(config_path, overrides, seed, count, dump_path, fold, out);
    } catch (const ConfigError& e) {
        err << "maple: config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const DataError& e) {
        err << "maple: data error: " << e.what() << "\n";
        return kDataError;
    } catch (const DivergenceError& e) {
        err << "maple: training diverged: " << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        err << "maple: " << e.what() << "\n";
        return kInternalError;
    }
    return kConfigError;
}

}  // namespace maple::cli
