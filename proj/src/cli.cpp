#include "stablegroups/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stablegroups/analysis.hpp"
#include "stablegroups/distkit.hpp"
#include "stablegroups/error.hpp"
#include "stablegroups/robusttrain.hpp"
#include "stablegroups/seed.hpp"
#include "stablegroups/tasks.hpp"

namespace stablegroups::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using robusttrain::StrategyConfig;
using tasks::TaskConfig;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + p.string());
    out << body;
    if (!out) throw DataError("write failed: " + p.string());
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw DataError("cannot create " + p.string() + ": " + ec.message());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::uint64_t env_seed_default() {
    const char* s = std::getenv("STABLEGROUPS_SEED");
    if (!s || !*s) return 0;
    try {
        std::size_t pos = 0;
        unsigned long long v = std::stoull(s, &pos);
        if (pos != std::string(s).size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(std::string("STABLEGROUPS_SEED is not an unsigned integer: ") + s);
    }
}

/// Flag, then config, then STABLEGROUPS_SEED, then 0.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value, const json& config) {
    if (flag->count()) return flag_value;
    if (config.contains("seed")) {
        try {
            return config.at("seed").get<std::uint64_t>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config seed: ") + e.what());
        }
    }
    return env_seed_default();
}

// -- strategy flags ------------------------------------------------------------------

struct StrategyFlags {
    std::string strategy, arch, optimizer;
    int hidden = 0;
    double dropout = 0, lr = 0, weight_decay = 0, stage1_holdout = 0;
    std::size_t batch_size = 0, eval_every = 0, patience = 0, max_steps = 0;
    std::vector<double> grid_lr, grid_wd, grid_dropout;
    bool trace = false;
    std::map<std::string, CLI::Option*> opt;

    void add(CLI::App* app, bool with_strategy) {
        if (with_strategy)
            opt["strategy"] = app->add_option("--strategy", strategy, "erm | env_dro | oracle_dro | pi");
        opt["arch"] = app->add_option("--arch", arch, "linear | mlp");
        opt["hidden"] = app->add_option("--hidden", hidden, "MLP hidden width");
        opt["dropout"] = app->add_option("--dropout", dropout, "dropout rate");
        opt["optimizer"] = app->add_option("--optimizer", optimizer, "adam | sgd");
        opt["lr"] = app->add_option("--lr", lr, "learning rate");
        opt["weight_decay"] = app->add_option("--weight-decay", weight_decay, "L2 decay on weights");
        opt["batch_size"] = app->add_option("--batch-size", batch_size, "examples per group batch");
        opt["eval_every"] = app->add_option("--eval-every", eval_every, "steps between validations");
        opt["patience"] = app->add_option("--patience", patience, "evaluations without improvement");
        opt["max_steps"] = app->add_option("--max-steps", max_steps, "step budget");
        opt["stage1_holdout"] = app->add_option("--stage1-holdout", stage1_holdout, "PI stage-1 holdout fraction");
        opt["grid_lr"] = app->add_option("--grid-lr", grid_lr, "learning-rate grid")->delimiter(',');
        opt["grid_wd"] = app->add_option("--grid-wd", grid_wd, "weight-decay grid")->delimiter(',');
        opt["grid_dropout"] = app->add_option("--grid-dropout", grid_dropout, "dropout grid")->delimiter(',');
        opt["trace"] = app->add_flag("--trace", trace, "record per-step group losses");
    }

    bool given(const std::string& k) const {
        auto it = opt.find(k);
        return it != opt.end() && it->second->count() > 0;
    }
};

void merge_strategy_json(StrategyConfig& s, const json& j) {
    if (!j.is_object()) throw ConfigError("strategy config must be an object");
    try {
        if (j.contains("strategy")) s.strategy = robusttrain::parse_strategy(j.at("strategy").get<std::string>());
        if (j.contains("arch")) s.arch = nnkit::parse_arch(j.at("arch").get<std::string>());
        if (j.contains("optimizer")) {
            auto o = j.at("optimizer").get<std::string>();
            if (o == "adam") s.algo = nnkit::OptAlgo::adam;
            else if (o == "sgd") s.algo = nnkit::OptAlgo::sgd;
            else throw ConfigError("optimizer must be adam or sgd");
        }
        if (j.contains("hidden")) s.hidden = j.at("hidden").get<int>();
        if (j.contains("dropout")) s.dropout = j.at("dropout").get<double>();
        if (j.contains("lr")) s.lr = j.at("lr").get<double>();
        if (j.contains("weight_decay")) s.weight_decay = j.at("weight_decay").get<double>();
        if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("eval_every")) s.eval_every = j.at("eval_every").get<std::size_t>();
        if (j.contains("patience")) s.patience = j.at("patience").get<std::size_t>();
        if (j.contains("max_steps")) s.max_steps = j.at("max_steps").get<std::size_t>();
        if (j.contains("stage1_holdout")) s.stage1_holdout = j.at("stage1_holdout").get<double>();
        if (j.contains("trace")) s.trace = j.at("trace").get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad strategy config: ") + e.what());
    }
}

void apply_strategy_flags(StrategyConfig& s, const StrategyFlags& f) {
    if (f.given("strategy")) s.strategy = robusttrain::parse_strategy(f.strategy);
    if (f.given("arch")) s.arch = nnkit::parse_arch(f.arch);
    if (f.given("optimizer")) {
        if (f.optimizer == "adam") s.algo = nnkit::OptAlgo::adam;
        else if (f.optimizer == "sgd") s.algo = nnkit::OptAlgo::sgd;
        else throw UsageError("--optimizer must be adam or sgd");
    }
    if (f.given("hidden")) s.hidden = f.hidden;
    if (f.given("dropout")) s.dropout = f.dropout;
    if (f.given("lr")) s.lr = f.lr;
    if (f.given("weight_decay")) s.weight_decay = f.weight_decay;
    if (f.given("batch_size")) s.batch_size = f.batch_size;
    if (f.given("eval_every")) s.eval_every = f.eval_every;
    if (f.given("patience")) s.patience = f.patience;
    if (f.given("max_steps")) s.max_steps = f.max_steps;
    if (f.given("stage1_holdout")) s.stage1_holdout = f.stage1_holdout;
    if (f.given("trace")) s.trace = f.trace;
}

std::vector<robusttrain::GridPoint> build_grid(const StrategyConfig& s, const StrategyFlags& f, const json& config) {
    std::vector<double> lrs, wds, dos;
    if (config.contains("grid")) {
        const auto& g = config.at("grid");
        try {
            if (g.contains("lr")) lrs = g.at("lr").get<std::vector<double>>();
            if (g.contains("weight_decay")) wds = g.at("weight_decay").get<std::vector<double>>();
            if (g.contains("dropout")) dos = g.at("dropout").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw ConfigError(std::string("bad grid config: ") + e.what());
        }
    }
    if (f.given("grid_lr")) lrs = f.grid_lr;
    if (f.given("grid_wd")) wds = f.grid_wd;
    if (f.given("grid_dropout")) dos = f.grid_dropout;
    if (lrs.empty() && wds.empty() && dos.empty()) return {};
    if (lrs.empty()) lrs = {s.lr};
    if (wds.empty()) wds = {s.weight_decay};
    if (dos.empty()) dos = {s.dropout};
    std::vector<robusttrain::GridPoint> pts;
    for (double lr : lrs)
        for (double wd : wds)
            for (double d : dos) pts.push_back({lr, wd, d});
    return pts;
}

// -- task flags ----------------------------------------------------------------------

struct TaskFlags {
    std::string task, val_source;
    std::size_t n = 0;
    std::vector<double> eta;
    double test_eta = 0, label_keep = 0;
    int K = 0;
    std::map<std::string, CLI::Option*> opt;

    void add(CLI::App* app) {
        opt["task"] = app->add_option("--task", task, "toy | colored | tokens | attributed");
        opt["n"] = app->add_option("--n", n, "examples per environment");
        opt["eta"] = app->add_option("--eta", eta, "training-environment eta list")->delimiter(',');
        opt["test_eta"] = app->add_option("--test-eta", test_eta, "test-environment eta");
        opt["K"] = app->add_option("--K", K, "number of classes (colored)");
        opt["label_keep"] = app->add_option("--label-keep", label_keep, "probability the stable label is kept");
        opt["val_source"] = app->add_option("--val-source", val_source, "train-env | test-env");
    }
    bool given(const std::string& k) const { return opt.at(k)->count() > 0; }
};

/// Preset for the task, then the config file, then flags.
TaskConfig resolve_task(const TaskFlags& f, const json& config, const std::string& fallback_task) {
    std::string name = fallback_task;
    if (config.contains("task")) name = config.at("task").get<std::string>();
    if (f.given("task")) name = f.task;
    if (name.empty()) throw UsageError("--task is required");
    TaskConfig c = TaskConfig::merge(tasks::preset(tasks::parse_task(name)), config);
    if (f.given("n")) c.n = f.n;
    if (f.given("eta")) c.eta = f.eta;
    if (f.given("test_eta")) c.test_eta = f.test_eta;
    if (f.given("K")) c.K = f.K;
    if (f.given("label_keep")) {
        c.label_keep = f.label_keep;
        c.attributed.label_keep = f.label_keep;
    }
    if (f.given("val_source")) c.val_source = datagen::parse_val_source(f.val_source);
    return c;
}

// -- partitions on disk --------------------------------------------------------------

json partitions_json(const robusttrain::PartitionedData& p) {
    json g = json::array();
    for (std::size_t k = 0; k < p.groups.size(); ++k)
        g.push_back({{"group", p.groups.labels[k]},
                     {"source_env", p.meta[k].source_env},
                     {"classifier_env", p.meta[k].classifier_env},
                     {"correct", p.meta[k].correct},
                     {"members", p.groups.members[k]}});
    json a = json::array();
    for (const auto& [key, val] : p.alpha)
        a.push_back({{"classifier_env", key.first}, {"source_env", key.second}, {"alpha", val}});
    return {{"groups", g}, {"alpha", a}, {"dropped", p.dropped}};
}

robusttrain::PartitionedData partitions_from_json(const json& j) {
    robusttrain::PartitionedData p;
    try {
        p.groups.name = "partitions";
        for (const auto& g : j.at("groups")) {
            p.groups.add(g.at("group").get<std::string>(), g.at("members").get<std::vector<std::size_t>>());
            p.meta.push_back({g.at("source_env").get<int>(), g.at("classifier_env").get<int>(), g.at("correct").get<bool>()});
        }
        for (const auto& a : j.at("alpha"))
            p.alpha[{a.at("classifier_env").get<int>(), a.at("source_env").get<int>()}] = a.at("alpha").get<double>();
        p.dropped = j.at("dropped").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw DataError(std::string("bad partitions file: ") + e.what());
    }
    return p;
}

// -- commands ------------------------------------------------------------------------

struct GenArgs {
    std::string config, out;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
    TaskFlags task;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    json config = a.config.empty() ? json::object() : read_json_file(a.config);
    TaskConfig c = resolve_task(a.task, config, "");
    bool eta_given = a.task.given("eta") || config.contains("eta");
    if (c.task != tasks::Task::attributed && !eta_given) throw UsageError("--eta is required for task " + tasks::to_string(c.task));
    c.seed = resolve_seed(a.seed_opt, a.seed, config);
    std::string dir = a.out.empty() ? config.value("output", std::string()) : a.out;
    if (dir.empty()) throw UsageError("-o/--out is required");

    auto sp = tasks::generate(c);
    fs::path base(dir);
    ensure_dir(base);
    datagen::write_ndjson(sp.train, (base / "train.ndjson").string());
    datagen::write_ndjson(sp.val, (base / "val.ndjson").string());
    datagen::write_ndjson(sp.test, (base / "test.ndjson").string());
    json manifest = {{"command", "gen"},
                     {"task", c.to_json()},
                     {"seeds",
                      {{"base", c.seed},
                       {"split", c.seed},
                       {"environment", "derive_seed(base, hash_tag(\"env\") + env)"}}},
                     {"files", {"train.ndjson", "val.ndjson", "test.ndjson"}},
                     {"counts", {{"train", sp.train.size()}, {"val", sp.val.size()}, {"test", sp.test.size()}}},
                     {"val_source", datagen::to_string(c.val_source)}};
    write_text(base / "manifest.json", manifest.dump(2) + "\n");
    out << "wrote " << sp.train.size() << "/" << sp.val.size() << "/" << sp.test.size()
        << " train/val/test examples to " << dir << "\n";
    return 0;
}

struct TrainArgs {
    std::string config, data, out;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
    std::string val_source;
    CLI::Option* val_source_opt = nullptr;
    StrategyFlags strategy;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    json config = a.config.empty() ? json::object() : read_json_file(a.config);
    std::string data_dir = a.data.empty() ? config.value("data", std::string()) : a.data;
    if (data_dir.empty()) throw UsageError("--data is required");
    fs::path dbase(data_dir);
    json data_manifest = fs::exists(dbase / "manifest.json") ? read_json_file((dbase / "manifest.json").string()) : json::object();

    auto train = datagen::read_ndjson((dbase / "train.ndjson").string());
    auto val = datagen::read_ndjson((dbase / "val.ndjson").string());
    auto test = datagen::read_ndjson((dbase / "test.ndjson").string());

    std::string task_name = train.meta.value("task", std::string());
    StrategyConfig s;
    if (!task_name.empty()) s = tasks::preset_strategy(tasks::parse_task(task_name));
    if (config.contains("strategy")) {
        if (config.at("strategy").is_string()) s.strategy = robusttrain::parse_strategy(config.at("strategy").get<std::string>());
        else merge_strategy_json(s, config.at("strategy"));
    }
    apply_strategy_flags(s, a.strategy);
    if (!a.strategy.given("strategy") && !config.contains("strategy")) throw UsageError("--strategy is required");
    s.seed = resolve_seed(a.seed_opt, a.seed, config);

    datagen::ValSource data_vs = datagen::parse_val_source(val.meta.value("val_source", std::string("train-env")));
    std::string requested;
    if (config.contains("val_source")) requested = config.at("val_source").get<std::string>();
    if (a.val_source_opt->count()) requested = a.val_source;
    if (!requested.empty() && datagen::parse_val_source(requested) != data_vs)
        throw DataError("--val-source " + requested + " does not match the data (generated with " +
                        datagen::to_string(data_vs) + "); regenerate with gen --val-source " + requested);
    s.val_source = data_vs;
    s.validate();

    auto grid = build_grid(s, a.strategy, config);
    robusttrain::PipelineResult result;
    json grid_json = nullptr;
    if (!grid.empty()) {
        auto g = robusttrain::grid_search(train, val, s, grid);
        result = std::move(g.best);
        json pts = json::array();
        for (std::size_t k = 0; k < g.points.size(); ++k)
            pts.push_back({{"lr", g.points[k].lr}, {"weight_decay", g.points[k].weight_decay},
                           {"dropout", g.points[k].dropout}, {"criterion", g.criteria[k]},
                           {"seed", derive_seed(s.seed, k)}});
        grid_json = {{"points", pts}, {"best_index", g.best_index}};
    } else {
        result = robusttrain::run_strategy(train, val, s);
    }

    auto metrics = robusttrain::evaluate_test(result.model.params, test);

    std::string run_dir = a.out;
    if (run_dir.empty()) run_dir = config.value("output", std::string());
    if (run_dir.empty()) run_dir = (dbase / ("run-" + robusttrain::to_string(s.strategy))).string();
    fs::path rbase(run_dir);
    ensure_dir(rbase);
    result.model.params.save((rbase / "model.json").string());
    for (std::size_t i = 0; i < result.stage1.size(); ++i)
        result.stage1[i].params.save((rbase / ("stage1_f" + std::to_string(i) + ".json")).string());
    if (result.partitions) write_text(rbase / "partitions.json", partitions_json(*result.partitions).dump() + "\n");
    if (s.trace) {
        json t = json::array();
        for (const auto& st : result.model.trace)
            t.push_back({{"step", st.step}, {"group_losses", st.group_losses}, {"selected", st.selected}, {"update_loss", st.update_loss}});
        write_text(rbase / "trace.json", t.dump() + "\n");
    }

    json manifest = robusttrain::run_manifest(result, s);
    manifest["command"] = "train";
    manifest["data"] = data_dir;
    manifest["data_manifest"] = data_manifest;
    manifest["task"] = task_name;
    manifest["val_source"] = datagen::to_string(data_vs);
    manifest["grid"] = grid_json;
    manifest["seeds"] = {{"base", s.seed},
                         {"init", derive_seed(s.seed, hash_tag("init"))},
                         {"stage1", "derive_seed(base, hash_tag(\"stage1\") + env)"},
                         {"stage3", derive_seed(s.seed, hash_tag("stage3"))}};
    manifest["result"] = {{"test_acc", metrics.accuracy}, {"worst_group", metrics.worst_group}};
    write_text(rbase / "manifest.json", manifest.dump(2) + "\n");

    json m = {{"test", metrics.groups.to_json()}, {"test_acc", metrics.accuracy}, {"worst_group", metrics.worst_group}};
    if (!val.empty()) {
        datagen::TrainingView vv(val);
        m["val_acc"] = nnkit::accuracy(result.model.params, vv);
    }
    write_text(rbase / "metrics.json", m.dump(2) + "\n");

    out << "RESULT strategy=" << robusttrain::to_string(s.strategy) << " test_acc=" << fmt(metrics.accuracy)
        << " worst_group=" << fmt(metrics.worst_group) << "\n";
    return 0;
}

struct VerifyArgs {
    long long trials = 1000;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
    double grid_step = 0.05;
    std::string json_path;
};

int cmd_verify(const VerifyArgs& a, std::ostream& out) {
    if (a.trials <= 0) throw UsageError("--trials must be positive");
    if (!(a.grid_step > 0.0 && a.grid_step <= 0.5)) throw UsageError("--grid-step must be in (0, 0.5]");
    std::uint64_t seed = a.seed_opt->count() ? a.seed : env_seed_default();
    auto b = distkit::run_theory_battery(static_cast<std::size_t>(a.trials), seed, a.grid_step);
    json lines = json::array();
    for (const auto& l : b.lines) {
        out << (l.ok() ? "PASS " : "FAIL ") << l.name << " passed=" << l.passed << "/" << l.admissible
            << " attempted=" << l.attempted;
        if (!l.note.empty()) out << " (" << l.note << ")";
        out << "\n";
        lines.push_back({{"name", l.name}, {"attempted", l.attempted}, {"admissible", l.admissible},
                         {"passed", l.passed}, {"ok", l.ok()}, {"note", l.note}});
    }
    out << (b.all_passed() ? "ALL PASS" : "SOME FAILED") << " seed=" << seed << " trials=" << a.trials << "\n";
    if (!a.json_path.empty())
        write_text(a.json_path, json({{"seed", seed}, {"trials", a.trials}, {"lines", lines},
                                      {"all_passed", b.all_passed()}}).dump(2) + "\n");
    return b.all_passed() ? 0 : 3;
}

struct SweepArgs {
    std::string config, out, run_id = "sweep";
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
    int workers = 1;
    bool no_controls = false, full_grid = false;
    TaskFlags task;
    StrategyFlags strategy;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    json config = a.config.empty() ? json::object() : read_json_file(a.config);
    TaskConfig c = resolve_task(a.task, config, "tokens");
    std::vector<double> etas{0.80, 0.83, 0.86, 0.89};
    if (a.full_grid)
        etas = {0.80, 0.81, 0.82, 0.83, 0.84, 0.85, 0.86, 0.87, 0.88, 0.89};
    if (config.contains("etas")) etas = config.at("etas").get<std::vector<double>>();
    if (a.task.given("eta")) etas = a.task.eta;

    StrategyConfig s = tasks::preset_strategy(c.task);
    if (config.contains("strategy") && config.at("strategy").is_object()) merge_strategy_json(s, config.at("strategy"));
    apply_strategy_flags(s, a.strategy);
    s.val_source = c.val_source;
    s.validate();

    analysis::SweepOptions opt;
    opt.seed = resolve_seed(a.seed_opt, a.seed, config);
    opt.workers = a.workers;
    opt.controls = !a.no_controls;
    std::string dir = a.out.empty() ? config.value("output", std::string()) : a.out;
    if (dir.empty()) throw UsageError("-o/--out is required");

    auto runner = [&](double ea, double eb, std::uint64_t seed, bool control) {
        auto r = tasks::run_pair(c, s, ea, eb, seed, control);
        return analysis::CellOutcome{r.pi_acc, r.erm_acc};
    };
    auto grid = analysis::env_gap_sweep(etas, runner, opt);
    analysis::emit_report(dir, a.run_id, "sweep", grid);
    for (const auto& cell : grid.cells) {
        out << "CELL eta_a=" << analysis::fmt6(cell.eta_a) << " eta_b=" << analysis::fmt6(cell.eta_b);
        if (!cell.ok) {
            out << " failed: " << cell.error << "\n";
            continue;
        }
        out << " pi_acc=" << fmt(cell.pi_acc);
        if (cell.erm_acc) out << " erm_acc=" << fmt(*cell.erm_acc);
        out << "\n";
    }
    out << "SWEEP cells_ok=" << grid.n_ok() << "/" << grid.cells.size()
        << " spearman_gap_acc=" << analysis::fmt6(grid.summary.spearman_gap_acc)
        << " max_control_excess=" << analysis::fmt6(grid.summary.max_control_excess) << "\n";
    return grid.n_ok() > 0 ? 0 : 3;
}

struct ReportArgs {
    std::string data, run, out, run_id;
    double threshold = 0.05;
};

int cmd_report(const ReportArgs& a, std::ostream& out) {
    fs::path dbase(a.data), rbase(a.run);
    auto train = datagen::read_ndjson((dbase / "train.ndjson").string());
    auto test = datagen::read_ndjson((dbase / "test.ndjson").string());
    auto model = nnkit::ModelParams::load((rbase / "model.json").string());
    std::string run_id = a.run_id.empty() ? rbase.filename().string() : a.run_id;
    if (run_id.empty()) run_id = fs::path(a.run).parent_path().filename().string();
    std::string task = train.meta.value("task", std::string("data"));
    json run_manifest = fs::exists(rbase / "manifest.json") ? read_json_file((rbase / "manifest.json").string()) : json::object();
    std::string model_name = run_manifest.contains("config") ? run_manifest["config"].value("strategy", std::string()) : "";

    std::optional<robusttrain::PartitionedData> parts;
    if (fs::exists(rbase / "partitions.json")) parts = partitions_from_json(read_json_file((rbase / "partitions.json").string()));

    int emitted = 0;
    bool has_pair = std::count(train.env_ids.begin(), train.env_ids.end(), 0) && std::count(train.env_ids.begin(), train.env_ids.end(), 1);
    if (parts && has_pair) {
        analysis::CorrelationTable t;
        t.rows.push_back(analysis::correlation_row(task, train, *parts));
        analysis::emit_report(a.out, run_id, "correlation", t);
        out << "correlation:";
        for (std::size_t k = 0; k < t.rows[0].values.size(); ++k)
            out << " " << analysis::CorrelationTable::kColumns[k + 1] << "=" << analysis::fmt6(t.rows[0].values[k]);
        out << "\n";
        ++emitted;
    }
    auto attrs = analysis::attribute_names(test);
    if (!attrs.empty()) {
        auto r = analysis::attribute_report(model, test, attrs, model_name);
        analysis::emit_report(a.out, run_id, "attributes", r);
        out << "attributes: grand_worst=" << analysis::fmt6(r.grand_worst)
            << " grand_average=" << analysis::fmt6(r.grand_average) << "\n";
        ++emitted;
        if (parts) {
            auto p = analysis::partition_attr_correlations(*parts, train, attrs, a.threshold);
            analysis::emit_report(a.out, run_id, "partition_attr", p);
            out << "partition_attr: flagged=" << p.n_flagged() << "/" << p.n_label_correlated() << "\n";
            ++emitted;
        }
    }
    if (emitted == 0) throw DataError("nothing to report: the run has no partitions and the data has no attributes");
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stable/unstable correlation partitions and robust training on synthetic environments",
                 "stablegroups"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate train/val/test NDJSON splits");
    g->add_option("--config", gen.config, "JSON config file");
    gen.seed_opt = g->add_option("--seed", gen.seed, "base seed (default: STABLEGROUPS_SEED or 0)");
    g->add_option("-o,--out", gen.out, "output directory");
    gen.task.add(g);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "train one strategy on generated data");
    t->add_option("--config", train.config, "JSON config file");
    t->add_option("--data", train.data, "directory written by gen");
    t->add_option("-o,--out", train.out, "run directory (default: <data>/run-<strategy>)");
    train.seed_opt = t->add_option("--seed", train.seed, "training seed (default: STABLEGROUPS_SEED or 0)");
    train.val_source_opt = t->add_option("--val-source", train.val_source, "expected validation source");
    train.strategy.add(t, true);

    VerifyArgs verify;
    auto* v = app.add_subcommand("verify-theory", "run the exact verifier battery on random finite joints");
    v->add_option("--trials", verify.trials, "random draws per verifier");
    verify.seed_opt = v->add_option("--seed", verify.seed, "seed (default: STABLEGROUPS_SEED or 0)");
    v->add_option("--grid-step", verify.grid_step, "grid step of the marginal-optimality search");
    v->add_option("--json", verify.json_path, "also write the summary as JSON");

    SweepArgs sweep;
    auto* s = app.add_subcommand("sweep", "PI accuracy over pairs of training-environment eta values");
    s->add_option("--config", sweep.config, "JSON config file");
    s->add_option("-o,--out", sweep.out, "report directory");
    s->add_option("--run-id", sweep.run_id, "report subdirectory name");
    sweep.seed_opt = s->add_option("--seed", sweep.seed, "seed (default: STABLEGROUPS_SEED or 0)");
    s->add_option("--workers", sweep.workers, "parallel cells");
    s->add_flag("--no-controls", sweep.no_controls, "skip the equal-eta control cells");
    s->add_flag("--full-grid", sweep.full_grid, "ten eta values 0.80..0.89 instead of four");
    sweep.task.add(s);
    sweep.strategy.add(s, false);

    ReportArgs report;
    auto* r = app.add_subcommand("report", "correlation and attribute tables for a finished run");
    r->add_option("--data", report.data, "directory written by gen")->required();
    r->add_option("--run", report.run, "directory written by train")->required();
    r->add_option("-o,--out", report.out, "report directory")->required();
    r->add_option("--run-id", report.run_id, "report subdirectory name (default: run directory name)");
    r->add_option("--threshold", report.threshold, "minimum |r| for a sign to count");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*g) return cmd_gen(gen, out);
        if (*t) return cmd_train(train, out);
        if (*v) return cmd_verify(verify, out);
        if (*s) return cmd_sweep(sweep, out);
        if (*r) return cmd_report(report, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.error_class());
    } catch (const json::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace stablegroups::cli
