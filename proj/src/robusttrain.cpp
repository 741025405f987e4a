#include "stablegroups/robusttrain.hpp"

#include "stablegroups/error.hpp"
#include "stablegroups/seed.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace stablegroups::robusttrain {

using Rng = std::mt19937_64;

// -- groups --------------------------------------------------------------------

void GroupSpec::add(std::string label, std::vector<std::size_t> idx) {
    labels.push_back(std::move(label));
    members.push_back(std::move(idx));
}

GroupSpec all_examples(const TrainingView& v) {
    GroupSpec g;
    g.name = "all";
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    g.add("all", std::move(idx));
    return g;
}

GroupSpec env_label_groups(const TrainingView& v) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> by;
    for (std::size_t i = 0; i < v.size(); ++i) by[{v.env(i), v.label(i)}].push_back(i);
    GroupSpec g;
    g.name = "env x label";
    for (auto& [key, idx] : by)
        g.add("env=" + std::to_string(key.first) + ",y=" + std::to_string(key.second), std::move(idx));
    return g;
}

GroupSpec oracle_groups(const EnvironmentDataset& ds) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> by;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) by[{ds.examples[i].y, ds.examples[i].sp}].push_back(i);
    GroupSpec g;
    g.name = "label x spurious";
    for (auto& [key, idx] : by)
        g.add("y=" + std::to_string(key.first) + ",sp=" + std::to_string(key.second), std::move(idx));
    return g;
}

GroupSpec attribute_label_groups(const EnvironmentDataset& ds, const std::string& attribute) {
    GroupSpec g;
    g.name = attribute + " x label";
    std::map<std::pair<int, int>, std::vector<std::size_t>> by;
    for (int a = 0; a < 2; ++a)
        for (int y = 0; y < ds.n_classes; ++y) by[{a, y}];
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        auto it = ds.examples[i].attrs.find(attribute);
        if (it == ds.examples[i].attrs.end()) throw DataError("example lacks attribute " + attribute);
        by[{it->second, ds.examples[i].y}].push_back(i);
    }
    for (auto& [key, idx] : by)
        g.add(attribute + "=" + std::to_string(key.first) + ",y=" + std::to_string(key.second), std::move(idx));
    return g;
}

std::vector<std::string> drop_empty(GroupSpec& g) {
    std::vector<std::string> dropped;
    GroupSpec kept;
    kept.name = g.name;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (g.members[k].empty()) dropped.push_back(g.labels[k]);
        else kept.add(g.labels[k], std::move(g.members[k]));
    }
    g = std::move(kept);
    return dropped;
}

std::string to_string(Strategy s) {
    switch (s) {
    case Strategy::erm: return "erm";
    case Strategy::env_dro: return "env_dro";
    case Strategy::oracle_dro: return "oracle_dro";
    case Strategy::pi: return "pi";
    }
    return "?";
}

Strategy parse_strategy(const std::string& s) {
    if (s == "erm") return Strategy::erm;
    if (s == "env_dro" || s == "dro") return Strategy::env_dro;
    if (s == "oracle_dro" || s == "oracle") return Strategy::oracle_dro;
    if (s == "pi") return Strategy::pi;
    throw ConfigError("unknown strategy '" + s + "'");
}

std::string to_string(Selection s) { return s == Selection::accuracy ? "accuracy" : "worst-group-accuracy"; }

void StrategyConfig::validate() const {
    if (batch_size == 0 || eval_every == 0 || patience == 0 || max_steps == 0)
        throw ConfigError("batch_size, eval_every, patience and max_steps must be positive");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (!(stage1_holdout > 0.0 && stage1_holdout < 1.0)) throw ConfigError("stage1 holdout must lie in (0,1)");
    if (arch == nnkit::Arch::mlp && hidden <= 0) throw ConfigError("mlp hidden width must be positive");
}

nlohmann::json StrategyConfig::to_json() const {
    return {{"strategy", to_string(strategy)},
            {"arch", nnkit::to_string(arch)},
            {"hidden", hidden},
            {"dropout", dropout},
            {"optimizer", algo == nnkit::OptAlgo::adam ? "adam" : "sgd"},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"batch_size", batch_size},
            {"eval_every", eval_every},
            {"patience", patience},
            {"max_steps", max_steps},
            {"stage1_holdout", stage1_holdout},
            {"seed", seed},
            {"val_source", datagen::to_string(val_source)}};
}

nlohmann::json TrainedModel::summary_json() const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& p : curve) c.push_back({{"step", p.step}, {"train_loss", p.train_loss}, {"criterion", p.criterion}});
    return {{"best_criterion", best_criterion}, {"best_step", best_step}, {"steps_run", steps_run},
            {"selection", to_string(selection)}, {"hyper", hyper}, {"curve", c}};
}

// -- evaluation ----------------------------------------------------------------

GroupEval evaluate_groups(const std::vector<int>& pred, const TrainingView& v, const GroupSpec& groups) {
    if (pred.size() != v.size()) throw DataError("evaluate_groups: prediction count mismatch");
    GroupEval e;
    double sum = 0.0;
    e.worst = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& idx = groups.members[g];
        if (idx.empty()) {
            e.excluded.push_back(groups.labels[g]);
            continue;
        }
        std::size_t hits = 0;
        for (std::size_t i : idx)
            if (pred[i] == v.label(i)) ++hits;
        double a = static_cast<double>(hits) / static_cast<double>(idx.size());
        e.labels.push_back(groups.labels[g]);
        e.acc.push_back(a);
        e.counts.push_back(idx.size());
        e.worst = std::min(e.worst, a);
        sum += a;
    }
    if (e.acc.empty()) throw DataError("evaluate_groups: every group is empty");
    e.average = sum / static_cast<double>(e.acc.size());
    return e;
}

GroupEval evaluate_groups(const ModelParams& m, const TrainingView& v, const GroupSpec& groups) {
    return evaluate_groups(nnkit::predict_all(m, v), v, groups);
}

nlohmann::json GroupEval::to_json() const {
    nlohmann::json g = nlohmann::json::array();
    for (std::size_t k = 0; k < acc.size(); ++k)
        g.push_back({{"group", labels[k]}, {"accuracy", acc[k]}, {"count", counts[k]}});
    return {{"groups", g}, {"worst", worst}, {"average", average}, {"excluded", excluded}};
}

// -- the training loop ------------------------------------------------------------

namespace {

/// Shuffled cursor over one group's members; reshuffles when exhausted.
class GroupCursor {
public:
    GroupCursor(const std::vector<std::size_t>& members, std::uint64_t seed)
        : order_(members), rng_(seed) {
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    void next(std::size_t n, std::vector<std::size_t>& out) {
        out.clear();
        while (out.size() < n) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
            }
            out.push_back(order_[pos_++]);
        }
    }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
};

} // namespace

TrainedModel train_groups(const TrainingView& train, const GroupSpec& groups, const Criterion& criterion,
                          Selection selection, const StrategyConfig& cfg, int n_features, int n_classes) {
    cfg.validate();
    if (groups.size() == 0) throw ConfigError("training needs at least one group");
    for (std::size_t g = 0; g < groups.size(); ++g)
        if (groups.members[g].empty()) throw ConfigError("group '" + groups.labels[g] + "' is empty");

    TrainedModel out;
    out.selection = selection;
    out.hyper = {{"lr", cfg.lr}, {"weight_decay", cfg.weight_decay}, {"dropout", cfg.dropout}, {"seed", cfg.seed}};
    ModelParams m = ModelParams::init(cfg.arch, n_features, n_classes, cfg.hidden, cfg.dropout,
                                      derive_seed(cfg.seed, hash_tag("init")));
    auto opt = nnkit::OptimState::make(cfg.algo, cfg.lr, cfg.weight_decay, m.size());

    std::vector<GroupCursor> cursors;
    cursors.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g)
        cursors.emplace_back(groups.members[g], derive_seed(cfg.seed, hash_tag("group") + g));

    const std::size_t G = groups.size();
    std::vector<std::vector<std::size_t>> batches(G);
    std::vector<double> losses(G);
    out.best_criterion = -std::numeric_limits<double>::infinity();
    out.params = m;
    std::size_t since_best = 0;
    double window_loss = 0.0;
    std::size_t window_n = 0;

    auto evaluate = [&](std::size_t step) {
        double c = criterion(m);
        out.curve.push_back({step, window_n ? window_loss / static_cast<double>(window_n) : 0.0, c});
        window_loss = 0.0;
        window_n = 0;
        if (c > out.best_criterion) {
            out.best_criterion = c;
            out.best_step = step;
            out.params = m;
            since_best = 0;
        } else {
            ++since_best;
        }
    };

    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        const std::uint64_t step_seed = derive_seed(cfg.seed, hash_tag("dropout") + step);
        std::size_t pick = 0;
        if (G > 1) {
            for (std::size_t g = 0; g < G; ++g) {
                cursors[g].next(cfg.batch_size, batches[g]);
                losses[g] = nnkit::train_loss(m, train, batches[g], derive_seed(step_seed, g + 1));
                if (losses[g] > losses[pick]) pick = g;
            }
        } else {
            cursors[0].next(cfg.batch_size, batches[0]);
        }
        auto lg = nnkit::loss_and_grad(m, train, batches[pick], cfg.weight_decay, true,
                                       derive_seed(step_seed, pick + 1));
        if (G == 1) losses[0] = lg.loss;
        if (cfg.trace) {
            double penalty = 0.0;
            for (auto [b, e] : m.weight_ranges())
                for (std::size_t k = b; k < e; ++k) penalty += m.w[k] * m.w[k];
            out.trace.push_back({step, losses, pick, lg.loss - 0.5 * cfg.weight_decay * penalty});
        }
        window_loss += losses[pick];
        ++window_n;
        nnkit::step(m, lg.grad, opt);
        out.steps_run = step;

        if (step % cfg.eval_every == 0) {
            evaluate(step);
            if (since_best >= cfg.patience) break;
        }
    }
    if (out.curve.empty()) evaluate(out.steps_run);
    return out;
}

namespace {

Criterion accuracy_criterion(const EnvironmentDataset& val) {
    if (val.empty()) throw DataError("validation set is empty");
    return [&val](const ModelParams& m) { return nnkit::accuracy(m, TrainingView(val)); };
}

Criterion worst_group_criterion(const EnvironmentDataset& val, const GroupSpec& groups) {
    if (val.empty()) throw DataError("validation set is empty");
    return [&val, &groups](const ModelParams& m) {
        TrainingView v(val);
        return evaluate_groups(m, v, groups).worst;
    };
}

std::vector<std::size_t> env_indices(const TrainingView& v, int env) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v.env(i) == env) idx.push_back(i);
    return idx;
}

} // namespace

TrainedModel train_erm(const EnvironmentDataset& train, const EnvironmentDataset& val, const StrategyConfig& cfg) {
    if (train.empty()) throw DataError("training set is empty");
    TrainingView tv(train);
    return train_groups(tv, all_examples(tv), accuracy_criterion(val), Selection::accuracy, cfg,
                        train.n_features, train.n_classes);
}

TrainedModel train_group_dro(const EnvironmentDataset& train, const GroupSpec& groups,
                             const EnvironmentDataset& val, const GroupSpec& val_groups,
                             const StrategyConfig& cfg) {
    if (train.empty()) throw DataError("training set is empty");
    TrainingView tv(train);
    if (cfg.val_source == ValSource::test_env)
        return train_groups(tv, groups, accuracy_criterion(val), Selection::accuracy, cfg, train.n_features,
                            train.n_classes);
    return train_groups(tv, groups, worst_group_criterion(val, val_groups), Selection::worst_group, cfg,
                        train.n_features, train.n_classes);
}

std::vector<TrainedModel> pi_stage1(const EnvironmentDataset& train, const StrategyConfig& cfg) {
    if (train.env_ids.size() < 2) throw ConfigError("predict-then-interpolate needs at least two environments");
    TrainingView tv(train);
    std::vector<TrainedModel> models;
    for (int env : train.env_ids) {
        auto idx = env_indices(tv, env);
        Rng rng(derive_seed(cfg.seed, hash_tag("holdout") + static_cast<std::uint64_t>(env)));
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_hold = static_cast<std::size_t>(std::llround(cfg.stage1_holdout * static_cast<double>(idx.size())));
        if (n_hold < 1 || n_hold >= idx.size())
            throw DataError("environment " + std::to_string(env) + " is too small for the stage-1 holdout");
        std::vector<std::size_t> hold(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_hold));
        std::vector<std::size_t> fit(idx.begin() + static_cast<std::ptrdiff_t>(n_hold), idx.end());
        std::sort(hold.begin(), hold.end());
        std::sort(fit.begin(), fit.end());

        GroupSpec g;
        g.name = "env " + std::to_string(env);
        g.add("env=" + std::to_string(env), std::move(fit));
        StrategyConfig c = cfg;
        c.seed = derive_seed(cfg.seed, hash_tag("stage1") + static_cast<std::uint64_t>(env));
        Criterion crit = [&tv, hold](const ModelParams& m) { return nnkit::accuracy(m, tv, hold); };
        models.push_back(train_groups(tv, g, crit, Selection::accuracy, c, train.n_features, train.n_classes));
    }
    return models;
}

PartitionedData pi_stage2(const EnvironmentDataset& data, const std::vector<ModelParams>& models, bool warn) {
    if (models.size() < 2) throw ConfigError("stage 2 needs one model per training environment");
    TrainingView v(data);
    PartitionedData out;
    out.groups.name = "partition";
    // models[k] belongs to the k-th training environment; env ids are 0..n-1.
    std::vector<std::vector<int>> pred(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) pred[i] = nnkit::predict_all(models[i], v);
    const std::set<int> present(data.env_ids.begin(), data.env_ids.end());
    for (int j = 0; j < static_cast<int>(models.size()); ++j) {
        if (!present.count(j)) continue;
        auto idx = env_indices(v, j);
        for (int i = 0; i < static_cast<int>(models.size()); ++i) {
            if (i == j) continue;
            std::vector<std::size_t> right, wrong;
            for (std::size_t k : idx) (pred[static_cast<std::size_t>(i)][k] == v.label(k) ? right : wrong).push_back(k);
            if (!idx.empty())
                out.alpha[{i, j}] = static_cast<double>(right.size()) / static_cast<double>(idx.size());
            for (int side = 0; side < 2; ++side) {
                auto& members = side == 0 ? right : wrong;
                std::string label = "E" + std::to_string(j) + "|f" + std::to_string(i) + (side == 0 ? "|correct" : "|wrong");
                if (members.empty()) {
                    out.dropped.push_back(label);
                    if (warn) std::cerr << "warning: degenerate partition, group " << label << " is empty\n";
                    continue;
                }
                out.groups.add(label, std::move(members));
                out.meta.push_back({j, i, side == 0});
            }
        }
    }
    return out;
}

nlohmann::json PartitionedData::to_json() const {
    nlohmann::json g = nlohmann::json::array();
    for (std::size_t k = 0; k < groups.size(); ++k)
        g.push_back({{"group", groups.labels[k]}, {"source_env", meta[k].source_env},
                     {"classifier_env", meta[k].classifier_env}, {"correct", meta[k].correct},
                     {"size", groups.members[k].size()}});
    nlohmann::json a = nlohmann::json::array();
    for (const auto& [key, val] : alpha) a.push_back({{"classifier_env", key.first}, {"source_env", key.second}, {"alpha", val}});
    return {{"groups", g}, {"alpha", a}, {"dropped", dropped}};
}

TrainedModel pi_stage3(const EnvironmentDataset& train, const PartitionedData& partitions,
                       const EnvironmentDataset& val, const PartitionedData& val_partitions,
                       const StrategyConfig& cfg) {
    if (partitions.groups.size() < 2)
        throw ConfigError("stage 3 needs at least two non-degenerate groups, got " +
                          std::to_string(partitions.groups.size()));
    StrategyConfig c = cfg;
    c.seed = derive_seed(cfg.seed, hash_tag("stage3"));
    return train_group_dro(train, partitions.groups, val, val_partitions.groups, c);
}

PipelineResult run_strategy(const EnvironmentDataset& train, const EnvironmentDataset& val,
                            const StrategyConfig& cfg) {
    cfg.validate();
    PipelineResult r;
    TrainingView tv(train), vv(val);
    switch (cfg.strategy) {
    case Strategy::erm:
        r.train_groups = all_examples(tv);
        r.model = train_erm(train, val, cfg);
        break;
    case Strategy::env_dro: {
        r.train_groups = env_label_groups(tv);
        GroupSpec vg = env_label_groups(vv);
        r.model = train_group_dro(train, r.train_groups, val, vg, cfg);
        break;
    }
    case Strategy::oracle_dro: {
        r.train_groups = oracle_groups(train);
        GroupSpec vg = oracle_groups(val);
        r.model = train_group_dro(train, r.train_groups, val, vg, cfg);
        break;
    }
    case Strategy::pi: {
        r.stage1 = pi_stage1(train, cfg);
        std::vector<ModelParams> f;
        for (const auto& s : r.stage1) f.push_back(s.params);
        r.partitions = pi_stage2(train, f);
        if (cfg.val_source == ValSource::train_env) r.val_partitions = pi_stage2(val, f, false);
        else r.val_partitions = PartitionedData{};
        r.train_groups = r.partitions->groups;
        r.model = pi_stage3(train, *r.partitions, val, *r.val_partitions, cfg);
        break;
    }
    }
    return r;
}

GridResult grid_search(const EnvironmentDataset& train, const EnvironmentDataset& val,
                       const StrategyConfig& cfg, const std::vector<GridPoint>& grid) {
    if (grid.empty()) throw ConfigError("grid search needs at least one point");
    GridResult out;
    out.points = grid;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < grid.size(); ++k) {
        StrategyConfig c = cfg;
        c.lr = grid[k].lr;
        c.weight_decay = grid[k].weight_decay;
        c.dropout = grid[k].dropout;
        c.seed = derive_seed(cfg.seed, k);
        PipelineResult r = run_strategy(train, val, c);
        out.criteria.push_back(r.model.best_criterion);
        if (r.model.best_criterion > best) {
            best = r.model.best_criterion;
            out.best_index = k;
            out.best = std::move(r);
        }
    }
    return out;
}

TestMetrics evaluate_test(const ModelParams& m, const EnvironmentDataset& test) {
    TrainingView v(test);
    auto pred = nnkit::predict_all(m, v);
    TestMetrics t;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == v.label(i)) ++hits;
    if (pred.empty()) throw DataError("test set is empty");
    t.accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
    t.groups = evaluate_groups(pred, v, oracle_groups(test));
    t.worst_group = t.groups.worst;
    return t;
}

nlohmann::json run_manifest(const PipelineResult& r, const StrategyConfig& cfg) {
    nlohmann::json j = {{"config", cfg.to_json()}, {"model", r.model.summary_json()}};
    nlohmann::json groups = nlohmann::json::array();
    for (std::size_t k = 0; k < r.train_groups.size(); ++k)
        groups.push_back({{"group", r.train_groups.labels[k]}, {"size", r.train_groups.members[k].size()}});
    j["train_groups"] = groups;
    if (!r.stage1.empty()) {
        nlohmann::json s = nlohmann::json::array();
        for (const auto& m : r.stage1) s.push_back(m.summary_json());
        j["stage1"] = s;
    }
    if (r.partitions) {
        j["partitions"] = r.partitions->to_json();
        j["dropped_groups"] = r.partitions->dropped;
        j["stage3_validation_groups"] =
            cfg.val_source == ValSource::train_env ? "partition groups of the validation split" : "none (plain accuracy)";
    } else {
        j["dropped_groups"] = nlohmann::json::array();
    }
    return j;
}

} // namespace stablegroups::robusttrain
