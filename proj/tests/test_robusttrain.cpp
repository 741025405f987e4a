#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "stablegroups/distkit.hpp"
#include "stablegroups/robusttrain.hpp"

using namespace stablegroups;
using namespace stablegroups::robusttrain;
using datagen::EnvironmentDataset;

namespace {

// Binary linear rule y = [x_d = 1] on dense 0/1 features.
ModelParams copy_feature(int d, int n_features = 2) {
    auto m = ModelParams::zeros(nnkit::Arch::linear, n_features, 2);
    m.w[static_cast<std::size_t>(d * 2 + 1)] = 1.0;
    m.w[static_cast<std::size_t>(d * 2)] = -1.0;
    m.w[m.off_b1()] = 0.5;
    m.w[m.off_b1() + 1] = -0.5;
    return m;
}

StrategyConfig quick(Strategy s, std::uint64_t seed = 1) {
    StrategyConfig c;
    c.strategy = s;
    c.seed = seed;
    c.lr = 1e-2;
    c.eval_every = 20;
    c.patience = 5;
    c.max_steps = 600;
    return c;
}

datagen::Splits toy(std::size_t n, std::uint64_t seed) {
    auto ds = datagen::gen_toy(n, {{0.0, 0.1, 0.9}, 0.8, seed});
    return datagen::split(ds, {0.6, 0.2, 0.2}, seed, ValSource::train_env, {2});
}

} // namespace

TEST_CASE("group builders") {
    auto ds = datagen::gen_toy(200, {{0.0, 0.3}, 0.8, 2});
    TrainingView v(ds);
    auto el = env_label_groups(v);
    CHECK(el.size() == 4);
    CHECK(el.labels[0] == "env=0,y=0");
    std::size_t total = 0;
    for (std::size_t g = 0; g < el.size(); ++g) {
        total += el.members[g].size();
        for (auto i : el.members[g]) CHECK(el.labels[g] == "env=" + std::to_string(v.env(i)) + ",y=" + std::to_string(v.label(i)));
    }
    CHECK(total == ds.size());

    auto og = oracle_groups(ds);
    CHECK(og.size() == 4);
    for (std::size_t g = 0; g < og.size(); ++g)
        for (auto i : og.members[g])
            CHECK(og.labels[g] == "y=" + std::to_string(ds.examples[i].y) + ",sp=" + std::to_string(ds.examples[i].sp));

    CHECK(all_examples(v).members[0].size() == ds.size());
}

TEST_CASE("attribute groups keep empty cells until dropped") {
    auto ds = datagen::gen_toy(20, {{0.0}, 0.8, 1});
    for (auto& e : ds.examples) e.attrs["a"] = 1;
    auto g = attribute_label_groups(ds, "a");
    CHECK(g.size() == 4);
    auto dropped = drop_empty(g);
    CHECK(dropped.size() == 2);
    CHECK(g.size() == 2);
    CHECK_THROWS_AS(attribute_label_groups(ds, "b"), DataError);
}

TEST_CASE("strategy parsing and validation") {
    CHECK(parse_strategy("dro") == Strategy::env_dro);
    CHECK(parse_strategy("oracle") == Strategy::oracle_dro);
    CHECK(parse_strategy("pi") == Strategy::pi);
    CHECK_THROWS_AS(parse_strategy("irm"), ConfigError);
    StrategyConfig c;
    c.lr = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = StrategyConfig{};
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = StrategyConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("stage 2 partitions match a brute-force recount") {
    auto ds = datagen::gen_toy(400, {{0.0, 0.1}, 0.8, 4});
    std::vector<ModelParams> models{copy_feature(0), copy_feature(1)};
    auto p = pi_stage2(ds, models, false);
    // f1 copies x2, which is exact on E0.
    CHECK(p.dropped == std::vector<std::string>{"E0|f1|wrong"});
    CHECK(p.groups.size() == 3);
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const auto& meta = p.meta[g];
        std::vector<std::size_t> expect;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            const auto& e = ds.examples[i];
            if (e.env != meta.source_env) continue;
            int pred = static_cast<int>(e.dense[static_cast<std::size_t>(meta.classifier_env)]);
            if ((pred == e.y) == meta.correct) expect.push_back(i);
        }
        CHECK(p.groups.members[g] == expect);
    }
    std::size_t right = 0, n = 0;
    for (const auto& e : ds.examples)
        if (e.env == 1) {
            ++n;
            right += static_cast<std::size_t>(e.dense[0] == e.y);
        }
    CHECK(p.alpha.at({0, 1}) == doctest::Approx(static_cast<double>(right) / static_cast<double>(n)));
    CHECK(p.alpha.at({1, 0}) == 1.0);
    CHECK_THROWS_AS(pi_stage2(ds, {copy_feature(0)}, false), ConfigError);
}

TEST_CASE("stage 3 needs two groups") {
    auto ds = datagen::gen_toy(50, {{0.0, 0.0}, 0.8, 4});
    std::vector<ModelParams> models{copy_feature(1), copy_feature(1)};
    auto p = pi_stage2(ds, models, false);
    CHECK(p.groups.size() == 2);
    PartitionedData one = p;
    one.groups.labels.resize(1);
    one.groups.members.resize(1);
    one.meta.resize(1);
    CHECK_THROWS_AS(pi_stage3(ds, one, ds, one, quick(Strategy::pi)), ConfigError);
}

TEST_CASE("group evaluation matches a brute-force recount") {
    auto ds = datagen::gen_toy(300, {{0.2, 0.4}, 0.8, 6});
    TrainingView v(ds);
    auto m = copy_feature(0);
    auto g = oracle_groups(ds);
    g.add("empty", {});
    auto ev = evaluate_groups(m, v, g);
    CHECK(ev.excluded == std::vector<std::string>{"empty"});
    double worst = 1.0, sum = 0.0;
    for (std::size_t k = 0; k + 1 < g.size(); ++k) {
        std::size_t right = 0;
        for (auto i : g.members[k]) right += static_cast<std::size_t>(static_cast<int>(ds.examples[i].dense[0]) == ds.examples[i].y);
        double acc = static_cast<double>(right) / static_cast<double>(g.members[k].size());
        CHECK(ev.acc[k] == doctest::Approx(acc));
        worst = std::min(worst, acc);
        sum += acc;
    }
    CHECK(ev.worst == doctest::Approx(worst));
    CHECK(ev.average == doctest::Approx(sum / 4.0));
    std::vector<int> short_pred(3, 0);
    CHECK_THROWS_AS(evaluate_groups(short_pred, v, g), DataError);
}

TEST_CASE("DRO updates the max-loss group at every step") {
    auto sp = toy(2000, 3);
    auto cfg = quick(Strategy::env_dro);
    cfg.trace = true;
    cfg.dropout = 0.2;
    auto r = run_strategy(sp.train, sp.val, cfg);
    REQUIRE(!r.model.trace.empty());
    CHECK(r.model.trace.size() == r.model.steps_run);
    for (const auto& st : r.model.trace) {
        REQUIRE(st.group_losses.size() == 4);
        auto it = std::max_element(st.group_losses.begin(), st.group_losses.end());
        CHECK(st.selected == static_cast<std::size_t>(it - st.group_losses.begin()));
        CHECK(st.update_loss == doctest::Approx(*it).epsilon(1e-12));
    }
}

TEST_CASE("group DRO rejects an empty training group") {
    auto sp = toy(200, 3);
    TrainingView v(sp.train);
    auto g = env_label_groups(v);
    g.add("empty", {});
    CHECK_THROWS_AS(train_group_dro(sp.train, g, sp.val, g, quick(Strategy::env_dro)), ConfigError);
}

TEST_CASE("pipeline is bit-reproducible") {
    auto sp = toy(1500, 5);
    for (Strategy s : {Strategy::erm, Strategy::oracle_dro, Strategy::pi}) {
        auto a = run_strategy(sp.train, sp.val, quick(s, 9));
        auto b = run_strategy(sp.train, sp.val, quick(s, 9));
        CHECK(a.model.params.w == b.model.params.w);
        CHECK(a.model.best_step == b.model.best_step);
    }
}

TEST_CASE("toy PI partitions and drops the spurious feature") {
    auto sp = toy(5000, 1);
    auto r = run_strategy(sp.train, sp.val, quick(Strategy::pi));
    REQUIRE(r.partitions);
    CHECK(r.stage1.size() == 2);
    CHECK(std::abs(r.partitions->alpha.at({0, 1}) - 0.9) < 0.02);
    const auto& w = r.model.params;
    CHECK(std::abs(w.linear_feature_weight(1)) < 0.25 * std::abs(w.linear_feature_weight(0)));
    auto erm = run_strategy(sp.train, sp.val, quick(Strategy::erm));
    CHECK(evaluate_test(w, sp.test).accuracy > evaluate_test(erm.model.params, sp.test).accuracy + 0.2);
}

TEST_CASE("grid search with one point reproduces the direct run") {
    auto sp = toy(800, 2);
    auto cfg = quick(Strategy::erm, 4);
    auto direct = run_strategy(sp.train, sp.val, cfg);
    auto g = grid_search(sp.train, sp.val, cfg, {{cfg.lr, cfg.weight_decay, cfg.dropout}});
    CHECK(g.best.model.params.w == direct.model.params.w);

    auto multi = grid_search(sp.train, sp.val, cfg, {{1e-4, 0.0, 0.0}, {1e-2, 0.0, 0.0}, {1e-2, 1e-3, 0.0}});
    CHECK(multi.criteria.size() == 3);
    auto best = std::max_element(multi.criteria.begin(), multi.criteria.end()) - multi.criteria.begin();
    CHECK(multi.best_index == static_cast<std::size_t>(best));
}

TEST_CASE("test metrics") {
    auto sp = toy(500, 2);
    auto m = copy_feature(0);
    auto t = evaluate_test(m, sp.test);
    CHECK(t.worst_group <= t.accuracy);
    CHECK(t.accuracy == doctest::Approx(nnkit::accuracy(m, TrainingView(sp.test))));
}

TEST_CASE("partitions are complete and alpha equals accuracy") {
    auto sp = toy(2000, 7);
    auto r = run_strategy(sp.train, sp.val, quick(Strategy::pi));
    REQUIRE(r.partitions);
    const auto& p = *r.partitions;
    TrainingView v(sp.train);
    for (int j = 0; j < 2; ++j) {
        int i = 1 - j;
        std::vector<std::size_t> joined;
        for (std::size_t g = 0; g < p.groups.size(); ++g)
            if (p.meta[g].source_env == j && p.meta[g].classifier_env == i)
                joined.insert(joined.end(), p.groups.members[g].begin(), p.groups.members[g].end());
        std::sort(joined.begin(), joined.end());
        std::vector<std::size_t> env;
        for (std::size_t k = 0; k < v.size(); ++k)
            if (v.env(k) == j) env.push_back(k);
        CHECK(joined == env);
        CHECK(p.alpha.at({i, j}) == nnkit::accuracy(r.stage1[static_cast<std::size_t>(i)].params, v, env));
    }
}

TEST_CASE("best checkpoint reproduces its recorded criterion") {
    auto sp = toy(1500, 8);
    auto erm = run_strategy(sp.train, sp.val, quick(Strategy::erm));
    CHECK(std::abs(nnkit::accuracy(erm.model.params, TrainingView(sp.val)) - erm.model.best_criterion) <= 1e-12);
    auto dro = run_strategy(sp.train, sp.val, quick(Strategy::oracle_dro));
    auto vg = oracle_groups(sp.val);
    CHECK(std::abs(evaluate_groups(dro.model.params, TrainingView(sp.val), vg).worst - dro.model.best_criterion) <= 1e-12);
    auto pi = run_strategy(sp.train, sp.val, quick(Strategy::pi));
    REQUIRE(pi.val_partitions);
    CHECK(std::abs(evaluate_groups(pi.model.params, TrainingView(sp.val), pi.val_partitions->groups).worst -
                   pi.model.best_criterion) <= 1e-12);

    auto g = grid_search(sp.train, sp.val, quick(Strategy::erm), {{1e-3, 0.0, 0.0}, {1e-2, 0.0, 0.0}, {3e-2, 1e-3, 0.1}});
    CHECK(g.criteria[g.best_index] == g.best.model.best_criterion);
    double best_curve = -1.0;
    for (const auto& c : g.best.model.curve) best_curve = std::max(best_curve, c.criterion);
    CHECK(best_curve == g.best.model.best_criterion);
}

TEST_CASE("trained classifiers flip the spurious sign on the mistake set") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> lo(0.0, 0.15), gap(0.1, 0.5);
    int admissible = 0, negative = 0;
    for (int t = 0; t < 100; ++t) {
        double eta_i = lo(rng), eta_j = eta_i + gap(rng);
        auto ds = datagen::gen_toy(2000, {{eta_i, eta_j}, 0.8, static_cast<std::uint64_t>(t + 1)});
        StrategyConfig c;
        c.seed = static_cast<std::uint64_t>(t + 1);
        auto models = pi_stage1(ds, c);
        TrainingView v(ds);
        std::vector<std::size_t> e0;
        for (std::size_t k = 0; k < v.size(); ++k)
            if (v.env(k) == 0) e0.push_back(k);
        auto joint = distkit::toy_joint(eta_i);
        double bayes = 0.0;
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) bayes += std::max(joint.at(a, b, 0), joint.at(a, b, 1));
        if (nnkit::accuracy(models[0].params, v, e0) < 0.95 * bayes) continue;
        ++admissible;
        auto p = pi_stage2(ds, {models[0].params, models[1].params}, false);
        for (std::size_t g = 0; g < p.groups.size(); ++g)
            if (p.meta[g].source_env == 1 && p.meta[g].classifier_env == 0 && !p.meta[g].correct) {
                auto r = datagen::spurious_label_pearson(ds, p.groups.members[g]);
                negative += static_cast<int>(r && *r < 0);
            }
    }
    CHECK(admissible >= 90);
    CHECK(negative >= 0.95 * admissible);
}
