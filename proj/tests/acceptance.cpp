// Acceptance run: one PASS/FAIL line per criterion, using the task presets
// with seed 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "stablegroups/analysis.hpp"
#include "stablegroups/distkit.hpp"
#include "stablegroups/tasks.hpp"

using namespace stablegroups;
using robusttrain::Strategy;

namespace {

constexpr std::uint64_t kSeed = 1;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string num(const std::optional<double>& v, int prec = 4) { return v ? num(*v, prec) : "NA"; }

int failures = 0;

void criterion(int id, double limit_s, const std::function<Verdict()>& body) {
    auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_s > 0 && secs >= limit_s) {
        v.pass = false;
        v.detail += "; runtime over " + num(limit_s, 0) + " s";
    }
    if (!v.pass) ++failures;
    std::cout << "CRITERION " << id << (v.pass ? " PASS" : " FAIL") << " (" << num(secs, 1) << " s): " << v.detail
              << std::endl;
}

robusttrain::StrategyConfig strategy_for(tasks::Task t, Strategy s) {
    auto c = tasks::preset_strategy(t);
    c.strategy = s;
    c.seed = kSeed;
    return c;
}

tasks::TaskConfig task_for(tasks::Task t) {
    auto c = tasks::preset(t);
    c.seed = kSeed;
    return c;
}

double test_acc(const datagen::Splits& sp, const robusttrain::PipelineResult& r) {
    return robusttrain::evaluate_test(r.model.params, sp.test).accuracy;
}

std::vector<std::size_t> env_idx(const datagen::EnvironmentDataset& ds, int env) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.examples[i].env == env) idx.push_back(i);
    return idx;
}

Verdict theory() {
    auto b = distkit::run_theory_battery(1000, kSeed);
    std::ostringstream os;
    for (const auto& l : b.lines) os << l.name << " " << l.passed << "/" << l.admissible << "; ";
    return {b.all_passed(), os.str()};
}

Verdict toy() {
    auto cfg = task_for(tasks::Task::toy);
    auto sp = tasks::generate(cfg);
    auto r = robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, Strategy::pi));
    double alpha = r.partitions->alpha.at({0, 1});
    auto row = analysis::correlation_row("toy", sp.train, *r.partitions);
    const auto& c = row.values[2];
    const auto& x = row.values[3];

    std::size_t changed = 0;
    for (const auto& e : sp.test.examples) {
        datagen::Example f = e;
        f.dense[1] = 1.0 - f.dense[1];
        nnkit::InputRef a{false, e.dense, {}}, b{false, f.dense, {}};
        changed += static_cast<std::size_t>(nnkit::predict(r.model.params, a) != nnkit::predict(r.model.params, b));
    }
    double flip = static_cast<double>(changed) / static_cast<double>(sp.test.size());

    bool ok = std::abs(alpha - 0.9) <= 0.02 && c && std::abs(*c - 1.0) <= 0.05 && x && std::abs(*x + 1.0) <= 0.05 &&
              flip < 0.02;
    return {ok, "alpha_2^1=" + num(alpha) + " pearson(E2_1c)=" + num(c) + " pearson(E2_1x)=" + num(x) +
                    " counterfactual_flip=" + num(flip)};
}

Verdict colored() {
    auto cfg = task_for(tasks::Task::colored);
    auto sp = tasks::generate(cfg);
    double erm = test_acc(sp, robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, Strategy::erm)));
    double pi = test_acc(sp, robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, Strategy::pi)));
    double oracle =
        test_acc(sp, robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, Strategy::oracle_dro)));
    bool ok = erm <= 0.30 && pi >= 0.60 && oracle >= pi - 0.05 && std::abs(pi - oracle) <= 0.06;
    return {ok, "erm=" + num(erm) + " pi=" + num(pi) + " oracle=" + num(oracle)};
}

Verdict tokens() {
    auto cfg = task_for(tasks::Task::tokens);
    auto sp = tasks::generate(cfg);
    double r0 = *datagen::spurious_label_pearson(sp.train, env_idx(sp.train, 0));
    double r1 = *datagen::spurious_label_pearson(sp.train, env_idx(sp.train, 1));
    auto pi_run = robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, Strategy::pi));
    auto row = analysis::correlation_row("tokens", sp.train, *pi_run.partitions);
    double pi = test_acc(sp, pi_run);
    double erm = test_acc(sp, robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, Strategy::erm)));
    double dro = test_acc(sp, robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, Strategy::env_dro)));
    const auto& x = row.values[3];
    bool ok = std::abs(r0 - 0.8) <= 0.02 && std::abs(r1 - 0.6) <= 0.02 && x && *x < 0 && pi - erm >= 0.15 &&
              pi - dro >= 0.05;
    return {ok, "train corr=(" + num(r0) + ", " + num(r1) + ") E2_1x=" + num(x) + " E1_2x=" + num(row.values[5]) +
                    " pi=" + num(pi) + " erm=" + num(erm) + " env_dro=" + num(dro)};
}

Verdict sweep() {
    auto cfg = task_for(tasks::Task::tokens);
    auto strat = tasks::preset_strategy(cfg.task);
    auto runner = [&](double a, double b, std::uint64_t seed, bool control) {
        auto r = tasks::run_pair(cfg, strat, a, b, seed, control);
        return analysis::CellOutcome{r.pi_acc, r.erm_acc};
    };
    analysis::SweepOptions opt;
    opt.seed = kSeed;
    auto g = analysis::env_gap_sweep({0.80, 0.83, 0.86, 0.89}, runner, opt);
    bool controls_ok = true;
    std::ostringstream os;
    os << "spearman(gap, pi)=" << num(g.summary.spearman_gap_acc) << " controls pi/erm:";
    for (const auto& c : g.cells) {
        if (!c.control) continue;
        os << " " << num(c.pi_acc, 3) << "/" << num(c.erm_acc, 3);
        controls_ok = controls_ok && c.ok && c.erm_acc && std::abs(c.pi_acc - *c.erm_acc) <= 0.05;
    }
    bool ok = g.n_ok() == g.cells.size() && g.summary.spearman_gap_acc && *g.summary.spearman_gap_acc > 0 && controls_ok;
    return {ok, os.str()};
}

Verdict attributed() {
    auto cfg = task_for(tasks::Task::attributed);
    auto sp = tasks::generate(cfg);
    auto attrs = analysis::attribute_names(sp.test);
    auto worst = [&](Strategy s, robusttrain::PipelineResult* keep = nullptr) {
        auto r = robusttrain::run_strategy(sp.train, sp.val, strategy_for(cfg.task, s));
        double w = analysis::attribute_report(r.model.params, sp.test, attrs).grand_worst;
        if (keep) *keep = std::move(r);
        return w;
    };
    robusttrain::PipelineResult pi_run;
    double pi = worst(Strategy::pi, &pi_run);
    double erm = worst(Strategy::erm);
    double dro = worst(Strategy::env_dro);
    auto t = analysis::partition_attr_correlations(*pi_run.partitions, sp.train, attrs);
    std::size_t lc = t.n_label_correlated(), fl = t.n_flagged();
    bool ok = attrs.size() == 6 && pi > erm && pi > dro && lc > 0 && 2 * fl >= lc;
    return {ok, std::to_string(attrs.size()) + " attributes; grand worst-group pi=" + num(pi) + " erm=" + num(erm) +
                    " env_dro=" + num(dro) + " flagged=" + std::to_string(fl) + "/" + std::to_string(lc)};
}

Verdict hygiene() {
    std::ostringstream os;
    bool ok = true;

    // Gradient checks on a dense and a sparse task, both architectures.
    auto toy_data = datagen::gen_toy(40, {{0.0, 0.1}, 0.8, kSeed});
    datagen::VocabConfig v;
    v.vocab_size = 80;
    v.n_sentiment = 20;
    v.len_lo = 6;
    v.len_hi = 10;
    auto tok_data = datagen::gen_token_text(30, {{0.9, 0.8}, 0.8, kSeed}, v);
    double worst = 0.0;
    for (const auto* ds : {&toy_data, &tok_data})
        for (auto arch : {nnkit::Arch::linear, nnkit::Arch::mlp}) {
            auto m = nnkit::ModelParams::init(arch, ds->n_features, ds->n_classes, 16, 0.2, kSeed);
            nnkit::Rng rng(kSeed);
            std::uniform_real_distribution<double> u(-0.5, 0.5);
            for (double& w : m.w) w = u(rng);
            std::vector<std::size_t> idx(ds->size());
            std::iota(idx.begin(), idx.end(), 0);
            auto r = nnkit::grad_check(m, datagen::TrainingView(*ds), idx, 1e-3, kSeed);
            ok = ok && r.pass;
            worst = std::max(worst, r.worst);
        }
    os << "grad_check worst rel err=" << worst;

    // Bit reproducibility: data and every strategy on the toy task, PI on tokens.
    auto tc = task_for(tasks::Task::toy);
    tc.n = 5000;
    auto a = tasks::generate(tc), b = tasks::generate(tc);
    bool same = datagen::to_ndjson(a.train) == datagen::to_ndjson(b.train) &&
                datagen::to_ndjson(a.test) == datagen::to_ndjson(b.test);
    for (auto s : {Strategy::erm, Strategy::env_dro, Strategy::oracle_dro, Strategy::pi}) {
        auto c = strategy_for(tc.task, s);
        same = same && robusttrain::run_strategy(a.train, a.val, c).model.params.w ==
                           robusttrain::run_strategy(b.train, b.val, c).model.params.w;
    }
    auto kc = task_for(tasks::Task::tokens);
    kc.n = 3000;
    auto k = tasks::generate(kc);
    auto kpi = strategy_for(kc.task, Strategy::pi);
    same = same && robusttrain::run_strategy(k.train, k.val, kpi).model.params.w ==
                       robusttrain::run_strategy(k.train, k.val, kpi).model.params.w;
    ok = ok && same;
    os << "; reproducible=" << (same ? "yes" : "no");

    // Argmax group: every traced step updates the group with the largest batch loss.
    auto dc = strategy_for(tc.task, Strategy::env_dro);
    dc.trace = true;
    dc.dropout = 0.1;
    auto run = robusttrain::run_strategy(a.train, a.val, dc);
    std::size_t bad = 0;
    for (const auto& st : run.model.trace) {
        auto it = std::max_element(st.group_losses.begin(), st.group_losses.end());
        auto arg = static_cast<std::size_t>(it - st.group_losses.begin());
        if (st.selected != arg || std::abs(st.update_loss - *it) > 1e-12 * std::max(1.0, *it)) ++bad;
    }
    ok = ok && bad == 0 && !run.model.trace.empty();
    os << "; argmax violations=" << bad << "/" << run.model.trace.size() << " steps";
    return {ok, os.str()};
}

} // namespace

int main() {
    criterion(1, 30, theory);
    criterion(2, 60, toy);
    criterion(3, 600, colored);
    criterion(4, 300, tokens);
    criterion(5, 900, sweep);
    criterion(6, 600, attributed);
    criterion(7, 0, hygiene);
    std::cout << (failures ? "ACCEPTANCE: " + std::to_string(failures) + " criteria failed" : std::string("ACCEPTANCE: all criteria passed"))
              << std::endl;
    return failures ? 1 : 0;
}
