#include "stablegroups/tasks.hpp"

#include "stablegroups/error.hpp"
#include "stablegroups/nnkit.hpp"

namespace stablegroups::tasks {

using datagen::ValSource;
using robusttrain::StrategyConfig;

std::string to_string(Task t) {
    switch (t) {
    case Task::toy: return "toy";
    case Task::colored: return "colored";
    case Task::tokens: return "tokens";
    case Task::attributed: return "attributed";
    }
    return "toy";
}

Task parse_task(const std::string& s) {
    if (s == "toy") return Task::toy;
    if (s == "colored") return Task::colored;
    if (s == "tokens") return Task::tokens;
    if (s == "attributed") return Task::attributed;
    throw ConfigError("unknown task '" + s + "' (toy|colored|tokens|attributed)");
}

TaskConfig preset(Task t) {
    TaskConfig c;
    c.task = t;
    switch (t) {
    case Task::toy:
        c.n = 20000;
        c.eta = {0.0, 0.1};
        c.test_eta = 0.9;
        c.K = 2;
        c.label_keep = 0.8;
        break;
    case Task::colored:
        c.n = 25000;
        c.eta = {0.9, 0.8};
        c.test_eta = 0.1;
        c.K = 10;
        c.label_keep = 0.75;
        break;
    case Task::tokens:
        c.n = 10000;
        c.eta = {0.9, 0.8};
        c.test_eta = 0.1;
        c.K = 2;
        break;
    case Task::attributed:
        c.n = 10000;
        c.K = 2;
        c.attributed.attributes = {{"a1", {0.9, 0.7}}, {"a2", {0.8, 0.6}}, {"a3", {0.7, 0.5}},
                                   {"a4", {0.6, 0.4}}, {"a5", {0.5, 0.3}}};
        c.attributed.stable_signal = 1.0;
        c.attributed.label_keep = 0.75;
        break;
    }
    return c;
}

StrategyConfig preset_strategy(Task t) {
    StrategyConfig s;
    if (t == Task::colored) s.weight_decay = 1e-2;
    return s;
}

void TaskConfig::validate() const {
    if (n == 0) throw ConfigError("n must be positive");
    double fsum = fractions[0] + fractions[1] + fractions[2];
    for (double f : fractions)
        if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    if (std::abs(fsum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    if (task == Task::attributed) {
        if (test_eta) throw ConfigError("attributed: test split comes from the training environments; drop test_eta");
        return;
    }
    if (eta.empty()) throw ConfigError("eta list is empty");
    for (double e : eta)
        if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("eta values must be in [0, 1]");
    if (test_eta && !(*test_eta >= 0.0 && *test_eta <= 1.0)) throw ConfigError("test eta must be in [0, 1]");
    if (!test_eta && val_source == ValSource::test_env)
        throw ConfigError("val_source test-env needs a test environment (test_eta)");
}

nlohmann::json TaskConfig::to_json() const {
    nlohmann::json j = {{"task", to_string(task)},
                        {"n", n},
                        {"eta", eta},
                        {"test_eta", test_eta ? nlohmann::json(*test_eta) : nlohmann::json(nullptr)},
                        {"K", K},
                        {"label_keep", label_keep},
                        {"seed", seed},
                        {"val_source", datagen::to_string(val_source)},
                        {"fractions", fractions}};
    if (task == Task::colored) {
        j["colored"] = {{"kind", colored.kind == datagen::ColoredBase::Kind::idx ? "idx" : "synthetic_clusters"},
                        {"d", colored.d},
                        {"center_scale", colored.center_scale},
                        {"offset", colored.offset},
                        {"idx_images", idx_images},
                        {"idx_labels", idx_labels}};
    } else if (task == Task::tokens) {
        j["vocab"] = {{"vocab_size", vocab.vocab_size}, {"n_sentiment", vocab.n_sentiment},
                      {"p_stable", vocab.p_stable},     {"len_lo", vocab.len_lo},
                      {"len_hi", vocab.len_hi},         {"sentiment_lo", vocab.sentiment_lo},
                      {"sentiment_hi", vocab.sentiment_hi}};
    } else if (task == Task::attributed) {
        nlohmann::json attrs = nlohmann::json::array();
        for (const auto& a : attributed.attributes) attrs.push_back({{"name", a.name}, {"corr", a.corr}});
        j["attributed"] = {{"attributes", attrs},
                           {"env_attribute", attributed.env_attribute},
                           {"n_envs", attributed.n_envs},
                           {"stable_dims", attributed.stable_dims},
                           {"stable_signal", attributed.stable_signal},
                           {"attr_scale", attributed.attr_scale},
                           {"label_keep", attributed.label_keep},
                           {"latent_corr", attributed.latent_corr}};
    }
    return j;
}

namespace {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

} // namespace

TaskConfig TaskConfig::merge(TaskConfig c, const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("task config must be a JSON object");
    try {
        take(j, "n", c.n);
        take(j, "eta", c.eta);
        if (j.contains("test_eta")) {
            if (j.at("test_eta").is_null()) c.test_eta.reset();
            else c.test_eta = j.at("test_eta").get<double>();
        }
        take(j, "K", c.K);
        take(j, "label_keep", c.label_keep);
        take(j, "seed", c.seed);
        if (j.contains("val_source")) c.val_source = datagen::parse_val_source(j.at("val_source").get<std::string>());
        if (j.contains("fractions")) {
            auto f = j.at("fractions").get<std::vector<double>>();
            if (f.size() != 3) throw ConfigError("fractions needs three values");
            c.fractions = {f[0], f[1], f[2]};
        }
        if (j.contains("colored")) {
            const auto& o = j.at("colored");
            if (o.contains("kind")) {
                auto k = o.at("kind").get<std::string>();
                if (k == "idx") c.colored.kind = datagen::ColoredBase::Kind::idx;
                else if (k == "synthetic_clusters") c.colored.kind = datagen::ColoredBase::Kind::synthetic_clusters;
                else throw ConfigError("colored.kind must be synthetic_clusters or idx");
            }
            take(o, "d", c.colored.d);
            take(o, "center_scale", c.colored.center_scale);
            take(o, "offset", c.colored.offset);
            take(o, "idx_images", c.idx_images);
            take(o, "idx_labels", c.idx_labels);
        }
        if (j.contains("vocab")) {
            const auto& o = j.at("vocab");
            take(o, "vocab_size", c.vocab.vocab_size);
            take(o, "n_sentiment", c.vocab.n_sentiment);
            take(o, "p_stable", c.vocab.p_stable);
            take(o, "len_lo", c.vocab.len_lo);
            take(o, "len_hi", c.vocab.len_hi);
            take(o, "sentiment_lo", c.vocab.sentiment_lo);
            take(o, "sentiment_hi", c.vocab.sentiment_hi);
        }
        if (j.contains("attributed")) {
            const auto& o = j.at("attributed");
            if (o.contains("attributes")) {
                c.attributed.attributes.clear();
                for (const auto& a : o.at("attributes"))
                    c.attributed.attributes.push_back(
                        {a.at("name").get<std::string>(), a.at("corr").get<std::vector<double>>()});
            }
            take(o, "env_attribute", c.attributed.env_attribute);
            take(o, "n_envs", c.attributed.n_envs);
            take(o, "stable_dims", c.attributed.stable_dims);
            take(o, "stable_signal", c.attributed.stable_signal);
            take(o, "attr_scale", c.attributed.attr_scale);
            take(o, "label_keep", c.attributed.label_keep);
            take(o, "latent_corr", c.attributed.latent_corr);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad task config: ") + e.what());
    }
    return c;
}

datagen::Splits generate(const TaskConfig& cfg) {
    cfg.validate();
    datagen::EnvironmentDataset ds;
    std::vector<int> test_envs;
    datagen::SpuriousConfig sc;
    sc.eta = cfg.eta;
    sc.label_keep = cfg.label_keep;
    sc.seed = cfg.seed;
    if (cfg.test_eta) {
        sc.eta.push_back(*cfg.test_eta);
        test_envs.push_back(static_cast<int>(sc.eta.size()) - 1);
    }
    switch (cfg.task) {
    case Task::toy:
        ds = datagen::gen_toy(cfg.n, sc);
        break;
    case Task::colored: {
        datagen::ColoredBase base = cfg.colored;
        datagen::IdxData idx;
        if (base.kind == datagen::ColoredBase::Kind::idx) {
            if (cfg.idx_images.empty() || cfg.idx_labels.empty())
                throw ConfigError("colored idx base needs idx_images and idx_labels");
            idx = datagen::load_idx(cfg.idx_images, cfg.idx_labels);
            base.idx = &idx;
        }
        ds = datagen::gen_colored_multiclass(cfg.n, cfg.K, sc, base);
        break;
    }
    case Task::tokens:
        ds = datagen::gen_token_text(cfg.n, sc, cfg.vocab);
        break;
    case Task::attributed:
        ds = datagen::gen_attributed(cfg.n, cfg.attributed, cfg.seed);
        break;
    }
    return datagen::split(ds, cfg.fractions, cfg.seed, cfg.val_source, test_envs);
}

PairResult run_pair(TaskConfig cfg, const StrategyConfig& strategy, double eta_a, double eta_b,
                    std::uint64_t seed, bool with_erm) {
    cfg.eta = {eta_a, eta_b};
    cfg.seed = seed;
    auto sp = generate(cfg);
    StrategyConfig s = strategy;
    s.seed = seed;
    s.val_source = cfg.val_source;
    s.strategy = robusttrain::Strategy::pi;
    PairResult out;
    out.pi_acc = robusttrain::evaluate_test(robusttrain::run_strategy(sp.train, sp.val, s).model.params, sp.test).accuracy;
    if (with_erm) {
        s.strategy = robusttrain::Strategy::erm;
        out.erm_acc =
            robusttrain::evaluate_test(robusttrain::run_strategy(sp.train, sp.val, s).model.params, sp.test).accuracy;
    }
    return out;
}

} // namespace stablegroups::tasks
