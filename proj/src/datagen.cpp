#include "stablegroups/datagen.hpp"

#include "stablegroups/seed.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace stablegroups::datagen {

using Rng = std::mt19937_64;

namespace {

void check_prob(double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0,1]");
}

void check_common(std::size_t n, const SpuriousConfig& cfg) {
    if (n == 0) throw ConfigError("n_per_env must be positive");
    if (cfg.eta.empty()) throw ConfigError("eta list is empty");
    for (double e : cfg.eta) check_prob(e, "eta");
    check_prob(cfg.label_keep, "label_keep");
}

std::uint64_t env_seed(std::uint64_t seed, int env) {
    return derive_seed(seed, hash_tag("env") + static_cast<std::uint64_t>(env));
}

int other_class(Rng& rng, int K, int avoid) {
    std::uniform_int_distribution<int> pick(0, K - 2);
    int c = pick(rng);
    return c >= avoid ? c + 1 : c;
}

std::vector<int> iota_envs(std::size_t n) {
    std::vector<int> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
    return v;
}

} // namespace

void EnvironmentDataset::validate() const {
    if (n_classes < 2) throw DataError("dataset: K must be >= 2");
    if (n_features <= 0) throw DataError("dataset: d must be positive");
    std::set<int> envs(env_ids.begin(), env_ids.end());
    std::set<int> seen;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Example& e = examples[i];
        auto fail = [&](const std::string& m) {
            throw DataError("example " + std::to_string(i) + ": " + m);
        };
        if (e.y < 0 || e.y >= n_classes) fail("label out of range");
        if (e.sp < 0 || e.sp >= std::max(n_classes, 2)) fail("spurious value out of range");
        if (!envs.count(e.env)) fail("environment not listed in env_ids");
        seen.insert(e.env);
        if (e.sparse) {
            for (std::size_t k = 0; k < e.fs.size(); ++k) {
                if (e.fs[k].first >= static_cast<std::uint32_t>(n_features)) fail("sparse index out of range");
                if (k > 0 && e.fs[k].first <= e.fs[k - 1].first) fail("sparse indices not increasing");
                if (!std::isfinite(e.fs[k].second)) fail("non-finite feature");
            }
        } else {
            if (e.dense.size() != static_cast<std::size_t>(n_features)) fail("feature length mismatch");
            for (double v : e.dense)
                if (!std::isfinite(v)) fail("non-finite feature");
        }
    }
    if (!examples.empty() && seen.size() != envs.size())
        throw DataError("dataset: an env id in env_ids has no examples");
}

// -- toy ---------------------------------------------------------------------

EnvironmentDataset gen_toy(std::size_t n_per_env, const SpuriousConfig& cfg) {
    check_common(n_per_env, cfg);
    EnvironmentDataset ds;
    ds.n_classes = 2;
    ds.n_features = 2;
    ds.env_ids = iota_envs(cfg.eta.size());
    ds.meta = {{"task", "toy"}, {"eta", cfg.eta}, {"label_keep", cfg.label_keep},
               {"seed", cfg.seed}, {"n_per_env", n_per_env}};
    ds.examples.reserve(n_per_env * cfg.eta.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t env = 0; env < cfg.eta.size(); ++env) {
        Rng rng(env_seed(cfg.seed, static_cast<int>(env)));
        for (std::size_t n = 0; n < n_per_env; ++n) {
            int x1 = u(rng) < 0.5 ? 1 : 0;
            int y = u(rng) < cfg.label_keep ? x1 : 1 - x1;
            int x2 = u(rng) < cfg.eta[env] ? 1 - y : y; // eta is the flip probability
            Example e;
            e.dense = {static_cast<double>(x1), static_cast<double>(x2)};
            e.y = y;
            e.env = static_cast<int>(env);
            e.sp = x2;
            ds.examples.push_back(std::move(e));
        }
    }
    return ds;
}

// -- colored -----------------------------------------------------------------

std::vector<double> channelize(std::span<const double> base, int color, int K) {
    if (color < 0 || color >= K) throw DataError("channelize: color out of range");
    std::vector<double> out(base.size() * static_cast<std::size_t>(K), 0.0);
    std::copy(base.begin(), base.end(), out.begin() + static_cast<std::ptrdiff_t>(base.size() * color));
    return out;
}

EnvironmentDataset gen_colored_multiclass(std::size_t n_per_env, int K, const SpuriousConfig& cfg,
                                          const ColoredBase& base) {
    check_common(n_per_env, cfg);
    if (K < 2) throw ConfigError("colored: K must be >= 2");
    const bool use_idx = base.kind == ColoredBase::Kind::idx;
    if (use_idx && (base.idx == nullptr || base.idx->rows == 0))
        throw DataError("colored: idx base requested but no image data loaded");
    const std::size_t d = use_idx ? base.idx->cols : static_cast<std::size_t>(base.d);
    if (d == 0) throw ConfigError("colored: base dimension must be positive");

    // Cluster centers are shared across environments.
    std::vector<double> centers;
    std::vector<std::vector<std::size_t>> by_digit;
    if (use_idx) {
        by_digit.resize(static_cast<std::size_t>(K));
        for (std::size_t r = 0; r < base.idx->rows; ++r) {
            int lab = base.idx->labels[r];
            if (lab >= 0 && lab < K) by_digit[static_cast<std::size_t>(lab)].push_back(r);
        }
        for (const auto& v : by_digit)
            if (v.empty()) throw DataError("colored: idx base lacks a digit class");
    } else {
        Rng crng(derive_seed(cfg.seed, hash_tag("centers")));
        std::normal_distribution<double> g(0.0, base.center_scale);
        centers.resize(static_cast<std::size_t>(K) * d);
        for (double& c : centers) c = g(crng);
    }

    EnvironmentDataset ds;
    ds.n_classes = K;
    ds.n_features = static_cast<int>(d) * K;
    ds.env_ids = iota_envs(cfg.eta.size());
    ds.meta = {{"task", "colored"}, {"eta", cfg.eta}, {"label_keep", cfg.label_keep},
               {"seed", cfg.seed}, {"n_per_env", n_per_env}, {"K", K},
               {"base", use_idx ? "idx" : "synthetic-clusters"}, {"base_d", d}};
    if (!use_idx) {
        ds.meta["center_scale"] = base.center_scale;
        ds.meta["offset"] = base.offset;
    }
    ds.examples.reserve(n_per_env * cfg.eta.size());

    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> digit(0, K - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> feat(d);
    for (std::size_t env = 0; env < cfg.eta.size(); ++env) {
        Rng rng(env_seed(cfg.seed, static_cast<int>(env)));
        for (std::size_t n = 0; n < n_per_env; ++n) {
            int z = digit(rng);
            if (use_idx) {
                const auto& pool = by_digit[static_cast<std::size_t>(z)];
                std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
                std::size_t r = pool[pick(rng)];
                std::copy_n(base.idx->features.begin() + static_cast<std::ptrdiff_t>(r * d), d, feat.begin());
            } else {
                for (std::size_t k = 0; k < d; ++k) feat[k] = base.offset + centers[static_cast<std::size_t>(z) * d + k] + noise(rng);
            }
            int y = u(rng) < cfg.label_keep ? z : other_class(rng, K, z);
            int color = u(rng) < cfg.eta[env] ? y : other_class(rng, K, y);
            Example e;
            e.sparse = true;
            const auto offset = static_cast<std::uint32_t>(static_cast<std::size_t>(color) * d);
            for (std::size_t k = 0; k < d; ++k)
                if (feat[k] != 0.0) e.fs.emplace_back(offset + static_cast<std::uint32_t>(k), feat[k]);
            e.y = y;
            e.env = static_cast<int>(env);
            e.sp = color;
            ds.examples.push_back(std::move(e));
        }
    }
    return ds;
}

// -- token text --------------------------------------------------------------

EnvironmentDataset gen_token_text(std::size_t n_per_env, const SpuriousConfig& cfg,
                                  const VocabConfig& vocab) {
    check_common(n_per_env, cfg);
    check_prob(vocab.p_stable, "p_stable");
    if (vocab.n_sentiment < 2 || vocab.n_sentiment % 2 != 0)
        throw ConfigError("tokens: n_sentiment must be a positive even number");
    if (vocab.vocab_size < vocab.n_sentiment + 3)
        throw ConfigError("tokens: vocabulary too small to reserve filler and artificial tokens");
    if (vocab.sentiment_lo < 0 || vocab.sentiment_hi < vocab.sentiment_lo)
        throw ConfigError("tokens: bad sentiment count range");
    if (vocab.len_lo < vocab.sentiment_hi + 1 || vocab.len_hi < vocab.len_lo)
        throw ConfigError("tokens: document length range cannot hold the sentiment tokens");

    EnvironmentDataset ds;
    ds.n_classes = 2;
    ds.n_features = vocab.vocab_size;
    ds.env_ids = iota_envs(cfg.eta.size());
    ds.meta = {{"task", "tokens"}, {"eta", cfg.eta}, {"seed", cfg.seed}, {"n_per_env", n_per_env},
               {"vocab", {{"V", vocab.vocab_size}, {"n_sentiment", vocab.n_sentiment},
                          {"p_stable", vocab.p_stable}, {"len", {vocab.len_lo, vocab.len_hi}},
                          {"sentiment", {vocab.sentiment_lo, vocab.sentiment_hi}}}}};
    ds.examples.reserve(n_per_env * cfg.eta.size());

    const int half = vocab.n_sentiment / 2;
    const int filler_lo = vocab.n_sentiment, filler_hi = vocab.vocab_size - 3;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> len(vocab.len_lo, vocab.len_hi);
    std::uniform_int_distribution<int> count(vocab.sentiment_lo, vocab.sentiment_hi);
    std::uniform_int_distribution<int> word(0, half - 1);
    std::uniform_int_distribution<int> filler(filler_lo, filler_hi);
    std::map<int, int> bag;
    for (std::size_t env = 0; env < cfg.eta.size(); ++env) {
        Rng rng(env_seed(cfg.seed, static_cast<int>(env)));
        for (std::size_t n = 0; n < n_per_env; ++n) {
            bag.clear();
            int y = u(rng) < 0.5 ? 1 : 0;
            int length = len(rng);
            int m = count(rng);
            for (int k = 0; k < m; ++k) {
                int polarity = u(rng) < vocab.p_stable ? y : 1 - y;
                ++bag[(polarity == 1 ? 0 : half) + word(rng)];
            }
            for (int k = 0; k < length - m - 1; ++k) ++bag[filler(rng)];
            int art = u(rng) < cfg.eta[env] ? y : 1 - y;
            ++bag[art == 1 ? vocab.art_pos() : vocab.art_neg()];

            Example e;
            e.sparse = true;
            for (auto [tok, c] : bag) e.fs.emplace_back(static_cast<std::uint32_t>(tok), c);
            e.y = y;
            e.env = static_cast<int>(env);
            e.sp = art;
            ds.examples.push_back(std::move(e));
        }
    }
    return ds;
}

// -- attributed ----------------------------------------------------------------

EnvironmentDataset gen_attributed(std::size_t n_per_env, const AttributedConfig& cfg,
                                  std::uint64_t seed) {
    if (n_per_env == 0) throw ConfigError("n_per_env must be positive");
    if (cfg.n_envs < 2) throw ConfigError("attributed: need at least two environments");
    if (cfg.stable_dims < 0) throw ConfigError("attributed: stable_dims must be >= 0");
    if (!(cfg.label_keep > 0.5 && cfg.label_keep <= 1.0))
        throw ConfigError("attributed: label_keep must be in (0.5, 1]");
    std::set<std::string> names{cfg.env_attribute};
    for (const auto& a : cfg.attributes) {
        if (!names.insert(a.name).second) throw ConfigError("attributed: duplicate attribute " + a.name);
        if (a.corr.size() != static_cast<std::size_t>(cfg.n_envs))
            throw ConfigError("attributed: attribute " + a.name + " needs one target per environment");
        for (double r : a.corr)
            if (!(std::abs(r) <= 1.0))
                throw ConfigError("attributed: infeasible correlation target for " + a.name);
    }
    std::vector<double> latent(static_cast<std::size_t>(cfg.n_envs), 0.0);
    if (!cfg.latent_corr.empty()) {
        if (cfg.latent_corr.size() != latent.size())
            throw ConfigError("attributed: latent_corr needs one value per environment");
        latent = cfg.latent_corr;
    } else {
        for (const auto& a : cfg.attributes)
            for (std::size_t e = 0; e < latent.size(); ++e) latent[e] = std::max(latent[e], std::abs(a.corr[e]));
    }
    for (std::size_t e = 0; e < latent.size(); ++e) {
        if (!(std::abs(latent[e]) <= 1.0)) throw ConfigError("attributed: latent_corr must be in [-1, 1]");
        for (const auto& a : cfg.attributes)
            if (std::abs(a.corr[e]) > std::abs(latent[e]) + 1e-12)
                throw ConfigError("attributed: target for " + a.name + " exceeds the latent correlation in env " +
                                  std::to_string(e));
    }

    EnvironmentDataset ds;
    ds.n_classes = 2;
    ds.n_features = cfg.stable_dims + 1 + static_cast<int>(cfg.attributes.size());
    ds.env_ids = iota_envs(static_cast<std::size_t>(cfg.n_envs));
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : cfg.attributes) attrs.push_back({{"name", a.name}, {"corr", a.corr}});
    ds.meta = {{"task", "attributed"}, {"seed", seed}, {"n_per_env", n_per_env},
               {"env_attribute", cfg.env_attribute}, {"attributes", attrs},
               {"stable_dims", cfg.stable_dims}, {"stable_signal", cfg.stable_signal},
               {"attr_scale", cfg.attr_scale}, {"label_keep", cfg.label_keep}, {"latent_corr", latent}};
    ds.examples.reserve(n_per_env * static_cast<std::size_t>(cfg.n_envs));

    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int env = 0; env < cfg.n_envs; ++env) {
        Rng rng(env_seed(seed, env));
        for (std::size_t n = 0; n < n_per_env; ++n) {
            Example e;
            const int clean = u(rng) < 0.5 ? 1 : 0;
            e.y = u(rng) < cfg.label_keep ? clean : 1 - clean;
            e.env = env;
            e.sp = env;
            const double sign = clean == 1 ? 1.0 : -1.0;
            e.dense.reserve(static_cast<std::size_t>(ds.n_features));
            for (int k = 0; k < cfg.stable_dims; ++k) e.dense.push_back(sign * cfg.stable_signal + noise(rng));
            e.attrs[cfg.env_attribute] = env;
            const double span = static_cast<double>(cfg.n_envs - 1);
            e.dense.push_back((2.0 * env - span) / span * cfg.attr_scale);
            const double s_env = latent[static_cast<std::size_t>(env)];
            const int z = u(rng) < 0.5 * (1.0 + s_env) ? e.y : 1 - e.y;
            for (const auto& a : cfg.attributes) {
                double r = a.corr[static_cast<std::size_t>(env)];
                double copy = s_env == 0.0 ? 0.5 : 0.5 * (1.0 + r / s_env);
                int v = u(rng) < copy ? z : 1 - z;
                e.attrs[a.name] = v;
                e.dense.push_back((2 * v - 1) * cfg.attr_scale);
            }
            ds.examples.push_back(std::move(e));
        }
    }
    return ds;
}

// -- splitting ---------------------------------------------------------------------

std::string to_string(ValSource v) { return v == ValSource::train_env ? "train-env" : "test-env"; }

ValSource parse_val_source(const std::string& s) {
    if (s == "train-env") return ValSource::train_env;
    if (s == "test-env") return ValSource::test_env;
    throw ConfigError("val source must be train-env or test-env, got '" + s + "'");
}

EnvironmentDataset subset(const EnvironmentDataset& ds, std::span<const std::size_t> idx) {
    EnvironmentDataset out;
    out.n_classes = ds.n_classes;
    out.n_features = ds.n_features;
    out.meta = ds.meta;
    std::set<int> envs;
    out.examples.reserve(idx.size());
    for (std::size_t i : idx) {
        out.examples.push_back(ds.examples.at(i));
        envs.insert(ds.examples[i].env);
    }
    out.env_ids.assign(envs.begin(), envs.end());
    return out;
}

Splits split(const EnvironmentDataset& ds, const std::array<double, 3>& fractions,
             std::uint64_t seed, ValSource val_source, const std::vector<int>& test_envs) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw ConfigError("split: fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

    std::map<int, std::vector<std::size_t>> by_env;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) by_env[ds.examples[i].env].push_back(i);
    for (int t : test_envs)
        if (!by_env.count(t)) throw DataError("split: test environment " + std::to_string(t) + " has no examples");

    std::vector<std::size_t> tr, va, te;
    Rng rng(seed);
    // Cuts an environment's shuffled indices into up to three consecutive pieces.
    auto cut = [&](std::vector<std::size_t>& idx, double a, double b,
                   std::vector<std::size_t>* first, std::vector<std::size_t>* second,
                   std::vector<std::size_t>* third) {
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n = static_cast<double>(idx.size());
        auto n1 = static_cast<std::size_t>(std::llround(a * n));
        auto n2 = std::min(idx.size() - n1, static_cast<std::size_t>(std::llround(b * n)));
        if (!third) n2 = idx.size() - n1;
        first->insert(first->end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n1));
        second->insert(second->end(), idx.begin() + static_cast<std::ptrdiff_t>(n1),
                       idx.begin() + static_cast<std::ptrdiff_t>(n1 + n2));
        if (third)
            third->insert(third->end(), idx.begin() + static_cast<std::ptrdiff_t>(n1 + n2), idx.end());
    };

    for (auto& [env, idx] : by_env) {
        const bool is_test = std::find(test_envs.begin(), test_envs.end(), env) != test_envs.end();
        if (test_envs.empty()) {
            cut(idx, fractions[0], fractions[1], &tr, &va, &te);
        } else if (!is_test) {
            if (val_source == ValSource::train_env)
                cut(idx, fractions[0] / (fractions[0] + fractions[1]), 0.0, &tr, &va, nullptr);
            else
                tr.insert(tr.end(), idx.begin(), idx.end());
        } else {
            if (val_source == ValSource::test_env)
                cut(idx, fractions[1] / (fractions[1] + fractions[2]), 0.0, &va, &te, nullptr);
            else
                te.insert(te.end(), idx.begin(), idx.end());
        }
    }
    if (tr.empty() || va.empty() || te.empty()) throw DataError("split: a split came out empty");
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    std::sort(te.begin(), te.end());
    Splits s{subset(ds, tr), subset(ds, va), subset(ds, te)};
    s.val.meta["val_source"] = to_string(val_source);
    return s;
}

// -- statistics ------------------------------------------------------------------

std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DataError("pearson: length mismatch");
    if (a.size() < 2) return std::nullopt;
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

std::optional<double> spurious_label_pearson(const EnvironmentDataset& ds,
                                             std::span<const std::size_t> idx) {
    std::vector<double> a, b;
    if (ds.n_classes == 2) {
        a.reserve(idx.size());
        b.reserve(idx.size());
        for (std::size_t i : idx) {
            a.push_back(ds.examples[i].sp);
            b.push_back(ds.examples[i].y);
        }
    } else {
        a.reserve(idx.size() * static_cast<std::size_t>(ds.n_classes));
        b.reserve(a.capacity());
        for (int c = 0; c < ds.n_classes; ++c)
            for (std::size_t i : idx) {
                a.push_back(ds.examples[i].sp == c ? 1.0 : 0.0);
                b.push_back(ds.examples[i].y == c ? 1.0 : 0.0);
            }
    }
    return pearson(a, b);
}

std::optional<double> spurious_label_pearson(const EnvironmentDataset& ds) {
    std::vector<std::size_t> all(ds.examples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return spurious_label_pearson(ds, all);
}

} // namespace stablegroups::datagen
