#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <unistd.h>

#include "stablegroups/datagen.hpp"

using namespace stablegroups;
using namespace stablegroups::datagen;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("sg_datagen_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::size_t> env_idx(const EnvironmentDataset& ds, int env) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.examples[i].env == env) idx.push_back(i);
    return idx;
}

double env_corr(const EnvironmentDataset& ds, int env) { return *spurious_label_pearson(ds, env_idx(ds, env)); }

double attr_corr(const EnvironmentDataset& ds, int env, const std::string& a) {
    std::vector<double> x, y;
    for (const auto& e : ds.examples)
        if (e.env == env) {
            x.push_back(e.attrs.at(a));
            y.push_back(e.y);
        }
    return *pearson(x, y);
}

} // namespace

TEST_CASE("pearson matches a reference value") {
    std::vector<double> a{1, 2, 3, 4, 5.5}, b{2, 1.5, 3.5, 3, 6};
    CHECK(*pearson(a, b) == doctest::Approx(0.889803330337662).epsilon(1e-12));
    std::vector<double> c{1, 1, 1, 1, 1};
    CHECK_FALSE(pearson(a, c).has_value());
    std::vector<double> d{1, 2};
    CHECK_THROWS_AS(pearson(a, d), DataError);
}

TEST_CASE("toy environments flip x2 with probability eta") {
    auto ds = gen_toy(20000, {{0.0, 0.1, 0.9}, 0.8, 3});
    ds.validate();
    CHECK(ds.size() == 60000);
    CHECK(env_corr(ds, 0) == doctest::Approx(1.0));
    CHECK(std::abs(env_corr(ds, 1) - 0.8) < 0.02);
    CHECK(std::abs(env_corr(ds, 2) + 0.8) < 0.02);
    for (const auto& e : ds.examples) CHECK(e.sp == static_cast<int>(e.dense[1]));
}

TEST_CASE("token environments hit their correlation") {
    auto ds = gen_token_text(10000, {{0.9, 0.8, 0.5}, 0.8, 5}, VocabConfig{});
    ds.validate();
    CHECK(std::abs(env_corr(ds, 0) - 0.8) < 0.02);
    CHECK(std::abs(env_corr(ds, 1) - 0.6) < 0.02);
    CHECK(std::abs(env_corr(ds, 2)) < 0.02);
    VocabConfig v;
    std::size_t pos = 0;
    for (const auto& e : ds.examples) {
        int art = 0;
        for (auto [k, c] : e.fs)
            if (static_cast<int>(k) >= v.art_pos()) {
                ++art;
                CHECK(c == 1.0);
                CHECK((static_cast<int>(k) == v.art_pos()) == (e.sp == 1));
            }
        CHECK(art == 1);
        pos += static_cast<std::size_t>(e.y);
    }
    CHECK(std::abs(static_cast<double>(pos) / static_cast<double>(ds.size()) - 0.5) < 0.02);
}

TEST_CASE("token generator rejects impossible vocabularies") {
    VocabConfig v;
    v.n_sentiment = 3;
    CHECK_THROWS_AS(gen_token_text(10, {{0.9}, 0.8, 1}, v), ConfigError);
    v = VocabConfig{};
    v.vocab_size = 100;
    v.n_sentiment = 100;
    CHECK_THROWS_AS(gen_token_text(10, {{0.9}, 0.8, 1}, v), ConfigError);
}

TEST_CASE("colored examples live in their color channel") {
    const int K = 10;
    auto ds = gen_colored_multiclass(20000, K, {{0.9, 0.8}, 0.75, 2}, ColoredBase{});
    ds.validate();
    const auto d = static_cast<std::uint32_t>(ds.n_features / K);
    for (std::size_t i = 0; i < ds.size(); i += 97) {
        const auto& e = ds.examples[i];
        for (auto [k, v] : e.fs) CHECK(k / d == static_cast<std::uint32_t>(e.sp));
    }
    CHECK(std::abs(env_corr(ds, 0) - 8.0 / 9.0) < 0.02);
    CHECK(std::abs(env_corr(ds, 1) - 7.0 / 9.0) < 0.02);
}

TEST_CASE("channelize places the base in one block") {
    std::vector<double> base{1, 2, 3};
    auto c = channelize(base, 2, 4);
    REQUIRE(c.size() == 12);
    CHECK(c[6] == 1);
    CHECK(c[8] == 3);
    CHECK(std::accumulate(c.begin(), c.end(), 0.0) == 6);
    CHECK_THROWS_AS(channelize(base, 4, 4), DataError);
}

TEST_CASE("attributed generator realizes targets") {
    AttributedConfig cfg;
    cfg.attributes = {{"a", {0.6, 0.2}}, {"b", {-0.3, 0.4}}, {"c", {0.0, 0.0}}};
    cfg.label_keep = 0.75;
    auto ds = gen_attributed(20000, cfg, 9);
    ds.validate();
    CHECK(ds.n_features == cfg.stable_dims + 1 + 3);
    for (const auto& t : cfg.attributes)
        for (int e = 0; e < 2; ++e) {
            INFO(t.name << " env " << e);
            CHECK(std::abs(attr_corr(ds, e, t.name) - t.corr[static_cast<std::size_t>(e)]) < 0.03);
        }
    for (const auto& e : ds.examples) {
        CHECK(e.attrs.at("env") == e.env);
        CHECK(e.sp == e.env);
        CHECK(e.dense[static_cast<std::size_t>(cfg.stable_dims)] == (e.env == 0 ? -1.0 : 1.0));
    }
}

TEST_CASE("attributed generator rejects infeasible targets") {
    AttributedConfig cfg;
    cfg.attributes = {{"a", {1.2, 0.2}}};
    CHECK_THROWS_AS(gen_attributed(10, cfg, 1), ConfigError);
    cfg.attributes = {{"a", {0.5, 0.2}}};
    cfg.latent_corr = {0.4, 0.4};
    CHECK_THROWS_AS(gen_attributed(10, cfg, 1), ConfigError);
    cfg.latent_corr.clear();
    cfg.attributes = {{"a", {0.5}}};
    CHECK_THROWS_AS(gen_attributed(10, cfg, 1), ConfigError);
    cfg.attributes = {{"env", {0.5, 0.5}}};
    CHECK_THROWS_AS(gen_attributed(10, cfg, 1), ConfigError);
}

TEST_CASE("generators are deterministic in the seed") {
    auto a = gen_token_text(300, {{0.9, 0.8}, 0.8, 4}, VocabConfig{});
    auto b = gen_token_text(300, {{0.9, 0.8}, 0.8, 4}, VocabConfig{});
    auto c = gen_token_text(300, {{0.9, 0.8}, 0.8, 5}, VocabConfig{});
    CHECK(to_ndjson(a) == to_ndjson(b));
    CHECK(to_ndjson(a) != to_ndjson(c));
}

TEST_CASE("invalid spurious configs") {
    CHECK_THROWS_AS(gen_toy(0, {{0.1}, 0.8, 1}), ConfigError);
    CHECK_THROWS_AS(gen_toy(10, {{}, 0.8, 1}), ConfigError);
    CHECK_THROWS_AS(gen_toy(10, {{1.5}, 0.8, 1}), ConfigError);
}

TEST_CASE("validate catches inconsistent examples") {
    auto ds = gen_toy(5, {{0.1}, 0.8, 1});
    ds.examples[0].y = 2;
    CHECK_THROWS_AS(ds.validate(), DataError);
    ds = gen_toy(5, {{0.1}, 0.8, 1});
    ds.examples[1].dense.push_back(0.0);
    CHECK_THROWS_AS(ds.validate(), DataError);
    ds = gen_toy(5, {{0.1}, 0.8, 1});
    ds.examples[2].env = 7;
    CHECK_THROWS_AS(ds.validate(), DataError);
}

TEST_CASE("NDJSON round trip is exact") {
    auto dir = scratch("ndjson");
    for (const auto& ds : {gen_toy(50, {{0.0, 0.3}, 0.8, 2}), gen_token_text(50, {{0.9}, 0.8, 2}, VocabConfig{})}) {
        auto p = (dir / "d.ndjson").string();
        write_ndjson(ds, p);
        auto back = read_ndjson(p);
        CHECK(to_ndjson(back) == to_ndjson(ds));
        CHECK(back.size() == ds.size());
    }
    AttributedConfig cfg;
    cfg.attributes = {{"a", {0.3, 0.1}}};
    auto at = gen_attributed(20, cfg, 1);
    write_ndjson(at, (dir / "a.ndjson").string());
    auto back = read_ndjson((dir / "a.ndjson").string());
    CHECK(back.examples[3].attrs == at.examples[3].attrs);
    CHECK_THROWS_AS(read_ndjson((dir / "missing.ndjson").string()), DataError);
    std::ofstream((dir / "bad.ndjson").string()) << "{\"K\":2,\"d\":2,\"envs\":[0],\"meta\":{}}\n{\"f\":[1,2],\"y\":5,\"env\":0}\n";
    CHECK_THROWS_AS(read_ndjson((dir / "bad.ndjson").string()), DataError);
    fs::remove_all(dir);
}

TEST_CASE("split without test environments cuts each environment") {
    auto ds = gen_toy(1000, {{0.0, 0.1}, 0.8, 1});
    auto s = split(ds, {0.6, 0.2, 0.2}, 3, ValSource::train_env);
    CHECK(s.train.size() == 1200);
    CHECK(s.val.size() == 400);
    CHECK(s.test.size() == 400);
    CHECK(env_idx(s.val, 0).size() == 200);
    auto again = split(ds, {0.6, 0.2, 0.2}, 3, ValSource::train_env);
    CHECK(to_ndjson(again.val) == to_ndjson(s.val));
    CHECK_THROWS_AS(split(ds, {0.6, 0.2, 0.3}, 3, ValSource::train_env), ConfigError);
}

TEST_CASE("split with a test environment honors the validation source") {
    auto ds = gen_toy(1000, {{0.0, 0.1, 0.9}, 0.8, 1});
    auto s = split(ds, {0.6, 0.2, 0.2}, 3, ValSource::train_env, {2});
    CHECK(s.train.env_ids == std::vector<int>{0, 1});
    CHECK(s.val.env_ids == std::vector<int>{0, 1});
    CHECK(s.test.env_ids == std::vector<int>{2});
    CHECK(s.test.size() == 1000);
    CHECK(s.train.size() == 1500);
    CHECK(s.val.meta.at("val_source") == "train-env");

    auto t = split(ds, {0.6, 0.2, 0.2}, 3, ValSource::test_env, {2});
    CHECK(t.train.size() == 2000);
    CHECK(t.val.env_ids == std::vector<int>{2});
    CHECK(t.val.size() == 500);
    CHECK(t.test.size() == 500);

    CHECK_THROWS_AS(split(ds, {0.6, 0.2, 0.2}, 3, ValSource::train_env, {5}), DataError);
    CHECK_THROWS_AS(split(ds, {1.0, 0.0, 0.0}, 3, ValSource::train_env), DataError);
}

TEST_CASE("IDX round trip and failures") {
    auto dir = scratch("idx");
    IdxFile img{kIdxImageMagic, {3, 2, 2}, {0, 255, 51, 102, 1, 2, 3, 4, 5, 6, 7, 8}};
    IdxFile lab{kIdxLabelMagic, {3}, {4, 0, 9}};
    write_idx((dir / "img").string(), img);
    write_idx((dir / "lab").string(), lab);
    auto back = read_idx((dir / "img").string(), kIdxImageMagic);
    CHECK(back.dims == img.dims);
    CHECK(back.payload == img.payload);

    auto data = load_idx((dir / "img").string(), (dir / "lab").string());
    CHECK(data.rows == 3);
    CHECK(data.cols == 4);
    CHECK(data.features[1] == doctest::Approx(1.0));
    CHECK(data.features[2] == doctest::Approx(0.2));
    CHECK(data.labels == std::vector<int>{4, 0, 9});

    CHECK_THROWS_AS(read_idx((dir / "img").string(), kIdxLabelMagic), IdxBadMagic);

    IdxFile short_lab{kIdxLabelMagic, {2}, {1, 2}};
    write_idx((dir / "lab2").string(), short_lab);
    CHECK_THROWS_AS(load_idx((dir / "img").string(), (dir / "lab2").string()), IdxCountMismatch);

    {
        std::ifstream is((dir / "img").string(), std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), {});
        std::ofstream os((dir / "trunc").string(), std::ios::binary);
        os << bytes.substr(0, bytes.size() - 3);
    }
    CHECK_THROWS_AS(read_idx((dir / "trunc").string(), kIdxImageMagic), IdxTruncated);
    CHECK_THROWS_AS(read_idx((dir / "nope").string(), kIdxImageMagic), DataError);
    fs::remove_all(dir);
}

TEST_CASE("colored generator accepts an IDX base") {
    IdxData idx;
    idx.rows = 20;
    idx.cols = 4;
    for (std::size_t r = 0; r < idx.rows; ++r) {
        idx.labels.push_back(static_cast<int>(r % 10));
        for (std::size_t c = 0; c < idx.cols; ++c) idx.features.push_back(static_cast<double>(r % 10 + c) / 20.0 + 0.05);
    }
    ColoredBase base;
    base.kind = ColoredBase::Kind::idx;
    base.idx = &idx;
    auto ds = gen_colored_multiclass(200, 10, {{0.9}, 0.75, 1}, base);
    ds.validate();
    CHECK(ds.n_features == 40);
}
