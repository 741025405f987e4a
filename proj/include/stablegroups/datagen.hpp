#pragma once

// Synthetic environment generators, IDX ingestion, splits and the NDJSON
// dataset format.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stablegroups/error.hpp"

namespace stablegroups::datagen {

using SparseEntry = std::pair<std::uint32_t, double>;

struct Example {
    bool sparse = false;
    std::vector<double> dense;
    std::vector<SparseEntry> fs; // strictly increasing indices
    int y = 0;
    int env = 0;
    int sp = 0; // hidden spurious value
    std::map<std::string, int> attrs;
};

struct EnvironmentDataset {
    std::vector<Example> examples;
    int n_classes = 2;
    int n_features = 0;
    std::vector<int> env_ids;
    nlohmann::json meta = nlohmann::json::object();

    /// Throws DataError when any Example is inconsistent with K, d or env_ids.
    void validate() const;
    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

/// Non-owning view that hides the spurious value and attributes from
/// training code. Only oracle grouping and analysis read `sp`.
class TrainingView {
public:
    explicit TrainingView(const EnvironmentDataset& ds) : ds_(&ds) {}
    std::size_t size() const { return ds_->examples.size(); }
    int n_classes() const { return ds_->n_classes; }
    int n_features() const { return ds_->n_features; }
    const std::vector<int>& env_ids() const { return ds_->env_ids; }
    int label(std::size_t i) const { return ds_->examples[i].y; }
    int env(std::size_t i) const { return ds_->examples[i].env; }
    bool is_sparse(std::size_t i) const { return ds_->examples[i].sparse; }
    std::span<const double> dense(std::size_t i) const { return ds_->examples[i].dense; }
    std::span<const SparseEntry> sparse(std::size_t i) const { return ds_->examples[i].fs; }

private:
    const EnvironmentDataset* ds_;
};

struct SpuriousConfig {
    std::vector<double> eta;
    double label_keep = 0.8;
    std::uint64_t seed = 0;
};

EnvironmentDataset gen_toy(std::size_t n_per_env, const SpuriousConfig& cfg);

struct IdxData {
    std::size_t rows = 0, cols = 0;
    std::vector<double> features; // row-major, scaled to [0,1]
    std::vector<int> labels;
};

/// Latent-signal source for the colored construction.
struct ColoredBase {
    enum class Kind { synthetic_clusters, idx } kind = Kind::synthetic_clusters;
    int d = 64;
    double center_scale = 0.5; // per-coordinate std of cluster centers
    double offset = 1.0;       // added to every synthetic coordinate, like positive pixel mass
    const IdxData* idx = nullptr;
};

EnvironmentDataset gen_colored_multiclass(std::size_t n_per_env, int K, const SpuriousConfig& cfg,
                                          const ColoredBase& base);

std::vector<double> channelize(std::span<const double> base, int color, int K);

struct VocabConfig {
    int vocab_size = 3000;
    int n_sentiment = 400; // half positive, half negative
    double p_stable = 0.8;
    int len_lo = 20, len_hi = 40;
    int sentiment_lo = 1, sentiment_hi = 3;

    int art_pos() const { return vocab_size - 2; }
    int art_neg() const { return vocab_size - 1; }
};

EnvironmentDataset gen_token_text(std::size_t n_per_env, const SpuriousConfig& cfg,
                                  const VocabConfig& vocab);

struct AttributeTarget {
    std::string name;
    std::vector<double> corr; // Pearson vs label, one per environment
};

struct AttributedConfig {
    std::vector<AttributeTarget> attributes;
    std::string env_attribute = "env";
    int n_envs = 2;
    int stable_dims = 8;
    double stable_signal = 0.35; // mean shift per stable dim
    double attr_scale = 1.0;     // attribute features are +-attr_scale; env spans [-attr_scale, attr_scale]
    double label_keep = 1.0;     // stable dims encode a clean label kept with this probability
    /// Per environment: Pearson of the shared latent style bit with the label.
    /// Empty means the largest |target| of that environment.
    std::vector<double> latent_corr;
};

/// The environment attribute equals the environment id. The others copy a
/// shared latent style bit z (itself agreeing with the label with
/// probability (1 + s_e) / 2) with probability (1 + r / s_e) / 2, which
/// realizes Pearson target r with uniform label and attribute marginals and
/// makes the attributes correlated with each other.
EnvironmentDataset gen_attributed(std::size_t n_per_env, const AttributedConfig& cfg,
                                  std::uint64_t seed);

// -- IDX ---------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxFile {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;
};

struct IdxBadMagic : DataError {
    using DataError::DataError;
};
struct IdxTruncated : DataError {
    using DataError::DataError;
};
struct IdxCountMismatch : DataError {
    using DataError::DataError;
};

IdxFile read_idx(const std::string& path, std::uint32_t expected_magic);
void write_idx(const std::string& path, const IdxFile& f);
IdxData load_idx(const std::string& images_path, const std::string& labels_path);

// -- splitting ----------------------------------------------------------------

enum class ValSource { train_env, test_env };
std::string to_string(ValSource v);
ValSource parse_val_source(const std::string& s);

struct Splits {
    EnvironmentDataset train, val, test;
};

/// With no test envs, each environment is shuffled and cut by fractions.
/// With test envs, training environments go to train (and val when
/// val_source = train_env) and test environments to test (and val when
/// val_source = test_env); the unused fraction is folded into its sibling.
Splits split(const EnvironmentDataset& ds, const std::array<double, 3>& fractions,
             std::uint64_t seed, ValSource val_source, const std::vector<int>& test_envs = {});

EnvironmentDataset subset(const EnvironmentDataset& ds, std::span<const std::size_t> idx);

// -- NDJSON --------------------------------------------------------------------

void write_ndjson(const EnvironmentDataset& ds, const std::string& path);
EnvironmentDataset read_ndjson(const std::string& path);
std::string to_ndjson(const EnvironmentDataset& ds);

// -- statistics ------------------------------------------------------------------

/// Two-pass Pearson; empty when either variance is zero.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

/// Pearson between the spurious encoding and the label. Binary tasks use the
/// 0/1 values directly; multi-class tasks pool one-vs-rest indicators.
std::optional<double> spurious_label_pearson(const EnvironmentDataset& ds,
                                             std::span<const std::size_t> idx);
std::optional<double> spurious_label_pearson(const EnvironmentDataset& ds);

} // namespace stablegroups::datagen
