#pragma once

// Diagnostic tables: spurious/label correlations per partition, the
// environment-gap sweep, per-attribute group accuracy and partition
// attribute correlations, plus CSV/JSON emission.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stablegroups/datagen.hpp"
#include "stablegroups/robusttrain.hpp"

namespace stablegroups::analysis {

using datagen::EnvironmentDataset;
using robusttrain::PartitionedData;

/// Six-significant-digit rendering shared by every CSV; "NA" for undefined.
std::string fmt6(double v);
std::string fmt6(const std::optional<double>& v);

// -- correlation table -------------------------------------------------------------

struct CorrelationRow {
    std::string dataset;
    // E1, E2, E2_1c, E2_1x, E1_2c, E1_2x. E1/E2 are environments 0 and 1;
    // E2_1c is E2 restricted to examples f_1 (trained on E1) gets right.
    std::array<std::optional<double>, 6> values;

    bool operator==(const CorrelationRow&) const = default;
};

struct CorrelationTable {
    static constexpr std::array<const char*, 7> kColumns{"dataset", "E1", "E2", "E2_1c", "E2_1x", "E1_2c", "E1_2x"};
    std::vector<CorrelationRow> rows;

    std::string to_csv() const;
    nlohmann::json to_json() const;
    static CorrelationTable from_json(const nlohmann::json& j);
    bool operator==(const CorrelationTable&) const = default;
};

/// One row from environments 0 and 1 of `data` and the stage-2 partition of
/// the same data. Missing (dropped) partition groups and zero-variance
/// subsets come out undefined. Throws DataError when `data` lacks env 0 or 1.
CorrelationRow correlation_row(const std::string& name, const EnvironmentDataset& data,
                               const PartitionedData& partitions);

// -- environment-gap sweep -------------------------------------------------------

struct CellOutcome {
    double pi_acc = 0.0;
    std::optional<double> erm_acc;
};

/// Runs one cell: the full PI pipeline on training pair (eta_a, eta_b), plus
/// ERM when `control` is set.
using CellRunner = std::function<CellOutcome(double eta_a, double eta_b, std::uint64_t seed, bool control)>;

struct SweepCell {
    double eta_a = 0.0, eta_b = 0.0;
    bool control = false; // eta_a == eta_b
    bool ok = false;
    std::string error;
    double pi_acc = 0.0;
    std::optional<double> erm_acc;

    double gap() const;
    bool operator==(const SweepCell&) const = default;
};

struct SweepSummary {
    std::optional<double> spearman_gap_acc;    // over successful gap cells
    std::vector<std::pair<double, double>> mean_by_gap;   // gap -> mean PI accuracy
    std::vector<std::pair<double, double>> mean_by_min_eta;
    std::optional<double> max_control_excess;  // max over controls of PI - ERM

    bool operator==(const SweepSummary&) const = default;
};

struct SweepGrid {
    std::vector<double> etas; // deduplicated, ascending
    std::vector<SweepCell> cells; // pairs a <= b in row-major order
    std::uint64_t seed = 0;
    SweepSummary summary;

    std::size_t n_ok() const;
    std::string to_csv() const; // matrix: rows eta_a, columns eta_b
    nlohmann::json to_json() const;
    static SweepGrid from_json(const nlohmann::json& j);
    bool operator==(const SweepGrid&) const = default;
};

struct SweepOptions {
    bool controls = true; // include eta_a == eta_b cells with an ERM run
    int workers = 1;
    std::uint64_t seed = 0;
};

/// Every unordered pair of distinct values (plus the diagonal when
/// controls are on). Every cell uses `opt.seed` so that cells differ only in
/// their environments. Duplicates are dropped with a warning on stderr; a
/// throwing cell is marked failed. Throws ConfigError with fewer than two
/// distinct values.
SweepGrid env_gap_sweep(std::vector<double> etas, const CellRunner& run, const SweepOptions& opt);

SweepSummary summarize(const std::vector<SweepCell>& cells);

/// Spearman rank correlation with average ranks for ties; empty when either
/// side is constant or sizes differ or fewer than two points.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

// -- attribute report --------------------------------------------------------------

struct AttributeRow {
    std::string attribute;
    double worst = 0.0;
    double average = 0.0;
    std::vector<std::string> excluded;

    bool operator==(const AttributeRow&) const = default;
};

struct AttributeReport {
    std::string model;
    std::vector<AttributeRow> rows;
    double grand_worst = 0.0;   // unweighted mean over attributes
    double grand_average = 0.0;

    std::string to_csv() const;
    nlohmann::json to_json() const;
    static AttributeReport from_json(const nlohmann::json& j);
    bool operator==(const AttributeReport&) const = default;
};

/// Groups per attribute are (attribute value x label); empty groups are
/// excluded and listed. Throws DataError when an attribute is missing or
/// `attributes` is empty.
AttributeReport attribute_report(const std::vector<int>& predictions, const EnvironmentDataset& ds,
                                 const std::vector<std::string>& attributes, const std::string& model = "");
AttributeReport attribute_report(const nnkit::ModelParams& m, const EnvironmentDataset& ds,
                                 const std::vector<std::string>& attributes, const std::string& model = "");

/// Attribute names present on every example, in sorted order.
std::vector<std::string> attribute_names(const EnvironmentDataset& ds);

// -- partition attribute correlations ------------------------------------------

struct PartitionAttrTable {
    std::vector<std::string> groups;     // partition labels
    std::vector<std::string> attributes;
    std::vector<std::vector<std::optional<double>>> corr; // [attribute][group]
    std::vector<bool> opposite;          // some correct/wrong pair differs in sign
    std::vector<bool> label_correlated;  // |Pearson| >= threshold in some environment
    std::vector<bool> environment;       // the environment-defining attribute
    double threshold = 0.05;

    std::size_t n_label_correlated() const; // non-environment only
    std::size_t n_flagged() const;          // opposite among those
    std::string to_csv() const;
    nlohmann::json to_json() const;
    static PartitionAttrTable from_json(const nlohmann::json& j);
    bool operator==(const PartitionAttrTable&) const = default;
};

/// Pearson(attribute, label) inside every partition group of `data`. A pair
/// (same source and classifier environment) is opposite when one side is
/// >= threshold and the other <= -threshold; undefined values never flag.
PartitionAttrTable partition_attr_correlations(const PartitionedData& partitions, const EnvironmentDataset& data,
                                               const std::vector<std::string>& attributes,
                                               double threshold = 0.05);

// -- emission -----------------------------------------------------------------------

/// Writes `{dir}/{run_id}/{kind}.csv` and `.json`. Throws DataError naming
/// the path on IO failure.
void emit_report(const std::string& dir, const std::string& run_id, const std::string& kind,
                 const std::string& csv, const nlohmann::json& json);

template <class Report>
void emit_report(const std::string& dir, const std::string& run_id, const std::string& kind, const Report& r) {
    emit_report(dir, run_id, kind, r.to_csv(), r.to_json());
}

} // namespace stablegroups::analysis
