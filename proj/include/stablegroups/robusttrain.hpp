#pragma once

// Training strategies: ERM, group DRO over arbitrary groups (environment x
// label, label x spurious), and the three-stage PI pipeline (per-environment
// classifiers, correctness partitions, DRO over the partitions) with early
// stopping and grid search.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stablegroups/datagen.hpp"
#include "stablegroups/nnkit.hpp"

namespace stablegroups::robusttrain {

using datagen::EnvironmentDataset;
using datagen::TrainingView;
using datagen::ValSource;
using nnkit::ModelParams;

/// Named example-index lists over one dataset. Groups may overlap when they
/// come from different (classifier, environment) pairs.
struct GroupSpec {
    std::string name;
    std::vector<std::string> labels;
    std::vector<std::vector<std::size_t>> members;

    std::size_t size() const { return members.size(); }
    void add(std::string label, std::vector<std::size_t> idx);
};

GroupSpec all_examples(const TrainingView& v);
GroupSpec env_label_groups(const TrainingView& v);
/// (label x spurious); reads the hidden spurious value.
GroupSpec oracle_groups(const EnvironmentDataset& ds);
/// (attribute value x label).
GroupSpec attribute_label_groups(const EnvironmentDataset& ds, const std::string& attribute);
/// Drops empty groups; returns the labels of the dropped ones.
std::vector<std::string> drop_empty(GroupSpec& g);

enum class Strategy { erm, env_dro, oracle_dro, pi };
std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);

enum class Selection { accuracy, worst_group };
std::string to_string(Selection s);

struct StrategyConfig {
    Strategy strategy = Strategy::erm;
    nnkit::Arch arch = nnkit::Arch::linear;
    int hidden = 128;
    double dropout = 0.0;
    nnkit::OptAlgo algo = nnkit::OptAlgo::adam;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::size_t batch_size = 50;
    std::size_t eval_every = 100;
    std::size_t patience = 20;
    std::size_t max_steps = 10000;
    double stage1_holdout = 0.1;
    std::uint64_t seed = 0;
    ValSource val_source = ValSource::train_env;
    bool trace = false;

    void validate() const;
    nlohmann::json to_json() const;
};

struct CurvePoint {
    std::size_t step = 0;
    double train_loss = 0.0; // mean selected-group batch loss since the last evaluation
    double criterion = 0.0;
};

struct StepTrace {
    std::size_t step = 0;
    std::vector<double> group_losses;
    std::size_t selected = 0;
    double update_loss = 0.0; // cross-entropy of the batch the gradient came from
};

struct TrainedModel {
    ModelParams params;
    std::vector<CurvePoint> curve;
    double best_criterion = 0.0;
    std::size_t best_step = 0;
    std::size_t steps_run = 0;
    Selection selection = Selection::accuracy;
    nlohmann::json hyper = nlohmann::json::object();
    std::vector<StepTrace> trace;

    nlohmann::json summary_json() const;
};

using Criterion = std::function<double(const ModelParams&)>;

/// The shared loop: one batch per group per step, update on the max-loss
/// group (ties to the lowest id), evaluate every eval_every steps, stop
/// after `patience` evaluations without strict improvement.
TrainedModel train_groups(const TrainingView& train, const GroupSpec& groups, const Criterion& criterion,
                          Selection selection, const StrategyConfig& cfg, int n_features, int n_classes);

struct GroupEval {
    std::vector<std::string> labels;
    std::vector<double> acc;
    std::vector<std::size_t> counts;
    std::vector<std::string> excluded; // empty groups
    double worst = 0.0;
    double average = 0.0;

    nlohmann::json to_json() const;
};

GroupEval evaluate_groups(const ModelParams& m, const TrainingView& v, const GroupSpec& groups);
GroupEval evaluate_groups(const std::vector<int>& predictions, const TrainingView& v, const GroupSpec& groups);

TrainedModel train_erm(const EnvironmentDataset& train, const EnvironmentDataset& val, const StrategyConfig& cfg);

/// Selection is worst-group accuracy over `val_groups`, or plain accuracy
/// when cfg.val_source is test_env. Throws ConfigError on an empty train group.
TrainedModel train_group_dro(const EnvironmentDataset& train, const GroupSpec& groups,
                             const EnvironmentDataset& val, const GroupSpec& val_groups,
                             const StrategyConfig& cfg);

/// One ERM model per environment, early-stopped on a seeded held-out slice
/// of that environment.
std::vector<TrainedModel> pi_stage1(const EnvironmentDataset& train, const StrategyConfig& cfg);

struct PartitionedData {
    GroupSpec groups;
    struct Meta {
        int source_env = 0;     // j
        int classifier_env = 0; // i
        bool correct = true;
    };
    std::vector<Meta> meta;                   // parallel to groups
    std::map<std::pair<int, int>, double> alpha; // (i, j) -> fraction of E_j that f_i gets right
    std::vector<std::string> dropped;

    nlohmann::json to_json() const;
};

/// Splits every E_j by the argmax correctness of every f_i, i != j. Empty
/// groups are dropped with a warning on stderr.
PartitionedData pi_stage2(const EnvironmentDataset& data, const std::vector<ModelParams>& models,
                          bool warn = true);

/// Fresh model trained by group DRO over the surviving partition groups.
/// With training-environment validation the criterion is worst-group accuracy
/// over the same partition of `val`; with test-environment validation it is
/// plain accuracy. Throws ConfigError with fewer than two groups.
TrainedModel pi_stage3(const EnvironmentDataset& train, const PartitionedData& partitions,
                       const EnvironmentDataset& val, const PartitionedData& val_partitions,
                       const StrategyConfig& cfg);

struct PipelineResult {
    TrainedModel model;
    std::vector<TrainedModel> stage1;
    std::optional<PartitionedData> partitions;
    std::optional<PartitionedData> val_partitions;
    GroupSpec train_groups;
};

/// Runs `cfg.strategy` end to end.
PipelineResult run_strategy(const EnvironmentDataset& train, const EnvironmentDataset& val,
                            const StrategyConfig& cfg);

struct GridPoint {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double dropout = 0.0;
};

struct GridResult {
    PipelineResult best;
    std::size_t best_index = 0;
    std::vector<double> criteria;
    std::vector<GridPoint> points;
};

/// Trains every grid point (seed derive_seed(cfg.seed, index)) and keeps the
/// best validation criterion; ties go to the earliest point.
GridResult grid_search(const EnvironmentDataset& train, const EnvironmentDataset& val,
                       const StrategyConfig& cfg, const std::vector<GridPoint>& grid);

/// Test metrics: plain accuracy and worst (label x spurious) group accuracy.
struct TestMetrics {
    double accuracy = 0.0;
    double worst_group = 0.0;
    GroupEval groups;
};
TestMetrics evaluate_test(const ModelParams& m, const EnvironmentDataset& test);

nlohmann::json run_manifest(const PipelineResult& r, const StrategyConfig& cfg);

} // namespace stablegroups::robusttrain
