#pragma once

// Task presets: generator settings, split protocol and default training
// hyperparameters for the four synthetic tasks.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stablegroups/datagen.hpp"
#include "stablegroups/robusttrain.hpp"

namespace stablegroups::tasks {

enum class Task { toy, colored, tokens, attributed };
std::string to_string(Task t);
Task parse_task(const std::string& s);

struct TaskConfig {
    Task task = Task::toy;
    std::size_t n = 0; // per environment
    std::vector<double> eta; // training environments (unused by attributed)
    std::optional<double> test_eta;
    int K = 10;
    double label_keep = 0.8;
    std::uint64_t seed = 0;
    datagen::ValSource val_source = datagen::ValSource::train_env;
    std::array<double, 3> fractions{0.6, 0.2, 0.2};

    datagen::ColoredBase colored;
    std::string idx_images, idx_labels;
    datagen::VocabConfig vocab;
    datagen::AttributedConfig attributed;

    void validate() const;
    nlohmann::json to_json() const;
    /// Overlays the keys present in `j` onto `base`.
    static TaskConfig merge(TaskConfig base, const nlohmann::json& j);
};

/// Tuned defaults per task; `eta` is filled too so that a preset runs as is.
TaskConfig preset(Task t);
robusttrain::StrategyConfig preset_strategy(Task t);

/// Generates every environment and splits it. Tasks with a test eta put it
/// in an extra environment that feeds the test split only; the attributed
/// task holds its test split out of the training environments.
datagen::Splits generate(const TaskConfig& cfg);

/// Runs PI (and ERM when `with_erm`) on one training pair and returns the
/// test accuracies. Used by the sweep.
struct PairResult {
    double pi_acc = 0.0;
    std::optional<double> erm_acc;
};
PairResult run_pair(TaskConfig cfg, const robusttrain::StrategyConfig& strategy, double eta_a, double eta_b,
                    std::uint64_t seed, bool with_erm);

} // namespace stablegroups::tasks
