#pragma once

// Linear-softmax and one-hidden-layer ReLU classifiers with analytic
// gradients, SGD/Adam, and finite-difference gradient checks.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stablegroups/datagen.hpp"

namespace stablegroups::nnkit {

using Rng = std::mt19937_64;
using datagen::SparseEntry;
using datagen::TrainingView;

inline constexpr double kProbFloor = 1e-12;

enum class Arch { linear, mlp };
std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

/// Flat parameter storage. Layouts (row-major):
///   linear: W[D][K], b[K]
///   mlp:    W1[D][H], b1[H], W2[H][K], b2[K]
/// Input-major weight layout keeps sparse forward/backward contiguous.
struct ModelParams {
    Arch arch = Arch::linear;
    int input_dim = 0;
    int n_classes = 2;
    int hidden = 0;
    double dropout = 0.0;
    std::vector<double> w;

    /// Linear models start at zero; MLP weights are Glorot-uniform with zero biases.
    static ModelParams init(Arch arch, int input_dim, int n_classes, int hidden, double dropout,
                            std::uint64_t seed);
    static ModelParams zeros(Arch arch, int input_dim, int n_classes, int hidden = 0);

    std::size_t size() const { return w.size(); }
    /// Contiguous [begin, end) ranges of weight matrices (decayed entries).
    std::vector<std::pair<std::size_t, std::size_t>> weight_ranges() const;

    std::size_t off_b1() const; // linear: b
    std::size_t off_w2() const; // mlp only
    std::size_t off_b2() const; // mlp only

    /// Binary linear models: W[k][1] - W[k][0].
    double linear_feature_weight(int k) const;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelParams from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static ModelParams load(const std::string& path);
};

/// One input row, dense or sparse.
struct InputRef {
    bool sparse = false;
    std::span<const double> dense;
    std::span<const SparseEntry> fs;

    static InputRef of(const TrainingView& v, std::size_t i) {
        InputRef r;
        r.sparse = v.is_sparse(i);
        if (r.sparse) r.fs = v.sparse(i);
        else r.dense = v.dense(i);
        return r;
    }
};

/// Class probabilities. Dropout (inverted scaling) only when train_mode; it
/// masks inputs for linear models and hidden units for MLPs. Throws
/// NumericError on non-finite weights or input.
std::vector<double> forward(const ModelParams& m, const InputRef& x, bool train_mode, Rng* rng);

/// -log max(p[y], 1e-12).
double cross_entropy(std::span<const double> probs, int y);

/// Mean eval-mode cross-entropy over `idx`.
double batch_loss(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx);

struct LossGrad {
    double loss = 0.0; // mean cross-entropy plus decay term
    std::vector<double> grad;
};

/// Gradient of mean cross-entropy + (decay/2)||W||^2 over `idx`. Dropout masks
/// are drawn from `dropout_seed` when train_mode is set, so a call with the
/// same seed reproduces the same masks. Throws NumericError on a non-finite loss.
LossGrad loss_and_grad(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx,
                       double decay, bool train_mode, std::uint64_t dropout_seed);

/// Mean training-mode loss only (no gradient), same masks as loss_and_grad.
double train_loss(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx,
                  std::uint64_t dropout_seed);

enum class OptAlgo { sgd, adam };

struct OptimState {
    OptAlgo algo = OptAlgo::adam;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m, v;
    std::uint64_t t = 0;

    static OptimState make(OptAlgo algo, double lr, double weight_decay, std::size_t n_params);
};

void step(ModelParams& m, std::span<const double> grad, OptimState& opt);

/// Eval-mode argmax; ties go to the lowest class id.
int predict(const ModelParams& m, const InputRef& x);
std::vector<int> predict_all(const ModelParams& m, const TrainingView& v);
/// Throws DataError on an empty index set.
double accuracy(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx);
double accuracy(const ModelParams& m, const TrainingView& v);

struct GradCheckReport {
    std::vector<std::pair<std::string, double>> max_rel_err; // per tensor
    double worst = 0.0;
    bool pass = false;
};

/// Central differences with h = 1e-5 * max(1, |w|); relative error
/// |a - n| / max(1e-8, |a| + |n|). Passes iff every tensor is below 1e-4.
GradCheckReport grad_check(const ModelParams& m, const TrainingView& v,
                           std::span<const std::size_t> idx, double decay, std::uint64_t dropout_seed = 0);

} // namespace stablegroups::nnkit
