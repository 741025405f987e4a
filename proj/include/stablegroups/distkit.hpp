#pragma once

// Exact calculus on small finite joint distributions over (x1, x2, y):
// marginals, Bayes conditionals, correctness partitions, mixtures,
// covariances, and enumeration-based verifiers for the partition theory.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace stablegroups::distkit {

inline constexpr double kInputTol = 1e-9;
inline constexpr double kIdentityTol = 1e-12;

enum class Variable { x1, x2, y };

class FiniteJoint {
public:
    /// `table` is laid out row-major over (x1, x2, y). Throws DataError unless
    /// every mass is non-negative and the total is 1 within kInputTol.
    FiniteJoint(std::vector<int> support_x1, std::vector<int> support_x2,
                std::vector<int> support_y, std::vector<double> table);

    const std::vector<int>& support_x1() const { return sx1_; }
    const std::vector<int>& support_x2() const { return sx2_; }
    const std::vector<int>& support_y() const { return sy_; }
    std::size_t n1() const { return sx1_.size(); }
    std::size_t n2() const { return sx2_.size(); }
    std::size_t ny() const { return sy_.size(); }

    std::size_t index(std::size_t i1, std::size_t i2, std::size_t iy) const {
        return (i1 * n2() + i2) * ny() + iy;
    }
    double at(std::size_t i1, std::size_t i2, std::size_t iy) const {
        return table_[index(i1, i2, iy)];
    }
    std::span<const double> cells() const { return table_; }

    bool same_supports(const FiniteJoint& other) const;

    nlohmann::json to_json() const;
    static FiniteJoint from_json(const nlohmann::json& j);

private:
    std::vector<int> sx1_, sx2_, sy_;
    std::vector<double> table_;
};

/// P(y | x1, x2) for every (x1, x2) cell. Rows whose marginal is zero are
/// flagged undefined and hold zeros.
class ConditionalTable {
public:
    ConditionalTable(std::vector<int> support_x1, std::vector<int> support_x2,
                     std::vector<int> support_y, std::vector<double> probs,
                     std::vector<bool> defined);

    std::size_t n1() const { return sx1_.size(); }
    std::size_t n2() const { return sx2_.size(); }
    std::size_t ny() const { return sy_.size(); }
    const std::vector<int>& support_x1() const { return sx1_; }
    const std::vector<int>& support_x2() const { return sx2_; }
    const std::vector<int>& support_y() const { return sy_; }

    double prob(std::size_t i1, std::size_t i2, std::size_t iy) const {
        return probs_[(i1 * n2() + i2) * ny() + iy];
    }
    bool defined(std::size_t i1, std::size_t i2) const { return defined_[i1 * n2() + i2]; }
    bool matches(const FiniteJoint& j) const;

private:
    std::vector<int> sx1_, sx2_, sy_;
    std::vector<double> probs_;
    std::vector<bool> defined_;
};

enum class Degeneracy { none, all_correct, all_wrong };

struct PartitionPair {
    std::optional<FiniteJoint> correct;
    std::optional<FiniteJoint> wrong;
    double alpha = 0.0;
    Degeneracy degenerate = Degeneracy::none;
};

class MixtureWeights {
public:
    /// Throws DataError on negative weights or a sum off 1 by more than 1e-12.
    explicit MixtureWeights(std::vector<double> weights);
    static MixtureWeights uniform(std::size_t n);
    static MixtureWeights one_hot(std::size_t n, std::size_t k);

    const std::vector<double>& weights() const { return w_; }
    std::size_t size() const { return w_.size(); }

private:
    std::vector<double> w_;
};

// -- core operations -------------------------------------------------------

std::vector<double> marginal(const FiniteJoint& j, Variable over);
ConditionalTable conditional_y(const FiniteJoint& j);
PartitionPair partition(const FiniteJoint& source, const ConditionalTable& classifier);
FiniteJoint mixture(std::span<const FiniteJoint> parts, const MixtureWeights& w);

/// Cov(X2, Y) with x2 and y read as 0/1. Both supports must be exactly {0, 1}.
double covariance_x2y(const FiniteJoint& j);
/// Empty when either variance is zero.
std::optional<double> pearson_x2y(const FiniteJoint& j);

/// Replaces y by [y == c], and x2 by [x2 == c] when x2 shares the label alphabet.
FiniteJoint binarize_label(const FiniteJoint& j, int c);
/// One-vs-rest Pearson pooled over all classes with equal weight.
std::optional<double> pooled_pearson_x2y(const FiniteJoint& j);

/// Two-environment generative process over {0,1}^3: x1 ~ Bern(0.5), y flips x1
/// with probability label_noise, x2 flips y with probability eta.
FiniteJoint toy_joint(double eta, double label_noise = 0.2);

/// K-class colored construction: latent digit z uniform, y = z with
/// probability label_keep (else uniform over the other K-1), color = y with
/// probability eta (else uniform over the other K-1). x1 = z, x2 = color.
FiniteJoint colored_joint(int K, double eta, double label_keep);

// -- risks -----------------------------------------------------------------

/// E[-log f(y | x1, x2)] under `group`; +inf when f puts zero mass on a
/// positive-mass cell.
double log_risk(const ConditionalTable& classifier, const FiniteJoint& group);
double worst_group_log_risk(const ConditionalTable& classifier,
                            std::span<const FiniteJoint> groups);

// -- verifiers -------------------------------------------------------------

struct Prop1Report {
    double max_abs_error = 0.0;
    bool pass = false;
    Degeneracy degenerate = Degeneracy::none;
};
Prop1Report verify_prop1(const FiniteJoint& source, const ConditionalTable& classifier);

enum class TheoremStatus { holds, violated, precondition_failed };
std::string to_string(TheoremStatus s);

struct Thm1Report {
    TheoremStatus status = TheoremStatus::precondition_failed;
    std::string detail;
    double cov_i = 0.0, cov_j = 0.0;
    double cov_j_wrong = 0.0; // Cov(X2, Y) on the mistakes of f_i over E_j
    double cov_i_wrong = 0.0; // Cov(X2, Y) on the mistakes of f_j over E_i
};
Thm1Report verify_thm1(const FiniteJoint& p_i, const FiniteJoint& p_j);

/// Both forms of the covariance bound on the mistake partitions.
///
/// `stated_*` uses the coefficients (1-a_j^i)/a_i^i and (1-a_j^i)/a_j^i on
/// plain covariances. `balanced_*` is the form obtained directly from the
/// conditional-sum identity:
///   (1-a_j^i) B(P_j^{ix}) < a_i^i B(P_i^{i+}) - a_j^i B(P_j^{i+})
/// where B(Q) = (Q(x2=1,y=1) - Q(x2=1,y=0)) / 2, which equals Cov(X2,Y;Q)
/// whenever Q has a uniform label marginal.
struct Thm2Report {
    TheoremStatus status = TheoremStatus::precondition_failed; // stated form
    TheoremStatus balanced_status = TheoremStatus::precondition_failed;
    bool undefined_bound = false;
    std::string detail;

    double alpha_ji = 0, alpha_ii = 0, alpha_ij = 0, alpha_jj = 0;
    double cov_j_wrong = 0, cov_i_self_correct = 0, cov_j_correct = 0;
    double cov_i_wrong = 0, cov_j_self_correct = 0, cov_i_correct = 0;
    double stated_upper = 0, stated_lower = 0;

    double balanced_lhs_upper = 0, balanced_rhs_upper = 0;
    double balanced_lhs_lower = 0, balanced_rhs_lower = 0;
};
Thm2Report verify_thm2(const FiniteJoint& p_i, const FiniteJoint& p_j);

/// Label-balanced covariance B(Q) used by the balanced bound.
double balanced_covariance_x2y(const FiniteJoint& j);

struct MarginalOptimalityReport {
    /// f(y=1 | x1, x2) of the grid minimizer, indexed [x1][x2].
    std::array<std::array<double, 2>, 2> minimizer{};
    double min_risk = 0.0;
    /// Best value over the x2-invariant sub-grid.
    double invariant_min_risk = 0.0;
    bool x2_invariant = false;
    std::size_t grid_points = 0;
};
/// Exhaustive grid search of binary classifiers f(y=1|x1,x2) over
/// {h, 2h, ..., 1-h}^4 minimizing the worst-group log risk.
MarginalOptimalityReport verify_marginal_optimality(std::span<const FiniteJoint> groups,
                                                    double grid_step = 0.05);

struct InterpolationReport {
    bool pass = true;
    double worst_group_risk = 0.0;
    double max_mixture_risk = 0.0;
    std::size_t trials = 0;
};
InterpolationReport interpolation_upper_bound_check(std::span<const FiniteJoint> groups,
                                                    const ConditionalTable& classifier,
                                                    std::size_t trials, std::uint64_t seed);

// -- random admissible inputs for property checks --------------------------

using Rng = std::mt19937_64;

/// Normalized joint with random masses over index-valued supports.
FiniteJoint random_joint(Rng& rng, std::size_t n1, std::size_t n2, std::size_t ny);
/// Conditional with every row defined.
ConditionalTable random_conditional(Rng& rng, const FiniteJoint& like);

/// A pair satisfying the sign-flip assumptions exactly: shared P(x1, y) with uniform
/// label marginal, X2 independent of X1 given Y, per-x2 column sums of
/// P(x2 | y) preserved. Ordered so that Cov_i >= Cov_j.
std::pair<FiniteJoint, FiniteJoint> random_thm1_pair(Rng& rng);
/// Arbitrary binary-x2 pair with uniform label marginals, ordered Cov_i >= Cov_j.
std::pair<FiniteJoint, FiniteJoint> random_uniform_label_pair(Rng& rng);

struct BatteryLine {
    std::string name;
    std::size_t attempted = 0;
    std::size_t admissible = 0;
    std::size_t passed = 0;
    std::string note;
    bool ok() const { return admissible > 0 && passed == admissible; }
};

struct TheoryBattery {
    std::vector<BatteryLine> lines;
    bool all_passed() const;
};

/// Runs every verifier with `trials` seeded draws, one line each:
/// prop1-reconstruction, thm1-sign-flip, thm2-bounds (stated coefficients),
/// thm2-balanced-bounds, marginal-optimality, interpolation-bound.
TheoryBattery run_theory_battery(std::size_t trials, std::uint64_t seed,
                                 double grid_step = 0.05);

} // namespace stablegroups::distkit
