#include <doctest.h>

#include <cmath>
#include <vector>

#include "stablegroups/distkit.hpp"
#include "stablegroups/error.hpp"

using namespace stablegroups;
using namespace stablegroups::distkit;

namespace {

double h2(double p) { return -(p * std::log(p) + (1 - p) * std::log(1 - p)); }

FiniteJoint binary(std::vector<double> t) { return FiniteJoint({0, 1}, {0, 1}, {0, 1}, std::move(t)); }

} // namespace

TEST_CASE("joint construction rejects bad tables") {
    CHECK_THROWS_AS(binary({0.5, 0.5, 0, 0, 0, 0, 0, -0.0001}), DataError);
    CHECK_THROWS_AS(binary({0.5, 0.4, 0, 0, 0, 0, 0, 0}), DataError);
    CHECK_THROWS_AS(FiniteJoint({0, 1}, {0, 1}, {0, 1}, {1.0}), DataError);
    CHECK_NOTHROW(binary({0.5, 0.5, 0, 0, 0, 0, 0, 0}));
}

TEST_CASE("toy joint marginals and correlation match closed form") {
    for (double eta : {0.0, 0.1, 0.25, 0.5, 0.9}) {
        auto j = toy_joint(eta);
        auto py = marginal(j, Variable::y);
        CHECK(py[1] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(covariance_x2y(j) == doctest::Approx(0.25 - 0.5 * eta).epsilon(1e-12));
        if (eta != 0.5) CHECK(*pearson_x2y(j) == doctest::Approx(1 - 2 * eta).epsilon(1e-12));
    }
}

TEST_CASE("pearson is undefined for a constant spurious feature") {
    CHECK_FALSE(pearson_x2y(binary({0.25, 0, 0.25, 0, 0.25, 0, 0.25, 0})).has_value());
}

TEST_CASE("conditional flags zero-mass rows") {
    auto c = conditional_y(binary({0.5, 0.5, 0, 0, 0, 0, 0, 0}));
    CHECK(c.defined(0, 0));
    CHECK_FALSE(c.defined(1, 1));
    CHECK(c.prob(0, 0, 1) == doctest::Approx(0.5));
    CHECK(c.matches(binary({0.5, 0.5, 0, 0, 0, 0, 0, 0})));
}

TEST_CASE("toy partition: alpha 0.9 and correlations +1 / -1") {
    auto f1 = conditional_y(toy_joint(0.0));
    auto p = partition(toy_joint(0.1), f1);
    REQUIRE(p.correct);
    REQUIRE(p.wrong);
    CHECK(p.degenerate == Degeneracy::none);
    CHECK(p.alpha == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(*pearson_x2y(*p.correct) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*pearson_x2y(*p.wrong) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(covariance_x2y(*p.wrong) == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("partition of a perfect classifier is degenerate") {
    auto src = toy_joint(0.0);
    auto p = partition(src, conditional_y(src));
    CHECK(p.degenerate == Degeneracy::all_correct);
    CHECK_FALSE(p.wrong.has_value());
}

TEST_CASE("mixture of the partition reconstructs the source") {
    Rng rng(7);
    for (int t = 0; t < 200; ++t) {
        auto src = random_joint(rng, 3, 2, 2);
        auto f = random_conditional(rng, src);
        auto rep = verify_prop1(src, f);
        if (rep.degenerate != Degeneracy::none) continue;
        CHECK(rep.pass);
        CHECK(rep.max_abs_error <= 1e-12);
    }
    auto src = toy_joint(0.1);
    auto p = partition(src, conditional_y(toy_joint(0.0)));
    std::vector<FiniteJoint> parts{*p.correct, *p.wrong};
    auto mix = mixture(parts, MixtureWeights({p.alpha, 1 - p.alpha}));
    for (std::size_t k = 0; k < src.cells().size(); ++k)
        CHECK(mix.cells()[k] == doctest::Approx(src.cells()[k]).epsilon(1e-12));
}

TEST_CASE("mixture weights validate") {
    CHECK_THROWS_AS(MixtureWeights({0.5, 0.6}), DataError);
    CHECK_THROWS_AS(MixtureWeights({1.5, -0.5}), DataError);
    CHECK(MixtureWeights::uniform(4).weights()[3] == doctest::Approx(0.25));
    CHECK(MixtureWeights::one_hot(3, 1).weights() == std::vector<double>{0, 1, 0});
}

TEST_CASE("log risk equals conditional entropy for the Bayes classifier") {
    auto j = toy_joint(0.1);
    double expect = 2 * (0.37 * h2(0.72 / 0.74) + 0.13 * h2(0.08 / 0.26));
    CHECK(log_risk(conditional_y(j), j) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(std::isinf(log_risk(conditional_y(toy_joint(0.0)), j)));
    std::vector<FiniteJoint> g{toy_joint(0.0), j};
    auto f = conditional_y(toy_joint(0.05));
    CHECK(worst_group_log_risk(f, g) == std::max(log_risk(f, g[0]), log_risk(f, g[1])));
}

TEST_CASE("pooled one-vs-rest pearson of the colored joint") {
    CHECK(*pooled_pearson_x2y(colored_joint(10, 0.9, 0.75)) == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
    CHECK(*pooled_pearson_x2y(colored_joint(10, 0.8, 0.75)) == doctest::Approx(7.0 / 9.0).epsilon(1e-12));
    CHECK(*pooled_pearson_x2y(colored_joint(3, 0.6, 1.0)) == doctest::Approx(0.4).epsilon(1e-12));
    auto b = binarize_label(colored_joint(10, 0.9, 0.75), 3);
    CHECK(marginal(b, Variable::y)[1] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("json round trip") {
    auto j = colored_joint(4, 0.7, 0.8);
    auto back = FiniteJoint::from_json(j.to_json());
    CHECK(back.same_supports(j));
    for (std::size_t k = 0; k < j.cells().size(); ++k) CHECK(back.cells()[k] == j.cells()[k]);
}

TEST_CASE("sign flip holds on every admissible pair") {
    Rng rng(11);
    int holds = 0;
    for (int t = 0; t < 1000; ++t) {
        auto [pi, pj] = random_thm1_pair(rng);
        auto r = verify_thm1(pi, pj);
        CHECK(r.status != TheoremStatus::violated);
        if (r.status == TheoremStatus::holds) {
            ++holds;
            CHECK(r.cov_j_wrong < 0);
        }
    }
    CHECK(holds > 500);
}

TEST_CASE("balanced covariance bound holds; stated coefficients admit counterexamples") {
    Rng rng(1);
    int balanced_holds = 0, stated_violations = 0;
    for (int t = 0; t < 1000; ++t) {
        auto [pi, pj] = random_uniform_label_pair(rng);
        auto r = verify_thm2(pi, pj);
        CHECK(r.balanced_status != TheoremStatus::violated);
        if (r.balanced_status == TheoremStatus::holds) ++balanced_holds;
        if (r.status == TheoremStatus::violated) ++stated_violations;
    }
    CHECK(balanced_holds > 500);
    CHECK(stated_violations > 0);
}

TEST_CASE("balanced covariance equals covariance under a uniform label") {
    auto j = toy_joint(0.3);
    CHECK(balanced_covariance_x2y(j) == doctest::Approx(covariance_x2y(j)).epsilon(1e-12));
}

TEST_CASE("worst-group minimizer over the toy partition ignores x2") {
    auto p21 = partition(toy_joint(0.1), conditional_y(toy_joint(0.0)));
    std::vector<FiniteJoint> groups{*p21.correct, *p21.wrong};
    auto r = verify_marginal_optimality(groups, 0.05);
    CHECK(r.x2_invariant);
    CHECK(r.minimizer[0][0] == doctest::Approx(0.2));
    CHECK(r.minimizer[0][1] == doctest::Approx(0.2));
    CHECK(r.minimizer[1][0] == doctest::Approx(0.8));
    CHECK(r.minimizer[1][1] == doctest::Approx(0.8));
    CHECK(r.min_risk == doctest::Approx(r.invariant_min_risk).epsilon(1e-12));

    std::vector<FiniteJoint> single{toy_joint(0.1)};
    CHECK_FALSE(verify_marginal_optimality(single, 0.05).x2_invariant);
}

TEST_CASE("mixtures never exceed the worst group risk") {
    auto p12 = partition(toy_joint(0.0), conditional_y(toy_joint(0.1)));
    auto p21 = partition(toy_joint(0.1), conditional_y(toy_joint(0.0)));
    std::vector<FiniteJoint> groups{*p12.correct, *p12.wrong, *p21.correct, *p21.wrong};
    auto f = conditional_y(toy_joint(0.3));
    auto r = interpolation_upper_bound_check(groups, f, 500, 3);
    CHECK(r.pass);
    CHECK(r.trials == 500);
    CHECK(r.max_mixture_risk <= r.worst_group_risk + 1e-12);
}

TEST_CASE("theory battery") {
    CHECK_THROWS_AS(run_theory_battery(0, 1), UsageError);
    auto b = run_theory_battery(1000, 1);
    REQUIRE(b.lines.size() == 6);
    for (const auto& l : b.lines) {
        INFO(l.name);
        if (l.name == "thm2-bounds") CHECK(l.passed < l.admissible);
        else CHECK(l.ok());
    }
    CHECK_FALSE(b.all_passed());
}
