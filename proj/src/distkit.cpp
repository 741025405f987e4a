#include "stablegroups/distkit.hpp"

#include "stablegroups/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace stablegroups::distkit {

namespace {

std::vector<int> iota_support(std::size_t n) {
    std::vector<int> s(n);
    std::iota(s.begin(), s.end(), 0);
    return s;
}

bool is_binary_support(const std::vector<int>& s) {
    return s.size() == 2 && ((s[0] == 0 && s[1] == 1) || (s[0] == 1 && s[1] == 0));
}

void require_binary_x2y(const FiniteJoint& j, const char* op) {
    if (!is_binary_support(j.support_x2()) || !is_binary_support(j.support_y()))
        throw DataError(std::string(op) + ": x2 and y must be binary {0,1}; binarize first");
}

std::size_t position_of(const std::vector<int>& support, int value) {
    auto it = std::find(support.begin(), support.end(), value);
    return it == support.end() ? support.size() : static_cast<std::size_t>(it - support.begin());
}

double sum_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

} // namespace

// -- FiniteJoint ------------------------------------------------------------

FiniteJoint::FiniteJoint(std::vector<int> support_x1, std::vector<int> support_x2,
                         std::vector<int> support_y, std::vector<double> table)
    : sx1_(std::move(support_x1)), sx2_(std::move(support_x2)), sy_(std::move(support_y)),
      table_(std::move(table)) {
    if (sx1_.empty() || sx2_.empty() || sy_.empty())
        throw DataError("FiniteJoint: supports must be non-empty");
    if (sy_.size() < 2)
        throw DataError("FiniteJoint: label support needs at least two classes");
    if (table_.size() != sx1_.size() * sx2_.size() * sy_.size())
        throw DataError("FiniteJoint: table size does not match supports");
    double total = 0.0;
    for (double p : table_) {
        if (!std::isfinite(p) || p < 0.0)
            throw DataError("FiniteJoint: masses must be finite and non-negative");
        total += p;
    }
    if (std::abs(total - 1.0) > kInputTol) {
        std::ostringstream os;
        os << "FiniteJoint: masses sum to " << total << ", expected 1";
        throw DataError(os.str());
    }
}

bool FiniteJoint::same_supports(const FiniteJoint& other) const {
    return sx1_ == other.sx1_ && sx2_ == other.sx2_ && sy_ == other.sy_;
}

nlohmann::json FiniteJoint::to_json() const {
    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t a = 0; a < n1(); ++a)
        for (std::size_t b = 0; b < n2(); ++b)
            for (std::size_t c = 0; c < ny(); ++c)
                cells.push_back({sx1_[a], sx2_[b], sy_[c], at(a, b, c)});
    return {{"supports", {{"x1", sx1_}, {"x2", sx2_}, {"y", sy_}}}, {"cells", cells}};
}

FiniteJoint FiniteJoint::from_json(const nlohmann::json& j) {
    try {
        auto sx1 = j.at("supports").at("x1").get<std::vector<int>>();
        auto sx2 = j.at("supports").at("x2").get<std::vector<int>>();
        auto sy = j.at("supports").at("y").get<std::vector<int>>();
        std::vector<double> table(sx1.size() * sx2.size() * sy.size(), 0.0);
        std::vector<bool> seen(table.size(), false);
        for (const auto& cell : j.at("cells")) {
            std::size_t a = position_of(sx1, cell.at(0).get<int>());
            std::size_t b = position_of(sx2, cell.at(1).get<int>());
            std::size_t c = position_of(sy, cell.at(2).get<int>());
            if (a == sx1.size() || b == sx2.size() || c == sy.size())
                throw DataError("FiniteJoint JSON: cell value outside declared support");
            std::size_t k = (a * sx2.size() + b) * sy.size() + c;
            if (seen[k]) throw DataError("FiniteJoint JSON: duplicate cell");
            seen[k] = true;
            table[k] = cell.at(3).get<double>();
        }
        return FiniteJoint(std::move(sx1), std::move(sx2), std::move(sy), std::move(table));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("FiniteJoint JSON: ") + e.what());
    }
}

// -- ConditionalTable -------------------------------------------------------

ConditionalTable::ConditionalTable(std::vector<int> support_x1, std::vector<int> support_x2,
                                   std::vector<int> support_y, std::vector<double> probs,
                                   std::vector<bool> defined)
    : sx1_(std::move(support_x1)), sx2_(std::move(support_x2)), sy_(std::move(support_y)),
      probs_(std::move(probs)), defined_(std::move(defined)) {
    if (probs_.size() != n1() * n2() * ny() || defined_.size() != n1() * n2())
        throw DataError("ConditionalTable: dimensions do not match supports");
    for (std::size_t r = 0; r < defined_.size(); ++r) {
        if (!defined_[r]) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < ny(); ++c) {
            double p = probs_[r * ny() + c];
            if (!std::isfinite(p) || p < 0.0)
                throw DataError("ConditionalTable: probabilities must be finite and non-negative");
            s += p;
        }
        if (std::abs(s - 1.0) > kInputTol)
            throw DataError("ConditionalTable: defined row does not sum to 1");
    }
}

bool ConditionalTable::matches(const FiniteJoint& j) const {
    return sx1_ == j.support_x1() && sx2_ == j.support_x2() && sy_ == j.support_y();
}

// -- operations -------------------------------------------------------------

std::vector<double> marginal(const FiniteJoint& j, Variable over) {
    std::size_t n = over == Variable::x1 ? j.n1() : over == Variable::x2 ? j.n2() : j.ny();
    std::vector<double> m(n, 0.0);
    for (std::size_t a = 0; a < j.n1(); ++a)
        for (std::size_t b = 0; b < j.n2(); ++b)
            for (std::size_t c = 0; c < j.ny(); ++c) {
                std::size_t k = over == Variable::x1 ? a : over == Variable::x2 ? b : c;
                m[k] += j.at(a, b, c);
            }
    return m;
}

ConditionalTable conditional_y(const FiniteJoint& j) {
    std::vector<double> probs(j.cells().size(), 0.0);
    std::vector<bool> defined(j.n1() * j.n2(), false);
    for (std::size_t a = 0; a < j.n1(); ++a)
        for (std::size_t b = 0; b < j.n2(); ++b) {
            double row = 0.0;
            for (std::size_t c = 0; c < j.ny(); ++c) row += j.at(a, b, c);
            if (row <= 0.0) continue;
            defined[a * j.n2() + b] = true;
            for (std::size_t c = 0; c < j.ny(); ++c)
                probs[j.index(a, b, c)] = j.at(a, b, c) / row;
        }
    return ConditionalTable(j.support_x1(), j.support_x2(), j.support_y(), std::move(probs),
                            std::move(defined));
}

PartitionPair partition(const FiniteJoint& source, const ConditionalTable& classifier) {
    if (!classifier.matches(source)) throw DataError("partition: support mismatch");

    std::vector<double> right(source.cells().size(), 0.0);
    std::vector<double> wrong(source.cells().size(), 0.0);
    double alpha = 0.0;
    for (std::size_t a = 0; a < source.n1(); ++a)
        for (std::size_t b = 0; b < source.n2(); ++b) {
            double row = 0.0;
            for (std::size_t c = 0; c < source.ny(); ++c) row += source.at(a, b, c);
            if (row <= 0.0) continue;
            if (!classifier.defined(a, b))
                throw DataError("partition: classifier undefined on a cell with positive mass");
            for (std::size_t c = 0; c < source.ny(); ++c) {
                std::size_t k = source.index(a, b, c);
                double hit = classifier.prob(a, b, c);
                double miss = 0.0; // mass on every other label
                for (std::size_t o = 0; o < source.ny(); ++o)
                    if (o != c) miss += classifier.prob(a, b, o);
                right[k] = source.cells()[k] * hit;
                wrong[k] = source.cells()[k] * miss;
                alpha += right[k];
            }
        }

    PartitionPair out;
    if (alpha >= 1.0 - kIdentityTol) {
        out.alpha = 1.0;
        out.degenerate = Degeneracy::all_correct;
    } else if (alpha <= kIdentityTol) {
        out.alpha = 0.0;
        out.degenerate = Degeneracy::all_wrong;
    } else {
        out.alpha = alpha;
    }
    if (out.degenerate != Degeneracy::all_wrong) {
        double s = sum_of(right);
        for (double& v : right) v /= s;
        out.correct.emplace(source.support_x1(), source.support_x2(), source.support_y(),
                            std::move(right));
    }
    if (out.degenerate != Degeneracy::all_correct) {
        double s = sum_of(wrong);
        for (double& v : wrong) v /= s;
        out.wrong.emplace(source.support_x1(), source.support_x2(), source.support_y(),
                          std::move(wrong));
    }
    return out;
}

MixtureWeights::MixtureWeights(std::vector<double> weights) : w_(std::move(weights)) {
    if (w_.empty()) throw DataError("MixtureWeights: empty");
    double s = 0.0;
    for (double v : w_) {
        if (!std::isfinite(v) || v < 0.0) throw DataError("MixtureWeights: weights must be >= 0");
        s += v;
    }
    if (std::abs(s - 1.0) > kIdentityTol) throw DataError("MixtureWeights: weights must sum to 1");
}

MixtureWeights MixtureWeights::uniform(std::size_t n) {
    return MixtureWeights(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

MixtureWeights MixtureWeights::one_hot(std::size_t n, std::size_t k) {
    std::vector<double> w(n, 0.0);
    w.at(k) = 1.0;
    return MixtureWeights(std::move(w));
}

FiniteJoint mixture(std::span<const FiniteJoint> parts, const MixtureWeights& w) {
    if (parts.empty()) throw DataError("mixture: no parts");
    if (parts.size() != w.size()) throw DataError("mixture: weight-length mismatch");
    for (const auto& p : parts)
        if (!p.same_supports(parts.front())) throw DataError("mixture: support mismatch");
    std::vector<double> cells(parts.front().cells().size(), 0.0);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].cells();
        for (std::size_t i = 0; i < cells.size(); ++i) cells[i] += w.weights()[k] * src[i];
    }
    const auto& f = parts.front();
    return FiniteJoint(f.support_x1(), f.support_x2(), f.support_y(), std::move(cells));
}

namespace {

struct Moments {
    double ex = 0, ey = 0, exy = 0, exx = 0, eyy = 0;
};

Moments x2y_moments(const FiniteJoint& j) {
    Moments m;
    for (std::size_t a = 0; a < j.n1(); ++a)
        for (std::size_t b = 0; b < j.n2(); ++b)
            for (std::size_t c = 0; c < j.ny(); ++c) {
                double p = j.at(a, b, c);
                double x = j.support_x2()[b];
                double y = j.support_y()[c];
                m.ex += p * x;
                m.ey += p * y;
                m.exy += p * x * y;
                m.exx += p * x * x;
                m.eyy += p * y * y;
            }
    return m;
}

} // namespace

double covariance_x2y(const FiniteJoint& j) {
    require_binary_x2y(j, "covariance_x2y");
    Moments m = x2y_moments(j);
    return m.exy - m.ex * m.ey;
}

std::optional<double> pearson_x2y(const FiniteJoint& j) {
    require_binary_x2y(j, "pearson_x2y");
    Moments m = x2y_moments(j);
    double vx = m.exx - m.ex * m.ex;
    double vy = m.eyy - m.ey * m.ey;
    if (vx <= 1e-15 || vy <= 1e-15) return std::nullopt;
    return (m.exy - m.ex * m.ey) / std::sqrt(vx * vy);
}

double balanced_covariance_x2y(const FiniteJoint& j) {
    require_binary_x2y(j, "balanced_covariance_x2y");
    std::size_t x2_one = position_of(j.support_x2(), 1);
    std::size_t y_one = position_of(j.support_y(), 1);
    std::size_t y_zero = 1 - y_one;
    double d = 0.0;
    for (std::size_t a = 0; a < j.n1(); ++a)
        d += j.at(a, x2_one, y_one) - j.at(a, x2_one, y_zero);
    return 0.5 * d;
}

FiniteJoint binarize_label(const FiniteJoint& j, int c) {
    std::size_t ic = position_of(j.support_y(), c);
    if (ic == j.ny()) throw DataError("binarize_label: class not in label support");
    const bool map_x2 = j.support_x2() == j.support_y();
    std::size_t n2 = map_x2 ? 2 : j.n2();
    std::vector<double> cells(j.n1() * n2 * 2, 0.0);
    for (std::size_t a = 0; a < j.n1(); ++a)
        for (std::size_t b = 0; b < j.n2(); ++b)
            for (std::size_t y = 0; y < j.ny(); ++y) {
                std::size_t nb = map_x2 ? (b == ic ? 1 : 0) : b;
                std::size_t ny = y == ic ? 1 : 0;
                cells[(a * n2 + nb) * 2 + ny] += j.at(a, b, y);
            }
    return FiniteJoint(j.support_x1(), map_x2 ? std::vector<int>{0, 1} : j.support_x2(),
                       {0, 1}, std::move(cells));
}

std::optional<double> pooled_pearson_x2y(const FiniteJoint& j) {
    std::vector<FiniteJoint> parts;
    parts.reserve(j.ny());
    for (int c : j.support_y()) parts.push_back(binarize_label(j, c));
    return pearson_x2y(mixture(parts, MixtureWeights::uniform(parts.size())));
}

FiniteJoint toy_joint(double eta, double label_noise) {
    if (!(eta >= 0.0 && eta <= 1.0) || !(label_noise >= 0.0 && label_noise <= 1.0))
        throw DataError("toy_joint: probabilities must lie in [0,1]");
    std::vector<double> cells(8, 0.0);
    for (int x1 = 0; x1 < 2; ++x1)
        for (int y = 0; y < 2; ++y)
            for (int x2 = 0; x2 < 2; ++x2) {
                double py = y == x1 ? 1.0 - label_noise : label_noise;
                double px2 = x2 == y ? 1.0 - eta : eta;
                cells[(x1 * 2 + x2) * 2 + y] = 0.5 * py * px2;
            }
    return FiniteJoint({0, 1}, {0, 1}, {0, 1}, std::move(cells));
}

FiniteJoint colored_joint(int K, double eta, double label_keep) {
    if (K < 2) throw DataError("colored_joint: K must be >= 2");
    if (!(eta >= 0.0 && eta <= 1.0) || !(label_keep >= 0.0 && label_keep <= 1.0))
        throw DataError("colored_joint: probabilities must lie in [0,1]");
    const auto k = static_cast<std::size_t>(K);
    const double other = 1.0 / (K - 1);
    std::vector<double> cells(k * k * k, 0.0);
    for (std::size_t z = 0; z < k; ++z)
        for (std::size_t color = 0; color < k; ++color)
            for (std::size_t y = 0; y < k; ++y) {
                double py = y == z ? label_keep : (1.0 - label_keep) * other;
                double pc = color == y ? eta : (1.0 - eta) * other;
                cells[(z * k + color) * k + y] = py * pc / K;
            }
    auto s = iota_support(k);
    return FiniteJoint(s, s, s, std::move(cells));
}

double log_risk(const ConditionalTable& classifier, const FiniteJoint& group) {
    if (!classifier.matches(group)) throw DataError("log_risk: support mismatch");
    double r = 0.0;
    for (std::size_t a = 0; a < group.n1(); ++a)
        for (std::size_t b = 0; b < group.n2(); ++b)
            for (std::size_t c = 0; c < group.ny(); ++c) {
                double p = group.at(a, b, c);
                if (p <= 0.0) continue;
                if (!classifier.defined(a, b))
                    throw DataError("log_risk: classifier undefined on a positive-mass cell");
                double f = classifier.prob(a, b, c);
                if (f <= 0.0) return std::numeric_limits<double>::infinity();
                r -= p * std::log(f);
            }
    return r;
}

double worst_group_log_risk(const ConditionalTable& classifier,
                            std::span<const FiniteJoint> groups) {
    if (groups.empty()) throw DataError("worst_group_log_risk: no groups");
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& g : groups) worst = std::max(worst, log_risk(classifier, g));
    return worst;
}

// -- verifiers ----------------------------------------------------------------

Prop1Report verify_prop1(const FiniteJoint& source, const ConditionalTable& classifier) {
    PartitionPair pp = partition(source, classifier);
    Prop1Report rep;
    rep.degenerate = pp.degenerate;
    auto src = source.cells();
    for (std::size_t i = 0; i < src.size(); ++i) {
        double rebuilt = 0.0;
        if (pp.correct) rebuilt += pp.alpha * pp.correct->cells()[i];
        if (pp.wrong) rebuilt += (1.0 - pp.alpha) * pp.wrong->cells()[i];
        rep.max_abs_error = std::max(rep.max_abs_error, std::abs(rebuilt - src[i]));
    }
    rep.pass = rep.max_abs_error < kIdentityTol;
    return rep;
}

std::string to_string(TheoremStatus s) {
    switch (s) {
    case TheoremStatus::holds: return "holds";
    case TheoremStatus::violated: return "violated";
    case TheoremStatus::precondition_failed: return "precondition-failure";
    }
    return "?";
}

namespace {

bool uniform_label(const FiniteJoint& j) {
    for (double m : marginal(j, Variable::y))
        if (std::abs(m - 1.0 / static_cast<double>(j.ny())) > kInputTol) return false;
    return true;
}

/// Precondition failure message for the binary-pair checks shared by both theorems.
std::optional<std::string> pair_shape_problem(const FiniteJoint& p_i, const FiniteJoint& p_j) {
    if (!p_i.same_supports(p_j)) return "supports differ";
    if (!is_binary_support(p_i.support_x2()) || !is_binary_support(p_i.support_y()))
        return "x2 and y must be binary";
    if (!uniform_label(p_i) || !uniform_label(p_j)) return "label marginal is not uniform";
    return std::nullopt;
}

} // namespace

Thm1Report verify_thm1(const FiniteJoint& p_i, const FiniteJoint& p_j) {
    Thm1Report rep;
    if (auto problem = pair_shape_problem(p_i, p_j)) {
        rep.detail = *problem;
        return rep;
    }
    // X2 independent of X1 given Y: P(x1,x2,y) P(y) = P(x1,y) P(x2,y).
    for (const FiniteJoint* p : {&p_i, &p_j}) {
        auto py = marginal(*p, Variable::y);
        for (std::size_t a = 0; a < p->n1(); ++a)
            for (std::size_t b = 0; b < p->n2(); ++b)
                for (std::size_t c = 0; c < p->ny(); ++c) {
                    double px1y = 0.0, px2y = 0.0;
                    for (std::size_t bb = 0; bb < p->n2(); ++bb) px1y += p->at(a, bb, c);
                    for (std::size_t aa = 0; aa < p->n1(); ++aa) px2y += p->at(aa, b, c);
                    if (std::abs(p->at(a, b, c) * py[c] - px1y * px2y) > kInputTol) {
                        rep.detail = "x2 is not conditionally independent of x1 given y";
                        return rep;
                    }
                }
    }
    // Shared stable structure and preserved column sums of P(x2 | y).
    auto py_i = marginal(p_i, Variable::y);
    auto py_j = marginal(p_j, Variable::y);
    for (std::size_t a = 0; a < p_i.n1(); ++a)
        for (std::size_t c = 0; c < p_i.ny(); ++c) {
            double mi = 0.0, mj = 0.0;
            for (std::size_t b = 0; b < p_i.n2(); ++b) {
                mi += p_i.at(a, b, c);
                mj += p_j.at(a, b, c);
            }
            if (std::abs(mi - mj) > kInputTol) {
                rep.detail = "P(x1, y) differs between environments";
                return rep;
            }
        }
    for (std::size_t b = 0; b < p_i.n2(); ++b) {
        double si = 0.0, sj = 0.0;
        for (std::size_t c = 0; c < p_i.ny(); ++c) {
            double mi = 0.0, mj = 0.0;
            for (std::size_t a = 0; a < p_i.n1(); ++a) {
                mi += p_i.at(a, b, c);
                mj += p_j.at(a, b, c);
            }
            si += mi / py_i[c];
            sj += mj / py_j[c];
        }
        if (std::abs(si - sj) > kInputTol) {
            rep.detail = "sum over y of P(x2 | y) differs between environments";
            return rep;
        }
    }
    rep.cov_i = covariance_x2y(p_i);
    rep.cov_j = covariance_x2y(p_j);
    if (!(rep.cov_i - rep.cov_j > kInputTol)) {
        rep.detail = "requires Cov(X2,Y;P_i) > Cov(X2,Y;P_j)";
        return rep;
    }

    PartitionPair ji, ij;
    try {
        ji = partition(p_j, conditional_y(p_i));
        ij = partition(p_i, conditional_y(p_j));
    } catch (const DataError& e) {
        rep.detail = e.what();
        return rep;
    }
    if (!ji.wrong || !ij.wrong) {
        rep.detail = "degenerate partition: no mistakes";
        return rep;
    }
    rep.cov_j_wrong = covariance_x2y(*ji.wrong);
    rep.cov_i_wrong = covariance_x2y(*ij.wrong);
    bool ok = rep.cov_j_wrong < -kInputTol && rep.cov_i_wrong > kInputTol;
    rep.status = ok ? TheoremStatus::holds : TheoremStatus::violated;
    if (!ok) rep.detail = "sign flip not observed";
    return rep;
}

Thm2Report verify_thm2(const FiniteJoint& p_i, const FiniteJoint& p_j) {
    Thm2Report rep;
    if (auto problem = pair_shape_problem(p_i, p_j)) {
        rep.detail = *problem;
        return rep;
    }
    if (!(covariance_x2y(p_i) - covariance_x2y(p_j) > kInputTol)) {
        rep.detail = "requires Cov(X2,Y;P_i) > Cov(X2,Y;P_j)";
        return rep;
    }
    PartitionPair ji, ii, ij, jj;
    try {
        auto f_i = conditional_y(p_i);
        auto f_j = conditional_y(p_j);
        ji = partition(p_j, f_i);
        ii = partition(p_i, f_i);
        ij = partition(p_i, f_j);
        jj = partition(p_j, f_j);
    } catch (const DataError& e) {
        rep.detail = e.what();
        return rep;
    }
    rep.alpha_ji = ji.alpha;
    rep.alpha_ii = ii.alpha;
    rep.alpha_ij = ij.alpha;
    rep.alpha_jj = jj.alpha;

    // The balanced form stays defined when a side is empty: its coefficient is 0.
    auto weighted_b = [](const std::optional<FiniteJoint>& q, double w) {
        return q ? w * balanced_covariance_x2y(*q) : 0.0;
    };
    rep.balanced_lhs_upper = weighted_b(ji.wrong, 1.0 - ji.alpha);
    rep.balanced_rhs_upper = weighted_b(ii.correct, ii.alpha) - weighted_b(ji.correct, ji.alpha);
    rep.balanced_lhs_lower = weighted_b(ij.wrong, 1.0 - ij.alpha);
    rep.balanced_rhs_lower = weighted_b(jj.correct, jj.alpha) - weighted_b(ij.correct, ij.alpha);
    bool balanced_ok = rep.balanced_lhs_upper < rep.balanced_rhs_upper &&
                       rep.balanced_lhs_lower > rep.balanced_rhs_lower;
    rep.balanced_status = balanced_ok ? TheoremStatus::holds : TheoremStatus::violated;

    if (!ji.wrong || !ij.wrong || !ii.correct || !ji.correct || !jj.correct || !ij.correct) {
        rep.undefined_bound = true;
        rep.detail = "degenerate alpha: stated bound undefined";
        return rep;
    }
    rep.cov_j_wrong = covariance_x2y(*ji.wrong);
    rep.cov_i_self_correct = covariance_x2y(*ii.correct);
    rep.cov_j_correct = covariance_x2y(*ji.correct);
    rep.cov_i_wrong = covariance_x2y(*ij.wrong);
    rep.cov_j_self_correct = covariance_x2y(*jj.correct);
    rep.cov_i_correct = covariance_x2y(*ij.correct);

    rep.stated_upper = (1.0 - rep.alpha_ji) / rep.alpha_ii * rep.cov_i_self_correct -
                       (1.0 - rep.alpha_ji) / rep.alpha_ji * rep.cov_j_correct;
    rep.stated_lower = (1.0 - rep.alpha_ij) / rep.alpha_jj * rep.cov_j_self_correct -
                       (1.0 - rep.alpha_ij) / rep.alpha_ij * rep.cov_i_correct;
    bool stated_ok = rep.cov_j_wrong < rep.stated_upper && rep.cov_i_wrong > rep.stated_lower;
    rep.status = stated_ok ? TheoremStatus::holds : TheoremStatus::violated;
    if (!stated_ok) rep.detail = "stated covariance bound violated";
    return rep;
}

MarginalOptimalityReport verify_marginal_optimality(std::span<const FiniteJoint> groups,
                                                    double grid_step) {
    if (groups.empty()) throw DataError("verify_marginal_optimality: no groups");
    if (!(grid_step > 0.0 && grid_step < 0.5))
        throw DataError("verify_marginal_optimality: grid_step must lie in (0, 0.5)");
    for (const auto& g : groups) {
        require_binary_x2y(g, "verify_marginal_optimality");
        if (!is_binary_support(g.support_x1()))
            throw DataError("verify_marginal_optimality: x1 must be binary");
        if (!g.same_supports(groups.front()))
            throw DataError("verify_marginal_optimality: support mismatch");
    }
    std::vector<double> grid;
    for (int k = 1;; ++k) {
        double v = k * grid_step;
        if (v > 1.0 - grid_step + 1e-9) break;
        grid.push_back(v);
    }
    const std::size_t m = grid.size();
    const FiniteJoint& ref = groups.front();
    const std::size_t y1 = position_of(ref.support_y(), 1);

    // risk[g][cell][k]: contribution of cell (x1,x2) to group g's log risk
    // when f(y=1 | cell) = grid[k]. Cells are ordered by support index.
    std::vector<double> risk(groups.size() * 4 * m, 0.0);
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (std::size_t cell = 0; cell < 4; ++cell) {
            std::size_t a = cell / 2, b = cell % 2;
            double p1 = groups[g].at(a, b, y1);
            double p0 = groups[g].at(a, b, 1 - y1);
            for (std::size_t k = 0; k < m; ++k)
                risk[(g * 4 + cell) * m + k] = -p1 * std::log(grid[k]) - p0 * std::log(1.0 - grid[k]);
        }

    auto worst = [&](std::size_t k0, std::size_t k1, std::size_t k2, std::size_t k3) {
        double w = -std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < groups.size(); ++g) {
            const double* r = &risk[g * 4 * m];
            w = std::max(w, r[k0] + r[m + k1] + r[2 * m + k2] + r[3 * m + k3]);
        }
        return w;
    };

    MarginalOptimalityReport rep;
    rep.min_risk = std::numeric_limits<double>::infinity();
    std::array<std::size_t, 4> best{};
    for (std::size_t k0 = 0; k0 < m; ++k0)
        for (std::size_t k1 = 0; k1 < m; ++k1)
            for (std::size_t k2 = 0; k2 < m; ++k2)
                for (std::size_t k3 = 0; k3 < m; ++k3) {
                    double w = worst(k0, k1, k2, k3);
                    if (w < rep.min_risk) {
                        rep.min_risk = w;
                        best = {k0, k1, k2, k3};
                    }
                }
    rep.grid_points = m * m * m * m;
    rep.invariant_min_risk = std::numeric_limits<double>::infinity();
    for (std::size_t ka = 0; ka < m; ++ka)
        for (std::size_t kb = 0; kb < m; ++kb)
            rep.invariant_min_risk = std::min(rep.invariant_min_risk, worst(ka, ka, kb, kb));

    for (std::size_t cell = 0; cell < 4; ++cell) {
        // report in value order: x1 value, x2 value
        int x1v = ref.support_x1()[cell / 2];
        int x2v = ref.support_x2()[cell % 2];
        rep.minimizer[x1v][x2v] = grid[best[cell]];
    }
    rep.x2_invariant = true;
    for (int x1v = 0; x1v < 2; ++x1v)
        if (std::abs(rep.minimizer[x1v][0] - rep.minimizer[x1v][1]) > grid_step + 1e-12)
            rep.x2_invariant = false;
    return rep;
}

InterpolationReport interpolation_upper_bound_check(std::span<const FiniteJoint> groups,
                                                    const ConditionalTable& classifier,
                                                    std::size_t trials, std::uint64_t seed) {
    if (trials < 1) throw DataError("interpolation_upper_bound_check: trials must be >= 1");
    InterpolationReport rep;
    rep.worst_group_risk = worst_group_log_risk(classifier, groups);
    rep.max_mixture_risk = -std::numeric_limits<double>::infinity();
    Rng rng(seed);
    std::exponential_distribution<double> expo(1.0);
    for (std::size_t t = 0; t < trials; ++t) {
        std::vector<double> w(groups.size());
        double s = 0.0;
        for (double& v : w) s += (v = expo(rng));
        for (double& v : w) v /= s;
        // renormalize the rounding residue into the largest weight
        double residue = 1.0 - std::accumulate(w.begin(), w.end(), 0.0);
        *std::max_element(w.begin(), w.end()) += residue;
        double r = log_risk(classifier, mixture(groups, MixtureWeights(std::move(w))));
        rep.max_mixture_risk = std::max(rep.max_mixture_risk, r);
        if (!(r <= rep.worst_group_risk + kIdentityTol)) rep.pass = false;
        ++rep.trials;
    }
    return rep;
}

// -- random inputs ------------------------------------------------------------

namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
    std::exponential_distribution<double> expo(1.0);
    std::vector<double> v(n);
    double s = 0.0;
    for (double& x : v) s += (x = expo(rng));
    for (double& x : v) x /= s;
    return v;
}

} // namespace

FiniteJoint random_joint(Rng& rng, std::size_t n1, std::size_t n2, std::size_t ny) {
    return FiniteJoint(iota_support(n1), iota_support(n2), iota_support(ny),
                       random_simplex(rng, n1 * n2 * ny));
}

ConditionalTable random_conditional(Rng& rng, const FiniteJoint& like) {
    std::vector<double> probs;
    probs.reserve(like.cells().size());
    for (std::size_t r = 0; r < like.n1() * like.n2(); ++r) {
        auto row = random_simplex(rng, like.ny());
        probs.insert(probs.end(), row.begin(), row.end());
    }
    return ConditionalTable(like.support_x1(), like.support_x2(), like.support_y(),
                            std::move(probs), std::vector<bool>(like.n1() * like.n2(), true));
}

std::pair<FiniteJoint, FiniteJoint> random_thm1_pair(Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t n1 = 2 + rng() % 2;
    // shared P(x1 | y), each column a random simplex; P(y) = 1/2
    auto col0 = random_simplex(rng, n1);
    auto col1 = random_simplex(rng, n1);
    double a = unif(rng), b = unif(rng);
    double s = a + b;
    double lo = std::max(0.0, s - 1.0), hi = std::min(1.0, s);
    double a2 = lo + (hi - lo) * unif(rng);
    double b2 = s - a2;
    auto build = [&](double q0, double q1) {
        // q_y = P(x2 = 1 | y)
        std::vector<double> cells(n1 * 4);
        for (std::size_t x1 = 0; x1 < n1; ++x1)
            for (std::size_t x2 = 0; x2 < 2; ++x2)
                for (std::size_t y = 0; y < 2; ++y) {
                    double px1 = y == 0 ? col0[x1] : col1[x1];
                    double q = y == 0 ? q0 : q1;
                    cells[(x1 * 2 + x2) * 2 + y] = 0.5 * px1 * (x2 == 1 ? q : 1.0 - q);
                }
        return FiniteJoint(iota_support(n1), {0, 1}, {0, 1}, std::move(cells));
    };
    FiniteJoint p = build(a, b), q = build(a2, b2);
    if (covariance_x2y(p) >= covariance_x2y(q)) return {std::move(p), std::move(q)};
    return {std::move(q), std::move(p)};
}

std::pair<FiniteJoint, FiniteJoint> random_uniform_label_pair(Rng& rng) {
    const std::size_t n1 = 2 + rng() % 2;
    auto build = [&] {
        auto given0 = random_simplex(rng, n1 * 2);
        auto given1 = random_simplex(rng, n1 * 2);
        std::vector<double> cells(n1 * 4);
        for (std::size_t r = 0; r < n1 * 2; ++r) {
            cells[r * 2 + 0] = 0.5 * given0[r];
            cells[r * 2 + 1] = 0.5 * given1[r];
        }
        return FiniteJoint(iota_support(n1), {0, 1}, {0, 1}, std::move(cells));
    };
    FiniteJoint p = build(), q = build();
    if (covariance_x2y(p) >= covariance_x2y(q)) return {std::move(p), std::move(q)};
    return {std::move(q), std::move(p)};
}

bool TheoryBattery::all_passed() const {
    return std::all_of(lines.begin(), lines.end(), [](const BatteryLine& l) { return l.ok(); });
}

TheoryBattery run_theory_battery(std::size_t trials, std::uint64_t seed, double grid_step) {
    if (trials < 1) throw UsageError("theory battery: trials must be >= 1");
    TheoryBattery out;

    {
        BatteryLine line;
        line.name = "prop1-reconstruction";
        Rng rng(seed ^ 0x1001);
        double worst = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            std::size_t n1 = 2 + rng() % 2, n2 = 2 + rng() % 2, ny = 2 + rng() % 2;
            FiniteJoint src = random_joint(rng, n1, n2, ny);
            ConditionalTable f = random_conditional(rng, src);
            Prop1Report r = verify_prop1(src, f);
            ++line.attempted;
            ++line.admissible;
            if (r.pass) ++line.passed;
            worst = std::max(worst, r.max_abs_error);
        }
        std::ostringstream os;
        os << "max cell error " << worst;
        line.note = os.str();
        out.lines.push_back(line);
    }

    {
        BatteryLine line;
        line.name = "thm1-sign-flip";
        Rng rng(seed ^ 0x2002);
        for (std::size_t t = 0; t < trials; ++t) {
            auto [pi, pj] = random_thm1_pair(rng);
            Thm1Report r = verify_thm1(pi, pj);
            ++line.attempted;
            if (r.status == TheoremStatus::precondition_failed) continue;
            ++line.admissible;
            if (r.status == TheoremStatus::holds) ++line.passed;
        }
        out.lines.push_back(line);
    }

    {
        BatteryLine stated;
        stated.name = "thm2-bounds";
        BatteryLine balanced;
        balanced.name = "thm2-balanced-bounds";
        Rng rng(seed ^ 0x3003);
        std::size_t undefined = 0;
        for (std::size_t t = 0; t < trials; ++t) {
            auto [pi, pj] = random_uniform_label_pair(rng);
            Thm2Report r = verify_thm2(pi, pj);
            ++stated.attempted;
            ++balanced.attempted;
            if (r.balanced_status != TheoremStatus::precondition_failed) {
                ++balanced.admissible;
                if (r.balanced_status == TheoremStatus::holds) ++balanced.passed;
            }
            if (r.undefined_bound) ++undefined;
            if (r.status == TheoremStatus::precondition_failed) continue;
            ++stated.admissible;
            if (r.status == TheoremStatus::holds) ++stated.passed;
        }
        std::ostringstream os;
        os << "stated coefficients; undefined bounds " << undefined;
        stated.note = os.str();
        balanced.note = "(1-a) B(Pjix) < a_ii B(Piic) - a_ji B(Pjic)";
        out.lines.push_back(stated);
        out.lines.push_back(balanced);
    }

    FiniteJoint e1 = toy_joint(0.0), e2 = toy_joint(0.1);
    PartitionPair p21 = partition(e2, conditional_y(e1));
    PartitionPair p12 = partition(e1, conditional_y(e2));

    {
        BatteryLine line;
        line.name = "marginal-optimality";
        std::vector<FiniteJoint> pair{*p21.correct, *p21.wrong};
        auto r = verify_marginal_optimality(pair, grid_step);
        line.attempted = line.admissible = 2;
        if (r.x2_invariant) ++line.passed;
        if (std::abs(r.min_risk - r.invariant_min_risk) <= kIdentityTol) ++line.passed;
        std::ostringstream os;
        os << "grid " << grid_step << ", " << r.grid_points << " classifiers, worst risk "
           << r.min_risk;
        line.note = os.str();
        out.lines.push_back(line);
    }

    {
        BatteryLine line;
        line.name = "interpolation-bound";
        std::vector<FiniteJoint> groups{*p12.correct, *p12.wrong, *p21.correct, *p21.wrong};
        // x1-only Bayes rule: P(y = x1) = 0.8
        std::vector<double> probs(8);
        for (int x1 = 0; x1 < 2; ++x1)
            for (int x2 = 0; x2 < 2; ++x2)
                for (int y = 0; y < 2; ++y) probs[(x1 * 2 + x2) * 2 + y] = y == x1 ? 0.8 : 0.2;
        ConditionalTable f({0, 1}, {0, 1}, {0, 1}, probs, std::vector<bool>(4, true));
        // one trial per weight draw, each checked independently
        Rng rng(seed ^ 0x4004);
        for (std::size_t t = 0; t < trials; ++t) {
            auto r = interpolation_upper_bound_check(groups, f, 1, rng());
            ++line.attempted;
            ++line.admissible;
            if (r.pass) ++line.passed;
        }
        out.lines.push_back(line);
    }
    return out;
}

} // namespace stablegroups::distkit
