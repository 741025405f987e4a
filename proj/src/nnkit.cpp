#include "stablegroups/nnkit.hpp"

#include "stablegroups/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace stablegroups::nnkit {

std::string to_string(Arch a) { return a == Arch::linear ? "linear" : "mlp"; }

Arch parse_arch(const std::string& s) {
    if (s == "linear") return Arch::linear;
    if (s == "mlp") return Arch::mlp;
    throw ConfigError("unknown architecture '" + s + "'");
}

// -- ModelParams -----------------------------------------------------------------

namespace {

std::size_t param_count(Arch arch, std::size_t d, std::size_t k, std::size_t h) {
    return arch == Arch::linear ? d * k + k : d * h + h + h * k + k;
}

void check_dims(Arch arch, int d, int k, int h, double dropout) {
    if (d <= 0 || k < 2) throw ConfigError("model: input_dim must be > 0 and n_classes >= 2");
    if (arch == Arch::mlp && h <= 0) throw ConfigError("model: mlp hidden width must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0,1)");
}

} // namespace

ModelParams ModelParams::zeros(Arch arch, int input_dim, int n_classes, int hidden) {
    check_dims(arch, input_dim, n_classes, hidden, 0.0);
    ModelParams m;
    m.arch = arch;
    m.input_dim = input_dim;
    m.n_classes = n_classes;
    m.hidden = arch == Arch::mlp ? hidden : 0;
    m.w.assign(param_count(arch, input_dim, n_classes, m.hidden), 0.0);
    return m;
}

ModelParams ModelParams::init(Arch arch, int input_dim, int n_classes, int hidden, double dropout,
                              std::uint64_t seed) {
    check_dims(arch, input_dim, n_classes, hidden, dropout);
    ModelParams m = zeros(arch, input_dim, n_classes, hidden);
    m.dropout = dropout;
    Rng rng(seed);
    auto fill = [&](std::size_t begin, std::size_t fan_in, std::size_t fan_out) {
        double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> u(-a, a);
        for (std::size_t i = 0; i < fan_in * fan_out; ++i) m.w[begin + i] = u(rng);
    };
    const auto d = static_cast<std::size_t>(input_dim), k = static_cast<std::size_t>(n_classes);
    if (arch == Arch::mlp) {
        const auto h = static_cast<std::size_t>(hidden);
        fill(0, d, h);
        fill(m.off_w2(), h, k);
    }
    return m;
}

std::size_t ModelParams::off_b1() const {
    return static_cast<std::size_t>(input_dim) *
           static_cast<std::size_t>(arch == Arch::linear ? n_classes : hidden);
}
std::size_t ModelParams::off_w2() const { return off_b1() + static_cast<std::size_t>(hidden); }
std::size_t ModelParams::off_b2() const {
    return off_w2() + static_cast<std::size_t>(hidden) * static_cast<std::size_t>(n_classes);
}

std::vector<std::pair<std::size_t, std::size_t>> ModelParams::weight_ranges() const {
    if (arch == Arch::linear) return {{0, off_b1()}};
    return {{0, off_b1()}, {off_w2(), off_b2()}};
}

double ModelParams::linear_feature_weight(int k) const {
    if (arch != Arch::linear || n_classes != 2) throw ConfigError("linear_feature_weight: binary linear models only");
    auto base = static_cast<std::size_t>(k) * 2;
    return w.at(base + 1) - w.at(base);
}

void ModelParams::validate() const {
    check_dims(arch, input_dim, n_classes, hidden, dropout);
    if (w.size() != param_count(arch, input_dim, n_classes, hidden))
        throw DataError("model: parameter count does not match architecture");
    for (double x : w)
        if (!std::isfinite(x)) throw NumericError("model: non-finite parameter");
}

nlohmann::json ModelParams::to_json() const {
    nlohmann::json j = {{"architecture", {{"kind", to_string(arch)}, {"input_dim", input_dim},
                                          {"n_classes", n_classes}, {"hidden", hidden},
                                          {"dropout", dropout}}}};
    auto slice = [&](std::size_t a, std::size_t b) {
        return std::vector<double>(w.begin() + static_cast<std::ptrdiff_t>(a), w.begin() + static_cast<std::ptrdiff_t>(b));
    };
    if (arch == Arch::linear) {
        j["W"] = slice(0, off_b1());
        j["b"] = slice(off_b1(), w.size());
    } else {
        j["W1"] = slice(0, off_b1());
        j["b1"] = slice(off_b1(), off_w2());
        j["W2"] = slice(off_w2(), off_b2());
        j["b2"] = slice(off_b2(), w.size());
    }
    return j;
}

ModelParams ModelParams::from_json(const nlohmann::json& j) {
    try {
        const auto& a = j.at("architecture");
        ModelParams m = zeros(parse_arch(a.at("kind").get<std::string>()), a.at("input_dim").get<int>(),
                              a.at("n_classes").get<int>(), a.value("hidden", 0));
        m.dropout = a.value("dropout", 0.0);
        std::vector<double> flat;
        for (const char* key : m.arch == Arch::linear ? std::vector<const char*>{"W", "b"}
                                                       : std::vector<const char*>{"W1", "b1", "W2", "b2"}) {
            auto part = j.at(key).get<std::vector<double>>();
            flat.insert(flat.end(), part.begin(), part.end());
        }
        if (flat.size() != m.w.size()) throw DataError("checkpoint: parameter count mismatch");
        m.w = std::move(flat);
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

void ModelParams::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write " + path);
    os << to_json().dump() << '\n';
}

ModelParams ModelParams::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

// -- forward / backward ------------------------------------------------------------

namespace {

struct Work {
    std::vector<double> z;      // mlp pre-activation
    std::vector<double> h;      // mlp hidden after ReLU and dropout
    std::vector<double> hmask;  // mlp dropout scale per hidden unit
    std::vector<double> logits; // then probabilities
    std::vector<SparseEntry> xs; // linear: effective (dropped, scaled) input
};

void softmax_inplace(std::vector<double>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double& x : v) s += (x = std::exp(x - mx));
    for (double& x : v) x /= s;
}

/// Effective input as a sparse list (dense rows become index/value pairs).
void gather_input(const InputRef& x, bool drop, double rate, Rng* rng, std::vector<SparseEntry>& out) {
    out.clear();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double scale = drop ? 1.0 / (1.0 - rate) : 1.0;
    auto push = [&](std::uint32_t k, double v) {
        if (drop) {
            if (u(*rng) >= 1.0 - rate) return;
            v *= scale;
        }
        if (v != 0.0) out.emplace_back(k, v);
    };
    if (x.sparse) {
        for (const auto& [k, v] : x.fs) push(k, v);
    } else {
        for (std::size_t k = 0; k < x.dense.size(); ++k) push(static_cast<std::uint32_t>(k), x.dense[k]);
    }
}

void check_input(const ModelParams& m, const InputRef& x) {
    if (x.sparse) {
        for (const auto& [k, v] : x.fs) {
            if (k >= static_cast<std::uint32_t>(m.input_dim)) throw DataError("input index out of range");
            if (!std::isfinite(v)) throw NumericError("non-finite input");
        }
    } else {
        if (x.dense.size() != static_cast<std::size_t>(m.input_dim)) throw DataError("input length mismatch");
        for (double v : x.dense)
            if (!std::isfinite(v)) throw NumericError("non-finite input");
    }
}

void forward_into(const ModelParams& m, const InputRef& x, bool train, Rng* rng, Work& w) {
    const auto K = static_cast<std::size_t>(m.n_classes);
    const bool drop = train && m.dropout > 0.0;
    if (drop && rng == nullptr) throw ConfigError("forward: dropout in train mode needs an rng");
    if (m.arch == Arch::linear) {
        gather_input(x, drop, m.dropout, rng, w.xs);
        w.logits.assign(m.w.begin() + static_cast<std::ptrdiff_t>(m.off_b1()), m.w.end());
        for (const auto& [k, v] : w.xs) {
            const double* row = &m.w[k * K];
            for (std::size_t c = 0; c < K; ++c) w.logits[c] += v * row[c];
        }
    } else {
        const auto H = static_cast<std::size_t>(m.hidden);
        gather_input(x, false, 0.0, nullptr, w.xs);
        w.z.assign(m.w.begin() + static_cast<std::ptrdiff_t>(m.off_b1()),
                   m.w.begin() + static_cast<std::ptrdiff_t>(m.off_w2()));
        for (const auto& [k, v] : w.xs) {
            const double* row = &m.w[k * H];
            for (std::size_t j = 0; j < H; ++j) w.z[j] += v * row[j];
        }
        w.h.resize(H);
        w.hmask.assign(H, 1.0);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t j = 0; j < H; ++j) {
            if (drop) w.hmask[j] = u(*rng) < 1.0 - m.dropout ? 1.0 / (1.0 - m.dropout) : 0.0;
            w.h[j] = w.z[j] > 0.0 ? w.z[j] * w.hmask[j] : 0.0;
        }
        w.logits.assign(m.w.begin() + static_cast<std::ptrdiff_t>(m.off_b2()), m.w.end());
        const double* w2 = &m.w[m.off_w2()];
        for (std::size_t j = 0; j < H; ++j) {
            if (w.h[j] == 0.0) continue;
            for (std::size_t c = 0; c < K; ++c) w.logits[c] += w.h[j] * w2[j * K + c];
        }
    }
    softmax_inplace(w.logits);
}

/// Mean clamped cross-entropy over idx; accumulates the mean-loss gradient
/// into `grad` when non-null.
double run_batch(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx,
                 bool train, std::uint64_t seed, std::vector<double>* grad) {
    if (idx.empty()) throw DataError("empty batch");
    const auto K = static_cast<std::size_t>(m.n_classes);
    const auto H = static_cast<std::size_t>(m.hidden);
    const double inv_n = 1.0 / static_cast<double>(idx.size());
    Rng rng(seed);
    Work w;
    std::vector<double> dlog(K), dh(H);
    double total = 0.0;
    for (std::size_t i : idx) {
        InputRef x = InputRef::of(v, i);
        forward_into(m, x, train, &rng, w);
        const int y = v.label(i);
        const double py = w.logits[static_cast<std::size_t>(y)];
        if (std::isnan(py)) throw NumericError("loss is NaN");
        const bool clamped = py < kProbFloor;
        total += -std::log(clamped ? kProbFloor : py);
        if (!grad || clamped) continue;

        for (std::size_t c = 0; c < K; ++c) dlog[c] = (w.logits[c] - (static_cast<int>(c) == y ? 1.0 : 0.0)) * inv_n;
        double* g = grad->data();
        if (m.arch == Arch::linear) {
            for (const auto& [k, xv] : w.xs) {
                double* row = g + k * K;
                for (std::size_t c = 0; c < K; ++c) row[c] += xv * dlog[c];
            }
            double* gb = g + m.off_b1();
            for (std::size_t c = 0; c < K; ++c) gb[c] += dlog[c];
        } else {
            const double* w2 = &m.w[m.off_w2()];
            double* gw2 = g + m.off_w2();
            double* gb2 = g + m.off_b2();
            for (std::size_t c = 0; c < K; ++c) gb2[c] += dlog[c];
            for (std::size_t j = 0; j < H; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < K; ++c) {
                    acc += w2[j * K + c] * dlog[c];
                    if (w.h[j] != 0.0) gw2[j * K + c] += w.h[j] * dlog[c];
                }
                dh[j] = w.z[j] > 0.0 ? acc * w.hmask[j] : 0.0;
            }
            double* gb1 = g + m.off_b1();
            for (std::size_t j = 0; j < H; ++j) gb1[j] += dh[j];
            for (const auto& [k, xv] : w.xs) {
                double* row = g + k * H;
                for (std::size_t j = 0; j < H; ++j) row[j] += xv * dh[j];
            }
        }
    }
    double loss = total * inv_n;
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    return loss;
}

} // namespace

std::vector<double> forward(const ModelParams& m, const InputRef& x, bool train_mode, Rng* rng) {
    m.validate();
    check_input(m, x);
    Work w;
    forward_into(m, x, train_mode, rng, w);
    return w.logits;
}

double cross_entropy(std::span<const double> probs, int y) {
    double p = probs[static_cast<std::size_t>(y)];
    if (std::isnan(p)) throw NumericError("cross_entropy: NaN probability");
    return -std::log(std::max(p, kProbFloor));
}

double batch_loss(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx) {
    return run_batch(m, v, idx, false, 0, nullptr);
}

double train_loss(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx,
                  std::uint64_t dropout_seed) {
    return run_batch(m, v, idx, true, dropout_seed, nullptr);
}

LossGrad loss_and_grad(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx,
                       double decay, bool train_mode, std::uint64_t dropout_seed) {
    LossGrad out;
    out.grad.assign(m.size(), 0.0);
    out.loss = run_batch(m, v, idx, train_mode, dropout_seed, &out.grad);
    if (decay != 0.0) {
        double sq = 0.0;
        for (auto [a, b] : m.weight_ranges())
            for (std::size_t i = a; i < b; ++i) {
                sq += m.w[i] * m.w[i];
                out.grad[i] += decay * m.w[i];
            }
        out.loss += 0.5 * decay * sq;
    }
    return out;
}

// -- optimizers ----------------------------------------------------------------

OptimState OptimState::make(OptAlgo algo, double lr, double weight_decay, std::size_t n_params) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    OptimState s;
    s.algo = algo;
    s.lr = lr;
    s.weight_decay = weight_decay;
    if (algo == OptAlgo::adam) {
        s.m.assign(n_params, 0.0);
        s.v.assign(n_params, 0.0);
    }
    return s;
}

void step(ModelParams& m, std::span<const double> grad, OptimState& opt) {
    if (grad.size() != m.size()) throw DataError("step: gradient shape mismatch");
    ++opt.t;
    if (opt.algo == OptAlgo::sgd) {
        for (std::size_t i = 0; i < grad.size(); ++i) m.w[i] -= opt.lr * grad[i];
        return;
    }
    if (opt.m.size() != m.size() || opt.v.size() != m.size()) throw DataError("step: optimizer state shape mismatch");
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        m.w[i] -= opt.lr * (opt.m[i] / c1) / (std::sqrt(opt.v[i] / c2) + opt.eps);
    }
}

// -- prediction ----------------------------------------------------------------

int predict(const ModelParams& m, const InputRef& x) {
    Work w;
    forward_into(m, x, false, nullptr, w);
    // max_element returns the first maximum, i.e. the lowest class id.
    return static_cast<int>(std::max_element(w.logits.begin(), w.logits.end()) - w.logits.begin());
}

std::vector<int> predict_all(const ModelParams& m, const TrainingView& v) {
    std::vector<int> out(v.size());
    Work w;
    for (std::size_t i = 0; i < v.size(); ++i) {
        forward_into(m, InputRef::of(v, i), false, nullptr, w);
        out[i] = static_cast<int>(std::max_element(w.logits.begin(), w.logits.end()) - w.logits.begin());
    }
    return out;
}

double accuracy(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx) {
    if (idx.empty()) throw DataError("accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t i : idx)
        if (predict(m, InputRef::of(v, i)) == v.label(i)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(idx.size());
}

double accuracy(const ModelParams& m, const TrainingView& v) {
    std::vector<std::size_t> all(v.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return accuracy(m, v, all);
}

// -- gradient check ------------------------------------------------------------

GradCheckReport grad_check(const ModelParams& m, const TrainingView& v, std::span<const std::size_t> idx,
                           double decay, std::uint64_t dropout_seed) {
    const bool train = m.dropout > 0.0;
    LossGrad analytic = loss_and_grad(m, v, idx, decay, train, dropout_seed);
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> tensors;
    if (m.arch == Arch::linear) {
        tensors = {{"W", {0, m.off_b1()}}, {"b", {m.off_b1(), m.size()}}};
    } else {
        tensors = {{"W1", {0, m.off_b1()}}, {"b1", {m.off_b1(), m.off_w2()}},
                   {"W2", {m.off_w2(), m.off_b2()}}, {"b2", {m.off_b2(), m.size()}}};
    }
    ModelParams probe = m;
    GradCheckReport rep;
    for (const auto& [name, range] : tensors) {
        double worst = 0.0;
        for (std::size_t i = range.first; i < range.second; ++i) {
            const double w0 = m.w[i];
            const double h = 1e-5 * std::max(1.0, std::abs(w0));
            probe.w[i] = w0 + h;
            double lp = loss_and_grad(probe, v, idx, decay, train, dropout_seed).loss;
            probe.w[i] = w0 - h;
            double lm = loss_and_grad(probe, v, idx, decay, train, dropout_seed).loss;
            probe.w[i] = w0;
            double numeric = (lp - lm) / (2.0 * h);
            double a = analytic.grad[i];
            double rel = std::abs(a - numeric) / std::max(1e-7, std::abs(a) + std::abs(numeric));
            worst = std::max(worst, rel);
        }
        rep.max_rel_err.emplace_back(name, worst);
        rep.worst = std::max(rep.worst, worst);
    }
    rep.pass = rep.worst < 1e-4;
    return rep;
}

} // namespace stablegroups::nnkit
