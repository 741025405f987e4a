#include "stablegroups/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "stablegroups/error.hpp"

namespace stablegroups::analysis {

namespace fs = std::filesystem;

std::string fmt6(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v == 0.0 ? 0.0 : v);
    return buf;
}

std::string fmt6(const std::optional<double>& v) { return v ? fmt6(*v) : "NA"; }

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace

// -- correlation table -----------------------------------------------------------

CorrelationRow correlation_row(const std::string& name, const EnvironmentDataset& data,
                               const PartitionedData& partitions) {
    CorrelationRow row;
    row.dataset = name;
    std::array<std::vector<std::size_t>, 2> env_idx;
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        int e = data.examples[i].env;
        if (e == 0 || e == 1) env_idx[static_cast<std::size_t>(e)].push_back(i);
    }
    if (env_idx[0].empty() || env_idx[1].empty())
        throw DataError("correlation_row: data must contain environments 0 and 1");
    row.values[0] = datagen::spurious_label_pearson(data, env_idx[0]);
    row.values[1] = datagen::spurious_label_pearson(data, env_idx[1]);

    auto find = [&](int source, int classifier, bool correct) -> std::optional<double> {
        for (std::size_t g = 0; g < partitions.meta.size(); ++g) {
            const auto& m = partitions.meta[g];
            if (m.source_env == source && m.classifier_env == classifier && m.correct == correct)
                return datagen::spurious_label_pearson(data, partitions.groups.members[g]);
        }
        return std::nullopt;
    };
    row.values[2] = find(1, 0, true);
    row.values[3] = find(1, 0, false);
    row.values[4] = find(0, 1, true);
    row.values[5] = find(0, 1, false);
    return row;
}

std::string CorrelationTable::to_csv() const {
    std::ostringstream os;
    for (std::size_t c = 0; c < kColumns.size(); ++c) os << (c ? "," : "") << kColumns[c];
    os << '\n';
    for (const auto& r : rows) {
        os << csv_field(r.dataset);
        for (const auto& v : r.values) os << ',' << fmt6(v);
        os << '\n';
    }
    return os.str();
}

nlohmann::json CorrelationTable::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
        nlohmann::json o = {{"dataset", r.dataset}};
        for (std::size_t c = 0; c < r.values.size(); ++c) o[kColumns[c + 1]] = opt_json(r.values[c]);
        rs.push_back(o);
    }
    return {{"kind", "correlation"}, {"columns", kColumns}, {"rows", rs}};
}

CorrelationTable CorrelationTable::from_json(const nlohmann::json& j) {
    CorrelationTable t;
    for (const auto& o : j.at("rows")) {
        CorrelationRow r;
        r.dataset = o.at("dataset").get<std::string>();
        for (std::size_t c = 0; c < r.values.size(); ++c) r.values[c] = opt_from(o.at(kColumns[c + 1]));
        t.rows.push_back(std::move(r));
    }
    return t;
}

// -- sweep -------------------------------------------------------------------------

double SweepCell::gap() const { return std::abs(eta_a - eta_b); }

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) return std::nullopt;
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
            double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    auto ra = ranks(a), rb = ranks(b);
    return datagen::pearson(ra, rb);
}

namespace {

// Gaps such as 0.83 - 0.80 and 0.86 - 0.83 differ in the last bits.
double round_key(double v) { return std::round(v * 1e9) / 1e9; }

} // namespace

SweepSummary summarize(const std::vector<SweepCell>& cells) {
    SweepSummary s;
    std::vector<double> gaps, accs;
    std::map<double, std::pair<double, int>> by_gap, by_min;
    for (const auto& c : cells) {
        if (!c.ok) continue;
        if (!c.control) {
            gaps.push_back(round_key(c.gap()));
            accs.push_back(c.pi_acc);
        }
        auto& g = by_gap[round_key(c.gap())];
        g.first += c.pi_acc;
        ++g.second;
        auto& m = by_min[round_key(std::min(c.eta_a, c.eta_b))];
        m.first += c.pi_acc;
        ++m.second;
        if (c.control && c.erm_acc) {
            double ex = c.pi_acc - *c.erm_acc;
            s.max_control_excess = s.max_control_excess ? std::max(*s.max_control_excess, ex) : ex;
        }
    }
    s.spearman_gap_acc = spearman(gaps, accs);
    for (const auto& [k, v] : by_gap) s.mean_by_gap.emplace_back(k, v.first / v.second);
    for (const auto& [k, v] : by_min) s.mean_by_min_eta.emplace_back(k, v.first / v.second);
    return s;
}

SweepGrid env_gap_sweep(std::vector<double> etas, const CellRunner& run, const SweepOptions& opt) {
    std::vector<double> sorted = etas;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq;
    for (double e : sorted) {
        if (!uniq.empty() && round_key(uniq.back()) == round_key(e)) {
            std::cerr << "warning: duplicate eta " << e << " dropped\n";
            continue;
        }
        uniq.push_back(e);
    }
    if (uniq.size() < 2) throw ConfigError("sweep needs at least two distinct eta values");
    for (double e : uniq)
        if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("sweep: eta values must be in [0, 1]");
    if (opt.workers < 1) throw ConfigError("sweep: workers must be >= 1");

    SweepGrid grid;
    grid.etas = uniq;
    grid.seed = opt.seed;
    for (std::size_t a = 0; a < uniq.size(); ++a)
        for (std::size_t b = a; b < uniq.size(); ++b) {
            if (a == b && !opt.controls) continue;
            SweepCell c;
            c.eta_a = uniq[a];
            c.eta_b = uniq[b];
            c.control = a == b;
            grid.cells.push_back(c);
        }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < grid.cells.size(); k = next++) {
            SweepCell& c = grid.cells[k];
            try {
                CellOutcome out = run(c.eta_a, c.eta_b, opt.seed, c.control);
                c.pi_acc = out.pi_acc;
                c.erm_acc = out.erm_acc;
                c.ok = true;
            } catch (const std::exception& e) {
                c.ok = false;
                c.error = e.what();
            }
        }
    };
    std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(opt.workers), grid.cells.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    grid.summary = summarize(grid.cells);
    return grid;
}

std::size_t SweepGrid::n_ok() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const SweepCell& c) { return c.ok; }));
}

std::string SweepGrid::to_csv() const {
    std::ostringstream os;
    os << "eta";
    for (double e : etas) os << ',' << fmt6(e);
    os << '\n';
    for (double ea : etas) {
        os << fmt6(ea);
        for (double eb : etas) {
            os << ',';
            for (const auto& c : cells)
                if (c.eta_a == ea && c.eta_b == eb) os << (c.ok ? fmt6(c.pi_acc) : std::string("failed"));
        }
        os << '\n';
    }
    return os.str();
}

nlohmann::json SweepGrid::to_json() const {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : cells)
        cs.push_back({{"eta_a", c.eta_a}, {"eta_b", c.eta_b}, {"control", c.control}, {"ok", c.ok},
                      {"error", c.error}, {"pi_acc", c.pi_acc}, {"erm_acc", opt_json(c.erm_acc)}});
    auto pairs = [](const std::vector<std::pair<double, double>>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& [k, m] : v) a.push_back({k, m});
        return a;
    };
    return {{"kind", "sweep"},
            {"etas", etas},
            {"seed", seed},
            {"cells", cs},
            {"summary",
             {{"spearman_gap_acc", opt_json(summary.spearman_gap_acc)},
              {"mean_by_gap", pairs(summary.mean_by_gap)},
              {"mean_by_min_eta", pairs(summary.mean_by_min_eta)},
              {"max_control_excess", opt_json(summary.max_control_excess)}}}};
}

SweepGrid SweepGrid::from_json(const nlohmann::json& j) {
    SweepGrid g;
    g.etas = j.at("etas").get<std::vector<double>>();
    g.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("cells")) {
        SweepCell c;
        c.eta_a = o.at("eta_a").get<double>();
        c.eta_b = o.at("eta_b").get<double>();
        c.control = o.at("control").get<bool>();
        c.ok = o.at("ok").get<bool>();
        c.error = o.at("error").get<std::string>();
        c.pi_acc = o.at("pi_acc").get<double>();
        c.erm_acc = opt_from(o.at("erm_acc"));
        g.cells.push_back(std::move(c));
    }
    const auto& s = j.at("summary");
    g.summary.spearman_gap_acc = opt_from(s.at("spearman_gap_acc"));
    for (const auto& p : s.at("mean_by_gap")) g.summary.mean_by_gap.emplace_back(p[0].get<double>(), p[1].get<double>());
    for (const auto& p : s.at("mean_by_min_eta"))
        g.summary.mean_by_min_eta.emplace_back(p[0].get<double>(), p[1].get<double>());
    g.summary.max_control_excess = opt_from(s.at("max_control_excess"));
    return g;
}

// -- attribute report ------------------------------------------------------------

std::vector<std::string> attribute_names(const EnvironmentDataset& ds) {
    if (ds.examples.empty()) return {};
    std::set<std::string> common;
    for (const auto& [k, v] : ds.examples.front().attrs) common.insert(k);
    for (const auto& e : ds.examples) {
        for (auto it = common.begin(); it != common.end();) {
            if (e.attrs.count(*it)) ++it;
            else it = common.erase(it);
        }
    }
    return {common.begin(), common.end()};
}

AttributeReport attribute_report(const std::vector<int>& predictions, const EnvironmentDataset& ds,
                                 const std::vector<std::string>& attributes, const std::string& model) {
    if (attributes.empty()) throw DataError("attribute_report: no attributes");
    datagen::TrainingView view(ds);
    AttributeReport r;
    r.model = model;
    for (const auto& a : attributes) {
        auto groups = robusttrain::attribute_label_groups(ds, a);
        auto ev = robusttrain::evaluate_groups(predictions, view, groups);
        AttributeRow row;
        row.attribute = a;
        row.worst = ev.worst;
        row.average = ev.average;
        row.excluded = ev.excluded;
        r.grand_worst += row.worst;
        r.grand_average += row.average;
        r.rows.push_back(std::move(row));
    }
    r.grand_worst /= static_cast<double>(r.rows.size());
    r.grand_average /= static_cast<double>(r.rows.size());
    return r;
}

AttributeReport attribute_report(const nnkit::ModelParams& m, const EnvironmentDataset& ds,
                                 const std::vector<std::string>& attributes, const std::string& model) {
    return attribute_report(nnkit::predict_all(m, datagen::TrainingView(ds)), ds, attributes, model);
}

std::string AttributeReport::to_csv() const {
    std::ostringstream os;
    os << "attribute,worst,average,excluded\n";
    for (const auto& r : rows) {
        std::string ex;
        for (const auto& e : r.excluded) ex += (ex.empty() ? "" : ";") + e;
        os << csv_field(r.attribute) << ',' << fmt6(r.worst) << ',' << fmt6(r.average) << ',' << csv_field(ex) << '\n';
    }
    os << "AVERAGE," << fmt6(grand_worst) << ',' << fmt6(grand_average) << ",\n";
    return os.str();
}

nlohmann::json AttributeReport::to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
        rs.push_back({{"attribute", r.attribute}, {"worst", r.worst}, {"average", r.average}, {"excluded", r.excluded}});
    return {{"kind", "attributes"}, {"model", model}, {"rows", rs},
            {"grand_worst", grand_worst}, {"grand_average", grand_average}};
}

AttributeReport AttributeReport::from_json(const nlohmann::json& j) {
    AttributeReport r;
    r.model = j.at("model").get<std::string>();
    for (const auto& o : j.at("rows")) {
        AttributeRow row;
        row.attribute = o.at("attribute").get<std::string>();
        row.worst = o.at("worst").get<double>();
        row.average = o.at("average").get<double>();
        row.excluded = o.at("excluded").get<std::vector<std::string>>();
        r.rows.push_back(std::move(row));
    }
    r.grand_worst = j.at("grand_worst").get<double>();
    r.grand_average = j.at("grand_average").get<double>();
    return r;
}

// -- partition attribute correlations --------------------------------------------

namespace {

std::optional<double> attr_label_pearson(const EnvironmentDataset& ds, const std::vector<std::size_t>& idx,
                                         const std::string& attribute) {
    std::vector<double> a, y;
    a.reserve(idx.size());
    y.reserve(idx.size());
    for (std::size_t i : idx) {
        auto it = ds.examples[i].attrs.find(attribute);
        if (it == ds.examples[i].attrs.end()) throw DataError("example lacks attribute " + attribute);
        a.push_back(it->second);
        y.push_back(ds.examples[i].y);
    }
    return datagen::pearson(a, y);
}

} // namespace

PartitionAttrTable partition_attr_correlations(const PartitionedData& partitions, const EnvironmentDataset& data,
                                               const std::vector<std::string>& attributes, double threshold) {
    if (attributes.empty()) throw DataError("partition_attr_correlations: no attributes");
    PartitionAttrTable t;
    t.groups = partitions.groups.labels;
    t.attributes = attributes;
    t.threshold = threshold;
    std::string env_attr = data.meta.value("env_attribute", std::string());

    std::map<int, std::vector<std::size_t>> by_env;
    for (std::size_t i = 0; i < data.examples.size(); ++i) by_env[data.examples[i].env].push_back(i);

    for (const auto& a : attributes) {
        std::vector<std::optional<double>> row;
        for (const auto& members : partitions.groups.members) row.push_back(attr_label_pearson(data, members, a));

        bool opposite = false;
        for (std::size_t g = 0; g < partitions.meta.size(); ++g) {
            const auto& mg = partitions.meta[g];
            if (!mg.correct) continue;
            for (std::size_t h = 0; h < partitions.meta.size(); ++h) {
                const auto& mh = partitions.meta[h];
                if (mh.correct || mh.source_env != mg.source_env || mh.classifier_env != mg.classifier_env) continue;
                if (!row[g] || !row[h]) continue;
                if ((*row[g] >= threshold && *row[h] <= -threshold) || (*row[g] <= -threshold && *row[h] >= threshold))
                    opposite = true;
            }
        }
        bool correlated = false;
        for (const auto& [env, idx] : by_env) {
            auto r = attr_label_pearson(data, idx, a);
            if (r && std::abs(*r) >= threshold) correlated = true;
        }
        t.corr.push_back(std::move(row));
        t.opposite.push_back(opposite);
        t.label_correlated.push_back(correlated);
        t.environment.push_back(a == env_attr);
    }
    return t;
}

std::size_t PartitionAttrTable::n_label_correlated() const {
    std::size_t n = 0;
    for (std::size_t a = 0; a < attributes.size(); ++a)
        if (label_correlated[a] && !environment[a]) ++n;
    return n;
}

std::size_t PartitionAttrTable::n_flagged() const {
    std::size_t n = 0;
    for (std::size_t a = 0; a < attributes.size(); ++a)
        if (label_correlated[a] && !environment[a] && opposite[a]) ++n;
    return n;
}

std::string PartitionAttrTable::to_csv() const {
    std::ostringstream os;
    os << "attribute";
    for (const auto& g : groups) os << ',' << csv_field(g);
    os << ",opposite,label_correlated,environment\n";
    for (std::size_t a = 0; a < attributes.size(); ++a) {
        os << csv_field(attributes[a]);
        for (const auto& v : corr[a]) os << ',' << fmt6(v);
        os << ',' << (opposite[a] ? 1 : 0) << ',' << (label_correlated[a] ? 1 : 0) << ',' << (environment[a] ? 1 : 0)
           << '\n';
    }
    return os.str();
}

nlohmann::json PartitionAttrTable::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t a = 0; a < attributes.size(); ++a) {
        nlohmann::json c = nlohmann::json::array();
        for (const auto& v : corr[a]) c.push_back(opt_json(v));
        rows.push_back({{"attribute", attributes[a]}, {"corr", c}, {"opposite", static_cast<bool>(opposite[a])},
                        {"label_correlated", static_cast<bool>(label_correlated[a])},
                        {"environment", static_cast<bool>(environment[a])}});
    }
    return {{"kind", "partition_attr"}, {"groups", groups}, {"threshold", threshold}, {"rows", rows},
            {"n_label_correlated", n_label_correlated()}, {"n_flagged", n_flagged()}};
}

PartitionAttrTable PartitionAttrTable::from_json(const nlohmann::json& j) {
    PartitionAttrTable t;
    t.groups = j.at("groups").get<std::vector<std::string>>();
    t.threshold = j.at("threshold").get<double>();
    for (const auto& o : j.at("rows")) {
        t.attributes.push_back(o.at("attribute").get<std::string>());
        std::vector<std::optional<double>> c;
        for (const auto& v : o.at("corr")) c.push_back(opt_from(v));
        t.corr.push_back(std::move(c));
        t.opposite.push_back(o.at("opposite").get<bool>());
        t.label_correlated.push_back(o.at("label_correlated").get<bool>());
        t.environment.push_back(o.at("environment").get<bool>());
    }
    return t;
}

// -- emission -----------------------------------------------------------------------

void emit_report(const std::string& dir, const std::string& run_id, const std::string& kind,
                 const std::string& csv, const nlohmann::json& json) {
    fs::path base = fs::path(dir) / run_id;
    std::error_code ec;
    fs::create_directories(base, ec);
    if (ec) throw DataError("cannot create " + base.string() + ": " + ec.message());
    auto write = [](const fs::path& p, const std::string& body) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + p.string());
        out << body;
        if (!out) throw DataError("write failed: " + p.string());
    };
    write(base / (kind + ".csv"), csv);
    write(base / (kind + ".json"), json.dump(2) + "\n");
}

} // namespace stablegroups::analysis
