#include "stablegroups/datagen.hpp"

#include <fstream>
#include <sstream>

namespace stablegroups::datagen {

namespace {

nlohmann::json header_of(const EnvironmentDataset& ds) {
    return {{"K", ds.n_classes}, {"d", ds.n_features}, {"envs", ds.env_ids}, {"meta", ds.meta}};
}

nlohmann::json example_to_json(const Example& e) {
    nlohmann::json j = nlohmann::json::object();
    if (e.sparse) {
        nlohmann::json fs = nlohmann::json::array();
        for (const auto& [k, v] : e.fs) fs.push_back({k, v});
        j["fs"] = std::move(fs);
    } else {
        j["f"] = e.dense;
    }
    j["y"] = e.y;
    j["env"] = e.env;
    j["sp"] = e.sp;
    if (!e.attrs.empty()) j["attrs"] = e.attrs;
    return j;
}

Example example_from_json(const nlohmann::json& j) {
    Example e;
    if (j.contains("fs")) {
        e.sparse = true;
        for (const auto& p : j.at("fs")) e.fs.emplace_back(p.at(0).get<std::uint32_t>(), p.at(1).get<double>());
    } else {
        e.dense = j.at("f").get<std::vector<double>>();
    }
    e.y = j.at("y").get<int>();
    e.env = j.at("env").get<int>();
    e.sp = j.value("sp", 0);
    if (j.contains("attrs")) e.attrs = j.at("attrs").get<std::map<std::string, int>>();
    return e;
}

} // namespace

std::string to_ndjson(const EnvironmentDataset& ds) {
    std::string out = header_of(ds).dump();
    out.push_back('\n');
    for (const auto& e : ds.examples) {
        out += example_to_json(e).dump();
        out.push_back('\n');
    }
    return out;
}

void write_ndjson(const EnvironmentDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path);
    std::string s = to_ndjson(ds);
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!os) throw DataError("write failed: " + path);
}

EnvironmentDataset read_ndjson(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    EnvironmentDataset ds;
    std::string line;
    std::size_t lineno = 0;
    try {
        if (!std::getline(in, line)) throw DataError(path + ": empty file");
        ++lineno;
        auto h = nlohmann::json::parse(line);
        ds.n_classes = h.at("K").get<int>();
        ds.n_features = h.at("d").get<int>();
        ds.env_ids = h.at("envs").get<std::vector<int>>();
        ds.meta = h.value("meta", nlohmann::json::object());
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            ds.examples.push_back(example_from_json(nlohmann::json::parse(line)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ds.validate();
    return ds;
}

} // namespace stablegroups::datagen
