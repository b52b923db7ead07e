#include "sdforge/experiment.hpp"

#include <cmath>
#include <set>

#include "sdforge/error.hpp"
#include "sdforge/serialize.hpp"
#include "sdforge/simulator.hpp"

namespace sdforge {

using nlohmann::json;

std::optional<std::size_t> UncertaintySpace::index_of(std::string_view name) const {
    for (std::size_t d = 0; d < dims.size(); ++d)
        if (dims[d].name == name) return d;
    return std::nullopt;
}

UncertaintySpace UncertaintySpace::unit_cube(std::size_t k) {
    UncertaintySpace s;
    for (std::size_t d = 0; d < k; ++d)
        s.dims.push_back({"x" + std::to_string(d + 1), 0.0, 1.0, 0.5});
    return s;
}

std::string to_string(Comparator c) {
    switch (c) {
    case Comparator::DeltaNonNeg: return "delta_nonneg";
    }
    return "unknown";
}

Comparator comparator_from_string(const std::string& s) {
    if (s == "delta_nonneg") return Comparator::DeltaNonNeg;
    throw ValidationError("unknown rule comparator '" + s + "'");
}

void validate(const ExperimentConfig& cfg) {
    if (cfg.space.dims.empty()) throw ValidationError("space must have at least one dimension");
    std::set<std::string> seen;
    for (const auto& d : cfg.space.dims) {
        if (d.name.empty()) throw ValidationError("dimension with empty name");
        if (!seen.insert(d.name).second)
            throw ValidationError("duplicate dimension name '" + d.name + "'");
        if (!std::isfinite(d.low) || !std::isfinite(d.high) || !(d.low < d.high))
            throw ValidationError("dimension '" + d.name + "': low must be < high");
        if (!(d.low <= d.baseline && d.baseline <= d.high))
            throw ValidationError("dimension '" + d.name + "': baseline outside [low, high]");
    }
    if (!(cfg.lever.delta >= 0.0) || !std::isfinite(cfg.lever.delta))
        throw ValidationError("lever delta must be >= 0");
    if (cfg.n_scenarios < 1) throw ValidationError("n_scenarios must be >= 1");
    const Simulator& sim = find_simulator(cfg.simulator_id);
    check_binding(sim.spec(), cfg.space);
    if (cfg.profile) {
        const auto& p = *cfg.profile;
        if (p.vegetation < 0 || p.building < 0 || p.person < 0 || p.filler < 0)
            throw ValidationError("profile parts must be >= 0");
        if (std::abs(p.total() - 100.0) > 1e-6)
            throw ValidationError("profile parts must sum to 100");
    }
    if (cfg.simulator_id == "stress_surrogate" && !cfg.profile)
        throw ValidationError("simulator 'stress_surrogate' requires a path profile");
}

namespace {

template <class T>
T required(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key))
        throw ValidationError(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(where + ": bad value for '" + key + "': " + e.what());
    }
}

} // namespace

ExperimentConfig experiment_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("experiment must be a JSON object");
    ExperimentConfig cfg;
    cfg.name = j.value("name", std::string{});
    const json& space = j.contains("space") ? j.at("space") : json();
    if (!space.is_object() || !space.contains("dims") || !space.at("dims").is_array())
        throw ValidationError("experiment: missing 'space.dims' array");
    for (const auto& d : space.at("dims")) {
        UncertaintyDim dim;
        dim.name = required<std::string>(d, "name", "space.dims[]");
        const std::string where = "dimension '" + dim.name + "'";
        dim.low = required<double>(d, "low", where);
        dim.high = required<double>(d, "high", where);
        dim.baseline = required<double>(d, "baseline", where);
        cfg.space.dims.push_back(std::move(dim));
    }
    const json& lever = j.contains("lever") ? j.at("lever") : json();
    cfg.lever.name = required<std::string>(lever, "name", "lever");
    cfg.lever.delta = required<double>(lever, "delta", "lever");
    cfg.simulator_id = required<std::string>(j, "simulator_id", "experiment");
    const json& rule = j.contains("rule") ? j.at("rule") : json();
    cfg.rule.comparator = comparator_from_string(required<std::string>(rule, "comparator", "rule"));
    if (rule.contains("description")) cfg.rule.description = rule.at("description").get<std::string>();
    const json& seed = j.contains("seed") ? j.at("seed") : json();
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
        throw ValidationError("experiment: 'seed' must be a non-negative integer");
    cfg.seed = seed.get<std::uint64_t>();
    const json& n = j.contains("n_scenarios") ? j.at("n_scenarios") : json();
    if (!n.is_number_integer() || n.get<long long>() < 1)
        throw ValidationError("experiment: 'n_scenarios' must be a positive integer");
    cfg.n_scenarios = n.get<std::size_t>();
    if (j.contains("profile")) {
        const json& p = j.at("profile");
        cfg.profile = PathProfile{required<double>(p, "vegetation", "profile"),
                                  required<double>(p, "building", "profile"),
                                  required<double>(p, "person", "profile"),
                                  required<double>(p, "filler", "profile")};
    }
    validate(cfg);
    return cfg;
}

json to_json(const ExperimentConfig& cfg) {
    json dims = json::array();
    for (const auto& d : cfg.space.dims)
        dims.push_back({{"name", d.name}, {"low", d.low}, {"high", d.high}, {"baseline", d.baseline}});
    json j = {
        {"name", cfg.name},
        {"space", {{"dims", dims}}},
        {"lever", {{"name", cfg.lever.name}, {"delta", cfg.lever.delta}}},
        {"simulator_id", cfg.simulator_id},
        {"rule", {{"comparator", to_string(cfg.rule.comparator)}, {"description", cfg.rule.description}}},
        {"seed", cfg.seed},
        {"n_scenarios", cfg.n_scenarios},
    };
    if (cfg.profile) {
        j["profile"] = {{"vegetation", cfg.profile->vegetation},
                        {"building", cfg.profile->building},
                        {"person", cfg.profile->person},
                        {"filler", cfg.profile->filler}};
    }
    return j;
}

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ValidationError("override '" + ov + "' is not key=value");
        const std::string key = ov.substr(0, eq);
        const std::string raw = ov.substr(eq + 1);

        json* node = &doc;
        std::size_t pos = 0;
        while (true) {
            const auto dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
            if (node->is_object()) {
                if (!node->contains(part))
                    throw ValidationError("override key '" + key + "' does not exist in the config");
                node = &(*node)[part];
            } else if (node->is_array()) {
                std::size_t idx = 0;
                try {
                    std::size_t used = 0;
                    idx = std::stoul(part, &used);
                    if (used != part.size()) throw std::invalid_argument(part);
                } catch (const std::exception&) {
                    throw ValidationError("override key '" + key + "': '" + part + "' is not an index");
                }
                if (idx >= node->size())
                    throw ValidationError("override key '" + key + "': index out of range");
                node = &(*node)[idx];
            } else {
                throw ValidationError("override key '" + key + "' does not exist in the config");
            }
            if (dot == std::string::npos) break;
            pos = dot + 1;
        }
        json value = json::parse(raw, nullptr, false);
        if (value.is_discarded()) value = raw;
        *node = value;
    }
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return load_experiment(path, {});
}

ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides) {
    if (!std::filesystem::exists(path))
        throw ValidationError("experiment file not found: " + path.string());
    json doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded()) throw ParseError("malformed experiment file: " + path.string());
    apply_overrides(doc, overrides);
    return experiment_from_json(doc);
}

Eigen::VectorXd baseline_point(const ExperimentConfig& cfg) {
    Eigen::VectorXd p(static_cast<Eigen::Index>(cfg.space.k()));
    for (std::size_t d = 0; d < cfg.space.k(); ++d) p(static_cast<Eigen::Index>(d)) = cfg.space.dims[d].baseline;
    return p;
}

} // namespace sdforge
