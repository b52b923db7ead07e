#include "sdforge/simulator.hpp"

#include <array>
#include <cmath>
#include <map>
#include <memory>

#include "sdforge/error.hpp"

namespace sdforge {

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

PathProfile normalize_features(double vegetation, double building, double person, double filler) {
    if (vegetation < 0 || building < 0 || person < 0 || filler < 0)
        throw ValidationError("normalize_features: negative input");
    const double sum = vegetation + building + person + filler;
    if (sum <= 100.0) return {vegetation, building, person, 100.0 - (vegetation + building + person)};
    const double scale = 100.0 / sum;
    return {vegetation * scale, building * scale, person * scale, filler * scale};
}

double stress_surrogate(double v, double b, double p, double e) {
    const auto in_pct = [](double x) { return x >= 0.0 && x <= 100.0; };
    if (!in_pct(v) || !in_pct(b) || !in_pct(p) || !(e >= 1.0 && e <= 5.0))
        throw ValidationError("stress_surrogate: input out of range");
    return 2.0 * logistic((b - 30.0) / 12.0) + 1.5 * logistic((p - 12.0) / 6.0) -
           1.8 * logistic((v - 18.0) / 10.0) * (1.0 - 0.5 * logistic((e - 3.8) / 0.15)) +
           0.35 * logistic((b - 40.0) / 10.0) * logistic((e - 3.6) / 0.2) * std::sin(0.45 * v);
}

ScenarioOutcome run_scenario(const ExperimentConfig& cfg, std::span<const double> point,
                             const PathProfile& profile) {
    if (cfg.simulator_id != "stress_surrogate")
        throw ValidationError("run_scenario: experiment is bound to '" + cfg.simulator_id +
                              "', not 'stress_surrogate'");
    if (point.size() != 3) throw ValidationError("run_scenario: expected (building, person, extraversion)");
    const double building = point[0];
    const double person = point[1];
    const double extraversion = point[2];

    // The filler class is the slack that keeps the composition at 100.
    const PathProfile base = normalize_features(profile.vegetation, building, person, 0.0);
    const PathProfile policy =
        normalize_features(profile.vegetation + cfg.lever.delta, building, person, 0.0);

    ScenarioOutcome out;
    out.stress_baseline = stress_surrogate(base.vegetation, base.building, base.person, extraversion);
    out.stress_policy = stress_surrogate(policy.vegetation, policy.building, policy.person, extraversion);
    out.delta = out.stress_policy - out.stress_baseline;
    return out;
}

int oracle_box(std::span<const double> x) {
    if (x.size() < 2) throw ValidationError("oracle_box needs at least 2 dimensions");
    return (x[0] >= 0.2 && x[0] <= 0.5 && x[1] >= 0.6 && x[1] <= 0.9) ? 1 : 0;
}

int oracle_ring(std::span<const double> x) {
    if (x.size() < 2) throw ValidationError("oracle_ring needs at least 2 dimensions");
    const double r = std::hypot(x[0] - 0.5, x[1] - 0.5);
    return (r >= 0.25 && r <= 0.45) ? 1 : 0;
}

namespace {

class StressSurrogateSim final : public Simulator {
public:
    StressSurrogateSim() : spec_{"stress_surrogate", {"building", "person", "extraversion"}, 3, "delta_stress", true} {}
    const SimulatorSpec& spec() const override { return spec_; }
    ScenarioOutcome evaluate(const ExperimentConfig& cfg, std::span<const double> point) const override {
        if (!cfg.profile) throw ValidationError("stress_surrogate requires a path profile");
        return run_scenario(cfg, point, *cfg.profile);
    }

private:
    SimulatorSpec spec_;
};

// Oracles see the point mapped to the unit cube; the outcome delta is +1 for
// points in the planted region and -1 elsewhere.
class OracleSim final : public Simulator {
public:
    using Fn = int (*)(std::span<const double>);
    OracleSim(std::string id, Fn fn) : spec_{std::move(id), {}, 2, "indicator", true}, fn_(fn) {}
    const SimulatorSpec& spec() const override { return spec_; }
    ScenarioOutcome evaluate(const ExperimentConfig& cfg, std::span<const double> point) const override {
        std::vector<double> unit(point.size());
        for (std::size_t d = 0; d < point.size(); ++d)
            unit[d] = (point[d] - cfg.space.dims[d].low) / cfg.space.width(d);
        const double delta = fn_(unit) == 1 ? 1.0 : -1.0;
        return {0.0, delta, delta};
    }

private:
    SimulatorSpec spec_;
    Fn fn_;
};

const std::map<std::string, std::unique_ptr<Simulator>>& registry() {
    static const auto reg = [] {
        std::map<std::string, std::unique_ptr<Simulator>> m;
        m.emplace("stress_surrogate", std::make_unique<StressSurrogateSim>());
        m.emplace("oracle_box", std::make_unique<OracleSim>("oracle_box", &oracle_box));
        m.emplace("oracle_ring", std::make_unique<OracleSim>("oracle_ring", &oracle_ring));
        return m;
    }();
    return reg;
}

} // namespace

const Simulator& find_simulator(const std::string& id) {
    const auto& reg = registry();
    const auto it = reg.find(id);
    if (it == reg.end()) throw ValidationError("unknown simulator_id '" + id + "'");
    return *it->second;
}

std::vector<std::string> simulator_ids() {
    std::vector<std::string> ids;
    for (const auto& [id, _] : registry()) ids.push_back(id);
    return ids;
}

void check_binding(const SimulatorSpec& spec, const UncertaintySpace& space) {
    if (space.k() < spec.min_dims)
        throw ValidationError("simulator '" + spec.id + "' needs at least " +
                              std::to_string(spec.min_dims) + " dimensions");
    if (spec.input_dims.empty()) return;
    if (spec.input_dims.size() != space.k())
        throw ValidationError("simulator '" + spec.id + "' expects " +
                              std::to_string(spec.input_dims.size()) + " dimensions");
    for (std::size_t d = 0; d < space.k(); ++d) {
        if (spec.input_dims[d] != space.dims[d].name)
            throw ValidationError("simulator '" + spec.id + "' expects dimension " + std::to_string(d) +
                                  " to be '" + spec.input_dims[d] + "', got '" + space.dims[d].name + "'");
    }
}

std::vector<ScenarioOutcome> simulate_batch(const ExperimentConfig& cfg, const Eigen::MatrixXd& points) {
    const Simulator& sim = find_simulator(cfg.simulator_id);
    if (static_cast<std::size_t>(points.cols()) != cfg.space.k())
        throw ValidationError("simulate: point dimension does not match the space");
    std::vector<ScenarioOutcome> out;
    out.reserve(static_cast<std::size_t>(points.rows()));
    std::vector<double> row(cfg.space.k());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        for (std::size_t d = 0; d < row.size(); ++d) row[d] = points(i, static_cast<Eigen::Index>(d));
        out.push_back(sim.evaluate(cfg, row));
    }
    return out;
}

LabeledSamples simulate(const ExperimentConfig& cfg, const Eigen::MatrixXd& points) {
    const auto outcomes = simulate_batch(cfg, points);
    Eigen::VectorXd deltas(static_cast<Eigen::Index>(outcomes.size()));
    for (std::size_t i = 0; i < outcomes.size(); ++i) deltas(static_cast<Eigen::Index>(i)) = outcomes[i].delta;
    return LabeledSamples::from_outputs(points, std::move(deltas), cfg.rule);
}

} // namespace sdforge
