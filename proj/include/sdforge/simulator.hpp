#pragma once

// Simulation models ("R" in XLRM). Every simulator maps a point of the
// uncertainty space to a ScenarioOutcome; the vulnerability rule is applied
// to outcome.delta.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sdforge/data.hpp"
#include "sdforge/experiment.hpp"

namespace sdforge {

struct SimulatorSpec {
    std::string id;
    // Required dim names in order. Empty means the simulator accepts any
    // space with at least `min_dims` dims (the oracles work on the unit cube).
    std::vector<std::string> input_dims;
    std::size_t min_dims = 1;
    std::string output_name;
    bool deterministic = true;
};

struct ScenarioOutcome {
    double stress_baseline = 0.0;
    double stress_policy = 0.0;
    double delta = 0.0;
};

/// Parts are rescaled by 100/sum when the four-part sum exceeds 100;
/// otherwise the filler is set to the remainder. Throws ValidationError on
/// negative input.
PathProfile normalize_features(double vegetation, double building, double person,
                               double filler);

/// Closed-form stress response. Inputs are percentages in [0, 100] and
/// extraversion in [1, 5]; out-of-range input throws ValidationError.
double stress_surrogate(double vegetation, double building, double person, double extraversion);

/// Applies the uncertainty point (building, person, extraversion) to the path
/// profile and evaluates stress without and with the lever.
ScenarioOutcome run_scenario(const ExperimentConfig& cfg, std::span<const double> point,
                             const PathProfile& profile);

/// 1 iff x1 in [0.2, 0.5] and x2 in [0.6, 0.9].
int oracle_box(std::span<const double> unit_point);

/// 1 iff 0.25 <= |(x1, x2) - (0.5, 0.5)| <= 0.45.
int oracle_ring(std::span<const double> unit_point);

class Simulator {
public:
    virtual ~Simulator() = default;
    virtual const SimulatorSpec& spec() const = 0;
    virtual ScenarioOutcome evaluate(const ExperimentConfig& cfg,
                                     std::span<const double> point) const = 0;
};

/// Registry lookup; throws ValidationError naming an unknown id.
const Simulator& find_simulator(const std::string& id);
std::vector<std::string> simulator_ids();

/// Throws ValidationError if the simulator's declared inputs do not match
/// the space.
void check_binding(const SimulatorSpec& spec, const UncertaintySpace& space);

/// Evaluates every row of `points`; row order of the result matches the input.
std::vector<ScenarioOutcome> simulate_batch(const ExperimentConfig& cfg,
                                            const Eigen::MatrixXd& points);

/// simulate_batch followed by labelling under cfg.rule.
LabeledSamples simulate(const ExperimentConfig& cfg, const Eigen::MatrixXd& points);

} // namespace sdforge
