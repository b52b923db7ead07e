#pragma once

// XLRM experiment definition: uncertainty space (X), policy lever (L),
// simulator binding (R) and vulnerability measure (M).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace sdforge {

struct UncertaintyDim {
    std::string name;
    double low = 0.0;
    double high = 1.0;
    double baseline = 0.0;

    bool operator==(const UncertaintyDim&) const = default;
};

struct UncertaintySpace {
    std::vector<UncertaintyDim> dims;

    std::size_t k() const { return dims.size(); }
    std::optional<std::size_t> index_of(std::string_view name) const;
    double width(std::size_t d) const { return dims[d].high - dims[d].low; }

    /// Space whose dims are the unit interval, named x1..xk.
    static UncertaintySpace unit_cube(std::size_t k);

    bool operator==(const UncertaintySpace&) const = default;
};

struct PolicyLever {
    std::string name = "vegetation";
    double delta = 0.0; // percentage points added

    bool operator==(const PolicyLever&) const = default;
};

enum class Comparator { DeltaNonNeg };

struct VulnerabilityRule {
    Comparator comparator = Comparator::DeltaNonNeg;
    std::string description = "stress_policy - stress_baseline >= 0";

    bool is_vulnerable(double delta) const { return delta >= 0.0; }
    bool operator==(const VulnerabilityRule&) const = default;
};

/// Segmentation percentages of a street path. The four parts sum to 100.
struct PathProfile {
    double vegetation = 0.0;
    double building = 0.0;
    double person = 0.0;
    double filler = 100.0;

    double total() const { return vegetation + building + person + filler; }
    bool operator==(const PathProfile&) const = default;
};

struct ExperimentConfig {
    std::string name;
    UncertaintySpace space;
    PolicyLever lever;
    std::string simulator_id;
    VulnerabilityRule rule;
    std::uint64_t seed = 0;
    std::size_t n_scenarios = 1;
    // Required by the stress surrogate; ignored by the oracle simulators.
    std::optional<PathProfile> profile;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Checks every invariant of the config, including that the simulator id
/// resolves and that its declared inputs match the dim names. Throws
/// ValidationError naming the offending dimension or id.
void validate(const ExperimentConfig& cfg);

ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Reads and validates a `.experiment` file. Throws ParseError on malformed
/// JSON and ValidationError on invariant violations.
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Same as load_experiment, applying dotted-path `key=value` overrides to the
/// raw document before validation (e.g. `lever.delta=5`,
/// `space.dims.0.high=30`). Unknown keys are a ValidationError.
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides);

void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

Eigen::VectorXd baseline_point(const ExperimentConfig& cfg);

std::string to_string(Comparator c);
Comparator comparator_from_string(const std::string& s);

} // namespace sdforge
