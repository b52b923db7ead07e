#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sdforge/experiment.hpp"

namespace sdforge {

struct RegressionMetrics {
    double r_squared = 0.0; // NaN when degenerate
    double mse = 0.0;
    double mae = 0.0;
    std::size_t n = 0;
    bool degenerate = false; // actual values have zero variance
};

/// R^2 = 1 - SS_res / SS_tot, plus MSE and MAE. Throws ValidationError for
/// mismatched lengths or n < 2.
RegressionMetrics r_squared(std::span<const double> actual, std::span<const double> predicted);

struct Correlation {
    double r = 0.0;
    bool defined = true; // false when either series is constant; r is then 0
};

Correlation pearson(std::span<const double> a, std::span<const double> b);

struct SweepResult {
    std::vector<double> deltas;
    std::vector<std::size_t> vulnerable_counts;
    std::size_t n_scenarios = 0;
    bool zero_lever_warning = false;
    std::optional<double> threshold;
};

/// Counts vulnerable scenarios for each lever value over one shared LHS
/// scenario set.
SweepResult policy_sweep(const ExperimentConfig& experiment, std::span<const double> deltas,
                         std::size_t n_scenarios, std::uint64_t seed,
                         std::size_t max_count = 2);

/// Smallest swept delta from which every larger swept delta keeps the count
/// at or below max_count. Deltas are assumed sorted ascending.
std::optional<double> sweep_threshold(std::span<const double> deltas,
                                      std::span<const std::size_t> counts, std::size_t max_count);

/// Parses "start:stop:step" (stop inclusive) into a grid.
std::vector<double> parse_delta_grid(const std::string& spec);

} // namespace sdforge
