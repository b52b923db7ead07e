#pragma once

// Patient Rule Induction Method: peeling, box selection and covering over
// binary-labelled samples.

#include <cstddef>
#include <optional>
#include <vector>

#include "sdforge/data.hpp"

namespace sdforge {

struct BoxStats {
    double coverage = 0.0;      // n_vulnerable_inside / total vulnerable
    double density = 0.0;       // n_vulnerable_inside / n_inside
    double support = 0.0;       // n_inside / n_total (mass; the peeling stop quantity)
    double vulnerable_support = 0.0; // n_vulnerable_inside / n_total, reported only
    std::size_t interpretability = 0;
    std::size_t n_inside = 0;
    std::size_t n_vulnerable_inside = 0;

    bool operator==(const BoxStats&) const = default;
};

struct PrimConfig {
    double patience = 0.05;
    double support_threshold = 0.05;
    double min_mean_gain = 0.0;
    double coverage_floor = 0.6;

    void validate() const;
};

enum class Side { None, Low, High };

struct PeelStep {
    Box box;
    BoxStats stats;
    std::optional<std::size_t> peeled_dim; // empty for the starting box
    Side peeled_side = Side::None;
};

struct PeelingTrajectory {
    std::vector<PeelStep> steps;
    std::optional<std::size_t> selected_index;

    std::size_t size() const { return steps.size(); }
};

BoxStats box_stats(const Box& box, const LabeledSamples& data);

/// Peels `start` one patience-quantile slice at a time, adopting the candidate
/// with the highest remaining vulnerable fraction (ties: lower dim, then low
/// side). Stops when no candidate raises the mean by more than zero and at
/// least min_mean_gain, when the next box would fall below the support
/// threshold, or when a slice would empty the box.
/// `space` supplies the outer bounds of dims that `start` leaves unrestricted.
PeelingTrajectory peel(const LabeledSamples& data, const UncertaintySpace& space,
                       const PrimConfig& cfg, const Box& start);

/// Starting box = the unrestricted box.
PeelingTrajectory peel(const LabeledSamples& data, const UncertaintySpace& space,
                       const PrimConfig& cfg);

struct SelectionCriterion {
    enum class Kind { Auto, Index } kind = Kind::Auto;
    std::size_t index = 0;

    static SelectionCriterion automatic() { return {}; }
    static SelectionCriterion at(std::size_t i) { return {Kind::Index, i}; }
};

/// Index of the chosen step. Auto: the densest step among those meeting the
/// coverage floor (ties: fewer restricted dims, then earlier), else the step
/// maximizing coverage x density. Throws ValidationError for a bad index.
std::size_t select_step(const PeelingTrajectory& traj, SelectionCriterion criterion,
                        double coverage_floor);

Box select_box(const PeelingTrajectory& traj, SelectionCriterion criterion,
               double coverage_floor);

struct CoverRound {
    Box box;
    BoxStats stats;            // on the residual data this round was fitted on
    BoxStats stats_full;       // on the full dataset
    PeelingTrajectory trajectory;
    std::size_t selected_index = 0;
    double cumulative_coverage = 0.0; // relative to all vulnerable points in the input
};

/// Repeated peel + auto-select on residual data (points inside earlier boxes
/// removed). Stops at stop_coverage cumulative coverage, after max_boxes
/// rounds, or when no vulnerable point remains.
std::vector<CoverRound> cover(const LabeledSamples& data, const UncertaintySpace& space,
                              const PrimConfig& cfg, std::size_t max_boxes,
                              double stop_coverage);

/// Residual of `data` after removing points inside any of `boxes`.
LabeledSamples residual(const LabeledSamples& data, const std::vector<Box>& boxes);

std::string to_string(Side s);

} // namespace sdforge
