#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "sdforge/experiment.hpp"

namespace sdforge {

/// n x k matrix of points in native units, tied to the space it was drawn from.
struct SampleMatrix {
    Eigen::MatrixXd points;
    UncertaintySpace space;

    Eigen::Index rows() const { return points.rows(); }
};

/// The dataset D (simulated) or the candidate pool B (metamodel-labelled):
/// input points, scalar outputs (delta stress) and binary vulnerability labels.
struct LabeledSamples {
    Eigen::MatrixXd points;
    Eigen::VectorXd outputs;
    std::vector<std::uint8_t> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t k() const { return static_cast<std::size_t>(points.cols()); }
    bool empty() const { return labels.empty(); }
    std::size_t vulnerable_count() const;

    LabeledSamples subset(std::span<const std::size_t> rows) const;
    void append(const LabeledSamples& other);

    /// Labels from outputs under `rule` (vulnerable iff output >= 0).
    static LabeledSamples from_outputs(Eigen::MatrixXd points, Eigen::VectorXd outputs,
                                       const VulnerabilityRule& rule = {});
};

struct Interval {
    double low = 0.0;
    double high = 0.0;

    bool operator==(const Interval&) const = default;
};

/// Axis-aligned restriction of the uncertainty space. Unrestricted dims carry
/// no limit; membership uses closed intervals on both bounds.
struct Box {
    std::vector<std::optional<Interval>> limits;

    Box() = default;
    explicit Box(std::size_t k) : limits(k) {}

    std::size_t k() const { return limits.size(); }
    bool is_restricted(std::size_t d) const { return limits[d].has_value(); }
    std::vector<std::size_t> restricted_dims() const;
    std::size_t interpretability() const { return restricted_dims().size(); }

    /// Effective [low, high] on dim d, falling back to the space bounds.
    Interval bounds(std::size_t d, const UncertaintySpace& space) const;

    template <class Row>
    bool contains(const Row& x) const {
        for (std::size_t d = 0; d < limits.size(); ++d) {
            if (!limits[d]) continue;
            const double v = x(static_cast<Eigen::Index>(d));
            if (v < limits[d]->low || v > limits[d]->high) return false;
        }
        return true;
    }

    bool operator==(const Box&) const = default;
};

/// Row indices of `points` that fall inside `box`.
std::vector<std::size_t> rows_inside(const Box& box, const Eigen::MatrixXd& points);

} // namespace sdforge
