#pragma once

#include <cstdint>

#include "sdforge/data.hpp"

namespace sdforge {

struct SamplingDiagnostics {
    double J = 1.0;
    std::size_t n_s = 1;
    std::size_t k = 1;
    bool adequate = false; // J >= 1.5
};

/// Latin hypercube sample: each dimension's range is cut into n equal bins
/// holding exactly one point, with a uniform offset inside the bin and an
/// independent random permutation per dimension.
SampleMatrix lhs(const UncertaintySpace& space, std::size_t n, std::uint64_t seed);

/// J = n_s^(1/k).
SamplingDiagnostics relative_density(std::size_t n_s, std::size_t k);

/// Uniform over the box; unrestricted dims are drawn over the full space range.
SampleMatrix uniform_in_box(const UncertaintySpace& space, const Box& box, std::size_t n,
                            std::uint64_t seed);

/// Uniform over the faces of the box's restricted dimensions: a restricted dim
/// and one of its two faces are picked uniformly, the coordinate is pinned to
/// the face and the rest are drawn uniformly within the box.
SampleMatrix uniform_on_border(const UncertaintySpace& space, const Box& box, std::size_t n,
                               std::uint64_t seed);

} // namespace sdforge
