#include "sdforge/sampling.hpp"

#include <cmath>
#include <numeric>

#include "sdforge/error.hpp"
#include "sdforge/rng.hpp"

namespace sdforge {

SampleMatrix lhs(const UncertaintySpace& space, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ValidationError("lhs: n must be >= 1");
    Engine eng = make_engine(seed);
    const std::size_t k = space.k();
    SampleMatrix out{Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)), space};
    std::vector<std::size_t> perm(n);
    for (std::size_t d = 0; d < k; ++d) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(eng, i)]);
        const double lo = space.dims[d].low;
        const double width = space.width(d);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = (static_cast<double>(perm[i]) + uniform01(eng)) / static_cast<double>(n);
            double x = lo + t * width;
            // Rounding must not push a point past its stratum's upper edge.
            const double upper = lo + (static_cast<double>(perm[i] + 1) / static_cast<double>(n)) * width;
            if (x >= upper) x = std::nextafter(upper, lo);
            out.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = x;
        }
    }
    return out;
}

SamplingDiagnostics relative_density(std::size_t n_s, std::size_t k) {
    if (n_s < 1 || k < 1) throw ValidationError("relative_density: n_s and k must be >= 1");
    SamplingDiagnostics diag;
    diag.n_s = n_s;
    diag.k = k;
    diag.J = std::pow(static_cast<double>(n_s), 1.0 / static_cast<double>(k));
    diag.adequate = diag.J >= 1.5;
    return diag;
}

namespace {

void check_box(const UncertaintySpace& space, const Box& box) {
    if (box.k() != space.k()) throw ValidationError("box dimension does not match the space");
    for (std::size_t d : box.restricted_dims()) {
        if (!(box.limits[d]->low < box.limits[d]->high))
            throw ValidationError("degenerate box: zero width on dimension '" + space.dims[d].name + "'");
    }
}

double draw(Engine& eng, Interval iv) { return iv.low + uniform01(eng) * (iv.high - iv.low); }

} // namespace

SampleMatrix uniform_in_box(const UncertaintySpace& space, const Box& box, std::size_t n,
                            std::uint64_t seed) {
    check_box(space, box);
    Engine eng = make_engine(seed);
    const std::size_t k = space.k();
    SampleMatrix out{Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)), space};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < k; ++d)
            out.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = draw(eng, box.bounds(d, space));
    return out;
}

SampleMatrix uniform_on_border(const UncertaintySpace& space, const Box& box, std::size_t n,
                               std::uint64_t seed) {
    check_box(space, box);
    const auto restricted = box.restricted_dims();
    if (restricted.empty()) throw ValidationError("uniform_on_border: box restricts no dimension");
    Engine eng = make_engine(seed);
    const std::size_t k = space.k();
    SampleMatrix out{Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)), space};
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t face_dim = restricted[uniform_index(eng, restricted.size())];
        const bool high_side = uniform_index(eng, 2) == 1;
        for (std::size_t d = 0; d < k; ++d) {
            double v;
            if (d == face_dim)
                v = high_side ? box.limits[d]->high : box.limits[d]->low;
            else
                v = draw(eng, box.bounds(d, space));
            out.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v;
        }
    }
    return out;
}

} // namespace sdforge
