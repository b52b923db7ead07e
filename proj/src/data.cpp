#include "sdforge/data.hpp"

#include <algorithm>

#include "sdforge/error.hpp"

namespace sdforge {

std::size_t LabeledSamples::vulnerable_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

LabeledSamples LabeledSamples::subset(std::span<const std::size_t> rows) const {
    LabeledSamples out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.points.resize(m, points.cols());
    out.outputs.resize(m);
    out.labels.reserve(rows.size());
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)]);
        out.points.row(i) = points.row(r);
        out.outputs(i) = outputs(r);
        out.labels.push_back(labels[static_cast<std::size_t>(r)]);
    }
    return out;
}

void LabeledSamples::append(const LabeledSamples& other) {
    if (other.empty()) return;
    if (!empty() && other.points.cols() != points.cols())
        throw ValidationError("append: dimension mismatch");
    const Eigen::Index n = points.rows();
    Eigen::MatrixXd p(n + other.points.rows(), other.points.cols());
    if (n > 0) p.topRows(n) = points;
    p.bottomRows(other.points.rows()) = other.points;
    Eigen::VectorXd o(n + other.outputs.size());
    if (n > 0) o.head(n) = outputs;
    o.tail(other.outputs.size()) = other.outputs;
    points = std::move(p);
    outputs = std::move(o);
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

LabeledSamples LabeledSamples::from_outputs(Eigen::MatrixXd points, Eigen::VectorXd outputs,
                                            const VulnerabilityRule& rule) {
    if (points.rows() != outputs.size()) throw ValidationError("points/outputs length mismatch");
    LabeledSamples s;
    s.labels.reserve(static_cast<std::size_t>(outputs.size()));
    for (Eigen::Index i = 0; i < outputs.size(); ++i)
        s.labels.push_back(rule.is_vulnerable(outputs(i)) ? 1 : 0);
    s.points = std::move(points);
    s.outputs = std::move(outputs);
    return s;
}

std::vector<std::size_t> Box::restricted_dims() const {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < limits.size(); ++d)
        if (limits[d]) out.push_back(d);
    return out;
}

Interval Box::bounds(std::size_t d, const UncertaintySpace& space) const {
    if (limits[d]) return *limits[d];
    return {space.dims[d].low, space.dims[d].high};
}

std::vector<std::size_t> rows_inside(const Box& box, const Eigen::MatrixXd& points) {
    std::vector<std::size_t> out;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        if (box.contains(points.row(i))) out.push_back(static_cast<std::size_t>(i));
    return out;
}

} // namespace sdforge
