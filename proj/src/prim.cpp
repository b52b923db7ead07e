#include "sdforge/prim.hpp"

#include <algorithm>
#include <cmath>

#include "sdforge/error.hpp"

namespace sdforge {

void PrimConfig::validate() const {
    if (!(patience > 0.0 && patience < 0.5)) throw ValidationError("prim: patience must be in (0, 0.5)");
    if (!(support_threshold > 0.0 && support_threshold < 1.0))
        throw ValidationError("prim: support_threshold must be in (0, 1)");
    if (!(min_mean_gain >= 0.0)) throw ValidationError("prim: min_mean_gain must be >= 0");
    if (!(coverage_floor >= 0.0 && coverage_floor <= 1.0))
        throw ValidationError("prim: coverage_floor must be in [0, 1]");
}

std::string to_string(Side s) {
    switch (s) {
    case Side::Low: return "low";
    case Side::High: return "high";
    case Side::None: break;
    }
    return "none";
}

namespace {

BoxStats stats_from_counts(std::size_t n_inside, std::size_t n_vuln_inside, std::size_t n_total,
                           std::size_t total_vuln, std::size_t interpretability) {
    BoxStats s;
    s.n_inside = n_inside;
    s.n_vulnerable_inside = n_vuln_inside;
    s.interpretability = interpretability;
    s.coverage = total_vuln == 0 ? 0.0 : static_cast<double>(n_vuln_inside) / static_cast<double>(total_vuln);
    s.density = n_inside == 0 ? 0.0 : static_cast<double>(n_vuln_inside) / static_cast<double>(n_inside);
    s.support = n_total == 0 ? 0.0 : static_cast<double>(n_inside) / static_cast<double>(n_total);
    s.vulnerable_support = n_total == 0 ? 0.0 : static_cast<double>(n_vuln_inside) / static_cast<double>(n_total);
    return s;
}

struct Candidate {
    std::size_t dim = 0;
    Side side = Side::None;
    Interval limit;
    std::size_t n_remaining = 0;
    std::size_t n_vuln_remaining = 0;
};

// a/b > c/d for non-negative counts with b, d > 0.
bool mean_greater(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return static_cast<unsigned __int128>(a) * d > static_cast<unsigned __int128>(c) * b;
}

} // namespace

BoxStats box_stats(const Box& box, const LabeledSamples& data) {
    std::size_t inside = 0, vuln_inside = 0;
    for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
        if (box.contains(data.points.row(i))) {
            ++inside;
            vuln_inside += data.labels[static_cast<std::size_t>(i)];
        }
    }
    return stats_from_counts(inside, vuln_inside, data.size(), data.vulnerable_count(),
                             box.interpretability());
}

PeelingTrajectory peel(const LabeledSamples& data, const UncertaintySpace& space,
                       const PrimConfig& cfg, const Box& start) {
    cfg.validate();
    if (data.empty()) throw ValidationError("peel: empty data");
    if (start.k() != data.k() || space.k() != data.k())
        throw ValidationError("peel: box/space dimension does not match the data");

    std::vector<std::size_t> in_rows = rows_inside(start, data.points);
    if (in_rows.empty()) throw ValidationError("peel: start box contains no points");

    const std::size_t n_total = data.size();
    const std::size_t total_vuln = data.vulnerable_count();
    const std::size_t k = data.k();

    PeelingTrajectory traj;
    Box box = start;
    std::size_t vuln_in = 0;
    for (auto r : in_rows) vuln_in += data.labels[r];
    traj.steps.push_back({box, stats_from_counts(in_rows.size(), vuln_in, n_total, total_vuln,
                                                 box.interpretability()),
                          std::nullopt, Side::None});

    std::vector<std::pair<double, std::uint8_t>> column;
    while (true) {
        const std::size_t n_in = in_rows.size();
        const auto m = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::floor(cfg.patience * static_cast<double>(n_in))));
        if (m >= n_in) break;

        std::optional<Candidate> best;
        for (std::size_t d = 0; d < k; ++d) {
            column.clear();
            for (auto r : in_rows)
                column.emplace_back(data.points(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(d)),
                                    data.labels[r]);
            std::sort(column.begin(), column.end());
            const Interval current = box.bounds(d, space);

            const auto consider = [&](Side side, double cut, std::size_t removed, std::size_t vuln_removed) {
                if (removed == 0 || removed >= n_in) return;
                const Interval limit = side == Side::Low ? Interval{cut, current.high} : Interval{current.low, cut};
                if (!(limit.low < limit.high)) return;
                const std::size_t remaining = n_in - removed;
                if (static_cast<double>(remaining) / static_cast<double>(n_total) < cfg.support_threshold) return;
                const std::size_t vuln_remaining = vuln_in - vuln_removed;
                if (!best || mean_greater(vuln_remaining, remaining, best->n_vuln_remaining, best->n_remaining))
                    best = Candidate{d, side, limit, remaining, vuln_remaining};
            };

            // Low side: drop everything strictly below the m-th smallest value.
            {
                const double cut = column[m].first;
                std::size_t removed = 0, vuln_removed = 0;
                while (removed < n_in && column[removed].first < cut) vuln_removed += column[removed++].second;
                consider(Side::Low, cut, removed, vuln_removed);
            }
            // High side: drop everything strictly above the m-th largest value.
            {
                const double cut = column[n_in - 1 - m].first;
                std::size_t removed = 0, vuln_removed = 0;
                while (removed < n_in && column[n_in - 1 - removed].first > cut)
                    vuln_removed += column[n_in - 1 - removed++].second;
                consider(Side::High, cut, removed, vuln_removed);
            }
        }
        if (!best) break;
        // Improvement must be strictly positive and at least min_mean_gain.
        if (!mean_greater(best->n_vuln_remaining, best->n_remaining, vuln_in, n_in)) break;
        const double gain = static_cast<double>(best->n_vuln_remaining) / static_cast<double>(best->n_remaining) -
                            static_cast<double>(vuln_in) / static_cast<double>(n_in);
        if (gain < cfg.min_mean_gain) break;

        box.limits[best->dim] = best->limit;
        std::vector<std::size_t> kept;
        kept.reserve(best->n_remaining);
        for (auto r : in_rows) {
            const double v = data.points(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(best->dim));
            if (v >= best->limit.low && v <= best->limit.high) kept.push_back(r);
        }
        in_rows = std::move(kept);
        vuln_in = best->n_vuln_remaining;
        traj.steps.push_back({box, stats_from_counts(in_rows.size(), vuln_in, n_total, total_vuln,
                                                     box.interpretability()),
                              best->dim, best->side});
    }
    return traj;
}

PeelingTrajectory peel(const LabeledSamples& data, const UncertaintySpace& space, const PrimConfig& cfg) {
    return peel(data, space, cfg, Box(space.k()));
}

std::size_t select_step(const PeelingTrajectory& traj, SelectionCriterion criterion, double coverage_floor) {
    if (traj.steps.empty()) throw ValidationError("select_box: empty trajectory");
    if (criterion.kind == SelectionCriterion::Kind::Index) {
        if (criterion.index >= traj.steps.size())
            throw ValidationError("select_box: step index " + std::to_string(criterion.index) +
                                  " out of range (trajectory has " + std::to_string(traj.steps.size()) +
                                  " steps)");
        return criterion.index;
    }
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        const auto& s = traj.steps[i].stats;
        if (s.coverage < coverage_floor) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = traj.steps[*best].stats;
        if (s.density > b.density || (s.density == b.density && s.interpretability < b.interpretability))
            best = i;
    }
    if (best) return *best;
    std::size_t arg = 0;
    double top = -1.0;
    for (std::size_t i = 0; i < traj.steps.size(); ++i) {
        const double score = traj.steps[i].stats.coverage * traj.steps[i].stats.density;
        if (score > top) {
            top = score;
            arg = i;
        }
    }
    return arg;
}

Box select_box(const PeelingTrajectory& traj, SelectionCriterion criterion, double coverage_floor) {
    return traj.steps[select_step(traj, criterion, coverage_floor)].box;
}

LabeledSamples residual(const LabeledSamples& data, const std::vector<Box>& boxes) {
    std::vector<std::size_t> keep;
    for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
        const bool inside = std::any_of(boxes.begin(), boxes.end(),
                                        [&](const Box& b) { return b.contains(data.points.row(i)); });
        if (!inside) keep.push_back(static_cast<std::size_t>(i));
    }
    return data.subset(keep);
}

std::vector<CoverRound> cover(const LabeledSamples& data, const UncertaintySpace& space,
                              const PrimConfig& cfg, std::size_t max_boxes, double stop_coverage) {
    if (data.empty()) throw ValidationError("cover: empty data");
    std::vector<CoverRound> rounds;
    const std::size_t total_vuln = data.vulnerable_count();
    LabeledSamples rest = data;
    std::size_t captured = 0;
    while (rounds.size() < max_boxes && !rest.empty() && rest.vulnerable_count() > 0) {
        CoverRound round;
        round.trajectory = peel(rest, space, cfg);
        round.selected_index = select_step(round.trajectory, SelectionCriterion::automatic(), cfg.coverage_floor);
        round.trajectory.selected_index = round.selected_index;
        round.box = round.trajectory.steps[round.selected_index].box;
        round.stats = box_stats(round.box, rest);
        round.stats_full = box_stats(round.box, data);
        captured += round.stats.n_vulnerable_inside;
        round.cumulative_coverage = static_cast<double>(captured) / static_cast<double>(total_vuln);
        rest = residual(rest, {round.box});
        rounds.push_back(std::move(round));
        if (rounds.back().cumulative_coverage >= stop_coverage) break;
    }
    return rounds;
}

} // namespace sdforge
