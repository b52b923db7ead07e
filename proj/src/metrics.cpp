#include "sdforge/metrics.hpp"

#include <cmath>
#include <limits>

#include "sdforge/error.hpp"
#include "sdforge/sampling.hpp"
#include "sdforge/simulator.hpp"

namespace sdforge {

RegressionMetrics r_squared(std::span<const double> actual, std::span<const double> predicted) {
    if (actual.size() != predicted.size()) throw ValidationError("r_squared: length mismatch");
    if (actual.size() < 2) throw ValidationError("r_squared: need n >= 2");
    RegressionMetrics m;
    m.n = actual.size();
    const double n = static_cast<double>(m.n);
    double mean = 0.0;
    for (double y : actual) mean += y;
    mean /= n;
    double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
    for (std::size_t i = 0; i < m.n; ++i) {
        const double r = actual[i] - predicted[i];
        ss_res += r * r;
        abs_sum += std::abs(r);
        ss_tot += (actual[i] - mean) * (actual[i] - mean);
    }
    m.mse = ss_res / n;
    m.mae = abs_sum / n;
    if (ss_tot == 0.0) {
        m.degenerate = true;
        m.r_squared = std::numeric_limits<double>::quiet_NaN();
    } else {
        m.r_squared = 1.0 - ss_res / ss_tot;
    }
    return m;
}

Correlation pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("pearson: length mismatch");
    if (a.size() < 2) return {0.0, false};
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return {0.0, false};
    return {sab / std::sqrt(saa * sbb), true};
}

std::optional<double> sweep_threshold(std::span<const double> deltas, std::span<const std::size_t> counts,
                                      std::size_t max_count) {
    if (deltas.size() != counts.size()) throw ValidationError("sweep_threshold: length mismatch");
    std::optional<double> threshold;
    for (std::size_t i = deltas.size(); i-- > 0;) {
        if (counts[i] > max_count) break;
        threshold = deltas[i];
    }
    return threshold;
}

SweepResult policy_sweep(const ExperimentConfig& experiment, std::span<const double> deltas,
                         std::size_t n_scenarios, std::uint64_t seed, std::size_t max_count) {
    if (deltas.empty()) throw ValidationError("policy_sweep: no lever values");
    for (double d : deltas)
        if (!(d >= 0.0)) throw ValidationError("policy_sweep: lever values must be >= 0");
    SweepResult out;
    out.n_scenarios = n_scenarios;
    const SampleMatrix scenarios = lhs(experiment.space, n_scenarios, seed);
    ExperimentConfig cfg = experiment;
    for (double d : deltas) {
        cfg.lever.delta = d;
        if (d == 0.0) out.zero_lever_warning = true;
        const LabeledSamples labelled = simulate(cfg, scenarios.points);
        out.deltas.push_back(d);
        out.vulnerable_counts.push_back(labelled.vulnerable_count());
    }
    out.threshold = sweep_threshold(out.deltas, out.vulnerable_counts, max_count);
    return out;
}

std::vector<double> parse_delta_grid(const std::string& spec) {
    const auto c1 = spec.find(':');
    const auto c2 = c1 == std::string::npos ? std::string::npos : spec.find(':', c1 + 1);
    if (c2 == std::string::npos) throw ValidationError("delta grid must be start:stop:step, got '" + spec + "'");
    double start, stop, step;
    try {
        start = std::stod(spec.substr(0, c1));
        stop = std::stod(spec.substr(c1 + 1, c2 - c1 - 1));
        step = std::stod(spec.substr(c2 + 1));
    } catch (const std::exception&) {
        throw ValidationError("delta grid must be numeric start:stop:step, got '" + spec + "'");
    }
    if (!(step > 0.0) || !(stop >= start) || start < 0.0)
        throw ValidationError("delta grid needs 0 <= start <= stop and step > 0");
    std::vector<double> grid;
    for (std::size_t i = 0;; ++i) {
        const double v = start + static_cast<double>(i) * step;
        if (v > stop + 1e-9 * step) break;
        grid.push_back(v);
    }
    return grid;
}

} // namespace sdforge
