#include <doctest.h>

#include <cmath>

#include "sdforge/error.hpp"
#include "sdforge/prim.hpp"
#include "sdforge/rng.hpp"
#include "sdforge/sampling.hpp"
#include "sdforge/simulator.hpp"

using namespace sdforge;

namespace {

LabeledSamples oracle_data(const std::string& id, std::size_t n, std::uint64_t seed, std::size_t k = 2) {
    ExperimentConfig cfg;
    cfg.space = UncertaintySpace::unit_cube(k);
    cfg.simulator_id = id;
    return simulate(cfg, uniform_in_box(cfg.space, Box(k), n, seed).points);
}

LabeledSamples hand_data() {
    Eigen::MatrixXd pts(10, 2);
    Eigen::VectorXd out(10);
    for (int i = 0; i < 10; ++i) {
        pts(i, 0) = i / 10.0;
        pts(i, 1) = 0.05 * ((i * 7) % 10);
        out(i) = (i % 3 == 0) ? 1.0 : -1.0;
    }
    return LabeledSamples::from_outputs(pts, out);
}

// Random labelled dataset: a random box rule with label noise and optionally
// coarse, tie-heavy coordinates.
LabeledSamples random_dataset(std::uint64_t seed, UncertaintySpace& space) {
    auto eng = make_engine(seed);
    const std::size_t k = 1 + uniform_index(eng, 4);
    const std::size_t n = 20 + uniform_index(eng, 480);
    const bool ties = uniform01(eng) < 0.3;
    const double noise = 0.2 * uniform01(eng);
    space = UncertaintySpace::unit_cube(k);
    std::vector<Interval> rule(k);
    for (auto& r : rule) {
        const double a = uniform01(eng), b = uniform01(eng);
        r = {std::min(a, b), std::max(a, b)};
    }
    Eigen::MatrixXd pts(n, k);
    Eigen::VectorXd out(n);
    for (std::size_t i = 0; i < n; ++i) {
        bool in = true;
        for (std::size_t d = 0; d < k; ++d) {
            double x = uniform01(eng);
            if (ties) x = std::floor(x * 6.0) / 6.0;
            pts(i, d) = x;
            in = in && x >= rule[d].low && x <= rule[d].high;
        }
        if (uniform01(eng) < noise) in = !in;
        out(i) = in ? 1.0 : -1.0;
    }
    return LabeledSamples::from_outputs(pts, out);
}

} // namespace

TEST_CASE("box_stats counting") {
    const auto data = hand_data(); // vulnerable rows 0, 3, 6, 9
    CHECK(data.vulnerable_count() == 4);
    const auto full = box_stats(Box(2), data);
    CHECK(full.coverage == 1.0);
    CHECK(full.density == doctest::Approx(0.4));
    CHECK(full.support == 1.0);
    CHECK(full.n_inside == 10);

    Box b(2);
    b.limits[0] = Interval{0.3, 0.6}; // rows 3..6 (closed on both bounds)
    const auto s = box_stats(b, data);
    CHECK(s.n_inside == 4);
    CHECK(s.n_vulnerable_inside == 2);
    CHECK(s.coverage == doctest::Approx(0.5));
    CHECK(s.density == doctest::Approx(0.5));
    CHECK(s.support == doctest::Approx(0.4));
    CHECK(s.vulnerable_support == doctest::Approx(0.2));
    CHECK(s.interpretability == 1);

    Box empty(2);
    empty.limits[1] = Interval{0.96, 0.99};
    const auto e = box_stats(empty, data);
    CHECK(e.n_inside == 0);
    CHECK(e.density == 0.0);
    CHECK(e.coverage == 0.0);
}

TEST_CASE("peel recovers the planted box") {
    PrimConfig cfg;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto data = oracle_data("oracle_box", 2000, seed);
        const auto traj = peel(data, UncertaintySpace::unit_cube(2), cfg);
        const auto& last = traj.steps.back();
        CHECK(last.stats.density >= 0.95);
        const auto i0 = last.box.bounds(0, UncertaintySpace::unit_cube(2));
        const auto i1 = last.box.bounds(1, UncertaintySpace::unit_cube(2));
        CHECK(std::abs(i0.low - 0.2) <= 0.05);
        CHECK(std::abs(i0.high - 0.5) <= 0.05);
        CHECK(std::abs(i1.low - 0.6) <= 0.05);
        CHECK(std::abs(i1.high - 0.9) <= 0.05);
    }
}

TEST_CASE("saturated data gives a single-step trajectory") {
    auto data = oracle_data("oracle_box", 300, 4);
    data.outputs.setConstant(1.0);
    std::fill(data.labels.begin(), data.labels.end(), 1);
    auto traj = peel(data, UncertaintySpace::unit_cube(2), PrimConfig{});
    CHECK(traj.size() == 1);
    CHECK(traj.steps[0].stats.density == 1.0);

    data.outputs.setConstant(-1.0);
    std::fill(data.labels.begin(), data.labels.end(), 0);
    traj = peel(data, UncertaintySpace::unit_cube(2), PrimConfig{});
    CHECK(traj.size() == 1);
    CHECK(traj.steps[0].stats.density == 0.0);
}

TEST_CASE("peel preconditions") {
    const auto data = hand_data();
    const auto space = UncertaintySpace::unit_cube(2);
    CHECK_THROWS_AS(peel(LabeledSamples{}, space, PrimConfig{}), ValidationError);
    Box nowhere(2);
    nowhere.limits[0] = Interval{0.95, 0.99};
    CHECK_THROWS_AS(peel(data, space, PrimConfig{}, nowhere), ValidationError);
    PrimConfig bad;
    bad.patience = 0.5;
    CHECK_THROWS_AS(peel(data, space, bad), ValidationError);
}

TEST_CASE("trajectory invariants hold on random datasets") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        UncertaintySpace space;
        const auto data = random_dataset(seed, space);
        PrimConfig cfg;
        cfg.patience = 0.02 + 0.2 * static_cast<double>(seed % 7) / 7.0;
        const auto traj = peel(data, space, cfg);
        REQUIRE(traj.size() >= 1);
        for (std::size_t i = 1; i < traj.size(); ++i) {
            const auto& prev = traj.steps[i - 1].stats;
            const auto& cur = traj.steps[i].stats;
            CHECK(cur.density >= prev.density);
            CHECK(cur.support < prev.support);
            CHECK(cur.support >= cfg.support_threshold);
            const std::size_t removed = prev.n_inside - cur.n_inside;
            CHECK(removed >= 1);
            CHECK(removed <= static_cast<std::size_t>(std::ceil(cfg.patience * static_cast<double>(prev.n_inside))));
            CHECK(cur == box_stats(traj.steps[i].box, data));
            REQUIRE(traj.steps[i].peeled_dim.has_value());
            CHECK(traj.steps[i].peeled_side != Side::None);
        }
        const auto again = peel(data, space, cfg);
        REQUIRE(again.size() == traj.size());
        for (std::size_t i = 0; i < traj.size(); ++i) CHECK(again.steps[i].box == traj.steps[i].box);
    }
}

TEST_CASE("peel tie-break prefers the lower dim and the low side") {
    // Two identical columns: both dims offer the same best candidate.
    Eigen::MatrixXd pts(40, 2);
    Eigen::VectorXd out(40);
    for (int i = 0; i < 40; ++i) {
        pts(i, 0) = pts(i, 1) = i / 39.0;
        out(i) = (i >= 2 && i <= 37) ? 1.0 : -1.0;
    }
    const auto data = LabeledSamples::from_outputs(pts, out);
    PrimConfig cfg;
    const auto traj = peel(data, UncertaintySpace::unit_cube(2), cfg);
    REQUIRE(traj.size() >= 2);
    CHECK(*traj.steps[1].peeled_dim == 0);
    CHECK(traj.steps[1].peeled_side == Side::Low);
}

TEST_CASE("select_step") {
    PeelingTrajectory traj;
    const double cov[] = {1.0, 0.98, 0.97, 0.95, 0.93, 0.92, 0.9, 0.89, 0.7, 0.5};
    const double den[] = {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.93, 0.93, 0.99};
    for (int i = 0; i < 10; ++i) {
        PeelStep s{Box(2), {}, std::nullopt, Side::None};
        s.stats.coverage = cov[i];
        s.stats.density = den[i];
        s.stats.interpretability = i < 8 ? 2 : 1;
        traj.steps.push_back(s);
    }
    // Step 8 ties step 7 on density but restricts fewer dims.
    CHECK(select_step(traj, SelectionCriterion::automatic(), 0.6) == 8);
    traj.steps[8].stats.interpretability = 2;
    CHECK(select_step(traj, SelectionCriterion::automatic(), 0.6) == 7);
    CHECK(select_step(traj, SelectionCriterion::at(3), 0.6) == 3);
    CHECK_THROWS_AS(select_step(traj, SelectionCriterion::at(10), 0.6), ValidationError);
    // Nothing meets the floor: max coverage x density.
    CHECK(select_step(traj, SelectionCriterion::automatic(), 1.01) == 7);

    PeelingTrajectory single;
    single.steps.push_back({Box(2), {}, std::nullopt, Side::None});
    CHECK(select_step(single, SelectionCriterion::automatic(), 0.6) == 0);
    CHECK_THROWS_AS(select_step(PeelingTrajectory{}, SelectionCriterion::automatic(), 0.6), ValidationError);
}

TEST_CASE("auto selection on oracle data") {
    const auto data = oracle_data("oracle_box", 2000, 8);
    PrimConfig cfg;
    const auto traj = peel(data, UncertaintySpace::unit_cube(2), cfg);
    const auto box = select_box(traj, SelectionCriterion::automatic(), cfg.coverage_floor);
    const auto s = box_stats(box, data);
    CHECK(s.density >= 0.95);
    CHECK(s.coverage >= 0.9);
}

TEST_CASE("cover") {
    const auto space = UncertaintySpace::unit_cube(2);
    PrimConfig cfg;

    const auto box_data = oracle_data("oracle_box", 2000, 21);
    CHECK(cover(box_data, space, cfg, 5, 0.85).size() == 1);

    const auto ring = oracle_data("oracle_ring", 2000, 22);
    const auto rounds = cover(ring, space, cfg, 10, 0.85);
    CHECK(rounds.size() >= 2);
    CHECK(rounds.back().cumulative_coverage >= 0.85);

    // Later rounds never fit on points inside earlier boxes.
    std::vector<Box> earlier;
    for (const auto& r : rounds) {
        for (const auto& step : r.trajectory.steps) {
            const auto fit_data = residual(ring, earlier);
            CHECK(step.stats == box_stats(step.box, fit_data));
        }
        earlier.push_back(r.box);
    }

    auto none = ring;
    none.outputs.setConstant(-1.0);
    std::fill(none.labels.begin(), none.labels.end(), 0);
    CHECK(cover(none, space, cfg, 5, 0.85).empty());
}
