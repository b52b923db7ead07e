#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sdforge/error.hpp"
#include "sdforge/sampling.hpp"
#include "sdforge/simulator.hpp"

using namespace sdforge;

namespace {

ExperimentConfig norrebro() {
    return load_experiment(std::filesystem::path(SDFORGE_DATA_DIR) / "experiments" / "norrebro.experiment");
}

void check_sums_to_100(const PathProfile& p) { CHECK(std::abs(p.total() - 100.0) <= 1e-9); }

} // namespace

TEST_CASE("normalize_features") {
    auto p = normalize_features(30, 40, 10, 20);
    CHECK(p == PathProfile{30, 40, 10, 20});
    p = normalize_features(50, 50, 25, 0);
    CHECK(p.vegetation == doctest::Approx(40));
    CHECK(p.building == doctest::Approx(40));
    CHECK(p.person == doctest::Approx(20));
    CHECK(p.filler == doctest::Approx(0));
    check_sums_to_100(p);
    p = normalize_features(10, 20, 5, 0);
    CHECK(p.filler == doctest::Approx(65));
    CHECK_THROWS_AS(normalize_features(-1, 0, 0, 0), ValidationError);

    for (double v : {0.0, 13.0, 70.0})
        for (double b : {0.0, 45.5, 90.0})
            for (double f : {0.0, 30.0, 80.0}) {
                const auto once = normalize_features(v, b, 12.5, f);
                check_sums_to_100(once);
                const auto twice = normalize_features(once.vegetation, once.building, once.person, once.filler);
                CHECK(twice.vegetation == doctest::Approx(once.vegetation).epsilon(1e-12));
                CHECK(twice.filler == doctest::Approx(once.filler).epsilon(1e-12));
            }
}

TEST_CASE("stress surrogate golden value") {
    // Evaluated independently from the closed form in extended precision.
    CHECK(stress_surrogate(0, 0, 0, 3.12) == doctest::Approx(0.076545989041410856).epsilon(1e-14));
}

TEST_CASE("stress surrogate range checks and bound") {
    CHECK_THROWS_AS(stress_surrogate(-0.1, 0, 0, 3), ValidationError);
    CHECK_THROWS_AS(stress_surrogate(0, 100.1, 0, 3), ValidationError);
    CHECK_THROWS_AS(stress_surrogate(0, 0, 0, 0.9), ValidationError);
    CHECK_THROWS_AS(stress_surrogate(0, 0, 0, 5.1), ValidationError);
    const double bound = 2.0 + 1.5 + 1.8 + 0.35;
    for (int i = 0; i <= 10; ++i)
        for (int j = 0; j <= 10; ++j)
            for (int e = 0; e <= 8; ++e) {
                const double s = stress_surrogate(10.0 * i, 10.0 * j, 10.0 * (10 - i), 1.0 + 0.5 * e);
                CHECK(std::abs(s) <= bound);
                CHECK(s == stress_surrogate(10.0 * i, 10.0 * j, 10.0 * (10 - i), 1.0 + 0.5 * e));
            }
}

TEST_CASE("stress rises with buildings and people across a 20^4 grid") {
    const double h = 1e-4;
    bool ok_b = true, ok_p = true;
    for (int iv = 0; iv < 20; ++iv)
        for (int ib = 0; ib < 20; ++ib)
            for (int ip = 0; ip < 20; ++ip)
                for (int ie = 0; ie < 20; ++ie) {
                    const double v = 100.0 * iv / 19.0, e = 1.0 + 4.0 * ie / 19.0;
                    const double b = std::min(100.0 - h, 100.0 * ib / 19.0);
                    const double p = std::min(100.0 - h, 100.0 * ip / 19.0);
                    const double s = stress_surrogate(v, b, p, e);
                    ok_b = ok_b && stress_surrogate(v, b + h, p, e) > s;
                    ok_p = ok_p && stress_surrogate(v, b, p + h, e) > s;
                }
    CHECK(ok_b);
    CHECK(ok_p);
}

TEST_CASE("vulnerable futures appear at high building and extraversion only") {
    const auto delta = [](double v, double b, double e) {
        return stress_surrogate(v + 15.0, b, 10.0, e) - stress_surrogate(v, b, 10.0, e);
    };
    bool any_high = false, any_low = false;
    for (double v = 0.0; v <= 85.0; v += 0.5) {
        any_high = any_high || delta(v, 50.0, 4.3) >= 0.0;
        any_low = any_low || delta(v, 15.0, 2.6) >= 0.0;
    }
    CHECK(any_high);
    CHECK_FALSE(any_low);
}

TEST_CASE("vegetation response is monotone where the ripple term is inactive") {
    // b and e both low: the ripple amplitude is negligible and stress falls with v.
    for (double v = 0.0; v < 99.0; v += 1.0) CHECK(stress_surrogate(v + 1.0, 10.0, 10.0, 2.0) < stress_surrogate(v, 10.0, 10.0, 2.0));
    // b and e both high: the response is not monotone.
    bool up = false, down = false;
    for (double v = 0.0; v < 99.0; v += 0.5) {
        const double d = stress_surrogate(v + 0.5, 80.0, 10.0, 4.8) - stress_surrogate(v, 80.0, 10.0, 4.8);
        up = up || d > 0;
        down = down || d < 0;
    }
    CHECK(up);
    CHECK(down);
}

TEST_CASE("run_scenario") {
    auto cfg = norrebro();
    const double centre[3] = {24.7, 10.82, 3.12};
    const auto out = run_scenario(cfg, centre, *cfg.profile);
    CHECK(out.delta < 0.0);
    CHECK(out.delta == out.stress_policy - out.stress_baseline);

    cfg.lever.delta = 0.0;
    const auto pts = lhs(cfg.space, 50, 3);
    for (Eigen::Index i = 0; i < pts.points.rows(); ++i) {
        const Eigen::RowVectorXd row = pts.points.row(i);
        const auto o = run_scenario(cfg, std::span<const double>(row.data(), 3), *cfg.profile);
        CHECK(o.delta == 0.0);
        CHECK(o.stress_policy == o.stress_baseline);
    }

    auto wrong = cfg;
    wrong.simulator_id = "oracle_box";
    CHECK_THROWS_AS(run_scenario(wrong, centre, *cfg.profile), ValidationError);
    const double two[2] = {1.0, 2.0};
    CHECK_THROWS_AS(run_scenario(cfg, two, *cfg.profile), ValidationError);
}

TEST_CASE("labels follow the delta_nonneg rule") {
    auto cfg = norrebro();
    cfg.lever.delta = 5.0;
    const auto pts = lhs(cfg.space, 200, 11);
    const auto outcomes = simulate_batch(cfg, pts.points);
    const auto labelled = simulate(cfg, pts.points);
    REQUIRE(outcomes.size() == 200);
    std::size_t vulnerable = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        CHECK(labelled.labels[i] == (outcomes[i].delta >= 0.0 ? 1 : 0));
        CHECK(labelled.outputs(i) == outcomes[i].delta);
        vulnerable += labelled.labels[i];
    }
    CHECK(vulnerable > 0);
    CHECK(vulnerable < 200);
}

TEST_CASE("oracles") {
    const double centre[2] = {0.35, 0.75};
    const double outside[2] = {0.19, 0.75};
    CHECK(oracle_box(centre) == 1);
    CHECK(oracle_box(outside) == 0);
    const double edge[2] = {0.2, 0.9};
    CHECK(oracle_box(edge) == 1);
    const double one[1] = {0.3};
    CHECK_THROWS_AS(oracle_box(one), ValidationError);

    const double ring_in[2] = {0.5 + 0.35, 0.5};
    const double ring_hole[2] = {0.5, 0.5};
    CHECK(oracle_ring(ring_in) == 1);
    CHECK(oracle_ring(ring_hole) == 0);

    // The vulnerable fraction of uniform points approaches the box area 0.09.
    ExperimentConfig cfg;
    cfg.space = UncertaintySpace::unit_cube(3);
    cfg.simulator_id = "oracle_box";
    const auto pts = uniform_in_box(cfg.space, Box(3), 20000, 99);
    const auto labelled = simulate(cfg, pts.points);
    CHECK(static_cast<double>(labelled.vulnerable_count()) / 20000.0 == doctest::Approx(0.09).epsilon(0.1));
}

TEST_CASE("registry and bindings") {
    const auto ids = simulator_ids();
    CHECK(ids.size() == 3);
    CHECK_THROWS_AS(find_simulator("nope"), ValidationError);
    const auto& oracle = find_simulator("oracle_ring");
    CHECK_THROWS_AS(check_binding(oracle.spec(), UncertaintySpace::unit_cube(1)), ValidationError);
    CHECK_NOTHROW(check_binding(oracle.spec(), UncertaintySpace::unit_cube(4)));
    CHECK_THROWS_AS(check_binding(find_simulator("stress_surrogate").spec(), UncertaintySpace::unit_cube(3)),
                    ValidationError);
}
