#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sdforge/error.hpp"
#include "sdforge/metrics.hpp"

using namespace sdforge;

namespace {

ExperimentConfig experiment(const std::string& name) {
    return load_experiment(std::filesystem::path(SDFORGE_DATA_DIR) / "experiments" / (name + ".experiment"));
}

} // namespace

TEST_CASE("r_squared hand values") {
    const std::vector<double> a{1, 2, 3}, p{1, 2, 4};
    const auto m = r_squared(a, p);
    CHECK(std::abs(m.r_squared - 0.5) <= 1e-12);
    CHECK(m.mse == doctest::Approx(1.0 / 3.0));
    CHECK(m.mae == doctest::Approx(1.0 / 3.0));
    CHECK(m.n == 3);

    const auto perfect = r_squared(a, a);
    CHECK(perfect.r_squared == 1.0);
    CHECK(perfect.mse == 0.0);
    CHECK(perfect.mae == 0.0);

    const std::vector<double> mean{2, 2, 2};
    CHECK(r_squared(a, mean).r_squared == 0.0);
}

TEST_CASE("r_squared edge cases") {
    const std::vector<double> flat{4, 4, 4}, other{1, 2, 3};
    const auto m = r_squared(flat, other);
    CHECK(m.degenerate);
    CHECK(std::isnan(m.r_squared));
    CHECK_THROWS_AS(r_squared(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
    CHECK_THROWS_AS(r_squared(other, std::vector<double>{1, 2}), ValidationError);
}

TEST_CASE("r_squared is translation invariant and bounded") {
    std::vector<double> a, p;
    for (int i = 0; i < 50; ++i) {
        a.push_back(std::sin(i * 0.37) * 3.0);
        p.push_back(std::sin(i * 0.37 + 0.2) * 2.5);
    }
    const auto base = r_squared(a, p);
    CHECK(base.r_squared <= 1.0);
    CHECK(base.mse >= 0.0);
    CHECK(base.mae >= 0.0);
    for (double c : {-100.0, 1e-3, 7.5, 1e3}) {
        std::vector<double> a2 = a, p2 = p;
        for (auto& v : a2) v += c;
        for (auto& v : p2) v += c;
        CHECK(std::abs(r_squared(a2, p2).r_squared - base.r_squared) <= 1e-12);
    }
}

TEST_CASE("pearson") {
    const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1}, flat{1, 1, 1, 1};
    CHECK(pearson(a, b).r == doctest::Approx(1.0));
    CHECK(pearson(a, c).r == doctest::Approx(-1.0));
    const auto undefined = pearson(a, flat);
    CHECK_FALSE(undefined.defined);
    CHECK(undefined.r == 0.0);
}

TEST_CASE("sweep threshold extraction") {
    const std::vector<double> d{1, 2, 3, 4, 5};
    CHECK(*sweep_threshold(d, std::vector<std::size_t>{9, 5, 2, 3, 0}, 2) == 5.0);
    CHECK(*sweep_threshold(d, std::vector<std::size_t>{9, 2, 1, 0, 0}, 2) == 2.0);
    CHECK_FALSE(sweep_threshold(d, std::vector<std::size_t>{9, 5, 4, 3, 3}, 2).has_value());
    CHECK(*sweep_threshold(d, std::vector<std::size_t>{0, 0, 0, 0, 0}, 2) == 1.0);
}

TEST_CASE("delta grid parsing") {
    const auto g = parse_delta_grid("0.5:30:0.5");
    CHECK(g.size() == 60);
    CHECK(g.front() == 0.5);
    CHECK(g.back() == doctest::Approx(30.0));
    CHECK(parse_delta_grid("0:1:0.3").size() == 4);
    CHECK(parse_delta_grid("2:2:1").size() == 1);
    CHECK_THROWS_AS(parse_delta_grid("1:2"), ValidationError);
    CHECK_THROWS_AS(parse_delta_grid("a:b:c"), ValidationError);
    CHECK_THROWS_AS(parse_delta_grid("3:1:1"), ValidationError);
    CHECK_THROWS_AS(parse_delta_grid("0:1:0"), ValidationError);
}

TEST_CASE("policy sweep") {
    const auto exp = experiment("hellerup");
    const auto grid = parse_delta_grid("0:30:0.5");
    const auto sweep = policy_sweep(exp, grid, 200, 7);
    REQUIRE(sweep.vulnerable_counts.size() == grid.size());
    CHECK(sweep.zero_lever_warning);
    CHECK(sweep.vulnerable_counts[0] == 200); // identity lever: every outcome is exactly 0
    for (auto c : sweep.vulnerable_counts) CHECK(c <= 200);
    CHECK(sweep.threshold.has_value());
    CHECK(*sweep.threshold > 0.0);

    const auto again = policy_sweep(exp, grid, 200, 7);
    CHECK(again.vulnerable_counts == sweep.vulnerable_counts);

    CHECK_FALSE(policy_sweep(exp, std::vector<double>{1.0, 2.0}, 50, 1).zero_lever_warning);
    CHECK_THROWS_AS(policy_sweep(exp, std::vector<double>{}, 50, 1), ValidationError);
    CHECK_THROWS_AS(policy_sweep(exp, std::vector<double>{-1.0}, 50, 1), ValidationError);
}
