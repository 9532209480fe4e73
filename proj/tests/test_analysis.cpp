#include <catch2/catch_amalgamated.hpp>

#include "slowfast/analysis.hpp"
#include "slowfast/benchmarks.hpp"

#include <cmath>

using namespace slowfast;

TEST_CASE("terminal_ensemble", "[analysis]") {
    SECTION("constant model is a point mass") {
        const auto b = make_constant_benchmark();
        const auto ensemble = terminal_ensemble(
            [&](std::size_t p) {
                return simulate_coupled(b.model, 1.0, PathGrid{0.0, 1.0, 1e-2}, NoiseBundle{3}, p)
                    .terminal_slow();
            },
            64, 1.0, 3, 2);
        CHECK(ensemble.mean(0) == 1.0);
        CHECK(ensemble.variance(0) == 0.0);
        CHECK(ensemble.samples[0].front() == ensemble.samples[0].back());
    }

    SECTION("unit drift shifts every sample") {
        const auto b = make_drift_only_benchmark();
        const auto ensemble = terminal_ensemble(
            [&](std::size_t p) {
                return simulate_coupled(b.model, 1.0, PathGrid{0.0, 1.0, 1e-3}, NoiseBundle{3}, p)
                    .terminal_slow();
            },
            16, 1.0, 3, 1);
        for (double v : ensemble.samples[0]) CHECK(v == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("OU terminal variance") {
        const auto b = make_ou_slow_benchmark();
        const auto ensemble = terminal_ensemble(
            [&](std::size_t p) {
                return simulate_coupled(b.model, 1.0, PathGrid{0.0, 1.0, 1e-3}, NoiseBundle{41}, p)
                    .terminal_slow();
            },
            10000, 1.0, 41, 2);
        CHECK(ensemble.variance(0) ==
              Catch::Approx((1.0 - std::exp(-2.0)) / 2.0).margin(0.02));
    }

    SECTION("fewer than two paths is rejected") {
        CHECK_THROWS(terminal_ensemble([](std::size_t) { return Vec::Zero(1); }, 1, 1.0, 0, 1));
    }
}

TEST_CASE("wasserstein1", "[analysis][distance]") {
    const std::vector<double> a{0.0, 1.0};
    CHECK(wasserstein1(a, a) == 0.0);
    CHECK(wasserstein1(a, std::vector<double>{1.0, 2.0}) == 1.0);
    CHECK(wasserstein1(std::vector<double>{0.0, 2.0}, std::vector<double>{1.0, 1.0}) == 1.0);
    CHECK_THROWS(wasserstein1(a, std::vector<double>{1.0}));

    SECTION("symmetry and triangle inequality on random triples") {
        RandomStream rng(40);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> x(20), y(20), z(20);
            for (std::size_t i = 0; i < 20; ++i) {
                x[i] = rng.normal();
                y[i] = 0.5 * rng.normal() + 1.0;
                z[i] = 2.0 * rng.normal() - 0.5;
            }
            std::sort(x.begin(), x.end());
            std::sort(y.begin(), y.end());
            std::sort(z.begin(), z.end());
            CHECK(wasserstein1(x, y) == wasserstein1(y, x));
            CHECK(wasserstein1(x, z) <= wasserstein1(x, y) + wasserstein1(y, z) + 1e-12);
        }
    }
}

TEST_CASE("ks_statistic", "[analysis][distance]") {
    const std::vector<double> a{0.0, 1.0};
    CHECK(ks_statistic(a, a) == 0.0);
    CHECK(ks_statistic(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 1.0}) == 1.0);
    CHECK(ks_statistic(std::vector<double>{0.0, 1.0}, std::vector<double>{0.0, 2.0}) == 0.5);

    SECTION("symmetric in its arguments") {
        RandomStream rng(41);
        std::vector<double> x(31), y(17);
        for (auto& v : x) v = rng.normal();
        for (auto& v : y) v = rng.normal() + 0.3;
        std::sort(x.begin(), x.end());
        std::sort(y.begin(), y.end());
        CHECK(ks_statistic(x, y) == ks_statistic(y, x));
    }

    SECTION("rejects at the 1 percent level in at most 3 of 100 identical-law trials") {
        // two-sample critical value at alpha = 0.01
        const std::size_t n = 500;
        const double critical =
            1.628 * std::sqrt(2.0 / static_cast<double>(n));
        std::size_t rejections = 0;
        for (std::size_t trial = 0; trial < 100; ++trial) {
            RandomStream rng(mix_keys(5005, trial));
            std::vector<double> x(n), y(n);
            for (auto& v : x) v = rng.normal();
            for (auto& v : y) v = rng.normal();
            std::sort(x.begin(), x.end());
            std::sort(y.begin(), y.end());
            if (ks_statistic(x, y) > critical) ++rejections;
        }
        CHECK(rejections <= 3);
    }
}

TEST_CASE("weak_convergence_study structure", "[analysis][convergence]") {
    // identical-law configuration: the slow equation does not see the fast
    // component or the regime, so every epsilon shares the averaged law
    auto b = make_ou_slow_benchmark();
    AveragedModel avg;
    avg.slow_dim = 1;
    avg.initial_slow = b.model.initial_slow;
    avg.drift = [](const Vec& x, std::size_t) { return Vec(-x); };
    avg.diffusion_root = [](const Vec&, std::size_t) { return Mat::Identity(1, 1); };
    avg.diffusion_sq = avg.diffusion_root;

    ConvergenceStudySettings settings;
    settings.terminal_time = 0.5;
    settings.dt_base = 1e-3;
    settings.path_count = 2000;
    settings.seed = 99;
    settings.jobs = 2;

    SECTION("identical laws sit at the noise floor") {
        const auto report = weak_convergence_study(b.model, avg, {0.1, 0.05}, settings);
        REQUIRE(report.rows.size() == 2);
        CHECK(report.rows[0].dt == Catch::Approx(1e-3));
        for (const auto& row : report.rows) {
            CHECK(row.w1[0] <= 2.0 * report.noise_floor_w1[0]);
            CHECK(row.ks[0] <= 2.0 * report.noise_floor_ks[0]);
        }
        CHECK(report.final_within_floor);
        // nothing clears twice the floor, so no slope is fitted
        CHECK_FALSE(report.slope_valid);
    }

    SECTION("single-epsilon study has one row and no slope") {
        const auto report = weak_convergence_study(b.model, avg, {0.1}, settings);
        CHECK(report.rows.size() == 1);
        CHECK_FALSE(report.slope_valid);
    }

    SECTION("noise floor is reseeding-stable within 20 percent") {
        auto reseeded = settings;
        reseeded.seed = 1234;
        const auto a = weak_convergence_study(b.model, avg, {0.1}, settings);
        const auto c = weak_convergence_study(b.model, avg, {0.1}, reseeded);
        CHECK(a.noise_floor_w1[0] ==
              Catch::Approx(c.noise_floor_w1[0]).epsilon(0.20));
    }

    SECTION("ascending epsilon list is rejected") {
        CHECK_THROWS(weak_convergence_study(b.model, avg, {0.05, 0.1}, settings));
    }
}

TEST_CASE("switching_ergodicity_study", "[analysis][ergodicity]") {
    SwitchingErgodicitySettings settings;
    settings.n_paths = 1000;
    settings.seed = 7;
    settings.jobs = 2;
    const auto one = [](double) { return 1.0; };

    SECTION("single-state chain gives exactly zero") {
        const auto gen =
            TwoScaleGenerator::single_class(GeneratorSchedule::constant(Mat::Zero(1, 1)));
        const auto report = switching_ergodicity_study(gen, {0.1, 0.01}, one, settings);
        for (const auto& row : report.mean_square) {
            for (double v : row) CHECK(v == 0.0);
        }
        CHECK(report.decreasing);
    }

    SECTION("zero weight function gives exactly zero") {
        Mat q(2, 2);
        q << -1, 1, 1, -1;
        const auto gen = TwoScaleGenerator::single_class(GeneratorSchedule::constant(q));
        const auto report =
            switching_ergodicity_study(gen, {0.1}, [](double) { return 0.0; }, settings);
        CHECK(report.max_mean_square[0] == 0.0);
    }

    SECTION("symmetric two-state deviations scale linearly in epsilon") {
        Mat q(2, 2);
        q << -1, 1, 1, -1;
        const auto gen = TwoScaleGenerator::single_class(GeneratorSchedule::constant(q));
        const auto report = switching_ergodicity_study(gen, {0.1, 0.01}, one, settings);
        CHECK(report.decreasing);
        const double coarse = report.max_mean_square[0];
        const double fine = report.max_mean_square[1];
        CHECK(fine <= 0.25 * coarse);
        // Lemma 2.2 on this benchmark decays like eps: ratio near 10
        CHECK(coarse / fine >= 6.0);
        CHECK(coarse / fine <= 14.0);
    }
}

TEST_CASE("modulus_check", "[analysis][tightness]") {
    ModulusSettings settings;
    settings.anchor_time = 0.5;
    settings.dt = std::pow(2.0, -10);
    settings.n_paths = 2000;
    settings.seed = 11;
    settings.jobs = 2;
    std::vector<double> taus;
    for (int k = 4; k <= 10; ++k) taus.push_back(std::pow(2.0, -k));

    SECTION("zero model has zero moments") {
        const auto b = make_constant_benchmark();
        auto cheap = settings;
        cheap.n_paths = 8;
        const auto report = modulus_check(b.model, 1.0, taus, cheap);
        for (double m : report.moments) CHECK(m == 0.0);
        CHECK_FALSE(report.slope_valid);
    }

    SECTION("unit drift gives moment tau^2 and slope 2") {
        const auto b = make_drift_only_benchmark();
        auto cheap = settings;
        cheap.n_paths = 8;
        const auto report = modulus_check(b.model, 1.0, taus, cheap);
        for (std::size_t i = 0; i < taus.size(); ++i) {
            CHECK(report.moments[i] == Catch::Approx(taus[i] * taus[i]).epsilon(1e-9));
        }
        CHECK(report.slope == Catch::Approx(2.0).margin(1e-6));
    }

    SECTION("unit diffusion gives moment tau and slope 1") {
        const auto b = make_diffusion_only_benchmark();
        const auto report = modulus_check(b.model, 1.0, taus, settings);
        for (std::size_t i = 0; i < taus.size(); ++i) {
            CHECK(report.moments[i] == Catch::Approx(taus[i]).epsilon(0.10));
        }
        CHECK(report.slope == Catch::Approx(1.0).margin(0.1));
    }
}

TEST_CASE("bump test function", "[analysis][perturbation]") {
    const auto iota = bump_test_function(2.0, 1.5);
    CHECK(iota.value(Vec::Zero(1)) == 1.5);
    CHECK(iota.value(Vec::Constant(1, 2.0)) == 0.0);
    CHECK(iota.value(Vec::Constant(1, 5.0)) == 0.0);
    CHECK(iota.gradient(Vec::Constant(1, 5.0))(0) == 0.0);

    SECTION("gradient matches central differences") {
        const double h = 1e-6;
        for (const double x : {-1.5, -0.3, 0.0, 0.9, 1.9}) {
            const double fd = (iota.value(Vec::Constant(1, x + h)) -
                               iota.value(Vec::Constant(1, x - h))) /
                              (2.0 * h);
            CHECK(iota.gradient(Vec::Constant(1, x))(0) == Catch::Approx(fd).margin(1e-6));
        }
    }
}

TEST_CASE("perturbation_magnitude", "[analysis][perturbation]") {
    const auto b = make_linear_benchmark();
    REQUIRE(b.analytic_averaged.has_value());

    PerturbationSettings settings;
    settings.probe_times = {0.0, 0.2, 0.4};
    settings.horizon = 1.0;
    settings.outer_paths = 8;
    settings.inner_paths = 32;
    settings.seed = 19;
    settings.jobs = 2;

    SECTION("zero test function gives exactly zero") {
        TestFunction zero;
        zero.value = [](const Vec&) { return 0.0; };
        zero.gradient = [](const Vec& x) { return Vec(Vec::Zero(x.size())); };
        const auto report =
            perturbation_magnitude(b.model, *b.analytic_averaged, 0.1, zero, settings);
        CHECK(report.sup_magnitude == 0.0);
    }

    SECTION("f equal to its average gives zero within the inner noise floor") {
        auto m = b.model;
        m.coefficients.slow_drift = [](const Vec& x, std::size_t, const Vec&) {
            return Vec(4.0 * x);
        };
        const auto report = perturbation_magnitude(m, *b.analytic_averaged, 0.1,
                                                   bump_test_function(10.0), settings);
        CHECK(report.sup_magnitude <= 1e-12);  // integrand vanishes pointwise
    }

    SECTION("magnitude shrinks with epsilon") {
        const auto iota = bump_test_function(10.0);
        const auto coarse =
            perturbation_magnitude(b.model, *b.analytic_averaged, 0.1, iota, settings);
        const auto fine =
            perturbation_magnitude(b.model, *b.analytic_averaged, 0.01, iota, settings);
        CHECK(coarse.sup_magnitude > 0.0);
        CHECK(fine.sup_magnitude < coarse.sup_magnitude);
    }

    SECTION("budget cap is enforced") {
        auto capped = settings;
        capped.budget_cap = 10;
        CHECK_THROWS_AS(perturbation_magnitude(b.model, *b.analytic_averaged, 0.1,
                                               bump_test_function(10.0), capped),
                        BudgetExceededError);
    }
}

TEST_CASE("aggregated occupation comparison", "[analysis][aggregation]") {
    const auto b = make_two_class_benchmark();
    REQUIRE(b.analytic_averaged.has_value());
    const auto cmp =
        compare_aggregated_occupation(b.model, *b.analytic_averaged, 0.01, 1.0, 2000, 23, 2);
    REQUIRE(cmp.coupled_fraction.size() == 2);
    CHECK(cmp.coupled_fraction[0] + cmp.coupled_fraction[1] == Catch::Approx(1.0).margin(1e-12));
    CHECK(cmp.max_abs_diff < 0.05);
}
