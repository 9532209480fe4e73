// Acceptance suite: one criterion per line, desk scale. Exit code is the
// number of failed criteria.

#include "slowfast/slowfast.hpp"

#include "qsd_oracle.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace slowfast;
namespace fs = std::filesystem;

namespace {

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

bool criterion_qsd(std::string& detail) {
    Mat q1(2, 2), q2(2, 2);
    q1 << -1, 1, 2, -2;
    q2 << -3, 3, 1, -1;
    const Vec nu1 = check_weak_irreducibility(q1);
    const Vec nu2 = check_weak_irreducibility(q2);
    bool ok = std::abs(nu1(0) - 2.0 / 3.0) <= 1e-12 && std::abs(nu1(1) - 1.0 / 3.0) <= 1e-12 &&
              std::abs(nu2(0) - 0.25) <= 1e-12 && std::abs(nu2(1) - 0.75) <= 1e-12;

    double worst_residual = 0.0;
    double worst_oracle_gap = 0.0;
    RandomStream rng(8675309);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 4.0);
        const Mat q = random_rate_matrix(n, rng);
        const Vec nu = check_weak_irreducibility(q);
        worst_residual = std::max(worst_residual, (nu.transpose() * q).cwiseAbs().maxCoeff());
        const auto oracle = qsd_elimination_oracle(q);
        for (std::size_t i = 0; i < n; ++i) {
            worst_oracle_gap = std::max(
                worst_oracle_gap, std::abs(nu(static_cast<Eigen::Index>(i)) - oracle[i]));
        }
    }
    ok = ok && worst_residual <= 1e-10 && worst_oracle_gap <= 1e-10;
    char buffer[160];
    std::snprintf(buffer, sizeof(buffer),
                  "max ||nu Q|| = %.2e, max oracle gap = %.2e over 20 random generators",
                  worst_residual, worst_oracle_gap);
    detail = buffer;
    return ok;
}

bool criterion_aggregation(std::string& detail) {
    const auto b = make_two_class_benchmark();
    const Mat q_bar = aggregated_generator(b.model.switching, 0.0);
    bool ok = std::abs(q_bar(0, 0) + 4.0 / 3.0) <= 1e-12 &&
              std::abs(q_bar(0, 1) - 4.0 / 3.0) <= 1e-12 &&
              std::abs(q_bar(1, 0) - 2.0) <= 1e-12 && std::abs(q_bar(1, 1) + 2.0) <= 1e-12;

    RandomStream rng(1001);
    double worst_row_sum = 0.0;
    bool off_diag_ok = true;
    for (int trial = 0; trial < 20; ++trial) {
        TwoScaleGenerator gen;
        gen.partition = ClassPartition{{2, 3}};
        Mat fast = Mat::Zero(5, 5);
        fast.block(0, 0, 2, 2) = random_rate_matrix(2, rng);
        fast.block(2, 2, 3, 3) = random_rate_matrix(3, rng);
        gen.fast = GeneratorSchedule::constant(fast);
        gen.slow = GeneratorSchedule::constant(random_rate_matrix(5, rng));
        const Mat generated = aggregated_generator(gen, 0.0);
        worst_row_sum =
            std::max(worst_row_sum, generated.rowwise().sum().cwiseAbs().maxCoeff());
        for (Eigen::Index i = 0; i < generated.rows(); ++i) {
            for (Eigen::Index j = 0; j < generated.cols(); ++j) {
                if (i != j && generated(i, j) < 0.0) off_diag_ok = false;
            }
        }
    }
    ok = ok && worst_row_sum <= 1e-10 && off_diag_ok;
    char buffer[160];
    std::snprintf(buffer, sizeof(buffer),
                  "worked Q_bar exact to 1e-12; max generated row sum = %.2e", worst_row_sum);
    detail = buffer;
    return ok;
}

bool criterion_switching_ergodicity(std::string& detail) {
    const Stopwatch timer;
    Mat q(2, 2);
    q << -1, 1, 1, -1;
    const auto gen = TwoScaleGenerator::single_class(GeneratorSchedule::constant(q));
    SwitchingErgodicitySettings settings;
    settings.n_paths = 1000;
    settings.seed = 90210;
    settings.jobs = 0;
    const auto report =
        switching_ergodicity_study(gen, {0.1, 0.01}, [](double) { return 1.0; }, settings);
    const double coarse = report.max_mean_square[0];
    const double fine = report.max_mean_square[1];
    const double elapsed = timer.seconds();
    const bool ok = fine <= 0.25 * coarse && elapsed < 30.0;
    char buffer[160];
    std::snprintf(buffer, sizeof(buffer),
                  "E|dev|^2: eps 0.1 -> %.3e, eps 0.01 -> %.3e (ratio %.3f <= 0.25), %.1fs",
                  coarse, fine, fine / coarse, elapsed);
    detail = buffer;
    return ok;
}

bool criterion_invariant_law(std::string& detail) {
    const auto b = make_ou_frozen_benchmark();
    InvariantMeasureSettings settings;
    settings.dt = 0.01;
    settings.burn_in = 5.0;
    settings.horizon = 25.0;
    settings.path_count = 100;
    settings.stride = 10;
    settings.rate_hint = 1.0;
    settings.seed = 515;
    settings.jobs = 0;
    const auto est = estimate_invariant_measure(b.model, Vec::Constant(1, 2.0), 0, settings);
    const bool ok = est.cloud.size() >= 10000 && std::abs(est.mean(0) - 2.0) <= 0.03 &&
                    std::abs(est.variance(0) - 0.5) <= 0.03;
    char buffer[160];
    std::snprintf(buffer, sizeof(buffer),
                  "%zu pooled samples: mean = %.4f (2 +- 0.03), variance = %.4f (0.5 +- 0.03)",
                  est.cloud.size(), est.mean(0), est.variance(0));
    detail = buffer;
    return ok;
}

bool criterion_ergodic_rate(std::string& detail) {
    const Stopwatch timer;
    const auto b = make_ou_frozen_benchmark();
    InvariantMeasureSettings settings;
    settings.dt = 0.01;
    settings.burn_in = 5.0;
    settings.horizon = 25.0;
    settings.path_count = 200;
    settings.stride = 10;
    settings.rate_hint = -1.0;  // exercise the sampled dissipativity margin
    settings.seed = 31;
    settings.jobs = 0;
    const std::vector<double> times{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5};
    const auto report = ergodicity_decay(
        b.model, Vec::Constant(1, 2.0), 0, [](const Vec& xi) { return xi(0); },
        Vec::Constant(1, 5.0), times, 100000, settings);

    bool envelope_ok = true;
    const double c_hat = std::exp(report.log_c_hat);
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!report.usable[i]) continue;
        if (report.deviation[i] > 3.0 * c_hat * std::exp(-0.8 * times[i])) envelope_ok = false;
    }
    const double elapsed = timer.seconds();
    const bool ok = report.lambda_hat >= 0.8 && report.lambda_hat <= 1.2 && envelope_ok &&
                    elapsed < 120.0;
    char buffer[200];
    std::snprintf(buffer, sizeof(buffer),
                  "lambda_hat = %.3f in [0.8, 1.2] (lambda* = %.3f), envelope C e^{-0.8 t} %s, "
                  "%.1fs",
                  report.lambda_hat, report.lambda_star, envelope_ok ? "holds" : "violated",
                  elapsed);
    detail = buffer;
    return ok;
}

bool criterion_picard(std::string& detail) {
    // drift-only: f = x, no noise; deltas follow T^{n+1}/(n+1)!
    SlowFastModel drift;
    drift.switching = TwoScaleGenerator::single_class(GeneratorSchedule::constant(Mat::Zero(1, 1)));
    drift.initial_slow = Vec::Constant(1, 1.0);
    drift.initial_fast = Vec::Zero(1);
    drift.coefficients.slow_drift = [](const Vec& x, std::size_t, const Vec&) { return x; };
    drift.coefficients.slow_diffusion = [](const Vec&, std::size_t, const Vec&) {
        return Mat::Zero(1, 1);
    };
    drift.coefficients.slow_jump = [](const Vec&, std::size_t, const Vec&, const Vec&) {
        return Vec::Zero(1);
    };
    drift.coefficients.fast_drift = [](const Vec&, const Vec&) { return Vec::Zero(1); };
    drift.coefficients.fast_diffusion = [](const Vec&, const Vec&) { return Mat::Zero(1, 1); };
    drift.coefficients.fast_jump = [](const Vec&, const Vec&, const Vec&) { return Vec::Zero(1); };

    const auto factorial_check =
        picard_iterate(drift, 0, PathGrid{0.0, 1.0, 1e-3}, NoiseBundle{5}, 6);
    bool factorial_ok = true;
    double worst_rel = 0.0;
    for (std::size_t n = 0; n <= 5; ++n) {
        double fact = 1.0;
        for (std::size_t k = 2; k <= n + 1; ++k) fact *= static_cast<double>(k);
        const double expected = 1.0 / fact;
        const double rel = std::abs(factorial_check.slow_deltas[n] - expected) / expected;
        worst_rel = std::max(worst_rel, rel);
        if (rel > 0.10) factorial_ok = false;
    }

    // noisy linear model: ratios eventually below one on two grid resolutions
    auto noisy = drift;
    noisy.initial_fast = Vec::Constant(1, 0.5);
    noisy.coefficients.slow_drift = [](const Vec& x, std::size_t, const Vec& xi) {
        return Vec::Constant(1, 0.8 * x(0) + 0.3 * xi(0));
    };
    noisy.coefficients.slow_diffusion = [](const Vec& x, std::size_t, const Vec&) {
        return Mat::Constant(1, 1, 0.2 + 0.1 * x(0));
    };
    noisy.coefficients.fast_drift = [](const Vec& x, const Vec& xi) { return Vec(x - xi); };
    noisy.coefficients.fast_diffusion = [](const Vec&, const Vec&) {
        return Mat::Constant(1, 1, 0.5);
    };
    bool contracting = true;
    for (const double dt : {1e-2, 5e-3}) {
        const auto result = picard_iterate(noisy, 0, PathGrid{0.0, 1.0, dt}, NoiseBundle{77}, 12);
        for (std::size_t n = 6; n + 1 < result.slow_deltas.size(); ++n) {
            if (result.slow_deltas[n] <= 0.0) continue;
            if (result.slow_deltas[n + 1] / result.slow_deltas[n] >= 1.0) contracting = false;
        }
    }
    const bool ok = factorial_ok && contracting;
    char buffer[160];
    std::snprintf(buffer, sizeof(buffer),
                  "factorial law within %.1f%% for n <= 5; noisy ratios < 1 for n in [6, 12) "
                  "on two grids",
                  100.0 * worst_rel);
    detail = buffer;
    return ok;
}

bool criterion_tightness(std::string& detail) {
    std::vector<double> taus;
    for (int k = 4; k <= 10; ++k) taus.push_back(std::pow(2.0, -k));
    ModulusSettings settings;
    settings.anchor_time = 0.5;
    settings.dt = std::pow(2.0, -10);
    settings.n_paths = 5000;
    settings.seed = 2314;
    settings.jobs = 0;

    const auto diffusion =
        modulus_check(make_diffusion_only_benchmark().model, 1.0, taus, settings);
    auto drift_settings = settings;
    drift_settings.n_paths = 64;
    const auto drift = modulus_check(make_drift_only_benchmark().model, 1.0, taus, drift_settings);

    const bool ok = diffusion.slope >= 0.9 && diffusion.slope <= 1.1 && drift.slope >= 1.9 &&
                    drift.slope <= 2.1;
    char buffer[160];
    std::snprintf(buffer, sizeof(buffer),
                  "diffusion slope = %.3f in [0.9, 1.1]; drift slope = %.3f in [1.9, 2.1]",
                  diffusion.slope, drift.slope);
    detail = buffer;
    return ok;
}

bool run_convergence(const Benchmark& benchmark, std::uint64_t seed, std::string& detail,
                     bool check_occupation) {
    const Stopwatch timer;
    ConvergenceStudySettings settings;
    settings.terminal_time = 1.0;
    settings.dt_base = 1e-3;
    settings.path_count = 10000;
    settings.seed = seed;
    settings.jobs = 0;
    const std::vector<double> epsilons{0.1, 0.01, 0.001};
    const auto report =
        weak_convergence_study(benchmark.model, *benchmark.analytic_averaged, epsilons, settings);

    bool ok = report.strictly_decreasing && report.final_within_floor;
    double occupation_diff = 0.0;
    if (check_occupation) {
        const auto cmp = compare_aggregated_occupation(
            benchmark.model, *benchmark.analytic_averaged, 0.001, 1.0, 4000, seed + 1, 0);
        occupation_diff = cmp.max_abs_diff;
        ok = ok && occupation_diff <= 0.03;
    }
    const double elapsed = timer.seconds();
    ok = ok && elapsed < 300.0;

    std::ostringstream line;
    line.precision(3);
    line << "W1 =";
    for (const auto& row : report.rows) line << " " << row.w1[0];
    line << " (floor " << report.noise_floor_w1[0] << ", decreasing "
         << (report.strictly_decreasing ? "yes" : "NO") << ", final <= 3x floor "
         << (report.final_within_floor ? "yes" : "NO") << ")";
    if (check_occupation) line << ", occupation diff " << occupation_diff << " <= 0.03";
    line << ", " << static_cast<int>(elapsed) << "s";
    detail = line.str();
    return ok;
}

bool criterion_weak_convergence(std::string& detail) {
    return run_convergence(make_linear_benchmark(), 20240601, detail, false);
}

bool criterion_multiclass_convergence(std::string& detail) {
    return run_convergence(make_two_class_benchmark(), 20240602, detail, true);
}

bool criterion_perturbation(std::string& detail) {
    const auto b = make_linear_benchmark();
    PerturbationSettings settings;
    settings.probe_times = {0.0, 0.2, 0.4};
    settings.horizon = 1.0;
    settings.outer_paths = 32;
    settings.inner_paths = 128;
    settings.seed = 4242;
    settings.jobs = 0;
    const auto iota = bump_test_function(10.0);

    const auto coarse = perturbation_magnitude(b.model, *b.analytic_averaged, 0.1, iota, settings);
    const auto fine = perturbation_magnitude(b.model, *b.analytic_averaged, 0.01, iota, settings);
    const double ratio = fine.sup_magnitude / coarse.sup_magnitude;

    auto flat = b.model;
    flat.coefficients.slow_drift = [](const Vec& x, std::size_t, const Vec&) {
        return Vec(4.0 * x);
    };
    const auto centered =
        perturbation_magnitude(flat, *b.analytic_averaged, 0.1, iota, settings);

    const bool ok = ratio <= 0.5 && centered.sup_magnitude <= 1e-12;
    char buffer[200];
    std::snprintf(buffer, sizeof(buffer),
                  "sup|iota_1|: eps 0.1 -> %.3e, eps 0.01 -> %.3e (ratio %.3f <= 0.5); "
                  "f == f_bar gives %.1e",
                  coarse.sup_magnitude, fine.sup_magnitude, ratio, centered.sup_magnitude);
    detail = buffer;
    return ok;
}

bool criterion_determinism(std::string& detail) {
    const Json cfg{{"study", "converge"},
                   {"model", "linear"},
                   {"seed", 99},
                   {"converge",
                    {{"terminal_time_seconds", 0.25},
                     {"dt_seconds", 0.001},
                     {"epsilons", {0.1, 0.05}},
                     {"paths", 500},
                     {"averaged", "analytic"}}}};
    const fs::path base = fs::temp_directory_path() / "slowfast-acceptance";
    fs::remove_all(base);
    const auto run = [&](const std::string& name, int jobs) {
        const fs::path dir = base / name;
        run_experiment(cfg, dir, {}, jobs);
        return dir;
    };
    const auto dir_a = run("a", 1);
    const auto dir_b = run("b", 1);
    const auto dir_c = run("c", 2);

    bool ok = true;
    for (const auto* name : {"convergence.csv", "convergence.json", "summary.json"}) {
        const auto bytes = read_file(dir_a / name);
        ok = ok && bytes == read_file(dir_b / name) && bytes == read_file(dir_c / name);
    }
    detail = ok ? "rerun and jobs=2 outputs byte-identical (manifest carries wall clock only)"
                : "outputs differ between reruns";
    fs::remove_all(base);
    return ok;
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* label;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria{
        {1, "quasi-stationary distributions", criterion_qsd},
        {2, "aggregated generator algebra", criterion_aggregation},
        {3, "switching occupation ergodicity", criterion_switching_ergodicity},
        {4, "frozen-process invariant law", criterion_invariant_law},
        {5, "exponential ergodic rate", criterion_ergodic_rate},
        {6, "Picard contraction", criterion_picard},
        {7, "increment moment bounds", criterion_tightness},
        {8, "weak convergence (single class)", criterion_weak_convergence},
        {9, "weak convergence (multi-class)", criterion_multiclass_convergence},
        {10, "perturbed-test-function magnitude", criterion_perturbation},
        {11, "determinism and schedule independence", criterion_determinism},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        std::string detail;
        bool ok = false;
        try {
            ok = criterion.run(detail);
        } catch (const std::exception& err) {
            detail = std::string("exception: ") + err.what();
        }
        std::printf("[%s] %2d: %s - %s\n", ok ? "PASS" : "FAIL", criterion.id, criterion.label,
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures;
}
