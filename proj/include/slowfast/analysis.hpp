#pragma once

#include "slowfast/averaging.hpp"
#include "slowfast/common.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/model.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/switching.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace slowfast {

/// Terminal-time marginal of an ensemble: per-coordinate sorted samples plus
/// first moments.
struct EnsembleSummary {
    double terminal_time = 0.0;
    std::vector<std::vector<double>> samples;  // per coordinate, ascending
    Vec mean;
    Vec variance;
    std::size_t path_count = 0;
    std::uint64_t seed = 0;
};

inline EnsembleSummary make_ensemble_summary(std::vector<Vec> terminals, double terminal_time,
                                             std::uint64_t seed) {
    if (terminals.size() < 2) {
        throw std::invalid_argument("ensemble: need at least two paths");
    }
    EnsembleSummary summary;
    summary.terminal_time = terminal_time;
    summary.path_count = terminals.size();
    summary.seed = seed;
    const auto dim = terminals.front().size();
    summary.samples.assign(static_cast<std::size_t>(dim), {});
    summary.mean = Vec::Zero(dim);
    summary.variance = Vec::Zero(dim);
    for (Eigen::Index d = 0; d < dim; ++d) {
        auto& coord = summary.samples[static_cast<std::size_t>(d)];
        coord.reserve(terminals.size());
        for (const auto& v : terminals) coord.push_back(v(d));
        std::sort(coord.begin(), coord.end());
        double mean = 0.0;
        for (double v : coord) mean += v;
        mean /= static_cast<double>(coord.size());
        double var = 0.0;
        for (double v : coord) var += (v - mean) * (v - mean);
        var /= static_cast<double>(coord.size());
        summary.mean(d) = mean;
        summary.variance(d) = var;
    }
    return summary;
}

/// Runs n_paths independent terminal samples. The sampler receives the path
/// index and must derive its own noise from it, so scheduling cannot change
/// the result.
inline EnsembleSummary terminal_ensemble(const std::function<Vec(std::size_t)>& sample_terminal,
                                         std::size_t n_paths, double terminal_time,
                                         std::uint64_t seed, int jobs) {
    if (n_paths < 2) throw std::invalid_argument("terminal_ensemble: need at least two paths");
    std::vector<Vec> terminals(n_paths);
    parallel_for(n_paths, jobs, [&](std::size_t p) { terminals[p] = sample_terminal(p); });
    return make_ensemble_summary(std::move(terminals), terminal_time, seed);
}

/// W1 between equal-count sorted samples: mean absolute difference of order
/// statistics.
inline double wasserstein1(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("wasserstein1: need equal nonzero sample counts");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

/// Two-sample Kolmogorov-Smirnov statistic on sorted samples.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
    double sup = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == v) ++i;
        while (j < b.size() && b[j] == v) ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        sup = std::max(sup, std::abs(fa - fb));
    }
    return sup;
}

namespace detail {

inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double denom = sxx - sx * sx / n;
    return denom > 0.0 ? (sxy - sx * sy / n) / denom : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

struct ConvergenceRow {
    double epsilon = 0.0;
    double dt = 0.0;
    std::vector<double> w1;  // per coordinate
    std::vector<double> ks;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;             // one per epsilon, descending
    std::vector<double> noise_floor_w1;           // per coordinate
    std::vector<double> noise_floor_ks;
    double slope = std::numeric_limits<double>::quiet_NaN();  // log W1 vs log eps
    bool slope_valid = false;
    bool strictly_decreasing = false;
    bool final_within_floor = false;  // last epsilon within 3x the W1 floor
    double terminal_time = 0.0;
    std::size_t path_count = 0;
    std::uint64_t seed = 0;
};

struct ConvergenceStudySettings {
    double terminal_time = 1.0;
    double dt_base = 1e-3;
    std::size_t path_count = 10000;
    std::uint64_t seed = 1;
    int jobs = 0;
    double floor_multiplier = 3.0;
};

/// Weak-convergence study for Theorems 2.1/3.1: distances between the
/// terminal marginals of the coupled system and of the averaged equation,
/// one row per epsilon. Path-space convergence is metrized by the
/// marginal-at-T surrogate; the noise floor is the distance between two
/// independently seeded averaged ensembles, and verdicts compare against
/// multiples of that floor.
inline ConvergenceReport weak_convergence_study(const SlowFastModel& model,
                                                const AveragedModel& averaged,
                                                const std::vector<double>& epsilons,
                                                const ConvergenceStudySettings& settings) {
    if (epsilons.empty()) throw std::invalid_argument("weak_convergence_study: no epsilons");
    for (std::size_t i = 0; i + 1 < epsilons.size(); ++i) {
        if (epsilons[i] <= epsilons[i + 1]) {
            throw std::invalid_argument("weak_convergence_study: epsilon list must descend");
        }
    }
    averaged.require_valid();

    ConvergenceReport report;
    report.terminal_time = settings.terminal_time;
    report.path_count = settings.path_count;
    report.seed = settings.seed;

    const PathGrid averaged_grid{0.0, settings.terminal_time, settings.dt_base};
    const auto averaged_terminals = [&](std::uint64_t salt) {
        const NoiseBundle noise{mix_keys(settings.seed, 0xa4e2a6edULL, salt)};
        return terminal_ensemble(
            [&](std::size_t p) { return simulate_averaged(averaged, averaged_grid, noise, p).terminal_slow(); },
            settings.path_count, settings.terminal_time, noise.seed, settings.jobs);
    };
    const EnsembleSummary reference = averaged_terminals(1);
    const EnsembleSummary reseeded = averaged_terminals(2);

    const std::size_t dim = reference.samples.size();
    report.noise_floor_w1.resize(dim);
    report.noise_floor_ks.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        report.noise_floor_w1[d] = wasserstein1(reference.samples[d], reseeded.samples[d]);
        report.noise_floor_ks[d] = ks_statistic(reference.samples[d], reseeded.samples[d]);
    }

    for (const double eps : epsilons) {
        ConvergenceRow row;
        row.epsilon = eps;
        row.dt = std::min(settings.dt_base, eps);
        const PathGrid grid{0.0, settings.terminal_time, row.dt};
        const NoiseBundle noise{mix_keys(settings.seed, 0xc0ab1edULL, hash_double(eps))};
        const EnsembleSummary coupled = terminal_ensemble(
            [&](std::size_t p) { return simulate_coupled(model, eps, grid, noise, p).terminal_slow(); },
            settings.path_count, settings.terminal_time, noise.seed, settings.jobs);
        row.w1.resize(dim);
        row.ks.resize(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            row.w1[d] = wasserstein1(coupled.samples[d], reference.samples[d]);
            row.ks[d] = ks_statistic(coupled.samples[d], reference.samples[d]);
        }
        report.rows.push_back(std::move(row));
    }

    const auto max_w1 = [&](const ConvergenceRow& row) {
        return *std::max_element(row.w1.begin(), row.w1.end());
    };
    const double max_floor =
        *std::max_element(report.noise_floor_w1.begin(), report.noise_floor_w1.end());

    report.strictly_decreasing = true;
    for (std::size_t i = 0; i + 1 < report.rows.size(); ++i) {
        if (!(max_w1(report.rows[i + 1]) < max_w1(report.rows[i]))) {
            report.strictly_decreasing = false;
        }
    }
    report.final_within_floor =
        max_w1(report.rows.back()) <= settings.floor_multiplier * max_floor;

    // slope over points clearing twice the noise floor
    std::vector<double> log_eps, log_w1;
    for (const auto& row : report.rows) {
        const double w = max_w1(row);
        if (w > 2.0 * max_floor) {
            log_eps.push_back(std::log(row.epsilon));
            log_w1.push_back(std::log(w));
        }
    }
    if (log_eps.size() >= 2) {
        report.slope = detail::ls_slope(log_eps, log_w1);
        report.slope_valid = std::isfinite(report.slope);
    }
    return report;
}

struct OccupationComparison {
    std::vector<double> coupled_fraction;     // mean occupation fraction of r_bar^eps
    std::vector<double> aggregated_fraction;  // same for the Q_bar chain
    double max_abs_diff = 0.0;
};

/// Aggregated-regime occupation fractions over [0, T]: the class process of
/// the two-scale chain at the given eps against the Q_bar limit chain.
inline OccupationComparison compare_aggregated_occupation(const SlowFastModel& model,
                                                          const AveragedModel& averaged,
                                                          double eps, double horizon,
                                                          std::size_t n_paths, std::uint64_t seed,
                                                          int jobs) {
    if (!averaged.aggregated) {
        throw std::invalid_argument("occupation comparison requires a multi-class averaged model");
    }
    const std::size_t classes = averaged.class_count;
    OccupationComparison cmp;
    cmp.coupled_fraction.assign(classes, 0.0);
    cmp.aggregated_fraction.assign(classes, 0.0);

    std::vector<std::vector<double>> coupled(n_paths), aggregated(n_paths);
    TwoScaleGenerator limit;
    limit.fast = GeneratorSchedule::constant(
        Mat::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(classes)));
    limit.slow = *averaged.aggregated;
    limit.partition.class_sizes.assign(classes, 1);
    const NoiseBundle noise{mix_keys(seed, 0x0ccba7e5ULL)};
    parallel_for(n_paths, jobs, [&](std::size_t p) {
        auto chain_rng = noise.stream(NoiseStream::Chain, p);
        const auto path = simulate_chain(model.switching, eps, 0.0, horizon,
                                         model.initial_regime, chain_rng);
        const auto classes_path = aggregate_path(path, model.switching.partition);
        auto lim_rng = noise.stream(NoiseStream::AggregatedChain, p);
        const auto limit_path =
            simulate_chain(limit, 1.0, 0.0, horizon, averaged.initial_class, lim_rng);
        coupled[p].resize(classes);
        aggregated[p].resize(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            coupled[p][c] = classes_path.occupation_fraction(c);
            aggregated[p][c] = limit_path.occupation_fraction(c);
        }
    });
    for (std::size_t p = 0; p < n_paths; ++p) {
        for (std::size_t c = 0; c < classes; ++c) {
            cmp.coupled_fraction[c] += coupled[p][c];
            cmp.aggregated_fraction[c] += aggregated[p][c];
        }
    }
    for (std::size_t c = 0; c < classes; ++c) {
        cmp.coupled_fraction[c] /= static_cast<double>(n_paths);
        cmp.aggregated_fraction[c] /= static_cast<double>(n_paths);
        cmp.max_abs_diff = std::max(
            cmp.max_abs_diff, std::abs(cmp.coupled_fraction[c] - cmp.aggregated_fraction[c]));
    }
    return cmp;
}

struct SwitchingErgodicityReport {
    std::vector<double> epsilons;
    std::vector<std::vector<double>> mean_square;  // [epsilon][state]
    std::vector<double> max_mean_square;           // per epsilon
    bool decreasing = false;
};

struct SwitchingErgodicitySettings {
    double t0 = 0.0;
    double t1 = 1.0;
    std::size_t initial_state = 0;
    std::size_t n_paths = 1000;
    std::uint64_t seed = 1;
    int jobs = 0;
};

/// Monte Carlo version of Lemma 2.2: per epsilon and per state, the mean of
/// the squared occupation deviation, with a decreasing-in-epsilon verdict.
inline SwitchingErgodicityReport switching_ergodicity_study(
    const TwoScaleGenerator& gen, const std::vector<double>& epsilons,
    const std::function<double(double)>& beta, const SwitchingErgodicitySettings& settings) {
    const auto qsd = quasi_stationary_schedule(gen);
    const std::size_t states = gen.state_count();
    SwitchingErgodicityReport report;
    report.epsilons = epsilons;

    for (const double eps : epsilons) {
        const NoiseBundle noise{mix_keys(settings.seed, 0x5e90d1cULL, hash_double(eps))};
        std::vector<std::vector<double>> per_path(settings.n_paths);
        parallel_for(settings.n_paths, settings.jobs, [&](std::size_t p) {
            auto rng = noise.stream(NoiseStream::Chain, p);
            const auto path = simulate_chain(gen, eps, settings.t0, settings.t1,
                                             settings.initial_state, rng);
            auto& row = per_path[p];
            row.resize(states);
            for (std::size_t s = 0; s < states; ++s) {
                const double dev =
                    occupation_deviation(path, qsd, s, beta, settings.t0, settings.t1);
                row[s] = dev * dev;
            }
        });
        std::vector<double> mean(states, 0.0);
        for (std::size_t p = 0; p < settings.n_paths; ++p) {
            for (std::size_t s = 0; s < states; ++s) mean[s] += per_path[p][s];
        }
        for (std::size_t s = 0; s < states; ++s) mean[s] /= static_cast<double>(settings.n_paths);
        report.max_mean_square.push_back(*std::max_element(mean.begin(), mean.end()));
        report.mean_square.push_back(std::move(mean));
    }

    report.decreasing = true;
    for (std::size_t i = 0; i + 1 < report.max_mean_square.size(); ++i) {
        if (!(report.max_mean_square[i + 1] <= report.max_mean_square[i])) {
            report.decreasing = false;
        }
    }
    return report;
}

struct ModulusReport {
    std::vector<double> taus;
    std::vector<double> moments;  // E |x(t + tau) - x(t)|^2
    double slope = std::numeric_limits<double>::quiet_NaN();
    bool slope_valid = false;
};

struct ModulusSettings {
    double anchor_time = 0.5;
    double dt = 1e-3;
    std::size_t n_paths = 5000;
    std::uint64_t seed = 1;
    int jobs = 0;
};

/// Increment second moments behind the Lemma 2.5 tightness bound
/// E|x(t+tau) - x(t)|^2 <= C tau, fitted on log-log axes.
inline ModulusReport modulus_check(const SlowFastModel& model, double eps,
                                   const std::vector<double>& taus,
                                   const ModulusSettings& settings) {
    if (taus.empty()) throw std::invalid_argument("modulus_check: no tau values");
    ModulusReport report;
    report.taus = taus;
    const double max_tau = *std::max_element(taus.begin(), taus.end());
    PathGrid grid{0.0, settings.anchor_time + max_tau, settings.dt};
    grid.t1 = std::ceil(grid.t1 / settings.dt) * settings.dt;
    grid.validate();

    const std::size_t anchor_node =
        static_cast<std::size_t>(std::llround(settings.anchor_time / settings.dt));
    std::vector<std::size_t> nodes(taus.size());
    for (std::size_t i = 0; i < taus.size(); ++i) {
        nodes[i] = anchor_node + static_cast<std::size_t>(std::llround(taus[i] / settings.dt));
    }

    const NoiseBundle noise{mix_keys(settings.seed, 0x30d105ULL)};
    std::vector<std::vector<double>> per_path(settings.n_paths);
    parallel_for(settings.n_paths, settings.jobs, [&](std::size_t p) {
        const auto path = simulate_coupled(model, eps, grid, noise, p);
        auto& row = per_path[p];
        row.resize(taus.size());
        for (std::size_t i = 0; i < taus.size(); ++i) {
            row[i] = (path.slow[nodes[i]] - path.slow[anchor_node]).squaredNorm();
        }
    });
    report.moments.assign(taus.size(), 0.0);
    for (std::size_t p = 0; p < settings.n_paths; ++p) {
        for (std::size_t i = 0; i < taus.size(); ++i) report.moments[i] += per_path[p][i];
    }
    std::vector<double> log_tau, log_moment;
    for (std::size_t i = 0; i < taus.size(); ++i) {
        report.moments[i] /= static_cast<double>(settings.n_paths);
        if (report.moments[i] > 0.0) {
            log_tau.push_back(std::log(taus[i]));
            log_moment.push_back(std::log(report.moments[i]));
        }
    }
    if (log_tau.size() >= 2) {
        report.slope = detail::ls_slope(log_tau, log_moment);
        report.slope_valid = std::isfinite(report.slope);
    }
    return report;
}

/// C^4 test function with compact support and its gradient.
struct TestFunction {
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;
};

/// Separable bump amplitude * prod_i (1 - (x_i/radius)^2)^5 on the box
/// |x_i| < radius; four continuous derivatives vanish at the boundary.
inline TestFunction bump_test_function(double radius, double amplitude = 1.0) {
    TestFunction iota;
    iota.value = [radius, amplitude](const Vec& x) {
        double prod = amplitude;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double u = x(i) / radius;
            if (std::abs(u) >= 1.0) return 0.0;
            prod *= std::pow(1.0 - u * u, 5);
        }
        return prod;
    };
    iota.gradient = [radius, amplitude](const Vec& x) {
        Vec grad = Vec::Zero(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double u = x(i) / radius;
            if (std::abs(u) >= 1.0) return Vec(Vec::Zero(x.size()));
        }
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            double term = amplitude;
            for (Eigen::Index j = 0; j < x.size(); ++j) {
                const double u = x(j) / radius;
                if (j == i) {
                    term *= 5.0 * std::pow(1.0 - u * u, 4) * (-2.0 * u / radius);
                } else {
                    term *= std::pow(1.0 - u * u, 5);
                }
            }
            grad(i) = term;
        }
        return grad;
    };
    return iota;
}

struct PerturbationSettings {
    std::vector<double> probe_times{0.0, 0.25, 0.5, 0.75};
    double horizon = 1.0;
    double dt_base = 1e-3;          // outer coupled-path step: min(dt_base, eps)
    double inner_dt_factor = 0.5;   // inner fast step = eps * factor
    std::size_t outer_paths = 32;
    std::size_t inner_paths = 128;
    std::size_t budget_cap = 200000000;  // inner integration steps
    std::uint64_t seed = 1;
    int jobs = 0;
};

struct PerturbationReport {
    std::vector<double> times;
    std::vector<double> magnitude;  // E |iota_1^eps(t)| per probe time
    double sup_magnitude = 0.0;
};

/// First-order perturbed-test-function diagnostic: the drift correction
///   iota_1^eps(t) = sum_i iota_{x_i}(x) int_t^T E_t[ f_i(x, r(u), xi(u)) -
///                   f_bar_i(x) ] du
/// estimated by nested Monte Carlo. Outer samples draw (x, xi, r) at the
/// probe time from the coupled system; inner samples run the chain and the
/// x-frozen fast component forward at scale eps and integrate the centered
/// drift. The proof of Theorem 2.1 bounds the result by O(sqrt(eps)).
inline PerturbationReport perturbation_magnitude(const SlowFastModel& model,
                                                 const AveragedModel& averaged, double eps,
                                                 const TestFunction& iota,
                                                 const PerturbationSettings& settings) {
    averaged.require_valid();
    if (settings.probe_times.empty()) {
        throw std::invalid_argument("perturbation_magnitude: no probe times");
    }
    const double inner_dt = eps * settings.inner_dt_factor;
    std::size_t inner_steps_total = 0;
    for (const double t : settings.probe_times) {
        if (t >= settings.horizon) {
            throw std::invalid_argument("perturbation_magnitude: probe time beyond horizon");
        }
        inner_steps_total += static_cast<std::size_t>((settings.horizon - t) / inner_dt) + 1;
    }
    const std::size_t budget = inner_steps_total * settings.outer_paths * settings.inner_paths;
    if (budget > settings.budget_cap) {
        throw BudgetExceededError("perturbation_magnitude: " + std::to_string(budget) +
                                  " inner steps exceed the cap of " +
                                  std::to_string(settings.budget_cap));
    }

    const double outer_dt = std::min(settings.dt_base, eps);
    const double last_probe =
        *std::max_element(settings.probe_times.begin(), settings.probe_times.end());
    PathGrid outer_grid{0.0, std::max(last_probe, outer_dt), outer_dt};
    outer_grid.t1 = std::ceil(outer_grid.t1 / outer_dt) * outer_dt;
    outer_grid.validate();

    const NoiseBundle noise{mix_keys(settings.seed, 0x9e27b6ULL, hash_double(eps))};
    const auto dx = static_cast<Eigen::Index>(model.slow_dim);
    const auto& coef = model.coefficients;

    struct OuterState {
        Vec x, xi;
        std::size_t regime;
    };
    std::vector<std::vector<OuterState>> states(settings.outer_paths);
    parallel_for(settings.outer_paths, settings.jobs, [&](std::size_t o) {
        const auto path = simulate_coupled(model, eps, outer_grid, noise, o);
        auto& row = states[o];
        row.reserve(settings.probe_times.size());
        for (const double t : settings.probe_times) {
            const auto node = static_cast<std::size_t>(std::llround(t / outer_dt));
            row.push_back({path.slow[node], path.fast[node], path.regime[node]});
        }
    });

    PerturbationReport report;
    report.times = settings.probe_times;
    report.magnitude.assign(settings.probe_times.size(), 0.0);

    std::vector<std::vector<double>> contributions(settings.outer_paths);
    parallel_for(settings.outer_paths, settings.jobs, [&](std::size_t o) {
        auto& per_probe = contributions[o];
        per_probe.assign(settings.probe_times.size(), 0.0);
        for (std::size_t pt = 0; pt < settings.probe_times.size(); ++pt) {
            const double t = settings.probe_times[pt];
            const OuterState& s = states[o][pt];
            const std::size_t cls = model.switching.partition.class_of(s.regime);
            const Vec f_bar = averaged.drift(s.x, cls);
            const std::size_t steps =
                static_cast<std::size_t>((settings.horizon - t) / inner_dt);

            Vec expectation = Vec::Zero(dx);
            for (std::size_t inner = 0; inner < settings.inner_paths; ++inner) {
                const NoiseBundle inner_noise{mix_keys(noise.seed, o * 1000003ULL + pt, inner)};
                auto chain_rng = inner_noise.stream(NoiseStream::Chain);
                const auto chain = simulate_chain(model.switching, eps, t, settings.horizon,
                                                  s.regime, chain_rng);
                auto w1_rng = inner_noise.stream(NoiseStream::FastBrownian);
                auto jump_rng = inner_noise.stream(NoiseStream::FastJumps);
                const double fast_rate = model.fast_measure.total_rate() / eps;
                const double sqrt_inner = std::sqrt(inner_dt / eps);

                Vec xi = s.xi;
                Vec integral = Vec::Zero(dx);
                double u = t;
                for (std::size_t k = 0; k < steps; ++k) {
                    const std::size_t r = chain.state_at(u);
                    integral += (coef.slow_drift(s.x, r, xi) - f_bar) * inner_dt;
                    Vec xi_next =
                        xi + coef.fast_drift(s.x, xi) * (inner_dt / eps) +
                        coef.fast_diffusion(s.x, xi) *
                            (sqrt_inner * detail::standard_normal(
                                              static_cast<Eigen::Index>(model.fast_dim), w1_rng));
                    if (!model.fast_measure.empty()) {
                        xi_next -= fast_jump_compensator(model, s.x, xi) * (inner_dt / eps);
                        const auto events = detail::draw_step_events(
                            model.fast_measure, fast_rate * inner_dt, inner_dt, jump_rng);
                        for (std::size_t e = 0; e < events.atom.size(); ++e) {
                            xi_next += coef.fast_jump(s.x, xi,
                                                      model.fast_measure.atoms[events.atom[e]]);
                        }
                    }
                    xi = std::move(xi_next);
                    u += inner_dt;
                }
                expectation += integral;
            }
            expectation /= static_cast<double>(settings.inner_paths);
            per_probe[pt] = std::abs(iota.gradient(s.x).dot(expectation));
        }
    });

    for (std::size_t o = 0; o < settings.outer_paths; ++o) {
        for (std::size_t pt = 0; pt < settings.probe_times.size(); ++pt) {
            report.magnitude[pt] += contributions[o][pt];
        }
    }
    for (double& m : report.magnitude) {
        m /= static_cast<double>(settings.outer_paths);
        report.sup_magnitude = std::max(report.sup_magnitude, m);
    }
    return report;
}

}  // namespace slowfast
