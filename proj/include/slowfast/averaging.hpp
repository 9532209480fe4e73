#pragma once

#include "slowfast/common.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/model.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/switching.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace slowfast {

struct InvariantMeasureSettings {
    double dt = 1e-2;
    double burn_in = -1.0;   // < 0: 10 / rate (initialization bias below e^-10)
    double horizon = -1.0;   // < 0: 5 x burn-in
    std::size_t path_count = 64;
    std::size_t stride = 5;  // node subsampling when pooling
    double rate_hint = -1.0; // lambda* = 2a1 - a2 - a3; < 0: estimate by sampling
    std::uint64_t seed = 1;
    int jobs = 1;
};

struct InvariantMeasureEstimate {
    Vec frozen_x;
    std::size_t regime = 0;
    std::vector<Vec> cloud;
    Vec mean;
    Vec variance;
    double burn_in = 0.0;
    double horizon = 0.0;
    std::size_t path_count = 0;
    std::vector<std::string> warnings;
};

namespace detail {

inline double dissipativity_rate(const SlowFastModel& model, const Vec& x,
                                 std::vector<std::string>* warnings) {
    SamplingSpec spec;
    spec.box = SamplingBox::cube(model.slow_dim, model.fast_dim, 4.0);
    spec.pair_count = 500;
    spec.seed = 0x0a7e;
    const auto report = validate_dissipativity(model, x, spec);
    if (report.constants.margin() <= 0.0) {
        if (warnings) {
            warnings->push_back(
                "sampled dissipativity margin is not positive; mixing-rate fallback of 1 used");
        }
        return 1.0;
    }
    return report.constants.margin();
}

}  // namespace detail

/// Pooled time-sampling estimate of the invariant law of the x-frozen fast
/// process (Lemma 2.4). Simulates path_count frozen trajectories, drops the
/// burn-in window, and pools every stride-th node into the cloud. The noise
/// streams are keyed on (seed, x, regime), so repeated estimates at the same
/// frozen point replay identically.
inline InvariantMeasureEstimate estimate_invariant_measure(const SlowFastModel& model, const Vec& x,
                                                           std::size_t regime,
                                                           const InvariantMeasureSettings& settings) {
    InvariantMeasureEstimate estimate;
    estimate.frozen_x = x;
    estimate.regime = regime;
    estimate.path_count = settings.path_count;

    double rate = settings.rate_hint;
    if (rate <= 0.0) rate = detail::dissipativity_rate(model, x, &estimate.warnings);
    estimate.burn_in = settings.burn_in > 0.0 ? settings.burn_in : 10.0 / rate;
    estimate.horizon = settings.horizon > 0.0 ? settings.horizon : 5.0 * estimate.burn_in;

    PathGrid grid{0.0, estimate.horizon, settings.dt};
    // snap the horizon onto the step lattice
    grid.t1 = grid.t0 + std::ceil((estimate.horizon - grid.t0) / settings.dt) * settings.dt;
    grid.validate();
    const std::size_t first_node =
        static_cast<std::size_t>(std::ceil(estimate.burn_in / settings.dt));
    const NoiseBundle noise{mix_keys(settings.seed, hash_vec(x), regime)};

    std::vector<std::vector<Vec>> per_path(settings.path_count);
    parallel_for(settings.path_count, settings.jobs, [&](std::size_t p) {
        const auto path = simulate_frozen_fast(model, x, regime, grid, noise, p);
        auto& samples = per_path[p];
        for (std::size_t k = first_node; k < path.fast.size(); k += settings.stride) {
            samples.push_back(path.fast[k]);
        }
    });
    for (auto& samples : per_path) {
        estimate.cloud.insert(estimate.cloud.end(), samples.begin(), samples.end());
    }
    if (estimate.cloud.empty()) {
        throw std::invalid_argument("estimate_invariant_measure: burn-in leaves no samples");
    }

    const auto dim = static_cast<Eigen::Index>(model.fast_dim);
    estimate.mean = Vec::Zero(dim);
    for (const auto& v : estimate.cloud) estimate.mean += v;
    estimate.mean /= static_cast<double>(estimate.cloud.size());
    estimate.variance = Vec::Zero(dim);
    for (const auto& v : estimate.cloud) {
        estimate.variance += (v - estimate.mean).cwiseAbs2();
    }
    estimate.variance /= static_cast<double>(estimate.cloud.size());
    return estimate;
}

struct ErgodicityReport {
    std::vector<double> times;
    std::vector<double> deviation;       // |E F(xi_t) - mu(F)|
    std::vector<double> standard_error;  // Monte Carlo error of the mean at t
    std::vector<bool> usable;            // above the noise floor
    double mu_f = 0.0;
    double mu_f_standard_error = 0.0;
    double lambda_hat = std::numeric_limits<double>::quiet_NaN();
    double log_c_hat = std::numeric_limits<double>::quiet_NaN();
    double lambda_star = 0.0;  // 2a1 - a2 - a3 from the dissipativity sampler
    bool all_below_noise_floor = false;
};

/// Exponential-ergodicity probe for the frozen fast process: estimates
/// |E F(xi_t) - mu(F)| on the given time points, then fits the decay rate by
/// least squares on the log-deviations that clear the Monte Carlo noise
/// floor (2x the combined standard errors). AllBelowNoiseFloor is reported
/// through the flag, not an exception.
inline ErgodicityReport ergodicity_decay(const SlowFastModel& model, const Vec& x,
                                         std::size_t regime,
                                         const std::function<double(const Vec&)>& observable,
                                         const Vec& eta, const std::vector<double>& times,
                                         std::size_t n_paths,
                                         const InvariantMeasureSettings& settings) {
    if (times.empty()) throw std::invalid_argument("ergodicity_decay: no time points");
    ErgodicityReport report;
    report.times = times;
    report.lambda_star =
        settings.rate_hint > 0.0 ? settings.rate_hint : detail::dissipativity_rate(model, x, nullptr);

    // invariant mean of F, with a per-path standard error
    {
        auto mu_settings = settings;
        mu_settings.rate_hint = report.lambda_star;
        const auto estimate = estimate_invariant_measure(model, x, regime, mu_settings);
        const std::size_t per_path = estimate.cloud.size() / estimate.path_count;
        std::vector<double> path_means(estimate.path_count, 0.0);
        for (std::size_t p = 0; p < estimate.path_count; ++p) {
            double acc = 0.0;
            for (std::size_t k = 0; k < per_path; ++k) {
                acc += observable(estimate.cloud[p * per_path + k]);
            }
            path_means[p] = acc / static_cast<double>(per_path);
        }
        double mean = 0.0;
        for (double v : path_means) mean += v;
        mean /= static_cast<double>(path_means.size());
        double var = 0.0;
        for (double v : path_means) var += (v - mean) * (v - mean);
        var /= static_cast<double>(path_means.size());
        report.mu_f = mean;
        report.mu_f_standard_error = std::sqrt(var / static_cast<double>(path_means.size()));
    }

    const double t_max = *std::max_element(times.begin(), times.end());
    PathGrid grid{0.0, std::ceil(t_max / settings.dt) * settings.dt, settings.dt};
    grid.validate();
    std::vector<std::size_t> nodes(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
        nodes[i] = static_cast<std::size_t>(std::llround(times[i] / settings.dt));
    }

    auto decay_model = model;
    decay_model.initial_fast = eta;
    const NoiseBundle noise{mix_keys(settings.seed, 0xe20d1c, regime)};
    std::vector<std::vector<double>> values(n_paths);
    parallel_for(n_paths, settings.jobs, [&](std::size_t p) {
        const auto path = simulate_frozen_fast(decay_model, x, regime, grid, noise, p);
        auto& row = values[p];
        row.resize(times.size());
        for (std::size_t i = 0; i < times.size(); ++i) row[i] = observable(path.fast[nodes[i]]);
    });

    report.deviation.resize(times.size());
    report.standard_error.resize(times.size());
    report.usable.resize(times.size());
    std::size_t usable_count = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        double mean = 0.0;
        for (std::size_t p = 0; p < n_paths; ++p) mean += values[p][i];
        mean /= static_cast<double>(n_paths);
        double var = 0.0;
        for (std::size_t p = 0; p < n_paths; ++p) {
            var += (values[p][i] - mean) * (values[p][i] - mean);
        }
        var /= static_cast<double>(n_paths);
        report.deviation[i] = std::abs(mean - report.mu_f);
        report.standard_error[i] = std::sqrt(var / static_cast<double>(n_paths));
        const double floor = 2.0 * (report.standard_error[i] + report.mu_f_standard_error);
        report.usable[i] = report.deviation[i] > floor;
        if (report.usable[i]) ++usable_count;
    }

    if (usable_count < 2) {
        report.all_below_noise_floor = usable_count == 0;
        return report;
    }
    double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0, n = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!report.usable[i]) continue;
        const double y = std::log(report.deviation[i]);
        st += times[i];
        sy += y;
        stt += times[i] * times[i];
        sty += times[i] * y;
        n += 1.0;
    }
    const double denom = stt - st * st / n;
    if (denom > 0.0) {
        const double slope = (sty - st * sy / n) / denom;
        report.lambda_hat = -slope;
        report.log_c_hat = sy / n - slope * st / n;
    }
    return report;
}

/// Symmetric PSD square root via spectral decomposition.
inline Mat psd_root(const Mat& a) {
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
        throw NotPsdError("psd_root: matrix is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat> solver(0.5 * (a + a.transpose()));
    Vec lambda = solver.eigenvalues();
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
        if (lambda(i) < -1e-6) {
            throw NotPsdError("psd_root: eigenvalue " + std::to_string(lambda(i)) +
                              " below tolerance");
        }
        lambda(i) = std::sqrt(std::max(0.0, lambda(i)));
    }
    return solver.eigenvectors() * lambda.asDiagonal() * solver.eigenvectors().transpose();
}

/// nu- and mu-averages of the slow coefficients for one aggregated class:
/// f_bar, a_bar, per-atom G_bar and the nu-weighted mean of g (sign carrier).
struct FrozenClassAverages {
    Vec drift;
    Mat diffusion_sq;
    std::vector<Mat> jump_sq;   // per atom
    std::vector<Vec> jump_mean; // per atom
};

inline FrozenClassAverages frozen_class_averages(const SlowFastModel& model, const Vec& x,
                                                 std::size_t cls,
                                                 const QuasiStationaryDistribution& qsd,
                                                 std::size_t segment,
                                                 const InvariantMeasureSettings& settings) {
    const auto dx = static_cast<Eigen::Index>(model.slow_dim);
    const std::size_t atoms = model.slow_measure.atom_count();
    FrozenClassAverages out;
    out.drift = Vec::Zero(dx);
    out.diffusion_sq = Mat::Zero(dx, dx);
    out.jump_sq.assign(atoms, Mat::Zero(dx, dx));
    out.jump_mean.assign(atoms, Vec::Zero(dx));

    const Vec& nu = qsd.class_weights(segment, cls);
    const std::size_t offset = qsd.partition.offset(cls);
    for (std::size_t member = 0; member < qsd.partition.class_sizes[cls]; ++member) {
        const std::size_t state = offset + member;
        const double weight = nu(static_cast<Eigen::Index>(member));
        const auto estimate = estimate_invariant_measure(model, x, state, settings);
        const double inv_n = 1.0 / static_cast<double>(estimate.cloud.size());

        Vec f_mean = Vec::Zero(dx);
        Mat a_mean = Mat::Zero(dx, dx);
        std::vector<Mat> g_sq(atoms, Mat::Zero(dx, dx));
        std::vector<Vec> g_mean(atoms, Vec::Zero(dx));
        for (const Vec& xi : estimate.cloud) {
            f_mean += model.coefficients.slow_drift(x, state, xi);
            a_mean += index_square(model.coefficients.slow_diffusion(x, state, xi));
            for (std::size_t i = 0; i < atoms; ++i) {
                const Vec g = model.coefficients.slow_jump(x, state, xi,
                                                           model.slow_measure.atoms[i]);
                g_sq[i] += index_square(Mat(g.asDiagonal()));
                g_mean[i] += g;
            }
        }
        out.drift += weight * inv_n * f_mean;
        out.diffusion_sq += weight * inv_n * a_mean;
        for (std::size_t i = 0; i < atoms; ++i) {
            out.jump_sq[i] += weight * inv_n * g_sq[i];
            out.jump_mean[i] += weight * inv_n * g_mean[i];
        }
    }
    return out;
}

/// A2.5 averages, one quantity at a time.
inline Vec averaged_drift(const SlowFastModel& model, const Vec& x, std::size_t cls,
                          const QuasiStationaryDistribution& qsd, std::size_t segment,
                          const InvariantMeasureSettings& settings) {
    return frozen_class_averages(model, x, cls, qsd, segment, settings).drift;
}

inline Mat averaged_diffusion_sq(const SlowFastModel& model, const Vec& x, std::size_t cls,
                                 const QuasiStationaryDistribution& qsd, std::size_t segment,
                                 const InvariantMeasureSettings& settings) {
    return frozen_class_averages(model, x, cls, qsd, segment, settings).diffusion_sq;
}

/// Integral over the measure of the averaged G: sum_i w_i G_bar(x, z_i).
inline Mat averaged_jump_integral(const SlowFastModel& model, const Vec& x, std::size_t cls,
                                  const QuasiStationaryDistribution& qsd, std::size_t segment,
                                  const InvariantMeasureSettings& settings) {
    const auto averages = frozen_class_averages(model, x, cls, qsd, segment, settings);
    Mat total = Mat::Zero(static_cast<Eigen::Index>(model.slow_dim),
                          static_cast<Eigen::Index>(model.slow_dim));
    for (std::size_t i = 0; i < averages.jump_sq.size(); ++i) {
        total += model.slow_measure.weights[i] * averages.jump_sq[i];
    }
    return total;
}

namespace detail {

/// g_bar per atom: A2.5 pins only the averaged second-moment G_bar, so the
/// amplitude is the sign-preserved root of its diagonal, the sign taken from
/// the averaged g itself.
inline Vec jump_amplitude_from_averages(const FrozenClassAverages& averages, std::size_t atom) {
    const Mat root = psd_root(averages.jump_sq[atom]);
    Vec g = root.diagonal();
    for (Eigen::Index j = 0; j < g.size(); ++j) {
        if (averages.jump_mean[atom](j) < 0.0) g(j) = -g(j);
    }
    return g;
}

}  // namespace detail

/// Tabulated averaged coefficients on a rectangular x-grid with multilinear
/// interpolation. Queries outside the box are a hard error; silent
/// extrapolation would corrupt convergence studies.
struct AveragedTable {
    Vec lo, hi;
    std::vector<std::size_t> nodes_per_dim;
    std::size_t class_count = 1;
    std::size_t atom_count = 0;
    std::size_t dim = 1;
    std::vector<double> drift;      // [node][class][dim]
    std::vector<double> diff_root;  // [node][class][dim*dim]
    std::vector<double> diff_sq;    // [node][class][dim*dim]
    std::vector<double> jump;       // [node][class][atom][dim]
    std::vector<double> jump_integral;  // [node][class][dim*dim], sum_i w_i G_bar(x, z_i)
    // provenance
    std::uint64_t seed = 0;
    std::size_t measure_paths = 0;
    double burn_in = 0.0;
    double horizon = 0.0;
    double dt = 0.0;

    std::size_t node_count() const {
        std::size_t n = 1;
        for (auto k : nodes_per_dim) n *= k;
        return n;
    }

    Vec node_point(std::size_t flat) const {
        Vec x(static_cast<Eigen::Index>(dim));
        for (std::size_t d = 0; d < dim; ++d) {
            const std::size_t k = flat % nodes_per_dim[d];
            flat /= nodes_per_dim[d];
            const double span = hi(static_cast<Eigen::Index>(d)) - lo(static_cast<Eigen::Index>(d));
            x(static_cast<Eigen::Index>(d)) =
                lo(static_cast<Eigen::Index>(d)) +
                span * static_cast<double>(k) / static_cast<double>(nodes_per_dim[d] - 1);
        }
        return x;
    }

    struct Stencil {
        std::vector<std::size_t> corners;
        std::vector<double> weights;
    };

    Stencil stencil(const Vec& x) const {
        std::vector<std::size_t> base(dim);
        std::vector<double> frac(dim);
        for (std::size_t d = 0; d < dim; ++d) {
            const double l = lo(static_cast<Eigen::Index>(d));
            const double h = hi(static_cast<Eigen::Index>(d));
            const double v = x(static_cast<Eigen::Index>(d));
            if (v < l - 1e-12 || v > h + 1e-12) {
                throw GridExtrapolationError("averaged-model query at x_" + std::to_string(d) +
                                             " = " + std::to_string(v) + " outside [" +
                                             std::to_string(l) + ", " + std::to_string(h) + "]");
            }
            const double cells = static_cast<double>(nodes_per_dim[d] - 1);
            double u = (v - l) / (h - l) * cells;
            u = std::min(std::max(u, 0.0), cells);
            const double cell = std::min(std::floor(u), cells - 1.0);
            base[d] = static_cast<std::size_t>(cell);
            frac[d] = u - cell;
        }
        Stencil s;
        const std::size_t corners = static_cast<std::size_t>(1) << dim;
        s.corners.resize(corners);
        s.weights.resize(corners);
        for (std::size_t mask = 0; mask < corners; ++mask) {
            std::size_t flat = 0;
            std::size_t mult = 1;
            double w = 1.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const bool high = (mask >> d) & 1u;
                flat += (base[d] + (high ? 1 : 0)) * mult;
                mult *= nodes_per_dim[d];
                w *= high ? frac[d] : 1.0 - frac[d];
            }
            s.corners[mask] = flat;
            s.weights[mask] = w;
        }
        return s;
    }
};

struct AveragedModel {
    std::size_t slow_dim = 1;
    std::size_t class_count = 1;
    std::function<Vec(const Vec&, std::size_t)> drift;
    std::function<Mat(const Vec&, std::size_t)> diffusion_root;
    std::function<Mat(const Vec&, std::size_t)> diffusion_sq;
    std::function<Vec(const Vec&, std::size_t, std::size_t)> jump;  // (x, class, atom)
    std::function<Mat(const Vec&, std::size_t)> jump_integral;       // sum_i w_i G_bar(x, z_i)
    JumpMeasure measure;
    std::optional<GeneratorSchedule> aggregated;  // Q_bar, multi-class only
    Vec initial_slow;
    std::size_t initial_class = 0;
    std::optional<AveragedTable> table;

    void require_valid() const {
        if (!drift || !diffusion_root) {
            throw std::invalid_argument("averaged model: missing coefficient callbacks");
        }
    }
};

struct AveragedBuildSettings {
    InvariantMeasureSettings measure;
    std::size_t qsd_segment = 0;
};

/// Closed-form mode: callbacks evaluate the nested Monte Carlo average at the
/// queried x. Exact-on-demand but expensive; intended for spot checks and for
/// pinning grid tables.
inline AveragedModel build_averaged_model(const SlowFastModel& model,
                                          const QuasiStationaryDistribution& qsd,
                                          const AveragedBuildSettings& settings) {
    model.validate();
    AveragedModel avg;
    avg.slow_dim = model.slow_dim;
    avg.class_count = qsd.partition.class_count();
    avg.measure = model.slow_measure;
    avg.initial_slow = model.initial_slow;
    avg.initial_class = qsd.partition.class_of(model.initial_regime);
    if (avg.class_count > 1) avg.aggregated = aggregated_schedule(model.switching);

    const auto compute = [model, qsd, settings](const Vec& x, std::size_t cls) {
        return frozen_class_averages(model, x, cls, qsd, settings.qsd_segment, settings.measure);
    };
    avg.drift = [compute](const Vec& x, std::size_t cls) { return compute(x, cls).drift; };
    avg.diffusion_sq = [compute](const Vec& x, std::size_t cls) {
        return compute(x, cls).diffusion_sq;
    };
    avg.diffusion_root = [compute](const Vec& x, std::size_t cls) {
        return psd_root(compute(x, cls).diffusion_sq);
    };
    avg.jump = [compute](const Vec& x, std::size_t cls, std::size_t atom) {
        return detail::jump_amplitude_from_averages(compute(x, cls), atom);
    };
    const JumpMeasure measure = model.slow_measure;
    avg.jump_integral = [compute, measure](const Vec& x, std::size_t cls) {
        const auto averages = compute(x, cls);
        Mat total = Mat::Zero(averages.diffusion_sq.rows(), averages.diffusion_sq.cols());
        for (std::size_t i = 0; i < averages.jump_sq.size(); ++i) {
            total += measure.weights[i] * averages.jump_sq[i];
        }
        return total;
    };
    return avg;
}

struct GridSpec {
    Vec lo, hi;
    std::vector<std::size_t> nodes_per_dim;
};

/// Grid mode: tabulates the averaged coefficients at the grid nodes (same
/// estimator streams as closed-form mode, which is keyed on x) and serves
/// queries by multilinear interpolation.
inline AveragedModel build_averaged_model(const SlowFastModel& model,
                                          const QuasiStationaryDistribution& qsd,
                                          const AveragedBuildSettings& settings,
                                          const GridSpec& grid) {
    model.validate();
    if (grid.nodes_per_dim.size() != model.slow_dim) {
        throw std::invalid_argument("grid: one node count per slow dimension required");
    }
    for (auto n : grid.nodes_per_dim) {
        if (n < 2) throw std::invalid_argument("grid: need at least two nodes per dimension");
    }

    AveragedModel avg;
    avg.slow_dim = model.slow_dim;
    avg.class_count = qsd.partition.class_count();
    avg.measure = model.slow_measure;
    avg.initial_slow = model.initial_slow;
    avg.initial_class = qsd.partition.class_of(model.initial_regime);
    if (avg.class_count > 1) avg.aggregated = aggregated_schedule(model.switching);

    AveragedTable table;
    table.lo = grid.lo;
    table.hi = grid.hi;
    table.nodes_per_dim = grid.nodes_per_dim;
    table.class_count = avg.class_count;
    table.atom_count = model.slow_measure.atom_count();
    table.dim = model.slow_dim;
    table.seed = settings.measure.seed;
    table.measure_paths = settings.measure.path_count;
    table.dt = settings.measure.dt;

    const std::size_t nodes = table.node_count();
    const std::size_t d = table.dim;
    const std::size_t classes = table.class_count;
    const std::size_t atoms = table.atom_count;
    table.drift.assign(nodes * classes * d, 0.0);
    table.diff_root.assign(nodes * classes * d * d, 0.0);
    table.diff_sq.assign(nodes * classes * d * d, 0.0);
    table.jump.assign(nodes * classes * atoms * d, 0.0);
    table.jump_integral.assign(nodes * classes * d * d, 0.0);

    std::vector<std::pair<std::size_t, std::size_t>> tasks;
    tasks.reserve(nodes * classes);
    for (std::size_t n = 0; n < nodes; ++n) {
        for (std::size_t c = 0; c < classes; ++c) tasks.emplace_back(n, c);
    }
    parallel_for(tasks.size(), settings.measure.jobs, [&](std::size_t task) {
        const auto [n, c] = tasks[task];
        const Vec x = table.node_point(n);
        auto local = settings.measure;
        local.jobs = 1;
        const auto averages = frozen_class_averages(model, x, c, qsd, settings.qsd_segment, local);
        const Mat root = psd_root(averages.diffusion_sq);
        for (std::size_t i = 0; i < d; ++i) {
            table.drift[(n * classes + c) * d + i] = averages.drift(static_cast<Eigen::Index>(i));
        }
        for (std::size_t i = 0; i < d * d; ++i) {
            table.diff_root[(n * classes + c) * d * d + i] =
                root(static_cast<Eigen::Index>(i % d), static_cast<Eigen::Index>(i / d));
            table.diff_sq[(n * classes + c) * d * d + i] =
                averages.diffusion_sq(static_cast<Eigen::Index>(i % d),
                                      static_cast<Eigen::Index>(i / d));
        }
        for (std::size_t atom = 0; atom < atoms; ++atom) {
            const Vec g = detail::jump_amplitude_from_averages(averages, atom);
            for (std::size_t i = 0; i < d; ++i) {
                table.jump[((n * classes + c) * atoms + atom) * d + i] =
                    g(static_cast<Eigen::Index>(i));
            }
        }
        Mat integral = Mat::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (std::size_t atom = 0; atom < atoms; ++atom) {
            integral += model.slow_measure.weights[atom] * averages.jump_sq[atom];
        }
        for (std::size_t i = 0; i < d * d; ++i) {
            table.jump_integral[(n * classes + c) * d * d + i] =
                integral(static_cast<Eigen::Index>(i % d), static_cast<Eigen::Index>(i / d));
        }
    });

    const auto shared = std::make_shared<AveragedTable>(std::move(table));
    avg.table = *shared;
    const std::size_t dim = d;
    avg.drift = [shared, classes, dim](const Vec& x, std::size_t cls) {
        const auto s = shared->stencil(x);
        Vec out = Vec::Zero(static_cast<Eigen::Index>(dim));
        for (std::size_t c = 0; c < s.corners.size(); ++c) {
            for (std::size_t i = 0; i < dim; ++i) {
                out(static_cast<Eigen::Index>(i)) +=
                    s.weights[c] * shared->drift[(s.corners[c] * classes + cls) * dim + i];
            }
        }
        return out;
    };
    avg.diffusion_root = [shared, classes, dim](const Vec& x, std::size_t cls) {
        const auto s = shared->stencil(x);
        Mat out = Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
        for (std::size_t c = 0; c < s.corners.size(); ++c) {
            for (std::size_t i = 0; i < dim * dim; ++i) {
                out(static_cast<Eigen::Index>(i % dim), static_cast<Eigen::Index>(i / dim)) +=
                    s.weights[c] * shared->diff_root[(s.corners[c] * classes + cls) * dim * dim + i];
            }
        }
        return out;
    };
    avg.diffusion_sq = [shared, classes, dim](const Vec& x, std::size_t cls) {
        const auto s = shared->stencil(x);
        Mat out = Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
        for (std::size_t c = 0; c < s.corners.size(); ++c) {
            for (std::size_t i = 0; i < dim * dim; ++i) {
                out(static_cast<Eigen::Index>(i % dim), static_cast<Eigen::Index>(i / dim)) +=
                    s.weights[c] * shared->diff_sq[(s.corners[c] * classes + cls) * dim * dim + i];
            }
        }
        return out;
    };
    avg.jump_integral = [shared, classes, dim](const Vec& x, std::size_t cls) {
        const auto s = shared->stencil(x);
        Mat out = Mat::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
        for (std::size_t c = 0; c < s.corners.size(); ++c) {
            for (std::size_t i = 0; i < dim * dim; ++i) {
                out(static_cast<Eigen::Index>(i % dim), static_cast<Eigen::Index>(i / dim)) +=
                    s.weights[c] *
                    shared->jump_integral[(s.corners[c] * classes + cls) * dim * dim + i];
            }
        }
        return out;
    };
    const std::size_t atom_count = atoms;
    avg.jump = [shared, classes, dim, atom_count](const Vec& x, std::size_t cls, std::size_t atom) {
        if (atom >= atom_count) throw std::out_of_range("averaged jump: atom index");
        const auto s = shared->stencil(x);
        Vec out = Vec::Zero(static_cast<Eigen::Index>(dim));
        for (std::size_t c = 0; c < s.corners.size(); ++c) {
            for (std::size_t i = 0; i < dim; ++i) {
                out(static_cast<Eigen::Index>(i)) +=
                    s.weights[c] *
                    shared->jump[((s.corners[c] * classes + cls) * atom_count + atom) * dim + i];
            }
        }
        return out;
    };
    return avg;
}

/// Euler path of the averaged equation. Multi-class runs carry a regime path
/// simulated exactly from Q_bar; the single-class generator is the 1x1 zero.
inline SamplePath simulate_averaged(const AveragedModel& avg, const PathGrid& grid,
                                    const NoiseBundle& noise, std::uint64_t path_index = 0) {
    avg.require_valid();
    grid.validate();

    SamplePath path;
    path.grid = grid;
    if (avg.aggregated) {
        TwoScaleGenerator wrapper;
        const std::size_t l = avg.class_count;
        wrapper.fast = GeneratorSchedule::constant(
            Mat::Zero(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l)));
        wrapper.fast.breakpoints = {-std::numeric_limits<double>::infinity(),
                                    std::numeric_limits<double>::infinity()};
        wrapper.slow = *avg.aggregated;
        wrapper.partition.class_sizes.assign(l, 1);
        auto chain_rng = noise.stream(NoiseStream::AggregatedChain, path_index);
        path.chain = simulate_chain(wrapper, 1.0, grid.t0, grid.t1, avg.initial_class, chain_rng);
    } else {
        path.chain.t0 = grid.t0;
        path.chain.t1 = grid.t1;
        path.chain.initial_state = avg.initial_class;
    }

    auto w_rng = noise.stream(NoiseStream::SlowBrownian, path_index);
    auto jump_rng = noise.stream(NoiseStream::SlowJumps, path_index);

    const std::size_t steps = grid.step_count();
    const double dt = grid.dt;
    const double sqrt_dt = std::sqrt(dt);
    const double rate = avg.measure.total_rate();
    const auto dx = static_cast<Eigen::Index>(avg.slow_dim);

    path.slow.reserve(steps + 1);
    path.slow.push_back(avg.initial_slow);
    path.regime.reserve(steps + 1);
    path.regime.push_back(path.chain.state_at(grid.t0));

    for (std::size_t k = 0; k < steps; ++k) {
        const double t = grid.time_at(k);
        const Vec& x = path.slow.back();
        const std::size_t cls = path.chain.state_at(t);
        Vec x_next = x + avg.drift(x, cls) * dt +
                     avg.diffusion_root(x, cls) * (sqrt_dt * detail::standard_normal(dx, w_rng));
        if (!avg.measure.empty()) {
            Vec compensator = Vec::Zero(dx);
            for (std::size_t i = 0; i < avg.measure.atom_count(); ++i) {
                compensator += avg.measure.weights[i] * avg.jump(x, cls, i);
            }
            x_next -= compensator * dt;
            const auto events = detail::draw_step_events(avg.measure, rate * dt, dt, jump_rng);
            for (std::size_t e = 0; e < events.atom.size(); ++e) {
                x_next += avg.jump(x, cls, events.atom[e]);
                path.jump_log.push_back({t + events.offset[e], false,
                                         avg.measure.atoms[events.atom[e]]});
            }
        }
        detail::check_finite(x_next, k + 1, grid.time_at(k + 1), "averaged slow state");
        path.slow.push_back(std::move(x_next));
        path.regime.push_back(path.chain.state_at(grid.time_at(k + 1)));
    }
    return path;
}

}  // namespace slowfast
