#pragma once

#include "slowfast/averaging.hpp"
#include "slowfast/model.hpp"
#include "slowfast/switching.hpp"

#include <optional>
#include <string>
#include <vector>

namespace slowfast {

/// A named model plus, where the averages are known in closed form, the exact
/// averaged limit; tests and studies reference benchmarks by registry name.
struct Benchmark {
    std::string name;
    std::string description;
    SlowFastModel model;
    std::optional<AveragedModel> analytic_averaged;
    std::vector<double> declared_lipschitz;  // per regime C
};

namespace detail {

inline CoefficientSet inert_coefficients(std::size_t slow_dim, std::size_t fast_dim) {
    CoefficientSet c;
    const auto dx = static_cast<Eigen::Index>(slow_dim);
    const auto dxi = static_cast<Eigen::Index>(fast_dim);
    c.slow_drift = [dx](const Vec&, std::size_t, const Vec&) { return Vec::Zero(dx); };
    c.slow_diffusion = [dx](const Vec&, std::size_t, const Vec&) { return Mat::Zero(dx, dx); };
    c.slow_jump = [dx](const Vec&, std::size_t, const Vec&, const Vec&) { return Vec::Zero(dx); };
    c.fast_drift = [dxi](const Vec&, const Vec&) { return Vec::Zero(dxi); };
    c.fast_diffusion = [dxi](const Vec&, const Vec&) { return Mat::Zero(dxi, dxi); };
    c.fast_jump = [dxi](const Vec&, const Vec&, const Vec&) { return Vec::Zero(dxi); };
    return c;
}

inline SlowFastModel scalar_base(std::size_t regimes) {
    SlowFastModel m;
    Mat q = Mat::Zero(static_cast<Eigen::Index>(regimes), static_cast<Eigen::Index>(regimes));
    m.switching = TwoScaleGenerator::single_class(GeneratorSchedule::constant(q));
    m.initial_slow = Vec::Zero(1);
    m.initial_fast = Vec::Zero(1);
    m.coefficients = inert_coefficients(1, 1);
    return m;
}

/// Fast pair shared by the averaging benchmarks: an Ornstein-Uhlenbeck
/// process centered at the frozen slow state, d xi = -(xi - x) dt + dw1, so
/// the invariant law is N(x, 1/2) and E[xi] = x exactly.
inline void attach_centered_ou(SlowFastModel& m) {
    m.coefficients.fast_drift = [](const Vec& x, const Vec& xi) { return Vec(x - xi); };
    m.coefficients.fast_diffusion = [](const Vec&, const Vec&) { return Mat::Identity(1, 1); };
}

inline AveragedModel analytic_linear_average(const SlowFastModel& model,
                                             const std::vector<double>& class_drift,
                                             const std::vector<double>& class_diff_sq) {
    AveragedModel avg;
    avg.slow_dim = 1;
    avg.class_count = class_drift.size();
    avg.measure = model.slow_measure;
    avg.initial_slow = model.initial_slow;
    avg.initial_class = model.switching.partition.class_of(model.initial_regime);
    if (avg.class_count > 1) avg.aggregated = aggregated_schedule(model.switching);
    avg.drift = [class_drift](const Vec& x, std::size_t cls) {
        return Vec(class_drift[cls] * x);
    };
    avg.diffusion_sq = [class_diff_sq](const Vec&, std::size_t cls) {
        return Mat::Constant(1, 1, class_diff_sq[cls]);
    };
    avg.diffusion_root = [class_diff_sq](const Vec&, std::size_t cls) {
        return Mat::Constant(1, 1, std::sqrt(class_diff_sq[cls]));
    };
    const JumpMeasure measure = model.slow_measure;
    avg.jump = [measure](const Vec&, std::size_t, std::size_t atom) {
        return measure.atoms[atom];
    };
    avg.jump_integral = [measure](const Vec&, std::size_t) {
        Mat total = Mat::Zero(1, 1);
        for (std::size_t i = 0; i < measure.atom_count(); ++i) {
            total(0, 0) += measure.weights[i] * measure.atoms[i](0) * measure.atoms[i](0);
        }
        return total;
    };
    return avg;
}

}  // namespace detail

/// "linear": two fast-mixing regimes over one weakly irreducible class,
/// slow drift c_r * xi with the centered OU fast process, so the averaged
/// drift is (sum nu_r c_r) x = 4x and the averaged diffusion is
/// sum nu_r sigma_r^2 = 2. Symmetric additive jumps pass through unchanged.
inline Benchmark make_linear_benchmark() {
    Benchmark b;
    b.name = "linear";
    b.description = "two-regime linear slow drift over a centered OU fast process";
    Mat q(2, 2);
    q << -1, 1, 2, -2;
    auto& m = b.model;
    m = detail::scalar_base(2);
    m.switching = TwoScaleGenerator::single_class(GeneratorSchedule::constant(q));
    m.initial_slow = Vec::Constant(1, 1.0);
    m.initial_fast = Vec::Constant(1, 1.0);
    m.slow_measure = JumpMeasure::symmetric_pair(0.5, 0.5, 1.0);

    const double drift_c[2] = {3.0, 6.0};
    const double diff_c[2] = {1.0, 2.0};
    m.coefficients.slow_drift = [drift_c](const Vec&, std::size_t r, const Vec& xi) {
        return Vec(drift_c[r] * xi);
    };
    m.coefficients.slow_diffusion = [diff_c](const Vec&, std::size_t r, const Vec&) {
        return Mat::Constant(1, 1, diff_c[r]);
    };
    m.coefficients.slow_jump = [](const Vec&, std::size_t, const Vec&, const Vec& z) {
        return z;
    };
    detail::attach_centered_ou(m);

    // nu = (2/3, 1/3): drift 2/3*3 + 1/3*6 = 4, diffusion 2/3*1 + 1/3*4 = 2
    b.analytic_averaged = detail::analytic_linear_average(m, {4.0}, {2.0});
    b.declared_lipschitz = {9.0 + 1e-6, 36.0 + 1e-6};
    return b;
}

/// "two-class": three states in classes {0,1} and {2} with the worked slow
/// generator; aggregated limit switches between averaged drift 4x (class 0)
/// and x (class 1) under Q_bar = [[-4/3, 4/3], [2, -2]].
inline Benchmark make_two_class_benchmark() {
    Benchmark b;
    b.name = "two-class";
    b.description = "two weakly irreducible classes with slow inter-class switching";
    Mat fast(3, 3);
    fast << -1, 1, 0,
             2, -2, 0,
             0, 0, 0;
    Mat slow(3, 3);
    slow << -1, 0, 1,
             0, -2, 2,
             1, 1, -2;
    auto& m = b.model;
    m = detail::scalar_base(3);
    m.switching.fast = GeneratorSchedule::constant(fast);
    m.switching.slow = GeneratorSchedule::constant(slow);
    m.switching.partition = ClassPartition{{2, 1}};
    m.initial_slow = Vec::Constant(1, 1.0);
    m.initial_fast = Vec::Constant(1, 1.0);
    m.slow_measure = JumpMeasure::symmetric_pair(0.5, 0.5, 1.0);

    const double drift_c[3] = {3.0, 6.0, 1.0};
    const double diff_c[3] = {1.0, 2.0, 1.0};
    m.coefficients.slow_drift = [drift_c](const Vec&, std::size_t r, const Vec& xi) {
        return Vec(drift_c[r] * xi);
    };
    m.coefficients.slow_diffusion = [diff_c](const Vec&, std::size_t r, const Vec&) {
        return Mat::Constant(1, 1, diff_c[r]);
    };
    m.coefficients.slow_jump = [](const Vec&, std::size_t, const Vec&, const Vec& z) {
        return z;
    };
    detail::attach_centered_ou(m);

    b.analytic_averaged = detail::analytic_linear_average(m, {4.0, 1.0}, {2.0, 1.0});
    b.declared_lipschitz = {9.0 + 1e-6, 36.0 + 1e-6, 1.0 + 1e-6};
    return b;
}

/// "ou-frozen": inert slow component; the fast pair is the Lemma 2.4 probe
/// kappa = -(xi - 2), varsigma = 1 with invariant law N(2, 1/2) and
/// dissipativity margin lambda* = 1.
inline Benchmark make_ou_frozen_benchmark() {
    Benchmark b;
    b.name = "ou-frozen";
    b.description = "frozen-process probe with invariant law N(2, 1/2)";
    auto& m = b.model;
    m = detail::scalar_base(1);
    m.coefficients.fast_drift = [](const Vec&, const Vec& xi) {
        return Vec(-(xi.array() - 2.0).matrix());
    };
    m.coefficients.fast_diffusion = [](const Vec&, const Vec&) { return Mat::Identity(1, 1); };
    b.declared_lipschitz = {1e-6};
    return b;
}

/// "ou-slow": dx = -x dt + dw with an inert fast component; terminal variance
/// (1 - e^{-2t})/2.
inline Benchmark make_ou_slow_benchmark() {
    Benchmark b;
    b.name = "ou-slow";
    b.description = "scalar OU slow component for weak-order and moment checks";
    auto& m = b.model;
    m = detail::scalar_base(1);
    m.coefficients.slow_drift = [](const Vec& x, std::size_t, const Vec&) { return Vec(-x); };
    m.coefficients.slow_diffusion = [](const Vec&, std::size_t, const Vec&) {
        return Mat::Identity(1, 1);
    };
    b.declared_lipschitz = {1.0 + 1e-6};
    return b;
}

inline Benchmark make_drift_only_benchmark() {
    Benchmark b;
    b.name = "drift-only";
    b.description = "unit drift, no noise; increments scale like tau^2";
    b.model = detail::scalar_base(1);
    b.model.coefficients.slow_drift = [](const Vec&, std::size_t, const Vec&) {
        return Vec::Constant(1, 1.0);
    };
    b.declared_lipschitz = {1e-6};
    return b;
}

inline Benchmark make_diffusion_only_benchmark() {
    Benchmark b;
    b.name = "diffusion-only";
    b.description = "unit diffusion, no drift; increments scale like tau";
    b.model = detail::scalar_base(1);
    b.model.coefficients.slow_diffusion = [](const Vec&, std::size_t, const Vec&) {
        return Mat::Identity(1, 1);
    };
    b.declared_lipschitz = {1e-6};
    return b;
}

inline Benchmark make_constant_benchmark() {
    Benchmark b;
    b.name = "constant";
    b.description = "all coefficients zero; paths stay at the initial data";
    b.model = detail::scalar_base(1);
    b.model.initial_slow = Vec::Constant(1, 1.0);
    b.declared_lipschitz = {1e-6};
    return b;
}

inline std::vector<std::string> benchmark_names() {
    return {"linear",  "two-class",      "ou-frozen", "ou-slow",
            "drift-only", "diffusion-only", "constant"};
}

inline Benchmark make_benchmark(const std::string& name) {
    if (name == "linear") return make_linear_benchmark();
    if (name == "two-class") return make_two_class_benchmark();
    if (name == "ou-frozen") return make_ou_frozen_benchmark();
    if (name == "ou-slow") return make_ou_slow_benchmark();
    if (name == "drift-only") return make_drift_only_benchmark();
    if (name == "diffusion-only") return make_diffusion_only_benchmark();
    if (name == "constant") return make_constant_benchmark();
    throw std::invalid_argument("unknown benchmark '" + name + "'");
}

}  // namespace slowfast
