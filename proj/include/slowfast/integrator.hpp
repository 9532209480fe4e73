#pragma once

#include "slowfast/common.hpp"
#include "slowfast/model.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/switching.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace slowfast {

struct PathGrid {
    double t0 = 0.0;
    double t1 = 1.0;
    double dt = 1e-3;

    std::size_t step_count() const {
        return static_cast<std::size_t>(std::llround((t1 - t0) / dt));
    }

    double time_at(std::size_t node) const { return t0 + static_cast<double>(node) * dt; }

    void validate() const {
        if (!(dt > 0.0) || !(t1 > t0)) {
            throw std::invalid_argument("grid: need dt > 0 and t1 > t0");
        }
        const double steps = (t1 - t0) / dt;
        if (std::abs(steps - std::round(steps)) > 1e-9 * steps) {
            throw std::invalid_argument("grid: (t1 - t0) must be an integer multiple of dt");
        }
    }
};

struct JumpEvent {
    double time = 0.0;
    bool fast = false;  // false: slow component, true: fast component
    Vec mark;
};

/// Grid-sampled trajectory of the coupled pair plus the exact chain path it
/// was driven by. Values carry one entry per grid node.
struct SamplePath {
    PathGrid grid;
    std::vector<Vec> slow;
    std::vector<Vec> fast;
    std::vector<std::size_t> regime;
    SwitchingPath chain;
    std::vector<JumpEvent> jump_log;

    std::size_t node_count() const { return slow.size(); }
    const Vec& terminal_slow() const { return slow.back(); }
};

namespace detail {

inline Vec standard_normal(Eigen::Index dim, RandomStream& rng) {
    Vec z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z(i) = rng.normal();
    return z;
}

inline void check_finite(const Vec& v, std::size_t node, double time, const char* what) {
    if (!v.allFinite()) {
        throw NonFiniteError(std::string(what) + " became non-finite at node " +
                                 std::to_string(node) + " (t = " + std::to_string(time) + ")",
                             node, time);
    }
}

struct StepEvents {
    std::vector<std::size_t> atom;
    std::vector<double> offset;  // position of the event inside the step, in (0, dt]
};

inline StepEvents draw_step_events(const JumpMeasure& measure, double mean_count, double dt,
                                   RandomStream& rng) {
    StepEvents events;
    if (measure.empty() || mean_count <= 0.0) return events;
    const std::size_t count = rng.poisson(mean_count);
    events.atom.reserve(count);
    events.offset.reserve(count);
    for (std::size_t e = 0; e < count; ++e) {
        events.offset.push_back(dt * rng.uniform());
        events.atom.push_back(rng.categorical(measure.weights, measure.total_rate()));
    }
    return events;
}

}  // namespace detail

/// Euler-Maruyama sample of the coupled system: left-endpoint coefficients,
/// exact compensator-drift subtraction, fast noise scaled by sqrt(dt/eps),
/// Poisson(rate*dt) jump events applied after the continuous increment, and
/// the regime looked up from an exactly simulated chain path. Bit-identical
/// for fixed (model, eps, grid, noise, path_index).
inline SamplePath simulate_coupled(const SlowFastModel& model, double eps, const PathGrid& grid,
                                   const NoiseBundle& noise, std::uint64_t path_index = 0) {
    grid.validate();
    if (!(eps > 0.0)) throw std::invalid_argument("simulate_coupled: eps must be positive");
    if (grid.dt > eps * (1.0 + 1e-12)) {
        throw StepTooCoarseError("dt = " + std::to_string(grid.dt) + " exceeds eps = " +
                                 std::to_string(eps) + "; the explicit scheme is unstable there");
    }

    auto chain_rng = noise.stream(NoiseStream::Chain, path_index);
    SamplePath path;
    path.grid = grid;
    path.chain = simulate_chain(model.switching, eps, grid.t0, grid.t1, model.initial_regime,
                                chain_rng);

    auto w_rng = noise.stream(NoiseStream::SlowBrownian, path_index);
    auto w1_rng = noise.stream(NoiseStream::FastBrownian, path_index);
    auto slow_jump_rng = noise.stream(NoiseStream::SlowJumps, path_index);
    auto fast_jump_rng = noise.stream(NoiseStream::FastJumps, path_index);

    const std::size_t steps = grid.step_count();
    const double dt = grid.dt;
    const double sqrt_dt = std::sqrt(dt);
    const double sqrt_dt_eps = std::sqrt(dt / eps);
    const double slow_rate = model.slow_measure.total_rate();
    const double fast_rate = model.fast_measure.total_rate() / eps;

    path.slow.reserve(steps + 1);
    path.fast.reserve(steps + 1);
    path.regime.reserve(steps + 1);
    path.slow.push_back(model.initial_slow);
    path.fast.push_back(model.initial_fast);
    path.regime.push_back(path.chain.state_at(grid.t0));

    const auto& coef = model.coefficients;
    const auto dx = static_cast<Eigen::Index>(model.slow_dim);
    const auto dxi = static_cast<Eigen::Index>(model.fast_dim);

    for (std::size_t k = 0; k < steps; ++k) {
        const double t = grid.time_at(k);
        const Vec& x = path.slow.back();
        const Vec& xi = path.fast.back();
        const std::size_t regime = path.chain.state_at(t);

        Vec x_next = x + coef.slow_drift(x, regime, xi) * dt +
                     coef.slow_diffusion(x, regime, xi) * (sqrt_dt * detail::standard_normal(dx, w_rng));
        if (!model.slow_measure.empty()) {
            x_next -= slow_jump_compensator(model, x, regime, xi) * dt;
        }

        Vec xi_next = xi + coef.fast_drift(x, xi) * (dt / eps) +
                      coef.fast_diffusion(x, xi) *
                          (sqrt_dt_eps * detail::standard_normal(dxi, w1_rng));
        if (!model.fast_measure.empty()) {
            xi_next -= fast_jump_compensator(model, x, xi) * (dt / eps);
        }

        const auto slow_events =
            detail::draw_step_events(model.slow_measure, slow_rate * dt, dt, slow_jump_rng);
        for (std::size_t e = 0; e < slow_events.atom.size(); ++e) {
            const Vec& z = model.slow_measure.atoms[slow_events.atom[e]];
            x_next += coef.slow_jump(x, regime, xi, z);
            path.jump_log.push_back({t + slow_events.offset[e], false, z});
        }
        const auto fast_events =
            detail::draw_step_events(model.fast_measure, fast_rate * dt, dt, fast_jump_rng);
        for (std::size_t e = 0; e < fast_events.atom.size(); ++e) {
            const Vec& z = model.fast_measure.atoms[fast_events.atom[e]];
            xi_next += coef.fast_jump(x, xi, z);
            path.jump_log.push_back({t + fast_events.offset[e], true, z});
        }

        const double t_next = grid.time_at(k + 1);
        detail::check_finite(x_next, k + 1, t_next, "slow state");
        detail::check_finite(xi_next, k + 1, t_next, "fast state");
        path.slow.push_back(std::move(x_next));
        path.fast.push_back(std::move(xi_next));
        path.regime.push_back(path.chain.state_at(t_next));
    }
    return path;
}

/// The x-frozen fast process of Lemma 2.4 at its own timescale (eps = 1):
///   d xi = kappa(x, xi) dt + varsigma(x, xi) dw1 + vartheta(x, xi, z) dN1-tilde.
inline SamplePath simulate_frozen_fast(const SlowFastModel& model, const Vec& x_frozen,
                                       std::size_t regime, const PathGrid& grid,
                                       const NoiseBundle& noise, std::uint64_t path_index = 0) {
    grid.validate();
    auto w1_rng = noise.stream(NoiseStream::FastBrownian, path_index);
    auto jump_rng = noise.stream(NoiseStream::FastJumps, path_index);

    SamplePath path;
    path.grid = grid;
    path.chain.t0 = grid.t0;
    path.chain.t1 = grid.t1;
    path.chain.initial_state = regime;

    const std::size_t steps = grid.step_count();
    const double dt = grid.dt;
    const double sqrt_dt = std::sqrt(dt);
    const double rate = model.fast_measure.total_rate();
    const auto dxi = static_cast<Eigen::Index>(model.fast_dim);
    const auto& coef = model.coefficients;

    path.slow.assign(1, x_frozen);
    path.fast.reserve(steps + 1);
    path.fast.push_back(model.initial_fast);
    path.regime.assign(steps + 1, regime);

    for (std::size_t k = 0; k < steps; ++k) {
        const double t = grid.time_at(k);
        const Vec& xi = path.fast.back();
        Vec xi_next = xi + coef.fast_drift(x_frozen, xi) * dt +
                      coef.fast_diffusion(x_frozen, xi) *
                          (sqrt_dt * detail::standard_normal(dxi, w1_rng));
        if (!model.fast_measure.empty()) {
            xi_next -= fast_jump_compensator(model, x_frozen, xi) * dt;
        }
        const auto events = detail::draw_step_events(model.fast_measure, rate * dt, dt, jump_rng);
        for (std::size_t e = 0; e < events.atom.size(); ++e) {
            const Vec& z = model.fast_measure.atoms[events.atom[e]];
            xi_next += coef.fast_jump(x_frozen, xi, z);
            path.jump_log.push_back({t + events.offset[e], true, z});
        }
        detail::check_finite(xi_next, k + 1, grid.time_at(k + 1), "fast state");
        path.fast.push_back(std::move(xi_next));
    }
    return path;
}

struct PicardResult {
    /// Slow iterates on the grid; iterates[n] is x^n, iterates[0] the constant
    /// initial path.
    std::vector<std::vector<Vec>> slow_iterates;
    std::vector<std::vector<Vec>> fast_iterates;
    /// deltas[n] = sup over grid nodes of |x^{n+1} - x^n|.
    std::vector<double> slow_deltas;
    std::vector<double> fast_deltas;
};

/// Picard iteration on a regime-frozen interval, every iterate integrated
/// against the same noise realization. The deltas feed the factorial-decay
/// check (C tau)^n / n!.
inline PicardResult picard_iterate(const SlowFastModel& model, std::size_t regime,
                                   const PathGrid& grid, const NoiseBundle& noise,
                                   std::size_t n_iters, double eps = 1.0,
                                   std::uint64_t path_index = 0) {
    grid.validate();
    if (!(eps > 0.0)) throw std::invalid_argument("picard_iterate: eps must be positive");
    if (grid.dt > eps * (1.0 + 1e-12)) {
        throw StepTooCoarseError("picard_iterate: dt exceeds eps");
    }

    const std::size_t steps = grid.step_count();
    const double dt = grid.dt;
    const double sqrt_dt = std::sqrt(dt);
    const double sqrt_dt_eps = std::sqrt(dt / eps);
    const auto dx = static_cast<Eigen::Index>(model.slow_dim);
    const auto dxi = static_cast<Eigen::Index>(model.fast_dim);
    const auto& coef = model.coefficients;

    // common noise, regenerated once and shared across iterates
    auto w_rng = noise.stream(NoiseStream::SlowBrownian, path_index);
    auto w1_rng = noise.stream(NoiseStream::FastBrownian, path_index);
    auto slow_jump_rng = noise.stream(NoiseStream::SlowJumps, path_index);
    auto fast_jump_rng = noise.stream(NoiseStream::FastJumps, path_index);
    std::vector<Vec> slow_gauss(steps), fast_gauss(steps);
    std::vector<detail::StepEvents> slow_events(steps), fast_events(steps);
    const double slow_rate = model.slow_measure.total_rate();
    const double fast_rate = model.fast_measure.total_rate() / eps;
    for (std::size_t k = 0; k < steps; ++k) {
        slow_gauss[k] = detail::standard_normal(dx, w_rng);
        fast_gauss[k] = detail::standard_normal(dxi, w1_rng);
        slow_events[k] = detail::draw_step_events(model.slow_measure, slow_rate * dt, dt,
                                                  slow_jump_rng);
        fast_events[k] = detail::draw_step_events(model.fast_measure, fast_rate * dt, dt,
                                                  fast_jump_rng);
    }

    PicardResult result;
    result.slow_iterates.push_back(std::vector<Vec>(steps + 1, model.initial_slow));
    result.fast_iterates.push_back(std::vector<Vec>(steps + 1, model.initial_fast));

    for (std::size_t iter = 0; iter < n_iters; ++iter) {
        const auto& x_prev = result.slow_iterates.back();
        const auto& xi_prev = result.fast_iterates.back();
        std::vector<Vec> x_next(steps + 1), xi_next(steps + 1);
        x_next[0] = model.initial_slow;
        xi_next[0] = model.initial_fast;
        for (std::size_t k = 0; k < steps; ++k) {
            const Vec& x = x_prev[k];
            const Vec& xi = xi_prev[k];
            Vec xs = x_next[k] + coef.slow_drift(x, regime, xi) * dt +
                     coef.slow_diffusion(x, regime, xi) * (sqrt_dt * slow_gauss[k]);
            if (!model.slow_measure.empty()) {
                xs -= slow_jump_compensator(model, x, regime, xi) * dt;
            }
            for (std::size_t e = 0; e < slow_events[k].atom.size(); ++e) {
                xs += coef.slow_jump(x, regime, xi,
                                     model.slow_measure.atoms[slow_events[k].atom[e]]);
            }
            Vec fs = xi_next[k] + coef.fast_drift(x, xi) * (dt / eps) +
                     coef.fast_diffusion(x, xi) * (sqrt_dt_eps * fast_gauss[k]);
            if (!model.fast_measure.empty()) {
                fs -= fast_jump_compensator(model, x, xi) * (dt / eps);
            }
            for (std::size_t e = 0; e < fast_events[k].atom.size(); ++e) {
                fs += coef.fast_jump(x, xi, model.fast_measure.atoms[fast_events[k].atom[e]]);
            }
            detail::check_finite(xs, k + 1, grid.time_at(k + 1), "picard slow iterate");
            detail::check_finite(fs, k + 1, grid.time_at(k + 1), "picard fast iterate");
            x_next[k + 1] = std::move(xs);
            xi_next[k + 1] = std::move(fs);
        }

        double delta_slow = 0.0, delta_fast = 0.0;
        for (std::size_t k = 0; k <= steps; ++k) {
            delta_slow = std::max(delta_slow, (x_next[k] - x_prev[k]).norm());
            delta_fast = std::max(delta_fast, (xi_next[k] - xi_prev[k]).norm());
        }
        result.slow_deltas.push_back(delta_slow);
        result.fast_deltas.push_back(delta_fast);
        result.slow_iterates.push_back(std::move(x_next));
        result.fast_iterates.push_back(std::move(xi_next));
    }
    return result;
}

}  // namespace slowfast
