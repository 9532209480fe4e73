#pragma once

#include "slowfast/common.hpp"
#include "slowfast/rng.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace slowfast {

inline constexpr double kGeneratorRowSumTol = 1e-12;
inline constexpr double kNullSpaceSingularTol = 1e-10;
inline constexpr double kStationarityTol = 1e-10;

/// Rejects matrices that are not conservative rate matrices: square, finite,
/// nonnegative off-diagonals, zero row sums within kGeneratorRowSumTol.
inline void validate_generator_matrix(const Mat& q, const std::string& context = "generator") {
    if (q.rows() != q.cols() || q.rows() == 0) {
        throw InvalidGeneratorError(context + ": matrix must be square and non-empty");
    }
    if (!q.allFinite()) {
        throw InvalidGeneratorError(context + ": entries must be finite");
    }
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        double row_sum = 0.0;
        for (Eigen::Index j = 0; j < q.cols(); ++j) {
            if (i != j && q(i, j) < 0.0) {
                throw InvalidGeneratorError(context + ": negative off-diagonal at (" +
                                            std::to_string(i) + "," + std::to_string(j) + ")");
            }
            row_sum += q(i, j);
        }
        if (std::abs(row_sum) > kGeneratorRowSumTol) {
            throw InvalidGeneratorError(context + ": row " + std::to_string(i) +
                                        " sums to " + std::to_string(row_sum));
        }
    }
}

/// Piecewise-constant rate-matrix schedule. Segment s is active on
/// [breakpoints[s], breakpoints[s+1]); queries at a breakpoint take the
/// right-limit segment (cadlag convention).
struct GeneratorSchedule {
    std::vector<double> breakpoints;  // size = matrices.size() + 1, nondecreasing
    std::vector<Mat> matrices;

    static GeneratorSchedule constant(Mat q) {
        GeneratorSchedule s;
        s.breakpoints = {-std::numeric_limits<double>::infinity(),
                         std::numeric_limits<double>::infinity()};
        s.matrices.push_back(std::move(q));
        return s;
    }

    std::size_t segment_count() const { return matrices.size(); }
    std::size_t state_count() const { return matrices.empty() ? 0 : static_cast<std::size_t>(matrices.front().rows()); }

    bool covers(double t0, double t1) const {
        return !breakpoints.empty() && breakpoints.front() <= t0 && t1 <= breakpoints.back();
    }

    std::size_t segment_index(double t) const {
        if (breakpoints.empty() || t < breakpoints.front() || t > breakpoints.back()) {
            throw ScheduleGapError("schedule does not cover t = " + std::to_string(t));
        }
        const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
        const std::size_t idx = static_cast<std::size_t>(it - breakpoints.begin());
        return std::min(idx == 0 ? 0 : idx - 1, matrices.size() - 1);
    }

    const Mat& at(double t) const { return matrices[segment_index(t)]; }

    void validate() const {
        if (matrices.empty() || breakpoints.size() != matrices.size() + 1) {
            throw InvalidGeneratorError("schedule: need one matrix per segment");
        }
        if (!std::is_sorted(breakpoints.begin(), breakpoints.end())) {
            throw InvalidGeneratorError("schedule: breakpoints must be nondecreasing");
        }
        const auto n = matrices.front().rows();
        for (std::size_t s = 0; s < matrices.size(); ++s) {
            if (matrices[s].rows() != n) {
                throw InvalidGeneratorError("schedule: segment " + std::to_string(s) +
                                            " has mismatched dimension");
            }
            validate_generator_matrix(matrices[s], "schedule segment " + std::to_string(s));
        }
    }
};

/// Ordered partition of {0..n-1} into contiguous classes.
struct ClassPartition {
    std::vector<std::size_t> class_sizes;

    static ClassPartition single(std::size_t n) { return ClassPartition{{n}}; }

    std::size_t class_count() const { return class_sizes.size(); }

    std::size_t state_count() const {
        std::size_t total = 0;
        for (auto s : class_sizes) total += s;
        return total;
    }

    std::size_t offset(std::size_t cls) const {
        std::size_t off = 0;
        for (std::size_t c = 0; c < cls; ++c) off += class_sizes[c];
        return off;
    }

    std::size_t class_of(std::size_t state) const {
        std::size_t off = 0;
        for (std::size_t c = 0; c < class_sizes.size(); ++c) {
            off += class_sizes[c];
            if (state < off) return c;
        }
        throw std::out_of_range("state " + std::to_string(state) + " outside partition");
    }

    void validate() const {
        if (class_sizes.empty()) throw InvalidGeneratorError("partition: no classes");
        for (auto s : class_sizes) {
            if (s == 0) throw InvalidGeneratorError("partition: empty class");
        }
    }
};

/// Unique nonnegative solution of nu Q = 0, sum(nu) = 1. Rejects generators
/// whose transpose null space is not one-dimensional or whose null vector
/// changes sign. Null space detected by SVD with tolerance
/// kNullSpaceSingularTol relative to the largest singular value.
inline Vec check_weak_irreducibility(const Mat& q) {
    validate_generator_matrix(q);
    const Eigen::Index n = q.rows();
    Eigen::JacobiSVD<Mat> svd(q.transpose(), Eigen::ComputeFullV);
    const auto& sigma = svd.singularValues();
    const double scale = std::max(1.0, sigma.size() > 0 ? sigma(0) : 0.0);
    int null_dim = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i) {
        if (sigma(i) <= kNullSpaceSingularTol * scale) ++null_dim;
    }
    if (null_dim != 1) {
        throw NotWeaklyIrreducibleError("null space of Q^T has dimension " +
                                        std::to_string(null_dim));
    }
    Vec nu = svd.matrixV().col(n - 1);
    // orient by the largest-magnitude entry, then demand a sign-definite vector
    Eigen::Index arg_max = 0;
    nu.cwiseAbs().maxCoeff(&arg_max);
    if (nu(arg_max) < 0.0) nu = -nu;
    const double amplitude = nu.cwiseAbs().maxCoeff();
    if (nu.minCoeff() < -1e-9 * amplitude) {
        throw NotWeaklyIrreducibleError("null vector of Q^T changes sign");
    }
    nu = nu.cwiseMax(0.0);
    nu /= nu.sum();
    if ((nu.transpose() * q).cwiseAbs().maxCoeff() > kStationarityTol) {
        throw NotWeaklyIrreducibleError("residual ||nu Q|| exceeds tolerance");
    }
    return nu;
}

/// The pair (Q_tilde, Q_hat): fast intra-class transitions at rate 1/eps and
/// slow inter-class transitions, Q^eps(t) = Q_tilde(t)/eps + Q_hat(t).
struct TwoScaleGenerator {
    GeneratorSchedule fast;
    GeneratorSchedule slow;
    ClassPartition partition;

    static TwoScaleGenerator single_class(GeneratorSchedule fast_schedule) {
        const std::size_t n = fast_schedule.state_count();
        TwoScaleGenerator gen;
        gen.fast = std::move(fast_schedule);
        gen.slow = GeneratorSchedule::constant(Mat::Zero(static_cast<Eigen::Index>(n),
                                                         static_cast<Eigen::Index>(n)));
        gen.partition = ClassPartition::single(n);
        return gen;
    }

    std::size_t state_count() const { return fast.state_count(); }

    Mat fast_block(std::size_t segment, std::size_t cls) const {
        const auto off = static_cast<Eigen::Index>(partition.offset(cls));
        const auto size = static_cast<Eigen::Index>(partition.class_sizes[cls]);
        return fast.matrices[segment].block(off, off, size, size);
    }

    Mat combined(double t, double eps) const {
        return fast.at(t) / eps + slow.at(t);
    }

    /// Full structural validation: valid schedules, block-diagonal Q_tilde,
    /// weakly irreducible blocks, zero Q_hat in the single-class case.
    void validate() const {
        fast.validate();
        slow.validate();
        partition.validate();
        const std::size_t n = fast.state_count();
        if (partition.state_count() != n || slow.state_count() != n) {
            throw InvalidGeneratorError("two-scale generator: dimension mismatch");
        }
        for (std::size_t s = 0; s < fast.segment_count(); ++s) {
            const Mat& q = fast.matrices[s];
            for (Eigen::Index i = 0; i < q.rows(); ++i) {
                for (Eigen::Index j = 0; j < q.cols(); ++j) {
                    const bool same_class = partition.class_of(static_cast<std::size_t>(i)) ==
                                            partition.class_of(static_cast<std::size_t>(j));
                    if (!same_class && q(i, j) != 0.0) {
                        throw InvalidGeneratorError(
                            "fast generator has nonzero entry outside diagonal blocks at (" +
                            std::to_string(i) + "," + std::to_string(j) + ")");
                    }
                }
            }
            for (std::size_t cls = 0; cls < partition.class_count(); ++cls) {
                try {
                    check_weak_irreducibility(fast_block(s, cls));
                } catch (const NotWeaklyIrreducibleError& err) {
                    throw NotWeaklyIrreducibleError("class " + std::to_string(cls) +
                                                    ", segment " + std::to_string(s) + ": " +
                                                    err.what());
                }
            }
        }
        if (partition.class_count() == 1) {
            for (const Mat& q : slow.matrices) {
                if (q.cwiseAbs().maxCoeff() != 0.0) {
                    throw InvalidGeneratorError(
                        "single-class configuration requires an all-zero slow generator");
                }
            }
        }
    }
};

/// Per-class, per-segment quasi-stationary weights nu^gamma with
/// nu^gamma Q_tilde_gamma = 0. Carries the fast schedule's breakpoints and the
/// partition so time and state lookups are self-contained.
struct QuasiStationaryDistribution {
    std::vector<double> breakpoints;
    ClassPartition partition;
    std::vector<std::vector<Vec>> weights;  // [segment][class]

    std::size_t segment_count() const { return weights.size(); }

    std::size_t segment_index(double t) const {
        if (breakpoints.empty() || t < breakpoints.front() || t > breakpoints.back()) {
            throw ScheduleGapError("quasi-stationary schedule does not cover t = " +
                                   std::to_string(t));
        }
        const auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
        const std::size_t idx = static_cast<std::size_t>(it - breakpoints.begin());
        return std::min(idx == 0 ? 0 : idx - 1, weights.size() - 1);
    }

    const Vec& class_weights(std::size_t segment, std::size_t cls) const {
        return weights[segment][cls];
    }

    /// Weight of one state within its own class.
    double state_weight(std::size_t segment, std::size_t state) const {
        const std::size_t cls = partition.class_of(state);
        return weights[segment][cls](static_cast<Eigen::Index>(state - partition.offset(cls)));
    }

    double state_weight_at(double t, std::size_t state) const {
        return state_weight(segment_index(t), state);
    }
};

inline QuasiStationaryDistribution quasi_stationary_schedule(const TwoScaleGenerator& gen) {
    gen.validate();
    QuasiStationaryDistribution qsd;
    qsd.breakpoints = gen.fast.breakpoints;
    qsd.partition = gen.partition;
    qsd.weights.resize(gen.fast.segment_count());
    for (std::size_t s = 0; s < gen.fast.segment_count(); ++s) {
        qsd.weights[s].reserve(gen.partition.class_count());
        for (std::size_t cls = 0; cls < gen.partition.class_count(); ++cls) {
            try {
                qsd.weights[s].push_back(check_weak_irreducibility(gen.fast_block(s, cls)));
            } catch (const NotWeaklyIrreducibleError& err) {
                throw NotWeaklyIrreducibleError("class " + std::to_string(cls) + ", segment " +
                                                std::to_string(s) + ": " + err.what());
            }
        }
    }
    return qsd;
}

/// Q_bar(t) = diag(nu^1..nu^l) Q_hat(t) diag(1_{n_1}..1_{n_l}); the generator
/// of the weak limit of the aggregated class process.
inline Mat aggregated_generator(const TwoScaleGenerator& gen, double t) {
    const std::size_t l = gen.partition.class_count();
    const Mat& q_hat = gen.slow.at(t);
    const std::size_t segment = gen.fast.segment_index(t);
    Mat q_bar(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l));
    for (std::size_t a = 0; a < l; ++a) {
        const Vec nu = check_weak_irreducibility(gen.fast_block(segment, a));
        const auto off_a = gen.partition.offset(a);
        for (std::size_t b = 0; b < l; ++b) {
            const auto off_b = gen.partition.offset(b);
            double entry = 0.0;
            for (std::size_t i = 0; i < gen.partition.class_sizes[a]; ++i) {
                for (std::size_t j = 0; j < gen.partition.class_sizes[b]; ++j) {
                    entry += nu(static_cast<Eigen::Index>(i)) *
                             q_hat(static_cast<Eigen::Index>(off_a + i),
                                   static_cast<Eigen::Index>(off_b + j));
                }
            }
            q_bar(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = entry;
        }
    }
    // products of nonnegative weights keep off-diagonals >= 0; fix the
    // row-sum rounding on the diagonal so downstream validation is exact
    for (Eigen::Index i = 0; i < q_bar.rows(); ++i) {
        double off_diag = 0.0;
        for (Eigen::Index j = 0; j < q_bar.cols(); ++j) {
            if (j != i) off_diag += q_bar(i, j);
        }
        if (std::abs(q_bar(i, i) + off_diag) > 1e-10) {
            throw InvalidGeneratorError("aggregated generator row " + std::to_string(i) +
                                        " is not conservative");
        }
        q_bar(i, i) = -off_diag;
    }
    return q_bar;
}

/// Aggregated schedule over the union of fast and slow breakpoints, clipped
/// to the interval both schedules cover.
inline GeneratorSchedule aggregated_schedule(const TwoScaleGenerator& gen) {
    const double lo = std::max(gen.fast.breakpoints.front(), gen.slow.breakpoints.front());
    const double hi = std::min(gen.fast.breakpoints.back(), gen.slow.breakpoints.back());
    std::vector<double> points{lo, hi};
    for (const auto& source : {gen.fast.breakpoints, gen.slow.breakpoints}) {
        for (double b : source) {
            if (b > lo && b < hi) points.push_back(b);
        }
    }
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    GeneratorSchedule schedule;
    schedule.breakpoints = points;
    for (std::size_t s = 0; s + 1 < points.size(); ++s) {
        double probe;
        if (std::isinf(points[s]) && std::isinf(points[s + 1])) {
            probe = 0.0;
        } else if (std::isinf(points[s])) {
            probe = points[s + 1] - 1.0;
        } else if (std::isinf(points[s + 1])) {
            probe = points[s] + 1.0;
        } else {
            probe = 0.5 * (points[s] + points[s + 1]);
        }
        schedule.matrices.push_back(aggregated_generator(gen, probe));
    }
    return schedule;
}

/// Cadlag jump path of a finite-state chain on [t0, t1]; the state is
/// jump_states[k] on [jump_times[k], jump_times[k+1]).
struct SwitchingPath {
    double t0 = 0.0;
    double t1 = 0.0;
    std::size_t initial_state = 0;
    std::vector<double> jump_times;         // strictly increasing, in (t0, t1]
    std::vector<std::size_t> jump_states;   // state entered at each jump

    std::size_t jump_count() const { return jump_times.size(); }

    std::size_t state_at(double t) const {
        const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
        if (it == jump_times.begin()) return initial_state;
        return jump_states[static_cast<std::size_t>(it - jump_times.begin()) - 1];
    }

    double occupation_time(std::size_t state) const {
        double total = 0.0;
        double prev_time = t0;
        std::size_t prev_state = initial_state;
        for (std::size_t k = 0; k < jump_times.size(); ++k) {
            if (prev_state == state) total += jump_times[k] - prev_time;
            prev_time = jump_times[k];
            prev_state = jump_states[k];
        }
        if (prev_state == state) total += t1 - prev_time;
        return total;
    }

    double occupation_fraction(std::size_t state) const {
        return t1 > t0 ? occupation_time(state) / (t1 - t0) : 0.0;
    }
};

/// Exact event-driven sample of the chain generated by Q_tilde/eps + Q_hat.
/// Holding times are exponential within each constant segment; crossing a
/// breakpoint redraws the clock (memorylessness). Deterministic given the
/// stream.
inline SwitchingPath simulate_chain(const TwoScaleGenerator& gen, double eps, double t0, double t1,
                                    std::size_t initial_state, RandomStream& rng) {
    if (eps <= 0.0) throw std::invalid_argument("simulate_chain: eps must be positive");
    if (initial_state >= gen.state_count()) {
        throw std::invalid_argument("simulate_chain: initial state out of range");
    }
    if (!gen.fast.covers(t0, t1) || !gen.slow.covers(t0, t1)) {
        throw ScheduleGapError("simulate_chain: schedules do not cover the horizon");
    }

    SwitchingPath path;
    path.t0 = t0;
    path.t1 = t1;
    path.initial_state = initial_state;

    // segment boundaries from both schedules, clipped to the horizon
    std::vector<double> cuts{t0, t1};
    for (double b : gen.fast.breakpoints) {
        if (b > t0 && b < t1) cuts.push_back(b);
    }
    for (double b : gen.slow.breakpoints) {
        if (b > t0 && b < t1) cuts.push_back(b);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    std::size_t state = initial_state;
    std::vector<double> row(gen.state_count());
    for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
        const double seg_end = cuts[seg + 1];
        double t = cuts[seg];
        const Mat q = gen.combined(t, eps);
        while (true) {
            const double rate = -q(static_cast<Eigen::Index>(state), static_cast<Eigen::Index>(state));
            if (rate <= 0.0) break;  // absorbing within this segment
            const double hold = rng.exponential(rate);
            if (t + hold >= seg_end) break;
            t += hold;
            for (std::size_t j = 0; j < row.size(); ++j) {
                row[j] = j == state ? 0.0
                                    : q(static_cast<Eigen::Index>(state), static_cast<Eigen::Index>(j));
            }
            state = rng.categorical(row, rate);
            path.jump_times.push_back(t);
            path.jump_states.push_back(state);
        }
    }
    return path;
}

/// Class-label projection r_bar(t) = class of r(t), with zero-length runs
/// merged; jump times are a subset of the input's.
inline SwitchingPath aggregate_path(const SwitchingPath& path, const ClassPartition& partition) {
    SwitchingPath out;
    out.t0 = path.t0;
    out.t1 = path.t1;
    out.initial_state = partition.class_of(path.initial_state);
    std::size_t current = out.initial_state;
    for (std::size_t k = 0; k < path.jump_times.size(); ++k) {
        const std::size_t cls = partition.class_of(path.jump_states[k]);
        if (cls != current) {
            out.jump_times.push_back(path.jump_times[k]);
            out.jump_states.push_back(cls);
            current = cls;
        }
    }
    return out;
}

namespace detail {

// 5-point Gauss-Legendre nodes/weights on [-1, 1]; exact through degree 9,
// so the constant and polynomial test weights integrate exactly.
inline constexpr double kGaussNode[5] = {-0.9061798459386639, -0.5384693101056831, 0.0,
                                         0.5384693101056831, 0.9061798459386639};
inline constexpr double kGaussWeight[5] = {0.23692688505618908, 0.47862867049936647,
                                           0.5688888888888889, 0.47862867049936647,
                                           0.23692688505618908};

inline double integrate_segment(const std::function<double(double)>& fn, double a, double b) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double acc = 0.0;
    for (int k = 0; k < 5; ++k) acc += kGaussWeight[k] * fn(mid + half * kGaussNode[k]);
    return acc * half;
}

inline std::vector<double> deviation_cuts(const SwitchingPath& path,
                                          const QuasiStationaryDistribution& qsd, double t0,
                                          double t1) {
    std::vector<double> cuts{t0, t1};
    for (double t : path.jump_times) {
        if (t > t0 && t < t1) cuts.push_back(t);
    }
    for (double b : qsd.breakpoints) {
        if (b > t0 && b < t1) cuts.push_back(b);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    return cuts;
}

}  // namespace detail

/// Occupation deviation of Lemma 2.2:
///   integral over [t0,t1] of (I{r(u)=state} - nu_state(u)) beta(u) du,
/// taken piece by piece over the path's and schedule's constant intervals.
inline double occupation_deviation(const SwitchingPath& path,
                                   const QuasiStationaryDistribution& qsd, std::size_t state,
                                   const std::function<double(double)>& beta, double t0,
                                   double t1) {
    const auto cuts = detail::deviation_cuts(path, qsd, t0, t1);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double a = cuts[k];
        const double b = cuts[k + 1];
        const double mid = 0.5 * (a + b);
        const double indicator = path.state_at(mid) == state ? 1.0 : 0.0;
        const double weight = qsd.state_weight_at(mid, state);
        total += (indicator - weight) * detail::integrate_segment(beta, a, b);
    }
    return total;
}

/// Multi-class form of Lemma 3.1:
///   integral of (I{r(u)=member of class} - nu^class_member(u) I{r_bar(u)=class}) du.
inline double occupation_deviation(const SwitchingPath& path,
                                   const QuasiStationaryDistribution& qsd, std::size_t cls,
                                   std::size_t member, double t0, double t1) {
    const std::size_t state = qsd.partition.offset(cls) + member;
    const auto cuts = detail::deviation_cuts(path, qsd, t0, t1);
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double a = cuts[k];
        const double b = cuts[k + 1];
        const double mid = 0.5 * (a + b);
        const std::size_t r = path.state_at(mid);
        const double indicator = r == state ? 1.0 : 0.0;
        const double class_indicator = qsd.partition.class_of(r) == cls ? 1.0 : 0.0;
        const double weight =
            qsd.class_weights(qsd.segment_index(mid), cls)(static_cast<Eigen::Index>(member));
        total += (indicator - weight * class_indicator) * (b - a);
    }
    return total;
}

}  // namespace slowfast
