#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace slowfast {

inline constexpr const char* kVersion = "0.1.0";

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct InvalidGeneratorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotWeaklyIrreducibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ScheduleGapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a simulated state turns NaN/inf; carries the first bad node.
struct NonFiniteError : std::runtime_error {
    NonFiniteError(const std::string& what, std::size_t node, double time)
        : std::runtime_error(what), node_index(node), node_time(time) {}
    std::size_t node_index;
    double node_time;
};

struct StepTooCoarseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotPsdError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GridExtrapolationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BudgetExceededError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    ConfigError(const std::string& key_path, const std::string& what)
        : std::runtime_error("config key '" + key_path + "': " + what), key(key_path) {}
    std::string key;
};

struct StudyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline int resolve_jobs(int jobs) {
    if (jobs > 0) return jobs;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(i) for i in [0, count). Work items must be independent; callers
/// that aggregate results write into preallocated index-i slots and reduce
/// sequentially afterwards, so the outcome is identical for any job count.
inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
    const int workers = std::min<int>(resolve_jobs(jobs), static_cast<int>(count == 0 ? 1 : count));
    if (workers <= 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = static_cast<std::size_t>(w); i < count;
                     i += static_cast<std::size_t>(workers)) {
                    fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace slowfast
