#pragma once

// Independent oracle for quasi-stationary distributions, shared by the unit
// and acceptance suites: replace the last column of Q by ones and solve
// (Q')^T nu = e_n by Gaussian elimination with partial pivoting. Entirely
// separate from the SVD route used by the library.

#include "slowfast/common.hpp"
#include "slowfast/rng.hpp"

#include <cmath>
#include <utility>
#include <vector>

inline std::vector<double> qsd_elimination_oracle(const slowfast::Mat& q) {
    const int n = static_cast<int>(q.rows());
    std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            a[i][j] = i == n - 1 ? 1.0 : q(j, i);
        }
        a[i][n] = i == n - 1 ? 1.0 : 0.0;
    }
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int row = col + 1; row < n; ++row) {
            if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
        }
        std::swap(a[col], a[pivot]);
        for (int row = 0; row < n; ++row) {
            if (row == col || a[row][col] == 0.0) continue;
            const double factor = a[row][col] / a[col][col];
            for (int k = col; k <= n; ++k) a[row][k] -= factor * a[col][k];
        }
    }
    std::vector<double> nu(n);
    for (int i = 0; i < n; ++i) nu[i] = a[i][n] / a[i][i];
    return nu;
}

inline slowfast::Mat random_rate_matrix(std::size_t n, slowfast::RandomStream& rng) {
    slowfast::Mat q =
        slowfast::Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double rate = 0.1 + 1.9 * rng.uniform();
            q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rate;
            row_sum += rate;
        }
        q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = -row_sum;
    }
    return q;
}
