#pragma once

// Test-only oracles, deliberately independent of the library implementations
// they check: a dense Jacobi eigensolver (vs. power-iteration PCA) and an
// all-pairs Mann-Whitney count (vs. the rank-based AUC).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

namespace oracles {

// Cyclic Jacobi eigensolver for a symmetric matrix, eigenpairs sorted by
// descending eigenvalue.
inline void jacobi_eigen(std::vector<double> a, std::size_t d, std::vector<double>& values,
                         std::vector<std::vector<double>>& vectors) {
    std::vector<double> v(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p)
            for (std::size_t q = p + 1; q < d; ++q) {
                if (std::abs(a[p * d + q]) < 1e-300) continue;
                const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * a[p * d + q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    const double aip = a[i * d + p], aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double api = a[p * d + i], aqi = a[q * d + i];
                    a[p * d + i] = c * api - s * aqi;
                    a[q * d + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double vip = v[i * d + p], viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
    }
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a[x * d + x] > a[y * d + y]; });
    values.clear();
    vectors.clear();
    for (std::size_t k : order) {
        values.push_back(a[k * d + k]);
        std::vector<double> col(d);
        for (std::size_t i = 0; i < d; ++i) col[i] = v[i * d + k];
        vectors.push_back(col);
    }
}

inline void sign_normalize(std::vector<double>& v) {
    for (double x : v) {
        if (x > 1e-12) return;
        if (x < -1e-12) {
            for (double& y : v) y = -y;
            return;
        }
    }
}

// all-pairs Mann-Whitney count, ties worth one half
inline double brute_force_auc(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
    double u = 0.0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++pos;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j]) u += 1.0;
            else if (scores[i] == scores[j]) u += 0.5;
        }
    }
    for (int y : labels)
        if (y == 0) ++neg;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace oracles
