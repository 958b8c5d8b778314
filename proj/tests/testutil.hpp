#pragma once

// Shared oracles for the test suite. These are deliberately naive
// implementations, kept independent from the library code they check.

#include <cmath>
#include <functional>
#include <vector>

#include "vaells/linalg.hpp"

namespace testutil {

// Truncated Taylor series for e^A. Accurate to well below 1e-12 for
// ||A||_1 <= 1 with 30 terms; only valid as an oracle in that regime.
inline vaells::Mat taylor_exp(const vaells::Mat& a, int terms = 30) {
    vaells::Mat sum = vaells::Mat::identity(a.rows());
    vaells::Mat term = vaells::Mat::identity(a.rows());
    for (int k = 1; k <= terms; ++k) {
        term = vaells::matmul(term, a);
        term *= 1.0 / k;
        sum += term;
    }
    return sum;
}

inline double rel_frobenius_err(const vaells::Mat& got, const vaells::Mat& want) {
    const double denom = std::max(1.0, vaells::frobenius_norm(want));
    return vaells::frobenius_norm(got - want) / denom;
}

// Central finite difference of a scalar function along one coordinate.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x, std::size_t i, double h) {
    const double xi = x[i];
    x[i] = xi + h;
    const double fp = f(x);
    x[i] = xi - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

// Kolmogorov-Smirnov tail probability Q_KS(lambda).
inline double ks_tail_prob(double lambda) {
    double sum = 0.0, sign = 1.0;
    const double a = -2.0 * lambda * lambda;
    for (int j = 1; j <= 100; ++j) {
        const double term = sign * 2.0 * std::exp(a * j * j);
        sum += term;
        if (std::abs(term) < 1e-12 * std::abs(sum)) break;
        sign = -sign;
    }
    return std::min(1.0, std::max(0.0, sum));
}

// One-sample KS test p-value for sorted samples against a CDF.
inline double ks_p_value(std::vector<double> samples,
                         const std::function<double(double)>& cdf) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double c = cdf(samples[i]);
        const double lo = static_cast<double>(i) / n;
        const double hi = static_cast<double>(i + 1) / n;
        d = std::max({d, std::abs(c - lo), std::abs(hi - c)});
    }
    const double sqn = std::sqrt(n);
    return ks_tail_prob((sqn + 0.12 + 0.11 / sqn) * d);
}

inline double laplace_cdf(double x, double scale) {
    const double t = x / scale;
    return t < 0.0 ? 0.5 * std::exp(t) : 1.0 - 0.5 * std::exp(-t);
}

// Argmin of a scalar function by coarse grid scan with interval shrinking.
inline double grid_search_min(const std::function<double(double)>& f, double lo,
                              double hi, int points = 4096, int rounds = 4) {
    double best_x = lo;
    for (int round = 0; round < rounds; ++round) {
        double best_f = std::numeric_limits<double>::infinity();
        const double step = (hi - lo) / points;
        for (int i = 0; i <= points; ++i) {
            const double x = lo + i * step;
            const double fx = f(x);
            if (fx < best_f) {
                best_f = fx;
                best_x = x;
            }
        }
        lo = best_x - 2.0 * step;
        hi = best_x + 2.0 * step;
    }
    return best_x;
}

}  // namespace testutil
