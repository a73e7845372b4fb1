#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

// Small helpers shared by the statistical checks.
namespace testutil {

inline double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double var(const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// Standard error of a sample variance for a Gaussian: sigma^2 sqrt(2/(n-1)).
inline double var_se(double sigma2, std::size_t n) {
    return sigma2 * std::sqrt(2.0 / static_cast<double>(n - 1));
}

inline double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

}  // namespace testutil
