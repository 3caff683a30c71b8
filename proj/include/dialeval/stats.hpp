#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "dialeval/error.hpp"

namespace dialeval::stats {

inline double mean(std::span<const double> xs) {
    double sum = 0.0;
    for (double x : xs) sum += x;
    return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

/// Product-moment correlation. Throws NumericError when either input is constant
/// (the correlation is undefined there) and DataError on a length mismatch.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw DataError("pearson: length mismatch (" + std::to_string(x.size()) + " vs " +
                        std::to_string(y.size()) + ")");
    }
    if (x.size() < 2) throw NumericError("pearson: need at least 2 paired values");
    const double mx = mean(x);
    const double my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: correlation undefined for a constant vector");
    const double r = sxy / std::sqrt(sxx * syy);
    // Rounding can push |r| a hair past 1.
    return r > 1.0 ? 1.0 : (r < -1.0 ? -1.0 : r);
}

}  // namespace dialeval::stats
