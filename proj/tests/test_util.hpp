#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "unfoldseg/rng.hpp"
#include "unfoldseg/tensor.hpp"

namespace testutil {

inline unfoldseg::Tensor random_tensor(unfoldseg::SplitMix64& rng, int h, int w, int c,
                                       double lo = 0.0, double hi = 1.0) {
    unfoldseg::Tensor t(h, w, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.range(lo, hi);
    return t;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::fabs(a - b) / std::max({floor, std::fabs(a), std::fabs(b)});
}

/// Central finite difference of a scalar function with respect to one entry
/// of a parameter vector.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> params, std::size_t i, double h = 1e-5) {
    params[i] += h;
    const double hi = f(params);
    params[i] -= 2.0 * h;
    const double lo = f(params);
    return (hi - lo) / (2.0 * h);
}

/// Minimizes a unimodal scalar function by ternary search.
inline double ternary_min(const std::function<double(double)>& f, double lo, double hi,
                          int iters = 200) {
    for (int i = 0; i < iters; ++i) {
        const double m1 = lo + (hi - lo) / 3.0;
        const double m2 = hi - (hi - lo) / 3.0;
        if (f(m1) < f(m2)) hi = m2;
        else lo = m1;
    }
    return 0.5 * (lo + hi);
}

}  // namespace testutil
