#pragma once

// The classic one-to-many toy problem: x ~ U[0,1], y = x + 0.3 sin(2 pi x) +
// noise, learned in the inverse direction (y -> x). For mid-range y the
// inverse has three branches.

#include <cmath>
#include <vector>

#include "invdes/rng.hpp"
#include "invdes/tensor.hpp"

namespace invdes::testing {

inline double toy_forward(double x) { return x + 0.3 * std::sin(2.0 * M_PI * x); }

struct ToyData {
    RowMajorMat<float> y;  // [n,1] inputs to the inverse model
    RowMajorMat<float> x;  // [n,1] targets
};

inline ToyData make_toy_data(int n, std::uint64_t seed, double noise_amp = 0.05) {
    Rng rng(seed);
    ToyData d;
    d.y.resize(n, 1);
    d.x.resize(n, 1);
    for (int i = 0; i < n; ++i) {
        const double x = rng.uniform();
        const double y = toy_forward(x) + rng.uniform(-noise_amp, noise_amp);
        d.x(i, 0) = static_cast<float>(x);
        d.y(i, 0) = static_cast<float>(y);
    }
    return d;
}

/// Noiseless inverse branches of the toy map: all roots of f(x) = y on [0,1],
/// found independently by scan + bisection.
inline std::vector<double> toy_branches(double y, int grid = 4000) {
    std::vector<double> roots;
    double prev_x = 0.0, prev_f = toy_forward(0.0) - y;
    for (int i = 1; i <= grid; ++i) {
        const double x = static_cast<double>(i) / grid;
        const double f = toy_forward(x) - y;
        if (prev_f == 0.0) roots.push_back(prev_x);
        if (prev_f * f < 0.0) {
            double lo = prev_x, hi = x, flo = prev_f;
            for (int it = 0; it < 80; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double fm = toy_forward(mid) - y;
                if (flo * fm <= 0.0) hi = mid;
                else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push_back(0.5 * (lo + hi));
        }
        prev_x = x;
        prev_f = f;
    }
    return roots;
}

inline double distance_to_nearest(double v, const std::vector<double>& branches) {
    double best = std::numeric_limits<double>::infinity();
    for (double b : branches) best = std::min(best, std::abs(v - b));
    return best;
}

/// 1-d cluster centers: sorted samples split at gaps wider than `gap`;
/// clusters holding under min_frac of the samples are ignored.
inline std::vector<double> cluster_centers(std::vector<double> samples, double gap = 0.12,
                                           double min_frac = 0.05) {
    std::sort(samples.begin(), samples.end());
    std::vector<double> centers;
    std::size_t start = 0;
    const std::size_t min_count =
        static_cast<std::size_t>(min_frac * static_cast<double>(samples.size()));
    for (std::size_t i = 1; i <= samples.size(); ++i) {
        if (i == samples.size() || samples[i] - samples[i - 1] > gap) {
            const std::size_t count = i - start;
            if (count >= std::max<std::size_t>(min_count, 1)) {
                double acc = 0.0;
                for (std::size_t j = start; j < i; ++j) acc += samples[j];
                centers.push_back(acc / static_cast<double>(count));
            }
            start = i;
        }
    }
    return centers;
}

/// Ordinary least squares fit x ~ a*y + b (the unimodal comparator).
inline std::pair<double, double> linear_fit(const RowMajorMat<float>& y,
                                            const RowMajorMat<float>& x) {
    const Eigen::Index n = y.rows();
    double sy = 0, sx = 0, syy = 0, sxy = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        sy += y(i, 0);
        sx += x(i, 0);
        syy += static_cast<double>(y(i, 0)) * y(i, 0);
        sxy += static_cast<double>(y(i, 0)) * x(i, 0);
    }
    const double denom = n * syy - sy * sy;
    const double a = (n * sxy - sy * sx) / denom;
    const double b = (sx - a * sy) / n;
    return {a, b};
}

}  // namespace invdes::testing
