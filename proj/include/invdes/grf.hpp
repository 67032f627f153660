#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "invdes/microstructure.hpp"
#include "invdes/rng.hpp"

namespace invdes {

/// Controls for one Gaussian-random-field sample.
struct GrfParams {
    int image_side = 64;
    double correlation_length = 2.0;  // pixels
    double volume_fraction = 0.5;     // target positive-phase fraction, in (0,1)
    std::uint64_t seed = 0;

    void validate() const {
        if (image_side < 4) throw ConfigError("grf: image side must be >= 4");
        if (!(volume_fraction > 0.0 && volume_fraction < 1.0))
            throw ConfigError("grf: volume fraction must lie in (0,1)");
        if (!(correlation_length > 0.0) || correlation_length > image_side / 2.0)
            throw ConfigError("grf: correlation length must be in (0, side/2]");
    }
};

/// Ranges the dataset generator draws per-sample parameters from.
struct GrfRanges {
    int image_side = 64;
    double vf_min = 0.3;
    double vf_max = 0.7;
    std::vector<double> correlation_lengths = {2.0, 4.0, 8.0};

    void validate() const {
        if (!(vf_min > 0.0 && vf_max < 1.0 && vf_min <= vf_max))
            throw ConfigError("grf: bad volume-fraction range");
        if (correlation_lengths.empty()) throw ConfigError("grf: empty correlation-length set");
    }
};

struct GrfSample {
    Microstructure image;
    std::uint64_t seed = 0;
    double volume_fraction = 0.0;
    double correlation_length = 0.0;
};

/// Circular (periodic) convolution of `field` with an isotropic Gaussian
/// kernel of width `correlation_length`, computed as a frequency-domain
/// product. This is the linear filter behind sample_field, exposed for the
/// oracle tests.
Eigen::ArrayXXd gaussian_spectral_filter(const Eigen::ArrayXXd& field, double correlation_length);

/// Stationary Gaussian random field: filtered white noise, standardized to
/// zero mean and unit variance.
Eigen::ArrayXXd sample_field(const GrfParams& params);

/// Cut value of the empirical (1-vf)-quantile used by threshold(): the
/// smallest field value mapped to the positive phase.
double threshold_cut(const Eigen::ArrayXXd& field, double vf);

/// Thresholds a field at the empirical (1-vf)-quantile; exactly
/// round(vf*side^2) pixels land in the positive phase, ties broken by pixel
/// index order.
Microstructure threshold(const Eigen::ArrayXXd& field, double vf);

/// n microstructures with per-sample vf drawn uniformly from the configured
/// interval and correlation length from the configured set; a pure function
/// of (n, ranges, master_seed).
std::vector<GrfSample> generate_dataset(int n, const GrfRanges& ranges, std::uint64_t master_seed);

}  // namespace invdes
