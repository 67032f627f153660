#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

#include "invdes/error.hpp"

namespace invdes {

/// Gaussian-process regression surrogate with a squared-exponential kernel.
/// The length scale comes from the median pairwise-distance heuristic, the
/// signal variance from the sample variance of the targets, and the prior
/// mean from the target mean.
struct GpSurrogate {
    Eigen::MatrixXd X;  // [n, dim] training inputs
    Eigen::VectorXd y;  // [n] training targets
    double signal_variance = 1.0;
    double length_scale = 1.0;
    double jitter = 1e-6;
    double prior_mean = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt;  // factorized kernel matrix
    Eigen::VectorXd alpha;            // K^-1 (y - prior_mean)

    Eigen::Index size() const { return X.rows(); }
};

/// Fits the surrogate. If the Cholesky factorization fails, the jitter is
/// raised once (x100) before giving up.
GpSurrogate gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double jitter = 1e-6);

/// Posterior mean and variance at a query point.
std::pair<double, double> gp_posterior(const GpSurrogate& gp, const Eigen::VectorXd& x);

/// Closed-form expected improvement for minimization. Zero when the variance
/// vanishes and the mean is no better than the incumbent.
double expected_improvement(double mean, double variance, double best_so_far);

struct BoTraceRow {
    int iteration = 0;  // 0-based over init samples, then optimization iterations
    Eigen::VectorXd z;
    double objective = 0.0;
    double incumbent = 0.0;
};

struct BoResult {
    Eigen::VectorXd best_point;
    double best_value = 0.0;
    std::vector<BoTraceRow> trace;  // length = init + iterations
};

struct BoBudget {
    int init = 250;
    int iterations = 400;
    int candidate_pool = 1024;
};

/// Metamodel-based Bayesian optimization over the [lo, hi]^dim box:
/// seeded uniform initialization, then per iteration a GP refit and EI
/// maximization over a fresh random candidate pool.
BoResult bo_optimize(const std::function<double(const Eigen::VectorXd&)>& objective, int dim,
                     const BoBudget& budget, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0);

}  // namespace invdes
