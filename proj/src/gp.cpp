#include "invdes/gp.hpp"

#include <algorithm>
#include <cmath>

#include "invdes/rng.hpp"

namespace invdes {

namespace {

double median_pairwise_distance(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows();
    if (n < 2) return 1.0;
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) d.push_back((X.row(i) - X.row(j)).norm());
    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<long>(mid), d.end());
    const double med = d[mid];
    return med > 0.0 ? med : 1.0;
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& X, double sv, double ls) {
    const Eigen::Index n = X.rows();
    Eigen::MatrixXd K(n, n);
    const double inv2l2 = 1.0 / (2.0 * ls * ls);
    for (Eigen::Index i = 0; i < n; ++i) {
        K(i, i) = sv;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double d2 = (X.row(i) - X.row(j)).squaredNorm();
            K(i, j) = K(j, i) = sv * std::exp(-d2 * inv2l2);
        }
    }
    return K;
}

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double norm_cdf(double u) { return 0.5 * std::erfc(-u / kSqrt2); }
double norm_pdf(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }

}  // namespace

GpSurrogate gp_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double jitter) {
    if (X.rows() != y.size() || X.rows() < 1) throw ShapeError("gp_fit: bad training data");
    GpSurrogate gp;
    gp.X = X;
    gp.y = y;
    gp.prior_mean = y.mean();
    const double var = (y.array() - gp.prior_mean).square().mean();
    gp.signal_variance = var > 1e-12 ? var : 1.0;
    gp.length_scale = median_pairwise_distance(X);
    gp.jitter = jitter;

    Eigen::MatrixXd K = kernel_matrix(X, gp.signal_variance, gp.length_scale);
    K.diagonal().array() += gp.jitter * gp.signal_variance;
    gp.llt.compute(K);
    if (gp.llt.info() != Eigen::Success) {
        gp.jitter *= 100.0;
        K.diagonal().array() += (gp.jitter - jitter) * gp.signal_variance;
        gp.llt.compute(K);
        if (gp.llt.info() != Eigen::Success)
            throw NumericError("gp_fit: kernel factorization failed even after raising jitter");
    }
    gp.alpha = gp.llt.solve((y.array() - gp.prior_mean).matrix());
    return gp;
}

std::pair<double, double> gp_posterior(const GpSurrogate& gp, const Eigen::VectorXd& x) {
    if (x.size() != gp.X.cols()) throw ShapeError("gp_posterior: query dimension mismatch");
    const Eigen::Index n = gp.size();
    Eigen::VectorXd k(n);
    const double inv2l2 = 1.0 / (2.0 * gp.length_scale * gp.length_scale);
    for (Eigen::Index i = 0; i < n; ++i)
        k[i] = gp.signal_variance * std::exp(-(gp.X.row(i).transpose() - x).squaredNorm() * inv2l2);
    const double mean = gp.prior_mean + k.dot(gp.alpha);
    const Eigen::VectorXd v = gp.llt.matrixL().solve(k);
    const double variance = std::max(0.0, gp.signal_variance - v.squaredNorm());
    return {mean, variance};
}

double expected_improvement(double mean, double variance, double best_so_far) {
    if (variance < 0.0) throw NumericError("expected_improvement: negative variance");
    const double delta = best_so_far - mean;
    if (variance == 0.0) return std::max(delta, 0.0);
    const double s = std::sqrt(variance);
    const double u = delta / s;
    return std::max(0.0, delta * norm_cdf(u) + s * norm_pdf(u));
}

BoResult bo_optimize(const std::function<double(const Eigen::VectorXd&)>& objective, int dim,
                     const BoBudget& budget, std::uint64_t seed, double lo, double hi) {
    if (dim < 1 || budget.init < 1 || budget.iterations < 0 || budget.candidate_pool < 1)
        throw ConfigError("bo_optimize: bad budget");
    Rng rng(seed);
    auto draw = [&]() {
        Eigen::VectorXd z(dim);
        for (int i = 0; i < dim; ++i) z[i] = rng.uniform(lo, hi);
        return z;
    };

    BoResult r;
    Eigen::MatrixXd X(budget.init + budget.iterations, dim);
    Eigen::VectorXd y(budget.init + budget.iterations);
    r.best_value = std::numeric_limits<double>::infinity();

    auto record = [&](int idx, const Eigen::VectorXd& z, double f) {
        X.row(idx) = z.transpose();
        y[idx] = f;
        if (f < r.best_value) {
            r.best_value = f;
            r.best_point = z;
        }
        BoTraceRow row;
        row.iteration = idx;
        row.z = z;
        row.objective = f;
        row.incumbent = r.best_value;
        r.trace.push_back(row);
    };

    for (int i = 0; i < budget.init; ++i) {
        Eigen::VectorXd z = draw();
        record(i, z, objective(z));
    }

    for (int it = 0; it < budget.iterations; ++it) {
        const int n = budget.init + it;
        GpSurrogate gp = gp_fit(X.topRows(n), y.head(n));
        double best_ei = -1.0;
        Eigen::VectorXd best_z;
        for (int c = 0; c < budget.candidate_pool; ++c) {
            Eigen::VectorXd z = draw();
            auto [mean, var] = gp_posterior(gp, z);
            const double ei = expected_improvement(mean, var, r.best_value);
            if (ei > best_ei) {
                best_ei = ei;
                best_z = z;
            }
        }
        record(n, best_z, objective(best_z));
    }
    return r;
}

}  // namespace invdes
