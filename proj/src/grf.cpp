#include "invdes/grf.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

namespace invdes {

namespace {

using Complex = std::complex<double>;
using CMat = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;

// In-place 2-d FFT by transforming rows, then columns.
void fft2(CMat& m, bool inverse) {
    Eigen::FFT<double> fft;
    const Eigen::Index n = m.rows();
    Eigen::VectorXcd line(n), out(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        line = m.row(r).transpose();
        if (inverse) fft.inv(out, line); else fft.fwd(out, line);
        m.row(r) = out.transpose();
    }
    for (Eigen::Index c = 0; c < n; ++c) {
        line = m.col(c);
        if (inverse) fft.inv(out, line); else fft.fwd(out, line);
        m.col(c) = out;
    }
}

// Gaussian kernel sampled on the periodic grid (wrapped distances).
Eigen::ArrayXXd periodic_gaussian_kernel(Eigen::Index n, double ell) {
    Eigen::ArrayXXd k(n, n);
    for (Eigen::Index y = 0; y < n; ++y) {
        const double dy = std::min<double>(y, n - y);
        for (Eigen::Index x = 0; x < n; ++x) {
            const double dx = std::min<double>(x, n - x);
            k(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * ell * ell));
        }
    }
    return k;
}

}  // namespace

Eigen::ArrayXXd gaussian_spectral_filter(const Eigen::ArrayXXd& field, double correlation_length) {
    const Eigen::Index n = field.rows();
    if (field.cols() != n) throw ShapeError("grf: field must be square");
    CMat f = field.matrix().cast<Complex>();
    CMat k = periodic_gaussian_kernel(n, correlation_length).matrix().cast<Complex>();
    fft2(f, false);
    fft2(k, false);
    f = f.cwiseProduct(k);
    fft2(f, true);
    return f.real().array();
}

Eigen::ArrayXXd sample_field(const GrfParams& params) {
    params.validate();
    const Eigen::Index n = params.image_side;
    Rng rng(params.seed);
    Eigen::ArrayXXd noise(n, n);
    for (Eigen::Index y = 0; y < n; ++y)
        for (Eigen::Index x = 0; x < n; ++x) noise(y, x) = rng.normal();

    Eigen::ArrayXXd field = gaussian_spectral_filter(noise, params.correlation_length);

    const double m = field.mean();
    const double var = (field - m).square().mean();
    const double sd = std::sqrt(std::max(var, 1e-300));
    return (field - m) / sd;
}

double threshold_cut(const Eigen::ArrayXXd& field, double vf) {
    if (!(vf > 0.0 && vf < 1.0)) throw ConfigError("grf: volume fraction must lie in (0,1)");
    if (!field.isFinite().all()) throw NumericError("grf: non-finite field");
    const long total = field.size();
    const long k = std::lround(vf * static_cast<double>(total));
    if (k <= 0) return std::numeric_limits<double>::infinity();
    std::vector<double> v(field.data(), field.data() + total);
    std::nth_element(v.begin(), v.begin() + (k - 1), v.end(), std::greater<double>());
    return v[static_cast<std::size_t>(k - 1)];
}

Microstructure threshold(const Eigen::ArrayXXd& field, double vf) {
    if (!(vf > 0.0 && vf < 1.0)) throw ConfigError("grf: volume fraction must lie in (0,1)");
    if (!field.isFinite().all()) throw NumericError("grf: non-finite field");
    const Eigen::Index n = field.rows();
    if (field.cols() != n) throw ShapeError("grf: field must be square");
    const long total = field.size();
    const long k = std::lround(vf * static_cast<double>(total));

    // rank pixels by (value desc, index asc); the top k become phase B
    std::vector<long> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0L);
    // field is column-major; compare by row-major pixel index to match the
    // documented tie-break order
    auto value_at = [&](long idx) { return field(idx / n, idx % n); };
    std::stable_sort(order.begin(), order.end(), [&](long a, long b) {
        const double va = value_at(a), vb = value_at(b);
        if (va != vb) return va > vb;
        return a < b;
    });

    Microstructure m;
    m.side = static_cast<int>(n);
    m.pixels = Eigen::ArrayXf::Constant(total, -1.0f);
    for (long i = 0; i < k; ++i) m.pixels[order[static_cast<std::size_t>(i)]] = 1.0f;
    return m;
}

std::vector<GrfSample> generate_dataset(int n, const GrfRanges& ranges, std::uint64_t master_seed) {
    if (n < 1) throw ConfigError("grf: dataset size must be >= 1");
    ranges.validate();
    std::vector<GrfSample> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        GrfSample s;
        s.seed = derive_seed(master_seed, "grf-sample", static_cast<std::uint64_t>(i));
        Rng prng(derive_seed(master_seed, "grf-params", static_cast<std::uint64_t>(i)));
        s.volume_fraction = prng.uniform(ranges.vf_min, ranges.vf_max);
        s.correlation_length =
            ranges.correlation_lengths[prng.integer(ranges.correlation_lengths.size())];
        GrfParams p;
        p.image_side = ranges.image_side;
        p.correlation_length = s.correlation_length;
        p.volume_fraction = s.volume_fraction;
        p.seed = s.seed;
        s.image = threshold(sample_field(p), s.volume_fraction);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace invdes
