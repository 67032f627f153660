#include <doctest.h>

#include <algorithm>

#include "invdes/grf.hpp"

using namespace invdes;

namespace {

// independent O(n^2) circular convolution with the same wrapped Gaussian
// kernel; the linear operator behind the spectral filter
Eigen::ArrayXXd naive_circular_filter(const Eigen::ArrayXXd& field, double ell) {
    const Eigen::Index n = field.rows();
    Eigen::ArrayXXd kernel(n, n);
    for (Eigen::Index y = 0; y < n; ++y) {
        const double dy = std::min<double>(y, n - y);
        for (Eigen::Index x = 0; x < n; ++x) {
            const double dx = std::min<double>(x, n - x);
            kernel(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * ell * ell));
        }
    }
    Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(n, n);
    for (Eigen::Index y = 0; y < n; ++y)
        for (Eigen::Index x = 0; x < n; ++x) {
            double acc = 0.0;
            for (Eigen::Index ky = 0; ky < n; ++ky)
                for (Eigen::Index kx = 0; kx < n; ++kx)
                    acc += field(ky, kx) * kernel((y - ky + n) % n, (x - kx + n) % n);
            out(y, x) = acc;
        }
    return out;
}

double lag1_autocorr(const Eigen::ArrayXXd& f) {
    const Eigen::Index n = f.rows();
    double num = 0.0, den = 0.0;
    const double mean = f.mean();
    for (Eigen::Index y = 0; y < n; ++y)
        for (Eigen::Index x = 0; x < n; ++x) {
            den += (f(y, x) - mean) * (f(y, x) - mean);
            num += (f(y, x) - mean) * (f(y, (x + 1) % n) - mean);
        }
    return num / den;
}

}  // namespace

TEST_CASE("spectral filter equals the direct circular-convolution oracle at 16x16") {
    Rng rng(77);
    Eigen::ArrayXXd noise(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) noise(y, x) = rng.normal();
    for (double ell : {1.5, 3.0}) {
        Eigen::ArrayXXd fast = gaussian_spectral_filter(noise, ell);
        Eigen::ArrayXXd slow = naive_circular_filter(noise, ell);
        const double scale = slow.abs().maxCoeff();
        CHECK(((fast - slow).abs() / scale).maxCoeff() < 1e-10);
    }
}

TEST_CASE("sample_field: standardized to zero mean, unit variance") {
    GrfParams p;
    p.image_side = 64;
    p.correlation_length = 4.0;
    p.volume_fraction = 0.5;
    p.seed = 9;
    Eigen::ArrayXXd f = sample_field(p);
    CHECK(std::abs(f.mean()) < 0.05);
    CHECK(std::abs(std::sqrt(f.square().mean()) - 1.0) < 0.05);
}

TEST_CASE("sample_field: same seed gives bit-identical fields") {
    GrfParams p;
    p.image_side = 32;
    p.correlation_length = 2.0;
    p.seed = 1234;
    Eigen::ArrayXXd a = sample_field(p);
    Eigen::ArrayXXd b = sample_field(p);
    CHECK((a == b).all());
}

TEST_CASE("larger correlation length raises the lag-1 autocorrelation") {
    double avg[3] = {0, 0, 0};
    const double ells[3] = {2.0, 4.0, 8.0};
    for (int e = 0; e < 3; ++e) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            GrfParams p;
            p.image_side = 64;
            p.correlation_length = ells[e];
            p.seed = seed;
            avg[e] += lag1_autocorr(sample_field(p)) / 20.0;
        }
    }
    CHECK(avg[0] < avg[1]);
    CHECK(avg[1] < avg[2]);
}

TEST_CASE("sample_field rejects degenerate sides and bad params") {
    GrfParams p;
    p.image_side = 3;
    CHECK_THROWS_AS(sample_field(p), ConfigError);
    p.image_side = 64;
    p.volume_fraction = 1.0;
    CHECK_THROWS_AS(sample_field(p), ConfigError);
    p.volume_fraction = 0.5;
    p.correlation_length = 64.0;  // > side/2
    CHECK_THROWS_AS(sample_field(p), ConfigError);
}

TEST_CASE("threshold: exact positive-pixel counts") {
    Rng rng(5);
    Eigen::ArrayXXd f(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) f(y, x) = rng.normal();

    Microstructure half = threshold(f, 0.5);
    CHECK(half.positive_count() == 8);
    Microstructure quarter = threshold(f, 0.25);
    CHECK(quarter.positive_count() == 4);

    // exact vf control: |realized - target| <= 1/side^2 over random targets
    for (int rep = 0; rep < 50; ++rep) {
        const double vf = rng.uniform(0.02, 0.98);
        Microstructure m = threshold(f, vf);
        const double realized = static_cast<double>(m.positive_count()) / 16.0;
        CHECK(std::abs(realized - vf) <= 1.0 / 16.0 + 1e-12);
    }
}

TEST_CASE("threshold cut equals the full-sort quantile oracle") {
    Rng rng(6);
    for (int rep = 0; rep < 20; ++rep) {
        const int side = 8;
        Eigen::ArrayXXd f(side, side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) f(y, x) = rng.normal();
        const double vf = rng.uniform(0.05, 0.95);
        const long k = std::lround(vf * side * side);
        std::vector<double> sorted(f.data(), f.data() + side * side);
        std::sort(sorted.begin(), sorted.end());  // ascending
        const double oracle = sorted[static_cast<std::size_t>(side * side - k)];
        CHECK(threshold_cut(f, vf) == oracle);
    }
}

TEST_CASE("threshold breaks ties by pixel index order") {
    Eigen::ArrayXXd f = Eigen::ArrayXXd::Zero(4, 4);  // all equal
    Microstructure m = threshold(f, 0.25);
    REQUIRE(m.positive_count() == 4);
    // first four row-major pixels win the tie
    for (int i = 0; i < 4; ++i) CHECK(m.pixels[i] == 1.0f);
    for (int i = 4; i < 16; ++i) CHECK(m.pixels[i] == -1.0f);
}

TEST_CASE("generate_dataset: determinism, distinctness, vf histogram sanity") {
    GrfRanges ranges;
    ranges.image_side = 16;
    ranges.vf_min = 0.3;
    ranges.vf_max = 0.7;
    ranges.correlation_lengths = {2.0, 4.0};

    auto a = generate_dataset(5, ranges, 42);
    auto b = generate_dataset(5, ranges, 42);
    REQUIRE(a.size() == 5);
    for (int i = 0; i < 5; ++i) CHECK((a[i].image.pixels == b[i].image.pixels).all());

    // disjoint seeds give distinct images
    auto c = generate_dataset(100, ranges, 43);
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = i + 1; j < c.size(); ++j)
            CHECK_FALSE((c[i].image.pixels == c[j].image.pixels).all());

    // vf approximately uniform over [0.3, 0.7]: chi^2 over 8 bins
    auto big = generate_dataset(2000, ranges, 7);
    int bins[8] = {0};
    for (const auto& s : big) {
        int b8 = static_cast<int>((s.volume_fraction - 0.3) / 0.4 * 8);
        bins[std::clamp(b8, 0, 7)] += 1;
    }
    const double expected = 2000.0 / 8.0;
    double chi2 = 0.0;
    for (int i = 0; i < 8; ++i) chi2 += (bins[i] - expected) * (bins[i] - expected) / expected;
    CHECK(chi2 < 24.32);  // 0.999 quantile of chi^2 with 7 dof

    CHECK_THROWS_AS(generate_dataset(0, ranges, 1), ConfigError);
    GrfRanges empty = ranges;
    empty.correlation_lengths.clear();
    CHECK_THROWS_AS(generate_dataset(1, empty, 1), ConfigError);
}
