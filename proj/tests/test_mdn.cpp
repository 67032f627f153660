#include <doctest.h>

#include "invdes/mdn.hpp"
#include "support/gradcheck.hpp"
#include "support/toy.hpp"

using namespace invdes;
using invdes::testing::random_tensor;
using invdes::testing::random_tensor_in;

namespace {

// brute-force direct-probability oracle, no log-sum-exp
double naive_density(const Eigen::ArrayXd& pi, const Eigen::ArrayXd& mu,
                     const Eigen::ArrayXd& sigma, const Eigen::ArrayXd& z) {
    const Eigen::Index K = pi.size(), M = z.size();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
        double phi = 1.0;
        for (Eigen::Index m = 0; m < M; ++m) {
            const double s = sigma[k * M + m];
            const double u = (z[m] - mu[k * M + m]) / s;
            phi *= std::exp(-0.5 * u * u) / (s * std::sqrt(2.0 * M_PI));
        }
        acc += pi[k] * phi;
    }
    return acc;
}

MixtureParams<float> random_params(Index N, int K, int M, Rng& rng) {
    MixtureParams<float> p;
    p.K = K;
    p.M = M;
    ArrayX<float> pi(N * K);
    for (Index n = 0; n < N; ++n) {
        double s = 0.0;
        for (int k = 0; k < K; ++k) {
            pi[n * K + k] = static_cast<float>(rng.uniform(0.05, 1.0));
            s += pi[n * K + k];
        }
        for (int k = 0; k < K; ++k) pi[n * K + k] = static_cast<float>(pi[n * K + k] / s);
    }
    p.pi = Tensor<float>({N, K}, std::move(pi));
    p.mu = random_tensor<float>({N, static_cast<Index>(K) * M}, rng, false);
    p.sigma = random_tensor_in<float>({N, static_cast<Index>(K) * M}, rng, 0.3, 2.0, false);
    return p;
}

}  // namespace

TEST_CASE("head sizes follow N = K(1+2M): 760 and 360") {
    MdnConfig<float> c9;
    c9.K = 40;
    c9.M = 9;
    CHECK(c9.head_size() == 760);
    MdnConfig<float> c4;
    c4.K = 40;
    c4.M = 4;
    CHECK(c4.head_size() == 360);

    Rng rng(1);
    MdnNet<float> net = MdnNet<float>::make(c4, rng);
    CHECK(net.head.weight.dim(1) == 360);
    // dense trunk: head consumes input + all four layer outputs = 65 values
    CHECK(net.head.weight.dim(0) == 65);
}

TEST_CASE("forward produces normalized pi and strictly positive sigma") {
    MdnConfig<float> cfg;
    cfg.K = 7;
    cfg.M = 3;
    Rng rng(2);
    MdnNet<float> net = MdnNet<float>::make(cfg, rng);
    Tensor<float> y = random_tensor_in<float>({50, 1}, rng, 0.0, 1.0, false);
    MixtureParams<float> p = net.forward(y, false, nullptr);
    for (Index n = 0; n < 50; ++n) {
        double s = 0.0;
        for (int k = 0; k < 7; ++k) s += p.pi.at(n * 7 + k);
        CHECK(std::abs(s - 1.0) < 1e-5);
    }
    CHECK((p.sigma.values() >= 1e-6f).all());
}

TEST_CASE("mixture_density: unit component at the mode = 1/sqrt(2 pi)") {
    Eigen::ArrayXd pi(1), mu(1), sigma(1), z(1);
    pi << 1.0;
    mu << 0.0;
    sigma << 1.0;
    z << 0.0;
    CHECK(mixture_density(pi, mu, sigma, z) == doctest::Approx(0.3989422804).epsilon(1e-9));
}

TEST_CASE("mixture_density: two identical components behave as one") {
    Eigen::ArrayXd pi(2), mu(2), sigma(2), z(1);
    pi << 0.5, 0.5;
    mu << 0.3, 0.3;
    sigma << 0.7, 0.7;
    z << -0.2;
    Eigen::ArrayXd pi1(1), mu1(1), s1(1);
    pi1 << 1.0;
    mu1 << 0.3;
    s1 << 0.7;
    CHECK(mixture_density(pi, mu, sigma, z) ==
          doctest::Approx(mixture_density(pi1, mu1, s1, z)).epsilon(1e-12));
}

TEST_CASE("mixture_density matches the brute-force oracle to 1e-10") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const int K = 1 + static_cast<int>(rng.integer(5));
        const int M = 1 + static_cast<int>(rng.integer(3));
        Eigen::ArrayXd pi(K), mu(K * M), sigma(K * M), z(M);
        double s = 0.0;
        for (int k = 0; k < K; ++k) {
            pi[k] = rng.uniform(0.01, 1.0);
            s += pi[k];
        }
        pi /= s;
        for (int j = 0; j < K * M; ++j) {
            mu[j] = rng.uniform(-2, 2);
            sigma[j] = rng.uniform(0.2, 2.0);
        }
        for (int m = 0; m < M; ++m) z[m] = rng.uniform(-2, 2);
        const double fast = mixture_density(pi, mu, sigma, z);
        const double naive = naive_density(pi, mu, sigma, z);
        CHECK(std::abs(fast - naive) / naive < 1e-10);
    }
    Eigen::ArrayXd pi(1), mu(1), sg(1), z(1);
    pi << 1.0;
    mu << 0.0;
    sg << -1.0;
    z << 0.0;
    CHECK_THROWS_AS(mixture_density(pi, mu, sg, z), NumericError);
}

TEST_CASE("nll_loss: lone unit component at the mode = log(2 pi)/2") {
    MixtureParams<float> p;
    p.K = 1;
    p.M = 1;
    p.pi = Tensor<float>::from({1, 1}, {1.f});
    p.mu = Tensor<float>::from({1, 1}, {0.f});
    p.sigma = Tensor<float>::from({1, 1}, {1.f});
    Tensor<float> z = Tensor<float>::from({1, 1}, {0.f});
    CHECK(nll_loss(p, z).value() == doctest::Approx(0.91893853).epsilon(1e-6));
}

TEST_CASE("nll_loss is invariant under batch duplication") {
    Rng rng(4);
    MixtureParams<float> p = random_params(3, 4, 2, rng);
    Tensor<float> z = random_tensor<float>({3, 2}, rng, false);
    const double base = nll_loss(p, z).value();

    // duplicate every row
    MixtureParams<float> p2;
    p2.K = 4;
    p2.M = 2;
    auto dup = [](const Tensor<float>& t) {
        ArrayX<float> v(t.size() * 2);
        const Index cols = t.dim(1);
        for (Index n = 0; n < t.dim(0); ++n)
            for (int rep = 0; rep < 2; ++rep)
                v.segment((n * 2 + rep) * cols, cols) = t.values().segment(n * cols, cols);
        return Tensor<float>({t.dim(0) * 2, cols}, std::move(v));
    };
    p2.pi = dup(p.pi);
    p2.mu = dup(p.mu);
    p2.sigma = dup(p.sigma);
    CHECK(nll_loss(p2, dup(z)).value() == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("nll_loss matches the naive oracle where the naive path is representable") {
    Rng rng(5);
    for (int rep = 0; rep < 30; ++rep) {
        const Index N = 4;
        const int K = 1 + static_cast<int>(rng.integer(5));
        const int M = 1 + static_cast<int>(rng.integer(3));
        MixtureParams<float> p = random_params(N, K, M, rng);
        Tensor<float> z = random_tensor<float>({N, M}, rng, false);
        double naive_acc = 0.0;
        bool representable = true;
        for (Index n = 0; n < N; ++n) {
            Eigen::ArrayXd pi, mu, sigma;
            extract_row(p, n, pi, mu, sigma);
            Eigen::ArrayXd zr(M);
            for (int m = 0; m < M; ++m) zr[m] = z.at(n * M + m);
            const double d = naive_density(pi, mu, sigma, zr);
            if (d <= 0.0 || !std::isfinite(d)) representable = false;
            naive_acc -= std::log(d);
        }
        REQUIRE(representable);
        CHECK(nll_loss(p, z).value() ==
              doctest::Approx(naive_acc / 4.0).epsilon(1e-6));
    }
}

TEST_CASE("nll_loss reports density underflow instead of clipping") {
    MixtureParams<float> p;
    p.K = 1;
    p.M = 1;
    p.pi = Tensor<float>::from({1, 1}, {0.f});  // zero weight kills the only component
    p.mu = Tensor<float>::from({1, 1}, {0.f});
    p.sigma = Tensor<float>::from({1, 1}, {1.f});
    Tensor<float> z = Tensor<float>::from({1, 1}, {0.f});
    CHECK_THROWS_AS(nll_loss(p, z), NumericError);
}

TEST_CASE("sample: one-hot component selection and degenerate sigma") {
    Rng rng(6);
    MixtureParams<float> p;
    p.K = 5;
    p.M = 2;
    ArrayX<float> pi = ArrayX<float>::Zero(5);
    pi[3] = 1.f;
    p.pi = Tensor<float>({1, 5}, std::move(pi));
    ArrayX<float> mu = ArrayX<float>::Zero(10);
    mu[3 * 2] = 7.f;
    mu[3 * 2 + 1] = -7.f;
    p.mu = Tensor<float>({1, 10}, std::move(mu));
    p.sigma = Tensor<float>::full({1, 10}, 1e-6f);
    for (int rep = 0; rep < 100; ++rep) {
        Eigen::ArrayXd z = sample(p, 0, rng);
        CHECK(std::abs(z[0] - 7.0) < 5e-6);
        CHECK(std::abs(z[1] + 7.0) < 5e-6);
    }
}

TEST_CASE("sample: 1e5 draws reproduce mixture weights and component means") {
    Rng rng(7);
    MixtureParams<float> p;
    p.K = 2;
    p.M = 1;
    p.pi = Tensor<float>::from({1, 2}, {0.3f, 0.7f});
    p.mu = Tensor<float>::from({1, 2}, {-2.f, 2.f});
    p.sigma = Tensor<float>::from({1, 2}, {0.4f, 0.6f});
    const int n = 100000;
    int count0 = 0;
    double sum0 = 0.0, sum1 = 0.0;
    for (int i = 0; i < n; ++i) {
        Eigen::ArrayXd z = sample(p, 0, rng);
        if (z[0] < 0.0) {
            ++count0;
            sum0 += z[0];
        } else {
            sum1 += z[0];
        }
    }
    const double f0 = double(count0) / n;
    CHECK(std::abs(f0 - 0.3) < 0.01);
    CHECK(std::abs(sum0 / count0 + 2.0) < 3.0 * 0.4 / std::sqrt(double(count0)));
    CHECK(std::abs(sum1 / (n - count0) - 2.0) < 3.0 * 0.6 / std::sqrt(double(n - count0)));
}

TEST_CASE("train_mdn improves validation NLL on the inverted-sine toy") {
    auto data = testing::make_toy_data(2000, 11);
    MdnConfig<float> cfg;
    cfg.K = 20;
    cfg.M = 1;
    cfg.max_epochs = 60;
    cfg.patience = 50;
    cfg.seed = 21;
    auto r = train_mdn(data.y, data.x, cfg);
    REQUIRE(r.history.size() >= 2);
    CHECK(r.history.back().val_nll < r.history.front().val_nll);
    CHECK(r.best_val_nll <= r.history.front().val_nll);
}

TEST_CASE("train_mdn: patience 0 stops after the first non-improving epoch") {
    auto data = testing::make_toy_data(600, 12);
    MdnConfig<float> cfg;
    cfg.K = 4;
    cfg.M = 1;
    cfg.lr = 0.f;  // loss cannot improve after the first epoch
    cfg.patience = 0;
    cfg.max_epochs = 50;
    cfg.seed = 3;
    auto r = train_mdn(data.y, data.x, cfg);
    CHECK(r.history.size() == 2);  // epoch 1 sets the best, epoch 2 fails to improve and stops
}

TEST_CASE("train_mdn is deterministic under a fixed seed") {
    auto data = testing::make_toy_data(600, 13);
    MdnConfig<float> cfg;
    cfg.K = 8;
    cfg.M = 1;
    cfg.max_epochs = 10;
    cfg.seed = 5;
    auto a = train_mdn(data.y, data.x, cfg);
    auto b = train_mdn(data.y, data.x, cfg);
    CHECK(a.history.size() == b.history.size());
    CHECK(a.history.back().val_nll == b.history.back().val_nll);
    CHECK(a.history.back().train_nll == b.history.back().train_nll);
}

TEST_CASE("output-dimension memory guard rejects oversized pixel targets") {
    MdnConfig<float> cfg;
    cfg.K = 40;
    cfg.M = 64 * 64;  // direct-pixel baseline at full resolution
    cfg.max_output_dim = 4096;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.head_size() == 327720);  // N = K(1+2M) with M = 64^2
    cfg.max_output_dim = 1024;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    MdnConfig<float> small;
    small.K = 40;
    small.M = 8 * 8;
    CHECK(small.head_size() == 5160);  // desk-scale 8x8 case
}

TEST_CASE("train_mdn rejects datasets too small to split") {
    auto data = testing::make_toy_data(100, 14);
    MdnConfig<float> cfg;
    cfg.K = 4;
    cfg.M = 1;
    cfg.batch = 128;  // needs >= 256 rows
    CHECK_THROWS_AS(train_mdn(data.y, data.x, cfg), ConfigError);
}

TEST_CASE("multimodality: samples at a tri-branch input beat the linear regressor") {
    auto data = testing::make_toy_data(3000, 15);
    MdnConfig<float> cfg;
    cfg.K = 24;
    cfg.M = 1;
    cfg.max_epochs = 150;
    cfg.patience = 30;
    cfg.seed = 8;
    auto r = train_mdn(data.y, data.x, cfg);

    const double y_star = 0.55;
    const auto branches = testing::toy_branches(y_star);
    REQUIRE(branches.size() == 3);

    Tensor<float> y = Tensor<float>::from({1, 1}, {static_cast<float>(y_star)});
    MixtureParams<float> p = r.net.forward(y, false, nullptr);
    Rng rng(100);
    std::vector<double> samples;
    double mean_dist = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double x = sample(p, 0, rng)[0];
        samples.push_back(x);
        mean_dist += testing::distance_to_nearest(x, branches) / 200.0;
    }

    // >= 2 clusters with centers separated by > 0.3
    auto centers = testing::cluster_centers(samples);
    REQUIRE(centers.size() >= 2);
    double max_sep = 0.0;
    for (std::size_t i = 0; i < centers.size(); ++i)
        for (std::size_t j = i + 1; j < centers.size(); ++j)
            max_sep = std::max(max_sep, std::abs(centers[i] - centers[j]));
    CHECK(max_sep > 0.3);

    // the unimodal least-squares line lands between branches
    auto [a, b] = testing::linear_fit(data.y, data.x);
    const double regressor_dist = testing::distance_to_nearest(a * y_star + b, branches);
    CHECK(mean_dist < regressor_dist);
}
