#pragma once

#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "invdes/checkpoint.hpp"
#include "invdes/nn.hpp"
#include "invdes/optim.hpp"
#include "invdes/rng.hpp"

namespace invdes {

// Mixture density network: four densely connected fully connected layers
// (each layer consumes the concatenation of the network input and every
// previous layer's output), then one mixture head of N = K*(1+2M) neurons
// split into K mixing weights, K*M means and K*M standard deviations.

template <class S>
struct MdnConfig {
    int input_dim = 1;
    int hidden_layers = 4;
    int hidden_width = 16;
    int K = 40;  // mixture components
    int M = 4;   // output dimensionality
    int batch = 128;
    S lr = S(1e-3);
    int patience = 50;
    double val_fraction = 0.1;
    int max_epochs = 800;
    int max_output_dim = 4096;  // memory guard for the direct-pixel baseline
    std::uint64_t seed = 0;

    int head_size() const { return K * (1 + 2 * M); }

    void validate() const {
        if (K < 1 || M < 1) throw ConfigError("mdn: K and M must be >= 1");
        if (input_dim < 1 || hidden_layers < 1 || hidden_width < 1)
            throw ConfigError("mdn: bad architecture");
        if (M > max_output_dim)
            throw ConfigError("mdn: output dimension " + std::to_string(M) +
                              " exceeds the configured cap " + std::to_string(max_output_dim));
        if (batch < 2) throw ConfigError("mdn: batch must be >= 2");
        if (patience < 0 || !(val_fraction > 0.0 && val_fraction < 1.0))
            throw ConfigError("mdn: bad early-stopping settings");
    }
};

/// Per-input mixture description: K weights, K*M means, K*M standard
/// deviations, for a batch of inputs.
template <class S>
struct MixtureParams {
    Tensor<S> pi;     // [N, K]
    Tensor<S> mu;     // [N, K*M]
    Tensor<S> sigma;  // [N, K*M]
    int K = 0, M = 0;

    Index batch() const { return pi.dim(0); }
};

constexpr double kSigmaFloor = 1e-6;

template <class S>
struct MdnNet {
    MdnConfig<S> cfg;
    std::vector<DenseLayer<S>> trunk;
    std::vector<BatchNormLayer<S>> trunk_bn;
    DenseLayer<S> head;

    static MdnNet make(const MdnConfig<S>& cfg, Rng& rng) {
        cfg.validate();
        MdnNet net;
        net.cfg = cfg;
        Index in = cfg.input_dim;
        for (int i = 0; i < cfg.hidden_layers; ++i) {
            net.trunk.push_back(DenseLayer<S>::make(in, cfg.hidden_width, rng));
            net.trunk_bn.push_back(BatchNormLayer<S>::make(cfg.hidden_width));
            in += cfg.hidden_width;  // dense connectivity
        }
        net.head = DenseLayer<S>::make(in, cfg.head_size(), rng);
        return net;
    }

    /// Trunk + mixture head. Mixing logits pass through the max-shifted
    /// exponential normalization (softmax); sigma = ELU(a) + 1 + 1e-6.
    MixtureParams<S> forward(const Tensor<S>& y, bool training, Tape<S>* tape) {
        if (y.rank() != 2 || y.dim(1) != cfg.input_dim)
            throw ShapeError("mdn: expected [N," + std::to_string(cfg.input_dim) + "] input, got " +
                             shape_str(y.shape()));
        std::vector<Tensor<S>> feats = {y};
        Tensor<S> h = y;
        for (int i = 0; i < cfg.hidden_layers; ++i) {
            Tensor<S> in = feats.size() == 1 ? feats[0] : concat_cols(feats, tape);
            h = trunk[static_cast<std::size_t>(i)].forward(in, tape);
            h = trunk_bn[static_cast<std::size_t>(i)].forward(h, training, tape);
            h = relu(h, tape);
            feats.push_back(h);
        }
        Tensor<S> head_in = concat_cols(feats, tape);
        Tensor<S> raw = head.forward(head_in, tape);

        const Index K = cfg.K, M = cfg.M;
        MixtureParams<S> p;
        p.K = static_cast<int>(K);
        p.M = static_cast<int>(M);
        p.pi = softmax_rows(slice_cols(raw, 0, K, tape), tape);
        p.mu = slice_cols(raw, K, K * M, tape);
        Tensor<S> sig_pre = slice_cols(raw, K + K * M, K * M, tape);
        p.sigma = affine(elu(sig_pre, S(1), tape), S(1), S(1) + static_cast<S>(kSigmaFloor), tape);
        return p;
    }

    std::vector<Tensor<S>> trainable_params() {
        std::vector<Tensor<S>> p;
        for (int i = 0; i < cfg.hidden_layers; ++i) {
            p.push_back(trunk[static_cast<std::size_t>(i)].weight);
            p.push_back(trunk[static_cast<std::size_t>(i)].bias);
            p.push_back(trunk_bn[static_cast<std::size_t>(i)].gamma);
            p.push_back(trunk_bn[static_cast<std::size_t>(i)].beta);
        }
        p.push_back(head.weight);
        p.push_back(head.bias);
        return p;
    }

    std::vector<NamedArray> named_arrays(const std::string& prefix = "mdn") const {
        std::vector<NamedArray> out;
        for (int i = 0; i < cfg.hidden_layers; ++i) {
            const std::string base = prefix + ".dense" + std::to_string(i + 1);
            out.push_back(to_named(base + ".weight", trunk[static_cast<std::size_t>(i)].weight));
            out.push_back(to_named(base + ".bias", trunk[static_cast<std::size_t>(i)].bias));
            const auto& b = trunk_bn[static_cast<std::size_t>(i)];
            out.push_back(to_named(base + ".bn.gamma", b.gamma));
            out.push_back(to_named(base + ".bn.beta", b.beta));
            NamedArray rm;
            rm.name = base + ".bn.running_mean";
            rm.shape = {b.stats.mean.size()};
            for (Index j = 0; j < b.stats.mean.size(); ++j)
                rm.data.push_back(static_cast<float>(b.stats.mean[j]));
            out.push_back(std::move(rm));
            NamedArray rv;
            rv.name = base + ".bn.running_var";
            rv.shape = {b.stats.var.size()};
            for (Index j = 0; j < b.stats.var.size(); ++j)
                rv.data.push_back(static_cast<float>(b.stats.var[j]));
            out.push_back(std::move(rv));
        }
        out.push_back(to_named(prefix + ".head.weight", head.weight));
        out.push_back(to_named(prefix + ".head.bias", head.bias));
        return out;
    }

    void load_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix = "mdn") {
        auto find = [&](const std::string& name) -> const NamedArray& {
            for (const auto& a : arrays)
                if (a.name == name) return a;
            throw IoError("checkpoint: missing tensor '" + name + "'");
        };
        for (int i = 0; i < cfg.hidden_layers; ++i) {
            const std::string base = prefix + ".dense" + std::to_string(i + 1);
            from_named(find(base + ".weight"), trunk[static_cast<std::size_t>(i)].weight);
            from_named(find(base + ".bias"), trunk[static_cast<std::size_t>(i)].bias);
            auto& b = trunk_bn[static_cast<std::size_t>(i)];
            from_named(find(base + ".bn.gamma"), b.gamma);
            from_named(find(base + ".bn.beta"), b.beta);
            const auto& rm = find(base + ".bn.running_mean");
            const auto& rv = find(base + ".bn.running_var");
            for (Index j = 0; j < b.stats.mean.size(); ++j) {
                b.stats.mean[j] = static_cast<S>(rm.data[static_cast<std::size_t>(j)]);
                b.stats.var[j] = static_cast<S>(rv.data[static_cast<std::size_t>(j)]);
            }
        }
        from_named(find(prefix + ".head.weight"), head.weight);
        from_named(find(prefix + ".head.bias"), head.bias);
    }
};

// ---------------------------------------------------------------------------
// Density & loss
// ---------------------------------------------------------------------------

/// P(z) = sum_k pi_k prod_m Normal(z_m; mu_km, sigma_km), evaluated in 64-bit
/// through the log-sum-exp path.
inline double mixture_density(const Eigen::ArrayXd& pi, const Eigen::ArrayXd& mu,
                              const Eigen::ArrayXd& sigma, const Eigen::ArrayXd& z) {
    const Eigen::Index K = pi.size();
    const Eigen::Index M = z.size();
    if (mu.size() != K * M || sigma.size() != K * M)
        throw ShapeError("mixture_density: parameter sizes disagree");
    if ((sigma <= 0.0).any()) throw NumericError("mixture_density: sigma <= 0");
    constexpr double kHalfLog2Pi = 0.9189385332046727;  // log(2*pi)/2
    double max_a = -std::numeric_limits<double>::infinity();
    Eigen::ArrayXd a(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        double logphi = 0.0;
        for (Eigen::Index m = 0; m < M; ++m) {
            const double s = sigma[k * M + m];
            const double u = (z[m] - mu[k * M + m]) / s;
            logphi += -0.5 * u * u - std::log(s) - kHalfLog2Pi;
        }
        a[k] = (pi[k] > 0.0 ? std::log(pi[k]) : -std::numeric_limits<double>::infinity()) + logphi;
        max_a = std::max(max_a, a[k]);
    }
    if (!std::isfinite(max_a)) return 0.0;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) acc += std::exp(a[k] - max_a);
    return std::exp(max_a + std::log(acc));
}

/// Extracts row n of a MixtureParams batch as 64-bit arrays.
template <class S>
void extract_row(const MixtureParams<S>& p, Index n, Eigen::ArrayXd& pi, Eigen::ArrayXd& mu,
                 Eigen::ArrayXd& sigma) {
    const Index K = p.K, KM = static_cast<Index>(p.K) * p.M;
    pi.resize(K);
    mu.resize(KM);
    sigma.resize(KM);
    for (Index k = 0; k < K; ++k) pi[k] = static_cast<double>(p.pi.at(n * K + k));
    for (Index j = 0; j < KM; ++j) {
        mu[j] = static_cast<double>(p.mu.at(n * KM + j));
        sigma[j] = static_cast<double>(p.sigma.at(n * KM + j));
    }
}

/// Negative mean log-likelihood of z under the per-row mixtures, computed in
/// log space with the max-shift stabilization. Differentiable w.r.t. pi, mu
/// and sigma (fused backward). The target batch is a constant.
template <class S>
Tensor<S> nll_loss(const MixtureParams<S>& params, const Tensor<S>& z, std::type_identity_t<Tape<S>*> tape = nullptr) {
    const Index N = params.batch();
    const Index K = params.K, M = params.M, KM = static_cast<Index>(params.K) * params.M;
    if (z.rank() != 2 || z.dim(0) != N || z.dim(1) != M)
        throw ShapeError("nll_loss: target batch " + shape_str(z.shape()) + " does not match params");
    if ((params.sigma.values() <= S(0)).any()) throw NumericError("nll_loss: sigma <= 0");

    constexpr double kHalfLog2Pi = 0.9189385332046727;
    // saved for the backward rule
    auto logphi = std::make_shared<Eigen::ArrayXXd>(N, K);
    auto lse = std::make_shared<Eigen::ArrayXd>(N);

    double loss_acc = 0.0;
    for (Index n = 0; n < N; ++n) {
        double max_a = -std::numeric_limits<double>::infinity();
        Eigen::ArrayXd a(K);
        for (Index k = 0; k < K; ++k) {
            double lp = 0.0;
            for (Index m = 0; m < M; ++m) {
                const double s = static_cast<double>(params.sigma.at(n * KM + k * M + m));
                const double u =
                    (static_cast<double>(z.at(n * M + m)) -
                     static_cast<double>(params.mu.at(n * KM + k * M + m))) / s;
                lp += -0.5 * u * u - std::log(s) - kHalfLog2Pi;
            }
            (*logphi)(n, k) = lp;
            const double pk = static_cast<double>(params.pi.at(n * K + k));
            a[k] = (pk > 0.0 ? std::log(pk) : -std::numeric_limits<double>::infinity()) + lp;
            max_a = std::max(max_a, a[k]);
        }
        if (!std::isfinite(max_a))
            throw NumericError("nll_loss: density underflowed to zero at row " + std::to_string(n));
        double acc = 0.0;
        for (Index k = 0; k < K; ++k) acc += std::exp(a[k] - max_a);
        (*lse)[n] = max_a + std::log(acc);
        loss_acc -= (*lse)[n];
    }
    ArrayX<S> y(1);
    y[0] = static_cast<S>(loss_acc / static_cast<double>(N));

    bool needs = params.pi.grad_path() || params.mu.grad_path() || params.sigma.grad_path();
    Tensor<S> out = detail::make_output<S>({1}, std::move(y), tape, needs, "nll_loss");
    if (tape == nullptr || !needs) return out;

    MixtureParams<S> p_cap = params;
    Tensor<S> z_cap = z, out_cap = out;
    tape->record([p_cap, z_cap, out_cap, logphi, lse, N, K, M, KM]() mutable {
        const double gscale = static_cast<double>(out_cap.grad()[0]) / static_cast<double>(N);
        for (Index n = 0; n < N; ++n) {
            for (Index k = 0; k < K; ++k) {
                const double pk = static_cast<double>(p_cap.pi.at(n * K + k));
                const double resp =
                    pk > 0.0 ? pk * std::exp((*logphi)(n, k) - (*lse)[n]) : 0.0;
                if (p_cap.pi.grad_path())
                    p_cap.pi.grad()[n * K + k] -=
                        static_cast<S>(gscale * std::exp((*logphi)(n, k) - (*lse)[n]));
                if (resp == 0.0) continue;
                for (Index m = 0; m < M; ++m) {
                    const Index j = n * KM + k * M + m;
                    const double s = static_cast<double>(p_cap.sigma.at(j));
                    const double diff =
                        static_cast<double>(z_cap.at(n * M + m)) -
                        static_cast<double>(p_cap.mu.at(j));
                    if (p_cap.mu.grad_path())
                        p_cap.mu.grad()[j] -= static_cast<S>(gscale * resp * diff / (s * s));
                    if (p_cap.sigma.grad_path())
                        p_cap.sigma.grad()[j] -=
                            static_cast<S>(gscale * resp * (diff * diff / (s * s * s) - 1.0 / s));
                }
            }
        }
    });
    return out;
}

/// Draws one latent vector from row `row`: pick component k by its mixing
/// coefficient, then sample each dimension from Normal(mu_km, sigma_km).
template <class S>
Eigen::ArrayXd sample(const MixtureParams<S>& p, Index row, Rng& rng) {
    const Index K = p.K, M = p.M, KM = static_cast<Index>(p.K) * p.M;
    const double u = rng.uniform();
    double cum = 0.0;
    Index k = K - 1;
    for (Index i = 0; i < K; ++i) {
        cum += static_cast<double>(p.pi.at(row * K + i));
        if (u < cum) {
            k = i;
            break;
        }
    }
    Eigen::ArrayXd z(M);
    for (Index m = 0; m < M; ++m) {
        const Index j = row * KM + k * M + m;
        z[m] = static_cast<double>(p.mu.at(j)) + static_cast<double>(p.sigma.at(j)) * rng.normal();
    }
    return z;
}

// ---------------------------------------------------------------------------
// Training with validation-based early stopping
// ---------------------------------------------------------------------------

struct MdnHistoryRow {
    int epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;
};

template <class S>
struct MdnTrainResult {
    MdnNet<S> net;
    std::vector<MdnHistoryRow> history;
    int best_epoch = 0;
    double best_val_nll = 0.0;
};

/// Adam on the mixture NLL with a held-out validation split; stops when the
/// validation loss fails to improve for `patience` consecutive epochs and
/// returns the best-validation weights. `on_checkpoint` fires whenever the
/// best snapshot updates.
template <class S>
MdnTrainResult<S> train_mdn(
    const RowMajorMat<S>& inputs, const RowMajorMat<S>& targets, const MdnConfig<S>& cfg,
    const std::type_identity_t<std::function<void(const MdnNet<S>&, int epoch)>>& on_checkpoint = nullptr) {
    detail::tune_allocator();
    cfg.validate();
    const Index N = inputs.rows();
    if (targets.rows() != N || inputs.cols() != cfg.input_dim || targets.cols() != cfg.M)
        throw ShapeError("train_mdn: data shapes do not match config");
    if (N < 2 * cfg.batch)
        throw ConfigError("train_mdn: dataset too small to split (need >= 2x batch = " +
                          std::to_string(2 * cfg.batch) + ", got " + std::to_string(N) + ")");

    Rng split_rng(derive_seed(cfg.seed, "mdn-split"));
    std::vector<Index> idx(static_cast<std::size_t>(N));
    std::iota(idx.begin(), idx.end(), Index(0));
    split_rng.shuffle(idx);
    const Index val_n = std::max<Index>(1, static_cast<Index>(std::lround(cfg.val_fraction * static_cast<double>(N))));
    std::vector<Index> val_idx(idx.begin(), idx.begin() + val_n);
    std::vector<Index> train_idx(idx.begin() + val_n, idx.end());

    MdnTrainResult<S> r;
    Rng init_rng(derive_seed(cfg.seed, "mdn-init"));
    r.net = MdnNet<S>::make(cfg, init_rng);
    auto params = r.net.trainable_params();
    AdamState<S> adam = AdamState<S>::make(cfg.lr);

    auto gather = [&](const std::vector<Index>& rows, Index from, Index count, const RowMajorMat<S>& m) {
        ArrayX<S> v(count * m.cols());
        for (Index i = 0; i < count; ++i)
            for (Index c = 0; c < m.cols(); ++c) v[i * m.cols() + c] = m(rows[static_cast<std::size_t>(from + i)], c);
        return Tensor<S>({count, m.cols()}, std::move(v));
    };

    auto eval_nll = [&](const std::vector<Index>& rows) {
        double acc = 0.0;
        Index done = 0;
        while (done < static_cast<Index>(rows.size())) {
            const Index b = std::min<Index>(cfg.batch, static_cast<Index>(rows.size()) - done);
            Tensor<S> y = gather(rows, done, b, inputs);
            Tensor<S> z = gather(rows, done, b, targets);
            MixtureParams<S> mp = r.net.forward(y, /*training=*/false, nullptr);
            acc += static_cast<double>(nll_loss(mp, z, nullptr).value()) * static_cast<double>(b);
            done += b;
        }
        return acc / static_cast<double>(rows.size());
    };

    std::vector<NamedArray> best_snapshot = r.net.named_arrays();
    r.best_val_nll = std::numeric_limits<double>::infinity();
    int bad = 0;
    Rng epoch_rng(derive_seed(cfg.seed, "mdn-epochs"));
    Tape<S> tape;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        epoch_rng.shuffle(train_idx);
        double train_acc = 0.0;
        Index seen = 0;
        for (Index done = 0; done < static_cast<Index>(train_idx.size());) {
            const Index b = std::min<Index>(cfg.batch, static_cast<Index>(train_idx.size()) - done);
            if (b < 2) break;  // BN needs at least two rows
            Tensor<S> y = gather(train_idx, done, b, inputs);
            Tensor<S> z = gather(train_idx, done, b, targets);
            done += b;
            tape.reset();
            MixtureParams<S> mp = r.net.forward(y, /*training=*/true, &tape);
            Tensor<S> loss = nll_loss(mp, z, &tape);
            if (!std::isfinite(static_cast<double>(loss.value())))
                throw NumericError("train_mdn: NaN loss at epoch " + std::to_string(epoch));
            backward(tape, loss);
            adam_step(adam, params);
            train_acc += static_cast<double>(loss.value()) * static_cast<double>(b);
            seen += b;
        }
        MdnHistoryRow row;
        row.epoch = epoch;
        row.train_nll = train_acc / static_cast<double>(seen);
        row.val_nll = eval_nll(val_idx);
        r.history.push_back(row);

        if (row.val_nll < r.best_val_nll) {
            r.best_val_nll = row.val_nll;
            r.best_epoch = epoch;
            best_snapshot = r.net.named_arrays();
            bad = 0;
            if (on_checkpoint) on_checkpoint(r.net, epoch);
        } else {
            ++bad;
        }
        if (bad >= std::max(cfg.patience, 1)) break;
    }
    r.net.load_arrays(best_snapshot);
    return r;
}

}  // namespace invdes
