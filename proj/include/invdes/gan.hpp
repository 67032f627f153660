#pragma once

#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "invdes/checkpoint.hpp"
#include "invdes/microstructure.hpp"
#include "invdes/nn.hpp"
#include "invdes/optim.hpp"

namespace invdes {

/// M-dimensional design representation entering the generator as a 1-channel
/// s x s feature map (M = s*s).
struct LatentVec {
    int side = 2;
    Eigen::ArrayXf values;  // side*side, row-major

    int dimension() const { return side * side; }

    void validate() const {
        if (side < 1 || values.size() != static_cast<long>(side) * side)
            throw ShapeError("latent: side/value mismatch");
    }
};

/// Clamp with pass-through gradient inside (lo, hi). Keeps discriminator
/// scores strictly inside the open unit interval even when the sigmoid
/// saturates in 32-bit.
template <class S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi, std::type_identity_t<Tape<S>*> tape = nullptr) {
    ArrayX<S> y = x.values().max(lo).min(hi);
    Tensor<S> out = detail::make_output(x.shape(), std::move(y), tape, x.grad_path(), "clamp");
    if (tape && x.grad_path()) {
        Tensor<S> x_cap = x, out_cap = out;
        tape->record([x_cap, out_cap, lo, hi]() mutable {
            x_cap.grad() += (x_cap.values() > lo && x_cap.values() < hi)
                                .select(out_cap.grad(), S(0));
        });
    }
    return out;
}

template <class S>
struct GanConfig {
    int latent_side = 2;
    int image_side = 64;  // must equal 32 * latent_side
    int batch = 64;
    int steps = 2000;
    S lr = S(2e-4);
    S adam_beta1 = S(0.5);
    S adam_beta2 = S(0.999);
    S collapse_weight = S(0.1);
    S style_weight = S(0.1);
    S collapse_tau = S(0.1);
    int style_layer = 2;  // discriminator layer whose features feed the style loss
    int checkpoint_every = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (image_side != 32 * latent_side)
            throw ConfigError("gan: image side must be 32 x latent side (five stride-2 layers)");
        if (batch < 2) throw ConfigError("gan: batch must be >= 2");
        if (steps < 0) throw ConfigError("gan: negative step count");
        if (style_layer < 1 || style_layer > 4) throw ConfigError("gan: style layer must be 1..4");
    }
};

// ---------------------------------------------------------------------------
// Generator: five stride-2 deconvolution layers (filters 128, 64, 32, 16, 1),
// BN+ReLU after layers 1-4, tanh output. Maps [N,1,s,s] -> [N,1,32s,32s].
// ---------------------------------------------------------------------------
template <class S>
struct GeneratorNet {
    static constexpr int kFilters[5] = {128, 64, 32, 16, 1};

    int latent_side = 2;
    std::vector<DeconvLayer<S>> deconv;  // 5 layers
    std::vector<BatchNormLayer<S>> bn;   // after layers 1-4

    static GeneratorNet make(int latent_side, Rng& rng) {
        GeneratorNet g;
        g.latent_side = latent_side;
        Index in_c = 1;
        for (int i = 0; i < 5; ++i) {
            const bool last = (i == 4);
            g.deconv.push_back(DeconvLayer<S>::make(in_c, kFilters[i], 4, 2, 1, last, rng));
            if (!last) g.bn.push_back(BatchNormLayer<S>::make(kFilters[i]));
            in_c = kFilters[i];
        }
        return g;
    }

    int image_side() const { return 32 * latent_side; }

    Tensor<S> forward(const Tensor<S>& z, bool training, Tape<S>* tape) {
        if (z.rank() != 4 || z.dim(1) != 1 || z.dim(2) != latent_side || z.dim(3) != latent_side)
            throw ShapeError("generator: latent side mismatch, got " + shape_str(z.shape()) +
                             " for side " + std::to_string(latent_side));
        Tensor<S> h = z;
        for (int i = 0; i < 4; ++i) {
            h = deconv[static_cast<std::size_t>(i)].forward(h, tape);
            h = bn[static_cast<std::size_t>(i)].forward(h, training, tape);
            h = relu(h, tape);
        }
        h = deconv[4].forward(h, tape);
        return tanh(h, tape);
    }

    std::vector<Tensor<S>> trainable_params() {
        std::vector<Tensor<S>> p;
        for (int i = 0; i < 5; ++i) {
            p.push_back(deconv[static_cast<std::size_t>(i)].kernels);
            if (deconv[static_cast<std::size_t>(i)].use_bias)
                p.push_back(deconv[static_cast<std::size_t>(i)].bias);
            if (i < 4) {
                p.push_back(bn[static_cast<std::size_t>(i)].gamma);
                p.push_back(bn[static_cast<std::size_t>(i)].beta);
            }
        }
        return p;
    }

    std::vector<NamedArray> named_arrays(const std::string& prefix) const {
        std::vector<NamedArray> out;
        for (int i = 0; i < 5; ++i) {
            const std::string base = prefix + ".deconv" + std::to_string(i + 1);
            out.push_back(to_named(base + ".kernels", deconv[static_cast<std::size_t>(i)].kernels));
            if (deconv[static_cast<std::size_t>(i)].use_bias)
                out.push_back(to_named(base + ".bias", deconv[static_cast<std::size_t>(i)].bias));
            if (i < 4) {
                const auto& b = bn[static_cast<std::size_t>(i)];
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
        }
        return out;
    }

    void load_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix) {
        auto find = [&](const std::string& name) -> const NamedArray& {
            for (const auto& a : arrays)
                if (a.name == name) return a;
            throw IoError("checkpoint: missing tensor '" + name + "'");
        };
        for (int i = 0; i < 5; ++i) {
            const std::string base = prefix + ".deconv" + std::to_string(i + 1);
            from_named(find(base + ".kernels"), deconv[static_cast<std::size_t>(i)].kernels);
            if (deconv[static_cast<std::size_t>(i)].use_bias)
                from_named(find(base + ".bias"), deconv[static_cast<std::size_t>(i)].bias);
            if (i < 4) {
                auto& b = bn[static_cast<std::size_t>(i)];
                from_named(find(base + ".bn.gamma"), b.gamma);
                from_named(find(base + ".bn.beta"), b.beta);
                const auto& rm = find(base + ".bn.running_mean");
                const auto& rv = find(base + ".bn.running_var");
                for (Index j = 0; j < b.stats.mean.size(); ++j) {
                    b.stats.mean[j] = static_cast<S>(rm.data[static_cast<std::size_t>(j)]);
                    b.stats.var[j] = static_cast<S>(rv.data[static_cast<std::size_t>(j)]);
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Discriminator: five convolution layers (filters 16, 32, 64, 128, 1),
// BN+LeakyReLU(0.2) after layers 1-4; the final convolution's kernel spans
// the whole feature map and a sigmoid produces one realness score per image.
// ---------------------------------------------------------------------------
template <class S>
struct DiscriminatorNet {
    static constexpr int kFilters[5] = {16, 32, 64, 128, 1};
    static constexpr S kLeakySlope = S(0.2);
    static constexpr S kScoreEps = S(1e-7);

    int image_side = 64;
    std::vector<ConvLayer<S>> conv;
    std::vector<BatchNormLayer<S>> bn;

    static DiscriminatorNet make(int image_side, Rng& rng) {
        if (image_side % 16 != 0 || image_side < 32)
            throw ConfigError("discriminator: image side must be a multiple of 16 and >= 32");
        DiscriminatorNet d;
        d.image_side = image_side;
        Index in_c = 1;
        for (int i = 0; i < 4; ++i) {
            d.conv.push_back(ConvLayer<S>::make(in_c, kFilters[i], 4, 2, 1, false, rng));
            d.bn.push_back(BatchNormLayer<S>::make(kFilters[i]));
            in_c = kFilters[i];
        }
        // final kernel is the size of its input feature map
        const Index final_k = image_side / 16;
        d.conv.push_back(ConvLayer<S>::make(in_c, 1, final_k, 1, 0, true, rng));
        return d;
    }

    /// Returns per-image scores [N,1] in (0,1). When feature_tap is in 1..4,
    /// stores that layer's post-activation feature map in *tap.
    Tensor<S> forward(const Tensor<S>& x, bool training, Tape<S>* tape, int feature_tap = 0,
                      Tensor<S>* tap = nullptr) {
        if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != image_side || x.dim(3) != image_side)
            throw ShapeError("discriminator: expected [N,1," + std::to_string(image_side) + "," +
                             std::to_string(image_side) + "], got " + shape_str(x.shape()));
        Tensor<S> h = x;
        for (int i = 0; i < 4; ++i) {
            h = conv[static_cast<std::size_t>(i)].forward(h, tape);
            h = bn[static_cast<std::size_t>(i)].forward(h, training, tape);
            h = leaky_relu(h, kLeakySlope, tape);
            if (feature_tap == i + 1 && tap != nullptr) *tap = h;
        }
        h = conv[4].forward(h, tape);
        h = sigmoid(h, tape);
        h = clamp(h, kScoreEps, S(1) - kScoreEps, tape);
        return reshape(h, {h.dim(0), Index(1)}, tape);
    }

    std::vector<Tensor<S>> trainable_params() {
        std::vector<Tensor<S>> p;
        for (int i = 0; i < 5; ++i) {
            p.push_back(conv[static_cast<std::size_t>(i)].kernels);
            if (conv[static_cast<std::size_t>(i)].use_bias)
                p.push_back(conv[static_cast<std::size_t>(i)].bias);
            if (i < 4) {
                p.push_back(bn[static_cast<std::size_t>(i)].gamma);
                p.push_back(bn[static_cast<std::size_t>(i)].beta);
            }
        }
        return p;
    }

    std::vector<NamedArray> named_arrays(const std::string& prefix) const {
        std::vector<NamedArray> out;
        for (int i = 0; i < 5; ++i) {
            const std::string base = prefix + ".conv" + std::to_string(i + 1);
            out.push_back(to_named(base + ".kernels", conv[static_cast<std::size_t>(i)].kernels));
            if (conv[static_cast<std::size_t>(i)].use_bias)
                out.push_back(to_named(base + ".bias", conv[static_cast<std::size_t>(i)].bias));
            if (i < 4) {
                const auto& b = bn[static_cast<std::size_t>(i)];
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
        }
        return out;
    }

    void load_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix) {
        auto find = [&](const std::string& name) -> const NamedArray& {
            for (const auto& a : arrays)
                if (a.name == name) return a;
            throw IoError("checkpoint: missing tensor '" + name + "'");
        };
        for (int i = 0; i < 5; ++i) {
            const std::string base = prefix + ".conv" + std::to_string(i + 1);
            from_named(find(base + ".kernels"), conv[static_cast<std::size_t>(i)].kernels);
            if (conv[static_cast<std::size_t>(i)].use_bias)
                from_named(find(base + ".bias"), conv[static_cast<std::size_t>(i)].bias);
            if (i < 4) {
                auto& b = bn[static_cast<std::size_t>(i)];
                from_named(find(base + ".bn.gamma"), b.gamma);
                from_named(find(base + ".bn.beta"), b.beta);
                const auto& rm = find(base + ".bn.running_mean");
                const auto& rv = find(base + ".bn.running_var");
                for (Index j = 0; j < b.stats.mean.size(); ++j) {
                    b.stats.mean[j] = static_cast<S>(rm.data[static_cast<std::size_t>(j)]);
                    b.stats.var[j] = static_cast<S>(rv.data[static_cast<std::size_t>(j)]);
                }
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// loss_D = -[mean log d_real + mean log(1 - d_fake)]
/// loss_G = -mean log d_fake (non-saturating form)
/// Logs are eps-clamped. The minimax value of the game is -loss_D.
template <class S>
std::pair<Tensor<S>, Tensor<S>> adversarial_losses(const Tensor<S>& d_real,
                                                   const Tensor<S>& d_fake,
                                                   std::type_identity_t<Tape<S>*> tape = nullptr, S eps = S(1e-7)) {
    if ((d_real.values() <= S(0)).any() || (d_real.values() >= S(1)).any() ||
        (d_fake.values() <= S(0)).any() || (d_fake.values() >= S(1)).any())
        throw NumericError("adversarial_losses: scores outside (0,1)");
    Tensor<S> log_real = mean(log_clamped(d_real, eps, tape), tape);
    Tensor<S> log_one_minus_fake =
        mean(log_clamped(affine(d_fake, S(-1), S(1), tape), eps, tape), tape);
    Tensor<S> loss_d = affine(add(log_real, log_one_minus_fake, tape), S(-1), S(0), tape);
    Tensor<S> loss_g = affine(mean(log_clamped(d_fake, eps, tape), tape), S(-1), S(0), tape);
    return {loss_d, loss_g};
}

/// Mode-collapse penalty: mean over image pairs of
/// relu(tau - |x_i - x_j|_1 / |z_i - z_j|_1). Latents are constants. Pairs of
/// coincident latents contribute zero.
template <class S>
Tensor<S> collapse_loss(const Tensor<S>& images, const Tensor<S>& latents, S tau,
                        std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (images.rank() < 2 || latents.rank() < 2 || images.dim(0) != latents.dim(0))
        throw ShapeError("collapse_loss: batch mismatch");
    const Index N = images.dim(0);
    if (N < 2) throw ShapeError("collapse_loss: needs batch >= 2");
    const Index D = images.size() / N;
    const Index M = latents.size() / N;
    const Index pairs = N * (N - 1) / 2;

    // forward: ratios and gate per pair
    std::vector<double> inv_zdist(static_cast<std::size_t>(pairs));
    std::vector<char> active(static_cast<std::size_t>(pairs));
    double loss_acc = 0.0;
    Index p = 0;
    for (Index i = 0; i < N; ++i) {
        for (Index j = i + 1; j < N; ++j, ++p) {
            const double e = (latents.values().segment(i * M, M).template cast<double>() -
                              latents.values().segment(j * M, M).template cast<double>())
                                 .abs()
                                 .sum();
            if (e < 1e-12) {
                inv_zdist[static_cast<std::size_t>(p)] = 0.0;
                active[static_cast<std::size_t>(p)] = 0;
                continue;
            }
            const double d = (images.values().segment(i * D, D).template cast<double>() -
                              images.values().segment(j * D, D).template cast<double>())
                                 .abs()
                                 .sum();
            const double margin = static_cast<double>(tau) - d / e;
            inv_zdist[static_cast<std::size_t>(p)] = 1.0 / e;
            active[static_cast<std::size_t>(p)] = margin > 0.0 ? 1 : 0;
            if (margin > 0.0) loss_acc += margin;
        }
    }
    ArrayX<S> y(1);
    y[0] = static_cast<S>(loss_acc / static_cast<double>(pairs));
    Tensor<S> out = detail::make_output<S>({1}, std::move(y), tape, images.grad_path(), "collapse_loss");
    if (tape == nullptr || !images.grad_path()) return out;

    Tensor<S> img_cap = images, out_cap = out;
    auto inv_ptr = std::make_shared<std::vector<double>>(std::move(inv_zdist));
    auto act_ptr = std::make_shared<std::vector<char>>(std::move(active));
    tape->record([img_cap, out_cap, inv_ptr, act_ptr, N, D, pairs]() mutable {
        const S g = out_cap.grad()[0] / static_cast<S>(pairs);
        Index p = 0;
        for (Index i = 0; i < N; ++i) {
            for (Index j = i + 1; j < N; ++j, ++p) {
                if (!(*act_ptr)[static_cast<std::size_t>(p)]) continue;
                const S coef = -g * static_cast<S>((*inv_ptr)[static_cast<std::size_t>(p)]);
                auto xi = img_cap.values().segment(i * D, D);
                auto xj = img_cap.values().segment(j * D, D);
                ArrayX<S> sgn = (xi - xj).sign();
                img_cap.grad().segment(i * D, D) += coef * sgn;
                img_cap.grad().segment(j * D, D) -= coef * sgn;
            }
        }
    });
    return out;
}

/// Batch-mean Gram matrix of [N,C,H,W] features, normalized by C*H*W.
template <class S>
Tensor<S> mean_gram(const Tensor<S>& features, std::type_identity_t<Tape<S>*> tape = nullptr) {
    const Index N = features.dim(0), C = features.dim(1);
    const Index hw = features.dim(2) * features.dim(3);
    Tensor<S> acc;
    for (Index i = 0; i < N; ++i) {
        Tensor<S> f = select_image(features, i, tape);
        Tensor<S> g = matmul(f, f, tape, false, true);  // [C, C]
        acc = acc.defined() ? add(acc, g, tape) : g;
    }
    return affine(acc, S(1) / static_cast<S>(N * C * hw), S(0), tape);
}

/// Style penalty: mean squared difference between the batch-mean Gram
/// matrices of real and fake features from the designated discriminator
/// layer. The real-side Gram is a constant.
template <class S>
Tensor<S> style_loss(const Tensor<S>& fake_features, const Tensor<S>& real_features,
                     std::type_identity_t<Tape<S>*> tape = nullptr) {
    if (fake_features.shape() != real_features.shape())
        throw ShapeError("style_loss: feature shape mismatch");
    Tensor<S> gram_fake = mean_gram(fake_features, tape);
    Tensor<S> gram_real = mean_gram(real_features.detach(), nullptr);
    Tensor<S> diff = sub(gram_fake, gram_real, tape);
    return mean(mul(diff, diff, tape), tape);
}

/// Combined wrapper returning (collapse_loss, style_loss) for a generated
/// batch, its latents, and real/fake feature maps from the discriminator.
template <class S>
std::pair<Tensor<S>, Tensor<S>> auxiliary_losses(const Tensor<S>& fake_images,
                                                 const Tensor<S>& latents,
                                                 const Tensor<S>& fake_features,
                                                 const Tensor<S>& real_features, S tau,
                                                 std::type_identity_t<Tape<S>*> tape = nullptr) {
    return {collapse_loss(fake_images, latents, tau, tape),
            style_loss(fake_features, real_features, tape)};
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct GanHistoryRow {
    int step = 0;
    double loss_d = 0.0;
    double loss_g = 0.0;
    double loss_g_adv = 0.0;
    double loss_collapse = 0.0;
    double loss_style = 0.0;
    double minimax_v = 0.0;
};

template <class S>
struct GanModel {
    GeneratorNet<S> generator;
    DiscriminatorNet<S> discriminator;

    std::vector<NamedArray> named_arrays() const {
        auto out = generator.named_arrays("g");
        auto d = discriminator.named_arrays("d");
        out.insert(out.end(), d.begin(), d.end());
        return out;
    }
    void load_arrays(const std::vector<NamedArray>& arrays) {
        generator.load_arrays(arrays, "g");
        discriminator.load_arrays(arrays, "d");
    }
};

/// Uniform [-1,1) latent prior as a [N,1,s,s] batch tensor.
template <class S>
Tensor<S> sample_prior(Index n, int latent_side, Rng& rng) {
    ArrayX<S> v(n * latent_side * latent_side);
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
    return Tensor<S>({n, 1, latent_side, latent_side}, std::move(v));
}

/// Deterministic single-image generation (inference-mode BN).
template <class S>
Microstructure generate(GeneratorNet<S>& g, const LatentVec& z) {
    z.validate();
    if (z.side != g.latent_side)
        throw ShapeError("generate: latent side " + std::to_string(z.side) +
                         " does not match generator side " + std::to_string(g.latent_side));
    ArrayX<S> v(z.values.size());
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(z.values[i]);
    Tensor<S> zt({1, 1, z.side, z.side}, std::move(v));
    Tensor<S> img = g.forward(zt, /*training=*/false, nullptr);
    Microstructure m;
    m.side = g.image_side();
    m.pixels.resize(img.size());
    for (Index i = 0; i < img.size(); ++i) m.pixels[i] = static_cast<float>(img.at(i));
    return m;
}

template <class S>
struct GanTrainResult {
    GanModel<S> model;
    std::vector<GanHistoryRow> history;
};

/// Alternating D/G Adam updates on GRF images, with the collapse and style
/// penalties folded into the generator loss. Fully seeded; checkpoints are
/// delivered through `sink` at the configured cadence.
template <class S>
GanTrainResult<S> train_gan(
    const std::vector<Microstructure>& dataset, const GanConfig<S>& config,
    const std::type_identity_t<std::function<void(int step, const GanModel<S>&)>>& sink = nullptr) {
    detail::tune_allocator();
    config.validate();
    if (dataset.empty()) throw ConfigError("train_gan: empty dataset");
    const int side = config.image_side;
    for (const auto& m : dataset)
        if (m.side != side) throw ShapeError("train_gan: dataset image side mismatch");

    Rng init_rng(derive_seed(config.seed, "gan-init"));
    GanTrainResult<S> r;
    r.model.generator = GeneratorNet<S>::make(config.latent_side, init_rng);
    r.model.discriminator = DiscriminatorNet<S>::make(side, init_rng);
    if (config.steps == 0) return r;

    auto g_params = r.model.generator.trainable_params();
    auto d_params = r.model.discriminator.trainable_params();
    AdamState<S> adam_g = AdamState<S>::make(config.lr, config.adam_beta1, config.adam_beta2);
    AdamState<S> adam_d = AdamState<S>::make(config.lr, config.adam_beta1, config.adam_beta2);

    // flat copy of the dataset for fast batch gathers
    const Index chw = static_cast<Index>(side) * side;
    ArrayX<S> data(static_cast<Index>(dataset.size()) * chw);
    for (std::size_t i = 0; i < dataset.size(); ++i)
        for (Index j = 0; j < chw; ++j)
            data[static_cast<Index>(i) * chw + j] = static_cast<S>(dataset[i].pixels[j]);

    Rng order_rng(derive_seed(config.seed, "gan-batches"));
    Rng prior_rng(derive_seed(config.seed, "gan-prior"));
    std::vector<Index> order(dataset.size());
    std::iota(order.begin(), order.end(), Index(0));
    order_rng.shuffle(order);
    std::size_t cursor = 0;
    auto next_batch = [&]() {
        ArrayX<S> b(static_cast<Index>(config.batch) * chw);
        for (int i = 0; i < config.batch; ++i) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            b.segment(i * chw, chw) = data.segment(order[cursor++] * chw, chw);
        }
        return Tensor<S>({config.batch, 1, side, side}, std::move(b));
    };

    const bool use_aux = config.collapse_weight != S(0) || config.style_weight != S(0);
    Tape<S> tape_d, tape_g;
    for (int step = 1; step <= config.steps; ++step) {
        try {
            Tensor<S> real = next_batch();
            Tensor<S> z = sample_prior<S>(config.batch, config.latent_side, prior_rng);

            // generator forward (training-mode BN) under the generator tape
            tape_g.reset();
            Tensor<S> fake = r.model.generator.forward(z, true, &tape_g);

            // Real and fake halves share one discriminator forward pass, so
            // every BN layer normalizes by the joint batch statistics. With
            // separate passes conv->BN is exactly scale-invariant per batch
            // and the discriminator cannot see pixel amplitude at all.
            const Index B = config.batch;
            tape_d.reset();
            Tensor<S> joint = concat_axis0(real, fake.detach(), &tape_d);
            Tensor<S> scores = r.model.discriminator.forward(joint, true, &tape_d);
            Tensor<S> d_real = slice_axis0(scores, 0, B, &tape_d);
            Tensor<S> d_fake_det = slice_axis0(scores, B, B, &tape_d);
            auto [loss_d, loss_g_unused] = adversarial_losses(d_real, d_fake_det, &tape_d);
            (void)loss_g_unused;
            backward(tape_d, loss_d);
            adam_step(adam_d, d_params);

            // generator update through the (just updated) discriminator
            Tensor<S> joint2 = concat_axis0(real, fake, &tape_g);
            Tensor<S> tap;
            Tensor<S> scores2 = r.model.discriminator.forward(
                joint2, true, &tape_g, use_aux ? config.style_layer : 0, &tap);
            Tensor<S> d_fake = slice_axis0(scores2, B, B, &tape_g);
            Tensor<S> loss_g_adv =
                affine(mean(log_clamped(d_fake, S(1e-7), &tape_g), &tape_g), S(-1), S(0), &tape_g);
            Tensor<S> loss_g = loss_g_adv;
            GanHistoryRow row;
            if (use_aux) {
                Tensor<S> z2 = reshape(z, {Index(config.batch), Index(config.latent_side * config.latent_side)});
                Tensor<S> c = collapse_loss(fake, z2, config.collapse_tau, &tape_g);
                Tensor<S> real_tap = slice_axis0(tap, 0, B, &tape_g);
                Tensor<S> fake_tap = slice_axis0(tap, B, B, &tape_g);
                Tensor<S> st = style_loss(fake_tap, real_tap, &tape_g);
                row.loss_collapse = static_cast<double>(c.value());
                row.loss_style = static_cast<double>(st.value());
                loss_g = add(loss_g, affine(c, config.collapse_weight, S(0), &tape_g), &tape_g);
                loss_g = add(loss_g, affine(st, config.style_weight, S(0), &tape_g), &tape_g);
            }
            backward(tape_g, loss_g);
            adam_step(adam_g, g_params);

            row.step = step;
            row.loss_d = static_cast<double>(loss_d.value());
            row.loss_g = static_cast<double>(loss_g.value());
            row.loss_g_adv = static_cast<double>(loss_g_adv.value());
            row.minimax_v = -row.loss_d;
            if (!std::isfinite(row.loss_d) || !std::isfinite(row.loss_g))
                throw NumericError("train_gan: NaN loss");
            r.history.push_back(row);
        } catch (const NumericError& e) {
            throw NumericError("train_gan: aborted at step " + std::to_string(step) + ": " +
                               e.what());
        }
        if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && sink)
            sink(step, r.model);
    }
    if (sink) sink(config.steps, r.model);
    return r;
}

/// Red-path dataset: n triples (z, x = G(z), y = simulator(x)). This is the
/// MDN training set.
template <class S>
struct PairSample {
    Eigen::ArrayXf z;  // M latent values
    double y = 0.0;
    Microstructure image;
};

template <class S>
std::vector<PairSample<S>> build_pair_dataset(
    GeneratorNet<S>& g, int n, std::uint64_t seed,
    const std::function<double(const Microstructure&)>& simulator, int batch = 64) {
    if (n < 1) throw ConfigError("build_pair_dataset: n must be >= 1");
    Rng rng(derive_seed(seed, "pair-prior"));
    const int s = g.latent_side;
    const Index m_dim = static_cast<Index>(s) * s;
    const int side = g.image_side();
    std::vector<PairSample<S>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int done = 0; done < n;) {
        const int b = std::min(batch, n - done);
        Tensor<S> z = sample_prior<S>(b, s, rng);
        Tensor<S> imgs = g.forward(z, /*training=*/false, nullptr);
        for (int i = 0; i < b; ++i) {
            PairSample<S> p;
            p.z.resize(m_dim);
            for (Index j = 0; j < m_dim; ++j)
                p.z[j] = static_cast<float>(z.at(static_cast<Index>(i) * m_dim + j));
            p.image.side = side;
            p.image.pixels.resize(static_cast<Index>(side) * side);
            for (Index j = 0; j < p.image.pixels.size(); ++j)
                p.image.pixels[j] =
                    static_cast<float>(imgs.at(static_cast<Index>(i) * side * side + j));
            p.y = simulator(p.image);
            out.push_back(std::move(p));
        }
        done += b;
    }
    return out;
}

}  // namespace invdes
