#pragma once

#include <string>
#include <vector>

#include "invdes/conv.hpp"
#include "invdes/rng.hpp"
#include "invdes/tensor.hpp"

namespace invdes {

// Weight init: centered uniform scaled by 1/sqrt(fan_in); biases start at 0.

template <class S>
Tensor<S> uniform_init(std::vector<Index> shape, Index fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    ArrayX<S> v(shape_size(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.uniform(-bound, bound));
    return Tensor<S>(std::move(shape), std::move(v), /*requires_grad=*/true);
}

/// Named parameter registry shared by every model, in insertion order.
/// The order is the checkpoint serialization order.
template <class S>
struct ParamMap {
    std::vector<std::pair<std::string, Tensor<S>>> entries;

    Tensor<S>& add(const std::string& name, Tensor<S> t) {
        entries.emplace_back(name, std::move(t));
        return entries.back().second;
    }
    std::vector<Tensor<S>> tensors() const {
        std::vector<Tensor<S>> out;
        out.reserve(entries.size());
        for (const auto& [_, t] : entries) out.push_back(t);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <class S>
struct DenseLayer {
    Tensor<S> weight;  // [in, out]
    Tensor<S> bias;    // [out]

    static DenseLayer make(Index in, Index out, Rng& rng) {
        DenseLayer l;
        l.weight = uniform_init<S>({in, out}, in, rng);
        l.bias = Tensor<S>::zeros({out}, true);
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
        return add_row_bias(matmul(x, weight, tape), bias, tape);
    }
};

template <class S>
struct BatchNormLayer {
    Tensor<S> gamma;
    Tensor<S> beta;
    BnStats<S> stats;
    S eps = S(1e-5);
    S momentum = S(0.9);

    static BatchNormLayer make(Index channels) {
        BatchNormLayer l;
        l.gamma = Tensor<S>::full({channels}, S(1), true);
        l.beta = Tensor<S>::zeros({channels}, true);
        l.stats = BnStats<S>::make(channels);
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x, bool training, Tape<S>* tape) {
        return batch_norm(x, gamma, beta, stats, training, tape, eps, momentum);
    }
};

template <class S>
struct ConvLayer {
    Tensor<S> kernels;  // [out_c, in_c, k, k]
    Tensor<S> bias;     // [out_c], unused when followed by BN
    Index stride = 2, pad = 1;
    bool use_bias = true;

    static ConvLayer make(Index in_c, Index out_c, Index k, Index stride, Index pad, bool use_bias,
                          Rng& rng) {
        ConvLayer l;
        l.kernels = uniform_init<S>({out_c, in_c, k, k}, in_c * k * k, rng);
        l.stride = stride;
        l.pad = pad;
        l.use_bias = use_bias;
        if (use_bias) l.bias = Tensor<S>::zeros({out_c}, true);
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
        Tensor<S> y = conv2d(x, kernels, stride, pad, tape);
        return use_bias ? add_channel_bias(y, bias, tape) : y;
    }
};

template <class S>
struct DeconvLayer {
    Tensor<S> kernels;  // [in_c, out_c, k, k]
    Tensor<S> bias;     // [out_c]
    Index stride = 2, pad = 1;
    bool use_bias = true;

    static DeconvLayer make(Index in_c, Index out_c, Index k, Index stride, Index pad,
                            bool use_bias, Rng& rng) {
        DeconvLayer l;
        l.kernels = uniform_init<S>({in_c, out_c, k, k}, in_c * k * k, rng);
        l.stride = stride;
        l.pad = pad;
        l.use_bias = use_bias;
        if (use_bias) l.bias = Tensor<S>::zeros({out_c}, true);
        return l;
    }

    Tensor<S> forward(const Tensor<S>& x, Tape<S>* tape) const {
        Tensor<S> y = deconv2d(x, kernels, stride, pad, tape);
        return use_bias ? add_channel_bias(y, bias, tape) : y;
    }
};

}  // namespace invdes
