#pragma once

#include <vector>

#include "invdes/tensor.hpp"

namespace invdes {

/// Adam optimizer state: per-parameter first/second moment accumulators plus
/// a step counter. Moments are zero-initialized on first use.
template <class S>
struct AdamState {
    S learning_rate = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S epsilon = S(1e-8);
    long step = 0;
    std::vector<ArrayX<S>> m;
    std::vector<ArrayX<S>> v;

    static AdamState make(S lr, S b1 = S(0.9), S b2 = S(0.999), S eps = S(1e-8)) {
        AdamState s;
        s.learning_rate = lr;
        s.beta1 = b1;
        s.beta2 = b2;
        s.epsilon = eps;
        return s;
    }
};

/// One Adam update with bias correction over `params` (gradients are read
/// from each tensor's grad and cleared afterwards).
template <class S>
void adam_step(AdamState<S>& state, std::vector<Tensor<S>>& params) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i] = ArrayX<S>::Zero(params[i].size());
            state.v[i] = ArrayX<S>::Zero(params[i].size());
        }
    }
    if (state.m.size() != params.size()) throw Error("adam_step: parameter count changed");

    state.step += 1;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta1), state.step));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta2), state.step));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<S>& p = params[i];
        if (!p.has_grad()) throw Error("adam_step: missing gradient for parameter " + std::to_string(i));
        const ArrayX<S>& g = p.grad();
        state.m[i] = state.beta1 * state.m[i] + (S(1) - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (S(1) - state.beta2) * g * g;
        ArrayX<S> mhat = state.m[i] / bc1;
        ArrayX<S> vhat = state.v[i] / bc2;
        p.mutable_values() -= state.learning_rate * mhat / (vhat.sqrt() + state.epsilon);
        p.zero_grad();
    }
}

}  // namespace invdes
