#pragma once

#include <cmath>
#include <vector>

#include "fairmig/common.hpp"
#include "fairmig/error.hpp"

namespace fairmig {

// Adaptive-moment estimation state for one parameter family. Moment buffers
// are allocated lazily on the first step so a fresh state works with any
// parameter list shape.
struct AdamState {
    std::vector<Mat> m;
    std::vector<Mat> v;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One update step: params[k] -= lr * mhat / (sqrt(vhat) + eps). Weight decay,
// when wanted, is folded into `grads` by the caller, so zero gradients from a
// fresh state leave parameters bit-identical.
inline void adam_step(const std::vector<Mat*>& params, const std::vector<Mat>& grads,
                      AdamState& state, double lr) {
    if (params.size() != grads.size()) throw ContractError("adam_step arity mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t k = 0; k < params.size(); ++k) {
            state.m[k] = Mat::Zero(params[k]->rows(), params[k]->cols());
            state.v[k] = Mat::Zero(params[k]->rows(), params[k]->cols());
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step state arity mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (grads[k].rows() != params[k]->rows() || grads[k].cols() != params[k]->cols())
            throw ContractError("adam_step gradient shape mismatch");
        if (!grads[k].allFinite()) throw NumericError("non-finite gradient in adam_step");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * grads[k];
        state.v[k] = state.beta2 * state.v[k].array().matrix() +
                     (1.0 - state.beta2) * grads[k].array().square().matrix();
        const Mat mhat = state.m[k] / bc1;
        const Mat vhat = state.v[k] / bc2;
        *params[k] -= lr * (mhat.array() / (vhat.array().sqrt() + state.eps)).matrix();
    }
}

}  // namespace fairmig
