#pragma once

#include "dmvt/tensor.hpp"

namespace dmvt {

// Online least-squares state for removing the linearly predictable part of one
// latent from another: residual = z_m - z_p * omega^T.
struct RegBNState {
    Tensor omega;          // [f, f]; zero before the first fit (residual = z_m)
    bool fitted = false;
    double ema_decay = 0.99;
    double update_lr = 1e-2;

    static RegBNState init(int64_t f);
};

// One gradient step on ||Z_m - Z_p w^T||_F^2 / B followed by the EMA blend
// omega <- decay*old + (1-decay)*stepped. Latents must be detached; this
// update never backpropagates into the encoders.
void regbn_fit_step(RegBNState &state, const Tensor &z_m, const Tensor &z_p);

// Residual z_m - z_p * omega^T with omega treated as a constant; gradient
// flows through both latents normally.
Tensor regbn_apply(const RegBNState &state, const Tensor &z_m, const Tensor &z_p);

}  // namespace dmvt
